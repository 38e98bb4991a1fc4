"""Volume container, NIfTI-1 subset codec, internal raw codec and resampling.

Arrays are held in memory indexed ``[x, y, z]``; on disk the payload is
x-fastest (Fortran order), as both formats require.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateTarget,
    IoFailure,
    MalformedHeader,
    NonFinite,
    UnsupportedDatatype,
)

PLANES = ("axial", "sagittal", "unknown")

NIFTI_HEADER_SIZE = 348
NIFTI_VOX_OFFSET = 352
DT_INT16 = 4
DT_FLOAT32 = 16
_DTYPES = {DT_INT16: np.dtype("i2"), DT_FLOAT32: np.dtype("f4")}

RAW_MAGIC = b"FSTG"
RAW_HEADER = struct.Struct("<4s3I3fI")  # 32 bytes
_PLANE_CODES = {"unknown": 0, "axial": 1, "sagittal": 2}


@dataclass(frozen=True)
class Volume:
    """3-D scalar grid with voxel spacing in mm and a plane tag."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    plane: str = "unknown"

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 3 or min(data.shape) < 1:
            raise MalformedHeader(f"volume must be a non-empty 3-D array, got shape {data.shape}")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or not all(np.isfinite(s) and s > 0 for s in spacing):
            raise DegenerateTarget(f"spacing components must be positive, got {self.spacing}")
        if self.plane not in PLANES:
            raise ValueError(f"plane must be one of {PLANES}, got {self.plane!r}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)

    def with_data(self, data: np.ndarray) -> "Volume":
        """Same spacing and plane, new voxel array."""
        return Volume(data, self.spacing, self.plane)


@dataclass(frozen=True)
class LabelMask(Volume):
    """Binary mask sharing the geometry of a paired Volume."""

    def __post_init__(self):
        super().__post_init__()
        if not np.isin(self.data, (0.0, 1.0)).all():
            raise ValueError("label mask values must be 0 or 1")

    def matches(self, vol: Volume) -> bool:
        return self.dims == vol.dims and np.allclose(self.spacing, vol.spacing)


# --------------------------------------------------------------------------
# NIfTI-1


def _parse_header(raw: bytes) -> tuple[str, dict]:
    if len(raw) < NIFTI_HEADER_SIZE:
        raise MalformedHeader(f"header is {len(raw)} bytes, expected {NIFTI_HEADER_SIZE}")
    for endian in ("<", ">"):
        if struct.unpack_from(endian + "i", raw, 0)[0] == NIFTI_HEADER_SIZE:
            break
    else:
        raise MalformedHeader("sizeof_hdr is not 348 in either byte order")
    magic = raw[344:348].rstrip(b"\x00")
    if magic not in (b"n+1", b"ni1"):
        raise MalformedHeader(f"bad magic {magic!r}")
    hdr = {
        "magic": magic,
        "dim": struct.unpack_from(endian + "8h", raw, 40),
        "datatype": struct.unpack_from(endian + "h", raw, 70)[0],
        "bitpix": struct.unpack_from(endian + "h", raw, 72)[0],
        "pixdim": struct.unpack_from(endian + "8f", raw, 76),
        "vox_offset": struct.unpack_from(endian + "f", raw, 108)[0],
        "scl_slope": struct.unpack_from(endian + "f", raw, 112)[0],
        "scl_inter": struct.unpack_from(endian + "f", raw, 116)[0],
    }
    return endian, hdr


def read_nifti(path: str | Path, plane: str = "unknown") -> Volume:
    """Read an uncompressed single-file (n+1) or pair (ni1) NIfTI-1 volume."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    endian, hdr = _parse_header(raw)
    if hdr["datatype"] not in _DTYPES:
        raise UnsupportedDatatype(f"datatype code {hdr['datatype']} not supported")
    dim = hdr["dim"]
    if dim[0] != 3 or min(dim[1:4]) < 1:
        raise MalformedHeader(f"expected a 3-D volume, dim={dim}")
    shape = tuple(int(n) for n in dim[1:4])
    dtype = _DTYPES[hdr["datatype"]].newbyteorder(endian)
    count = int(np.prod(shape))

    if hdr["magic"] == b"n+1":
        payload, offset = raw, int(hdr["vox_offset"])
    else:
        img = path.with_suffix(".img")
        try:
            payload, offset = img.read_bytes(), int(hdr["vox_offset"])
        except OSError as exc:
            raise IoFailure(f"cannot read image file {img}: {exc}") from exc
    if offset + count * dtype.itemsize > len(payload):
        raise MalformedHeader("payload shorter than dim[] implies")
    data = np.frombuffer(payload, dtype=dtype, count=count, offset=offset)
    data = data.reshape(shape, order="F").astype(np.float64)

    slope, inter = hdr["scl_slope"], hdr["scl_inter"]
    if slope != 0 and np.isfinite(slope) and (slope, inter) != (1.0, 0.0):
        data = data * slope + inter
    if not np.isfinite(data).all():
        raise NonFinite(f"{path} contains NaN or Inf voxels")
    spacing = tuple(abs(float(p)) for p in hdr["pixdim"][1:4])
    return Volume(data, spacing, plane)


def nifti_header(shape: Sequence[int], spacing: Sequence[float], datatype: int = DT_FLOAT32,
                 scl_slope: float = 1.0, scl_inter: float = 0.0) -> bytes:
    """Minimal little-endian n+1 header; qform/sform left unset."""
    hdr = bytearray(NIFTI_HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, NIFTI_HEADER_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, *shape, 1, 1, 1, 1)
    bitpix = _DTYPES[datatype].itemsize * 8
    struct.pack_into("<3h", hdr, 70, datatype, bitpix, 0)
    struct.pack_into("<8f", hdr, 76, 1.0, *spacing, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<3f", hdr, 108, float(NIFTI_VOX_OFFSET), scl_slope, scl_inter)
    hdr[123] = 2  # xyzt_units: mm
    hdr[344:348] = b"n+1\x00"
    return bytes(hdr)


def write_nifti(vol: Volume, path: str | Path) -> None:
    """Write ``vol`` as float32 single-file NIfTI-1."""
    path = Path(path)
    payload = np.asarray(vol.data, dtype="<f4").tobytes(order="F")
    blob = nifti_header(vol.dims, vol.spacing) + b"\x00" * 4 + payload
    try:
        path.write_bytes(blob)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


# --------------------------------------------------------------------------
# internal raw format


def write_raw(vol: Volume, path: str | Path) -> None:
    path = Path(path)
    head = RAW_HEADER.pack(RAW_MAGIC, *vol.dims, *vol.spacing, _PLANE_CODES[vol.plane])
    try:
        path.write_bytes(head + np.asarray(vol.data, dtype="<f4").tobytes(order="F"))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_raw(path: str | Path) -> Volume:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(raw) < RAW_HEADER.size:
        raise MalformedHeader("raw header truncated")
    magic, nx, ny, nz, sx, sy, sz, code = RAW_HEADER.unpack_from(raw)
    if magic != RAW_MAGIC:
        raise MalformedHeader(f"bad magic {magic!r}")
    planes = {v: k for k, v in _PLANE_CODES.items()}
    if code not in planes:
        raise MalformedHeader(f"unknown plane code {code}")
    count = nx * ny * nz
    if len(raw) < RAW_HEADER.size + 4 * count:
        raise MalformedHeader("raw payload truncated")
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=RAW_HEADER.size)
    data = data.reshape((nx, ny, nz), order="F").astype(np.float64)
    if not np.isfinite(data).all():
        raise NonFinite(f"{path} contains NaN or Inf voxels")
    return Volume(data, (sx, sy, sz), planes[code])


def load_volume(path: str | Path, plane: str = "unknown") -> Volume:
    """Dispatch on file content: raw magic, otherwise NIfTI."""
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(4) == RAW_MAGIC:
            return read_raw(path)
    return read_nifti(path, plane)


# --------------------------------------------------------------------------
# resampling


def _linear_along(data: np.ndarray, axis: int, coords: np.ndarray) -> np.ndarray:
    n = data.shape[axis]
    coords = np.clip(coords, 0.0, n - 1)
    lo = np.floor(coords).astype(int)
    hi = np.minimum(lo + 1, n - 1)
    frac = coords - lo
    shape = [1, 1, 1]
    shape[axis] = -1
    frac = frac.reshape(shape)
    a = np.take(data, lo, axis=axis)
    b = np.take(data, hi, axis=axis)
    return a + (b - a) * frac


def resample_trilinear(vol: Volume, target_spacing: Sequence[float]) -> Volume:
    """Resample to ``target_spacing`` (mm) by separable linear interpolation.

    Output voxel ``i`` samples input index ``(i + 0.5) * t / s - 0.5``; samples
    falling outside the grid are clamped to the edge voxel.
    """
    target = tuple(float(t) for t in target_spacing)
    if len(target) != 3 or not all(np.isfinite(t) and t > 0 for t in target):
        raise DegenerateTarget(f"target spacing must be three positive values, got {target_spacing}")
    data = vol.data
    for axis in range(3):
        n, s, t = vol.dims[axis], vol.spacing[axis], target[axis]
        n_out = max(1, int(np.floor(n * s / t + 0.5)))
        coords = (np.arange(n_out) + 0.5) * (t / s) - 0.5
        data = _linear_along(data, axis, coords)
    return Volume(data, target, vol.plane)
