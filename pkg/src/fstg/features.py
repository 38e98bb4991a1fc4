"""Slice embeddings, slice-to-volume grouping and axial/sagittal fusion.

The pretrained slice encoder is not available here; :func:`toy_encoder` is a
deterministic stand-in that produces vectors of the same 512-d contract.
Externally extracted features enter through the feature-record file format::

    FSTG-FEAT v1 dim=512
    <patient_id>\\t<plane>\\t<slice_index>\\t<v0>,<v1>,...
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyStack, IoFailure, LengthMismatch, MalformedRecord

FEATURE_DIM = 512
GRID = 4
RINGS = 8
N_STATS = GRID * GRID * 2 + RINGS * 4
_HEADER_RE = re.compile(r"^FSTG-FEAT v1 dim=(\d+)\s*$")


@dataclass
class SliceFeatureStack:
    patient_id: str
    plane: str
    vectors: np.ndarray  # (n_slices, dim)
    slice_index: tuple[int, ...] | None = None

    def __post_init__(self):
        self.vectors = np.atleast_2d(np.asarray(self.vectors, dtype=float))
        if self.vectors.shape[0] < 1:
            raise EmptyStack(f"stack for {self.patient_id}/{self.plane} has no slices")
        if self.slice_index is None:
            self.slice_index = tuple(range(self.vectors.shape[0]))

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass
class GrouperModel:
    """Linear slice scores ``w . f + b`` turned into softmax weights."""

    w: np.ndarray
    b: float = 0.0

    @classmethod
    def zeros(cls, dim: int = FEATURE_DIM) -> "GrouperModel":
        return cls(np.zeros(dim), 0.0)


# --------------------------------------------------------------------------
# toy encoder


def pooled_stats(img: np.ndarray) -> np.ndarray:
    """64 summary values: grid-cell mean/std plus ring mean/std/max/min.

    The 4x4 grid carries where intensity sits; the 8 concentric rings around
    the slice centre carry the same content regardless of angle.
    """
    img = np.asarray(img, dtype=float)
    if img.ndim != 2 or img.size == 0:
        raise ValueError(f"expected a non-empty 2-D slice, got shape {img.shape}")
    stats = []
    for rows in np.array_split(np.arange(img.shape[0]), GRID):
        for cols in np.array_split(np.arange(img.shape[1]), GRID):
            cell = img[np.ix_(rows, cols)]
            stats.extend([cell.mean(), cell.std()] if cell.size else [0.0, 0.0])
    h, w = img.shape
    i, j = np.meshgrid(np.arange(h) - (h - 1) / 2, np.arange(w) - (w - 1) / 2, indexing="ij")
    r = np.hypot(i / max(h / 2, 1), j / max(w / 2, 1)) / np.sqrt(2)
    ring = np.minimum((r * RINGS).astype(int), RINGS - 1)
    for k in range(RINGS):
        vals = img[ring == k]
        stats.extend([vals.mean(), vals.std(), vals.max(), vals.min()] if vals.size else [0.0] * 4)
    return np.asarray(stats)


def projection_matrix(seed: int, dim: int = FEATURE_DIM) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, 1.0 / np.sqrt(N_STATS), (dim, N_STATS))


def toy_encoder(img: np.ndarray, seed: int = 0, dim: int = FEATURE_DIM) -> np.ndarray:
    """Deterministic stand-in slice encoder: seeded projection of pooled stats."""
    return projection_matrix(seed, dim) @ pooled_stats(img)


def encode_volume(data: np.ndarray, seed: int = 0, dim: int = FEATURE_DIM) -> np.ndarray:
    """Encode every z slice of a 3-D array -> (nz, dim)."""
    proj = projection_matrix(seed, dim)
    return np.stack([proj @ pooled_stats(data[:, :, k]) for k in range(data.shape[2])])


# --------------------------------------------------------------------------
# grouper


def grouper_weights(vectors: np.ndarray, model: GrouperModel | None = None) -> np.ndarray:
    """Softmax slice weights; ``model=None`` is the frozen-uniform mode."""
    vectors = np.atleast_2d(np.asarray(vectors, float))
    n = vectors.shape[0]
    if n < 1:
        raise EmptyStack("cannot aggregate an empty stack")
    if model is None:
        return np.full(n, 1.0 / n)
    scores = vectors @ model.w + model.b
    scores = scores - scores.max()
    e = np.exp(scores)
    return e / e.sum()


def grouper_aggregate(stack: SliceFeatureStack | np.ndarray, model: GrouperModel | None = None) -> np.ndarray:
    vectors = stack.vectors if isinstance(stack, SliceFeatureStack) else np.asarray(stack, float)
    if vectors.size == 0:
        raise EmptyStack("cannot aggregate an empty stack")
    vectors = np.atleast_2d(vectors)
    if model is None:
        return vectors.mean(axis=0)
    return grouper_weights(vectors, model) @ vectors


def grouper_backward(vectors: np.ndarray, model: GrouperModel, dout: np.ndarray) -> tuple[np.ndarray, float]:
    """Gradients of ``dout . aggregate`` w.r.t. ``(w, b)``."""
    alpha = grouper_weights(vectors, model)
    out = alpha @ vectors
    ds = alpha * ((vectors - out) @ dout)
    return ds @ vectors, float(ds.sum())


# --------------------------------------------------------------------------
# fusion


def fuse_views(axial: np.ndarray, sagittal: np.ndarray, dim: int = FEATURE_DIM) -> np.ndarray:
    """Axial-first concatenation into one 2*dim vector."""
    axial, sagittal = np.asarray(axial, float), np.asarray(sagittal, float)
    if axial.shape != (dim,) or sagittal.shape != (dim,):
        raise LengthMismatch(f"expected two {dim}-vectors, got {axial.shape} and {sagittal.shape}")
    return np.concatenate([axial, sagittal])


# --------------------------------------------------------------------------
# feature-record files


def write_feature_file(path: str | Path, stacks: Iterable[SliceFeatureStack], dim: int = FEATURE_DIM) -> None:
    lines = [f"FSTG-FEAT v1 dim={dim}"]
    for st in stacks:
        if st.dim != dim:
            raise DimensionMismatch(f"{st.patient_id}: vectors have dim {st.dim}, header says {dim}")
        for idx, vec in zip(st.slice_index, st.vectors):
            values = ",".join(repr(float(v)) for v in vec)
            lines.append(f"{st.patient_id}\t{st.plane}\t{idx}\t{values}")
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_feature_file(path: str | Path) -> list[SliceFeatureStack]:
    """Parse a feature-record file into stacks keyed by (patient, plane), in file order."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines:
        raise MalformedRecord("empty feature file")
    m = _HEADER_RE.match(lines[0])
    if not m:
        raise MalformedRecord(f"bad header line {lines[0]!r}")
    dim = int(m.group(1))
    groups: dict[tuple[str, str], tuple[list[int], list[np.ndarray]]] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise MalformedRecord(f"line {lineno}: expected 4 tab-separated fields, got {len(parts)}")
        pid, plane, idx, values = parts
        try:
            vec = np.array([float(v) for v in values.split(",")])
            slice_idx = int(idx)
        except ValueError as exc:
            raise MalformedRecord(f"line {lineno}: {exc}") from exc
        if vec.shape[0] != dim:
            raise DimensionMismatch(f"line {lineno}: {vec.shape[0]} values, header says {dim}")
        if not np.isfinite(vec).all():
            raise MalformedRecord(f"line {lineno}: non-finite feature value")
        ids, vecs = groups.setdefault((pid, plane), ([], []))
        ids.append(slice_idx)
        vecs.append(vec)
    return [SliceFeatureStack(pid, plane, np.stack(vecs), tuple(ids))
            for (pid, plane), (ids, vecs) in groups.items()]


def stacks_by_patient(stacks: Sequence[SliceFeatureStack]) -> dict[str, dict[str, SliceFeatureStack]]:
    out: dict[str, dict[str, SliceFeatureStack]] = {}
    for st in stacks:
        out.setdefault(st.patient_id, {})[st.plane] = st
    return out
