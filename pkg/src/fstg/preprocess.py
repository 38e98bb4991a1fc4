"""ROI localization, fixed-size patch extraction and intensity normalization."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateIntensity, EmptyMask
from .volume import LabelMask, Volume

ZSCORE_EPS = 1e-8


@dataclass(frozen=True)
class PatchSpec:
    size: tuple[int, int, int] = (192, 192, 36)
    pad_value: float = 0.0

    def __post_init__(self):
        size = tuple(int(s) for s in self.size)
        if len(size) != 3 or min(size) < 1:
            raise ValueError(f"patch size components must be >= 1, got {self.size}")
        object.__setattr__(self, "size", size)


def mask_centroid(mask: LabelMask | Volume) -> tuple[float, float, float]:
    """Mean index coordinate of the positive voxels."""
    idx = np.argwhere(np.asarray(mask.data) > 0)
    if len(idx) == 0:
        raise EmptyMask("mask has no positive voxels")
    c = idx.mean(axis=0)
    return float(c[0]), float(c[1]), float(c[2])


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def center_crop(vol: Volume, center: Sequence[float], spec: PatchSpec = PatchSpec()) -> Volume:
    """Crop ``spec.size`` voxels around ``center``, padding outside the grid.

    The window starts at ``round(center) - size // 2`` on each axis; sub-voxel
    centroids are rounded half-up to the nearest voxel.
    """
    if len(center) != 3 or not np.all(np.isfinite(center)):
        raise ValueError(f"center must be three finite coordinates, got {center}")
    out = np.full(spec.size, spec.pad_value, dtype=np.float64)
    src, dst = [], []
    for c, size, n in zip(center, spec.size, vol.dims):
        start = _round_half_up(c) - size // 2
        lo, hi = max(start, 0), min(start + size, n)
        if hi <= lo:
            return vol.with_data(out)
        src.append(slice(lo, hi))
        dst.append(slice(lo - start, hi - start))
    out[tuple(dst)] = vol.data[tuple(src)]
    return vol.with_data(out)


def percentile_bounds(vol: Volume, lo: float = 2.5, hi: float = 97.5) -> tuple[float, float]:
    if not 0 <= lo < hi <= 100:
        raise ValueError(f"need 0 <= lo < hi <= 100, got ({lo}, {hi})")
    p_lo, p_hi = np.percentile(vol.data, [lo, hi], method="linear")
    return float(p_lo), float(p_hi)


def clip_percentiles(vol: Volume, lo: float = 2.5, hi: float = 97.5) -> Volume:
    p_lo, p_hi = percentile_bounds(vol, lo, hi)
    return vol.with_data(np.clip(vol.data, p_lo, p_hi))


def zscore(vol: Volume) -> Volume:
    mu = vol.data.mean()
    sd = vol.data.std()
    if not sd > ZSCORE_EPS:
        raise DegenerateIntensity(f"voxel std {sd:.3g} too small to normalize")
    return vol.with_data((vol.data - mu) / sd)


def normalize(vol: Volume, lo: float = 2.5, hi: float = 97.5) -> Volume:
    """Percentile clip followed by z-score."""
    return zscore(clip_percentiles(vol, lo, hi))


def extract_patch(vol: Volume, mask: LabelMask | Volume, spec: PatchSpec = PatchSpec(),
                  percentiles: tuple[float, float] = (2.5, 97.5),
                  normalize_after_crop: bool = True) -> Volume:
    """Centroid-centred crop plus clip/z-score, normalizing before or after cropping."""
    center = mask_centroid(mask)
    if normalize_after_crop:
        return normalize(center_crop(vol, center, spec), *percentiles)
    return center_crop(normalize(vol, *percentiles), center, spec)
