"""Training-time augmentations: flips, affine/gamma intensity and Gibbs ringing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fourier import lowpass
from .volume import Volume

_AXES = {"x": 0, "y": 1, "z": 2}


def flip(vol: Volume, axis: str | int) -> Volume:
    ax = _AXES[axis] if isinstance(axis, str) else int(axis)
    return vol.with_data(np.flip(vol.data, axis=ax))


def intensity_affine(vol: Volume, scale: float, offset: float = 0.0) -> Volume:
    if not np.isfinite(scale) or scale == 0:
        raise ValueError(f"scale must be finite and non-zero, got {scale}")
    return vol.with_data(scale * vol.data + offset)


def gamma_adjust(vol: Volume, gamma: float) -> Volume:
    """Power-law contrast applied on the min/max-normalized range."""
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    lo, hi = float(vol.data.min()), float(vol.data.max())
    if hi == lo:
        return vol
    unit = (vol.data - lo) / (hi - lo)
    return vol.with_data(lo + (hi - lo) * unit ** gamma)


def gibbs_ringing(vol: Volume, keep_frac: float) -> Volume:
    """Truncate each axial slice's spectrum beyond ``keep_frac`` of the max radius."""
    out = np.stack([lowpass(vol.data[:, :, k], keep_frac) for k in range(vol.dims[2])], axis=2)
    return vol.with_data(out)


@dataclass(frozen=True)
class AugmentConfig:
    p_flip: float = 0.5
    flip_axes: tuple[str, ...] = ("x",)
    scale_range: tuple[float, float] = (0.9, 1.1)
    offset_range: tuple[float, float] = (-0.1, 0.1)
    p_gamma: float = 0.3
    gamma_range: tuple[float, float] = (0.7, 1.5)
    p_gibbs: float = 0.2
    keep_frac_range: tuple[float, float] = (0.4, 0.9)


def random_augment(vol: Volume, rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig()) -> Volume:
    """One seeded draw of the augmentation chain; reproducible for a given ``rng`` state."""
    for axis in cfg.flip_axes:
        if rng.random() < cfg.p_flip:
            vol = flip(vol, axis)
    vol = intensity_affine(vol, rng.uniform(*cfg.scale_range), rng.uniform(*cfg.offset_range))
    if rng.random() < cfg.p_gamma:
        vol = gamma_adjust(vol, rng.uniform(*cfg.gamma_range))
    if rng.random() < cfg.p_gibbs and min(vol.dims[:2]) >= 2:
        vol = gibbs_ringing(vol, rng.uniform(*cfg.keep_frac_range))
    return vol
