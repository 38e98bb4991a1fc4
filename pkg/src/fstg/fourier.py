"""Centered 2-D spectra and radial frequency-disk perturbations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PerturbationConfig:
    n_variants: int = 200
    radius_frac_range: tuple[float, float] = (0.05, 0.6)
    gain_range: tuple[float, float] = (0.5, 2.0)
    rng_seed: int = 0
    taper: float = 0.0

    def __post_init__(self):
        if self.n_variants < 1:
            raise ValueError("n_variants must be >= 1")
        r_lo, r_hi = self.radius_frac_range
        if not 0 < r_lo <= r_hi <= 1:
            raise ValueError(f"radius fractions must satisfy 0 < lo <= hi <= 1, got {self.radius_frac_range}")
        g_lo, g_hi = self.gain_range
        if not 0 < g_lo <= g_hi:
            raise ValueError(f"gains must be positive, got {self.gain_range}")


def fft2_centered(img: np.ndarray) -> np.ndarray:
    """2-D FFT with the DC coefficient moved to index ``(h // 2, w // 2)``."""
    img = np.asarray(img, dtype=float)
    if img.ndim != 2 or min(img.shape) < 2:
        raise ValueError(f"expected a 2-D slice of at least 2x2, got {img.shape}")
    return np.fft.fftshift(np.fft.fft2(img))


def ifft2_centered(freq: np.ndarray) -> np.ndarray:
    """Inverse of :func:`fft2_centered`; returns the real part."""
    return np.fft.ifft2(np.fft.ifftshift(freq)).real


def radial_distance(shape: tuple[int, int]) -> np.ndarray:
    """Normalized distance of each centered coefficient from DC.

    Each axis offset is divided by half the axis length and the Euclidean
    norm by sqrt(2), so the farthest corner sits at 1.
    """
    h, w = shape
    fy = (np.arange(h) - h // 2) / (h / 2)
    fx = (np.arange(w) - w // 2) / (w / 2)
    return np.hypot(fy[:, None], fx[None, :]) / np.sqrt(2.0)


def disk_weight(shape: tuple[int, int], radius_frac: float, taper: float = 0.0) -> np.ndarray:
    """1 inside the disk, 0 outside; optional raised-cosine edge of width ``taper``."""
    r = radial_distance(shape)
    inside = (r <= radius_frac).astype(float)
    if taper <= 0:
        return inside
    t = np.clip((r - radius_frac) / taper, 0.0, 1.0)
    return np.where(r <= radius_frac, 1.0, 0.5 * (1 + np.cos(np.pi * t)))


def perturb(freq: np.ndarray, radius_frac: float, gain: float, taper: float = 0.0) -> np.ndarray:
    """Scale coefficients within ``radius_frac`` of DC by ``gain``."""
    if not 0 <= radius_frac <= 1:
        raise ValueError(f"radius_frac must lie in [0, 1], got {radius_frac}")
    if not gain > 0:
        raise ValueError(f"gain must be positive, got {gain}")
    weight = disk_weight(freq.shape, radius_frac, taper)
    return freq * (1.0 + (gain - 1.0) * weight)


def draw_perturbations(cfg: PerturbationConfig) -> list[tuple[float, float]]:
    """Seeded ``(radius_frac, gain)`` pairs: radius uniform, gain log-uniform."""
    rng = np.random.default_rng(cfg.rng_seed)
    radii = rng.uniform(*cfg.radius_frac_range, size=cfg.n_variants)
    log_gain = rng.uniform(np.log(cfg.gain_range[0]), np.log(cfg.gain_range[1]), size=cfg.n_variants)
    return [(float(r), float(g)) for r, g in zip(radii, np.exp(log_gain))]


def generate_variants(img: np.ndarray, cfg: PerturbationConfig) -> list[np.ndarray]:
    freq = fft2_centered(img)
    return [ifft2_centered(perturb(freq, r, g, cfg.taper)) for r, g in draw_perturbations(cfg)]


def lowpass(img: np.ndarray, keep_frac: float) -> np.ndarray:
    """Zero every coefficient farther than ``keep_frac`` from DC (k-space truncation)."""
    if not 0 < keep_frac <= 1:
        raise ValueError(f"keep_frac must lie in (0, 1], got {keep_frac}")
    freq = fft2_centered(img)
    freq[radial_distance(freq.shape) > keep_frac] = 0
    return ifft2_centered(freq)
