"""Synthetic pelvic phantoms with planted EVI/MFI signatures and site contrast shifts.

Each patient is one isotropic "world" grid holding a rectal tube along z.
The axial view averages blocks of z planes; the sagittal view averages blocks
of x planes and is stored as ``(y, z, x)`` so its slices run along the last
axis like every other volume.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .fourier import fft2_centered, ifft2_centered, perturb
from .volume import LabelMask, Volume, load_volume, write_nifti

# (radius_frac, gain) per site; site 0 is the reference protocol
_SITE_TABLE = ((0.0, 1.0), (0.15, 1.8), (0.25, 0.6), (0.1, 1.4), (0.35, 0.75))


@dataclass(frozen=True)
class PhantomSpec:
    n_patients: int = 60
    evi_rate: float = 0.311
    mfi_rate: float = 0.236
    world: int = 64
    slice_factor: int = 4
    seed: int = 0
    n_sites: int = 2
    contrast: float = 1.0
    noise: float = 0.08

    def __post_init__(self):
        if not (0 <= self.evi_rate <= 1 and 0 <= self.mfi_rate <= 1):
            raise ValueError("rates must lie in [0, 1]")
        if self.n_patients < 4:
            raise ValueError("need at least 4 patients")
        if self.world % self.slice_factor:
            raise ValueError("world size must be a multiple of slice_factor")
        if not 1 <= self.n_sites <= len(_SITE_TABLE):
            raise ValueError(f"n_sites must lie in [1, {len(_SITE_TABLE)}]")


@dataclass
class PhantomCase:
    patient_id: str
    axial: Volume
    sagittal: Volume
    mask_axial: LabelMask
    mask_sagittal: LabelMask
    evi: int
    mfi: int
    site: int


def site_params(site: int) -> tuple[float, float]:
    return _SITE_TABLE[site]


def simulate_site_shift(vol: Volume, site: int, n_sites: int | None = None) -> Volume:
    """Apply the site's fixed frequency-disk gain to every z slice."""
    if n_sites is not None and not 0 <= site < n_sites:
        raise ValueError(f"site {site} outside [0, {n_sites})")
    radius, gain = site_params(site)
    if gain == 1.0:
        return vol
    out = np.stack([ifft2_centered(perturb(fft2_centered(vol.data[:, :, k]), radius, gain))
                    for k in range(vol.dims[2])], axis=2)
    return vol.with_data(out)


def _half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def _positives(n: int, rate: float, rng: np.random.Generator) -> np.ndarray:
    labels = np.zeros(n, dtype=int)
    labels[rng.permutation(n)[:_half_up(rate * n)]] = 1
    return labels


def _world(spec: PhantomSpec, evi: int, mfi: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    n = spec.world
    c = n / 2
    x, y, z = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    # tube axis drifts slightly with z
    cx = c + rng.uniform(-3, 3) + rng.uniform(-0.05, 0.05) * (z - c)
    cy = c + rng.uniform(-3, 3)
    rx, ry = rng.uniform(5.0, 7.0), rng.uniform(4.5, 6.5)
    rho = np.sqrt(((x - cx) / rx) ** 2 + ((y - cy) / ry) ** 2)
    z_lo, z_hi = int(n * 0.15), int(n * 0.85)
    along = (z >= z_lo) & (z < z_hi)

    img = 0.6 + 0.05 * np.sin(x / 9.0 + rng.uniform(0, 6)) * np.cos(y / 11.0)
    img = np.where(along & (rho <= 1.0), 1.0, img)  # muscular wall
    img = np.where(along & (rho <= 0.55), 0.25, img)  # lumen
    mask = (along & (rho <= 1.0)).astype(float)
    r_mean = (rx + ry) / 2

    if mfi:
        band = along & (rho > 1.0) & (rho <= 1.0 + 3.0 / r_mean)
        # keep the thickened segment inside the central field of view
        z0 = int(c) + rng.integers(-14, -6)
        band &= (z >= z0) & (z < z0 + 20)
        img = np.where(band, 1.0 + 0.8 * spec.contrast, img)
    if evi:
        theta0 = rng.uniform(0, 2 * np.pi)
        zz = np.arange(n)
        theta = theta0 + 0.6 * np.sin(zz / 5.0 + rng.uniform(0, 6))
        radius = r_mean + 5.0 + 1.5 * np.sin(zz / 3.0)
        # vessel centre line follows the drifting tube axis
        vx = cx + radius[None, None, :] * np.cos(theta)[None, None, :]
        vy = cy + radius[None, None, :] * np.sin(theta)[None, None, :]
        vessel = along & (np.hypot(x - vx, y - vy) <= 3.0)
        img = np.where(vessel, 1.0 + spec.contrast, img)
    img = img + rng.normal(0.0, spec.noise, img.shape)
    return img, mask


def _views(spec: PhantomSpec, img: np.ndarray, mask: np.ndarray):
    f, n = spec.slice_factor, spec.world
    ax = img.reshape(n, n, n // f, f).mean(axis=3)
    ax_m = mask.reshape(n, n, n // f, f).mean(axis=3) >= 0.5
    sag = img.reshape(n // f, f, n, n).mean(axis=1).transpose(1, 2, 0)
    sag_m = mask.reshape(n // f, f, n, n).mean(axis=1).transpose(1, 2, 0) >= 0.5
    sp = (1.0, 1.0, float(f))
    return (Volume(ax, sp, "axial"), Volume(sag, sp, "sagittal"),
            LabelMask(ax_m.astype(float), sp, "axial"), LabelMask(sag_m.astype(float), sp, "sagittal"))


def generate(spec: PhantomSpec) -> list[PhantomCase]:
    """Deterministic phantom cohort; label counts are round(rate * n)."""
    rng = np.random.default_rng(spec.seed)
    evi = _positives(spec.n_patients, spec.evi_rate, rng)
    mfi = _positives(spec.n_patients, spec.mfi_rate, rng)
    sites = rng.integers(0, spec.n_sites, spec.n_patients)
    cases = []
    for i in range(spec.n_patients):
        prng = np.random.default_rng([spec.seed, i])
        img, mask = _world(spec, evi[i], mfi[i], prng)
        ax, sag, m_ax, m_sag = _views(spec, img, mask)
        site = int(sites[i])
        cases.append(PhantomCase(f"P{i:04d}", simulate_site_shift(ax, site), simulate_site_shift(sag, site),
                                 m_ax, m_sag, int(evi[i]), int(mfi[i]), site))
    return cases


# --------------------------------------------------------------------------
# splitting


def _allocate(sizes: Sequence[int], n_take: int) -> list[int]:
    """Largest-remainder allocation of ``n_take`` across strata."""
    total = sum(sizes)
    quotas = [n_take * s / total for s in sizes]
    base = [int(np.floor(q)) for q in quotas]
    order = sorted(range(len(sizes)), key=lambda i: (-(quotas[i] - base[i]), i))
    for i in order[: n_take - sum(base)]:
        base[i] += 1
    return base


def _stratified_take(ids: list[int], strata: dict[int, tuple], frac: float,
                     rng: np.random.Generator) -> tuple[list[int], list[int]]:
    n_take = _half_up(frac * len(ids))
    keys = sorted({strata[i] for i in ids})
    groups = [[i for i in ids if strata[i] == k] for k in keys]
    counts = _allocate([len(g) for g in groups], n_take)
    taken = []
    for g, cnt in zip(groups, counts):
        perm = rng.permutation(len(g))
        taken.extend(g[j] for j in perm[:cnt])
    taken_set = set(taken)
    return sorted(taken), [i for i in ids if i not in taken_set]


def split_dataset(labels: Sequence[tuple[int, int]], seed: int = 0, test_frac: float = 0.2,
                  val_frac: float = 0.2) -> tuple[list[int], list[int], list[int]]:
    """Indices of (train, val, test); stratified on the joint (EVI, MFI) label."""
    n = len(labels)
    if n < 5:
        raise ValueError("need at least 5 cases to split")
    strata = {i: tuple(int(v) for v in lab) for i, lab in enumerate(labels)}
    rng = np.random.default_rng(seed)
    test, rest = _stratified_take(list(range(n)), strata, test_frac, rng)
    val, train = _stratified_take(rest, strata, val_frac, rng)
    return sorted(train), sorted(val), sorted(test)


# --------------------------------------------------------------------------
# on-disk dataset


def save_dataset(cases: Sequence[PhantomCase], out_dir: str | Path, spec: PhantomSpec | None = None,
                 split_seed: int = 0) -> Path:
    """Write NIfTI volumes/masks and a manifest JSON; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "volumes").mkdir(parents=True, exist_ok=True)
    train, val, test = split_dataset([(c.evi, c.mfi) for c in cases], split_seed)
    split_of = {i: "train" for i in train} | {i: "val" for i in val} | {i: "test" for i in test}
    records = []
    for i, c in enumerate(cases):
        rec = {"patient_id": c.patient_id, "evi": c.evi, "mfi": c.mfi, "site": c.site, "split": split_of[i]}
        for key in ("axial", "sagittal", "mask_axial", "mask_sagittal"):
            rel = f"volumes/{c.patient_id}_{key}.nii"
            write_nifti(getattr(c, key), out_dir / rel)
            rec[key] = rel
        records.append(rec)
    manifest = {"format": "fstg-dataset-v1", "planes": {"axial": "axial", "sagittal": "sagittal"},
                "spec": asdict(spec) if spec else None, "split_seed": split_seed, "cases": records}
    path = out_dir / "dataset.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def load_manifest(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())


def load_case_volume(manifest_path: str | Path, record: dict, key: str) -> Volume:
    plane = "sagittal" if key.endswith("sagittal") else "axial"
    return load_volume(Path(manifest_path).parent / record[key], plane)
