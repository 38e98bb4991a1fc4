"""Experiment driver: ``fstg <subcommand> --config <path> [--seed N] [--out DIR]``.

Every command reads one JSON config (validated against ``config_schema.json``),
fills in defaults, and writes its artifacts plus a run manifest under the
output directory. Manifests hold no timestamps, so a rerun with the same
config and inputs reproduces every file byte for byte.

Output layout below ``paths.out``::

    dataset/             phantom-gen (unless paths.dataset points elsewhere)
    patches/raw/         preprocess
    harmonizer/          harmonize-train
    patches/harmonized/  harmonize-apply
    features/            featurize
    models/              train
    reports/             evaluate
    tables/              table
    manifests/           one JSON per run
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import os
import platform
import sys
from concurrent.futures import ThreadPoolExecutor
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Iterable

import jsonschema
import numpy as np
import scipy

from . import __version__
from .cnn import load_seresnet, save_seresnet, toy_config, train_toy
from .errors import ConfigInvalid, EmptyMask, FstgError, MissingInput
from .features import (FEATURE_DIM, SliceFeatureStack, encode_volume, fuse_views, grouper_aggregate,
                       load_feature_file, stacks_by_patient, write_feature_file)
from .fourier import PerturbationConfig
from .harmonizer import harmonize_volume, load_harmonizer, save_harmonizer, train_harmonizer
from .metrics import METRICS, PredictionSet, evaluate_run, format_cell, write_report
from .phantom import PhantomSpec, generate, save_dataset
from .preprocess import PatchSpec, extract_patch
from .shallow import (load_mlp, load_pca_lr, logreg_fit, logreg_predict, pca_fit, pca_transform, predict_mlp,
                      save_mlp, save_pca_lr, train_mlp_head)
from .volume import LabelMask, load_volume, resample_trilinear, write_nifti

log = logging.getLogger("fstg")

VIEWS = ("axial", "sagittal")

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "paths": {"out": "fstg_out", "dataset": None, "harmonizer": None, "external_features": None},
    "phantom": {"n_patients": 60, "evi_rate": 0.311, "mfi_rate": 0.236, "world": 64, "slice_factor": 4,
                "n_sites": 2, "contrast": 1.0, "noise": 0.08},
    "preprocess": {"patch_size": [32, 32, 8], "percentiles": [2.5, 97.5], "target_spacing": None,
                   "normalize_after_crop": True, "pad_value": 0.0},
    "harmonize": {"n_variants": 200, "radius_frac_range": [0.05, 0.6], "gain_range": [0.5, 2.0], "taper": 0.0,
                  "epochs": 100, "lambda": 1e-5, "step": 1e-3, "channels": [16, 32, 64], "max_slices": 16,
                  "batch_size": None},
    "features": {"encoder": "toy", "encoder_seed": 0},
    "train": {"model": "umedpt_lr", "view": "fused", "harmonized": False, "tasks": ["EVI", "MFI"],
              "pca_variance": 0.95, "pca_components": None, "lr_lambda": 1e-2,
              "mlp": {"hidden": 128, "epochs": 200, "lr": 5e-4, "weight_decay": 1e-2, "train_grouper": True},
              "seresnet": {"epochs": 40, "base_lr": 1e-3, "momentum": 0.9, "gamma": 2.0,
                           "stride_plan": "adopted"}},
    "evaluate": {"n_bootstrap": 1000, "threshold": 0.5, "level": 0.95},
    "table": {"views": ["axial", "sagittal", "fused"], "harmonized": [False, True], "models": ["umedpt_lr"]},
}

# fixed choices that are not config keys but shape every result
DESIGN_NOTES = {
    "normalization": "percentile clip (linear interpolation) then population z-score, eps 1e-8",
    "crop": "mask-centroid centre, round half up, pad out-of-range voxels",
    "mask_resampling": "trilinear then threshold at 0.5",
    "perturbation": "hard-edged disk in the centred spectrum, radius uniform, gain log-uniform",
    "harmonizer_activation": "LeakyReLU slope 0.01",
    "split": "joint (EVI, MFI) stratified, test 20% then val 20% of the rest, largest remainder",
    "fitting_set": "train and val splits together; test held out",
    "grouper_for_pca_lr": "frozen uniform average",
    "fused_mlp_input": "1024-d concatenation of per-view averages, grouper off",
    "bootstrap": "class-stratified, percentile interval",
    "positive_rule": "score >= threshold",
}


# --------------------------------------------------------------------------
# config handling


def _schema() -> dict:
    return json.loads(resources.files("fstg").joinpath("config_schema.json").read_text())


def _merge(base: dict, over: dict, prefix: str, defaulted: list[str]) -> dict:
    out = {}
    for key, val in base.items():
        name = f"{prefix}{key}"
        if key not in over:
            out[key] = copy.deepcopy(val)
            defaulted.append(name)
        elif isinstance(val, dict) and isinstance(over[key], dict):
            out[key] = _merge(val, over[key], name + ".", defaulted)
        else:
            out[key] = copy.deepcopy(over[key])
    return out


def load_config(path: str | Path, seed: int | None = None, out: str | None = None) -> tuple[dict, list[str]]:
    """Validated config with defaults filled in, plus the dotted keys that took defaults."""
    path = Path(path)
    if not path.is_file():
        raise MissingInput(f"config file {path} not found")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"{path}: not valid JSON ({exc})") from exc
    try:
        jsonschema.validate(raw, _schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigInvalid(f"{path}: {where}: {exc.message}") from exc
    defaulted: list[str] = []
    cfg = _merge(DEFAULTS, raw, "", defaulted)
    if seed is not None:
        cfg["seed"] = seed
    lo, hi = cfg["preprocess"]["percentiles"]
    if not lo < hi:
        raise ConfigInvalid("preprocess.percentiles must satisfy lo < hi")
    for key in ("radius_frac_range", "gain_range"):
        a, b = cfg["harmonize"][key]
        if a > b:
            raise ConfigInvalid(f"harmonize.{key} must be ascending")
    # relative paths are taken relative to the config file
    base = path.parent
    for key, val in cfg["paths"].items():
        if val is not None and not Path(val).is_absolute():
            cfg["paths"][key] = str(base / val)
    if out is not None:
        cfg["paths"]["out"] = str(Path(out).resolve())
    return cfg, defaulted


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


# --------------------------------------------------------------------------
# run context


class Run:
    """Resolved paths and bookkeeping for one command invocation."""

    def __init__(self, command: str, cfg: dict, defaulted: list[str]):
        self.command = command
        self.cfg = cfg
        self.defaulted = defaulted
        self.out = Path(cfg["paths"]["out"])
        self.outputs: list[Path] = []
        self.inputs: list[Path] = []
        self.extra: dict[str, Any] = {}

    @property
    def seed(self) -> int:
        return int(self.cfg["seed"])

    def dataset_manifest(self) -> Path:
        p = self.cfg["paths"]["dataset"]
        return Path(p) if p else self.out / "dataset" / "dataset.json"

    def harmonizer_path(self) -> Path:
        p = self.cfg["paths"]["harmonizer"]
        return Path(p) if p else self.out / "harmonizer" / "harmonizer.fhae"

    def patch_dir(self, harmonized: bool) -> Path:
        return self.out / "patches" / ("harmonized" if harmonized else "raw")

    def feature_path(self, harmonized: bool) -> Path:
        return self.out / "features" / f"{'harmonized' if harmonized else 'raw'}.feat"

    def need(self, path: Path, what: str) -> Path:
        if not path.exists():
            raise MissingInput(f"{what} not found at {path}")
        self.inputs.append(path)
        return path

    def wrote(self, *paths: Path) -> None:
        self.outputs.extend(paths)

    def write_manifest(self, name: str | None = None) -> Path:
        rel = lambda p: os.path.relpath(p, self.out)  # noqa: E731
        doc = {
            "command": self.command,
            "config": self.cfg,
            "config_sha256": config_hash(self.cfg),
            "seed": self.seed,
            "defaults_used": sorted(self.defaulted),
            "design": DESIGN_NOTES,
            "versions": {"fstg": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                         "python": platform.python_version()},
            "inputs": {rel(p): _digest(p) for p in self.inputs if p.is_file()},
            "outputs": {rel(p): _digest(p) for p in self.outputs},
            **self.extra,
        }
        path = self.out / "manifests" / f"{name or self.command}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
        return path


def _digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _threads() -> int:
    try:
        n = int(os.environ.get("FSTG_THREADS", "1"))
    except ValueError as exc:
        raise ConfigInvalid("FSTG_THREADS must be an integer") from exc
    return max(1, n)


def _pmap(fn: Callable, items: Iterable) -> list:
    """Order-preserving map, threaded when FSTG_THREADS > 1."""
    items = list(items)
    n = _threads()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _write_json(path: Path, doc: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path


def _read_json(path: Path) -> Any:
    return json.loads(Path(path).read_text())


# --------------------------------------------------------------------------
# commands


def cmd_phantom_gen(run: Run) -> None:
    p = run.cfg["phantom"]
    spec = PhantomSpec(n_patients=p["n_patients"], evi_rate=p["evi_rate"], mfi_rate=p["mfi_rate"],
                       world=p["world"], slice_factor=p["slice_factor"], seed=run.seed, n_sites=p["n_sites"],
                       contrast=p["contrast"], noise=p["noise"])
    target = run.dataset_manifest()
    manifest = save_dataset(generate(spec), target.parent, spec, split_seed=run.seed)
    if manifest != target:
        manifest.replace(target)
    doc = _read_json(target)
    vols = [target.parent / rec[k] for rec in doc["cases"] for k in ("axial", "sagittal", "mask_axial",
                                                                       "mask_sagittal")]
    run.wrote(target, *vols)


def _patch_index(run: Run, harmonized: bool) -> dict:
    return _read_json(run.need(run.patch_dir(harmonized) / "index.json", "patch index"))


def cmd_preprocess(run: Run) -> None:
    pp = run.cfg["preprocess"]
    if pp["target_spacing"] is None:
        raise ConfigInvalid("preprocess.target_spacing is required")
    manifest = run.need(run.dataset_manifest(), "dataset manifest")
    doc = _read_json(manifest)
    spec = PatchSpec(tuple(pp["patch_size"]), pp["pad_value"])
    out_dir = run.patch_dir(False)
    out_dir.mkdir(parents=True, exist_ok=True)

    def one(job):
        rec, view = job
        vol = load_volume(run.need(manifest.parent / rec[view], f"{view} volume"), view)
        mask = load_volume(run.need(manifest.parent / rec[f"mask_{view}"], f"{view} mask"), view)
        vol = resample_trilinear(vol, pp["target_spacing"])
        m = resample_trilinear(mask, pp["target_spacing"])
        mask = LabelMask((m.data >= 0.5).astype(float), m.spacing, view)
        if not mask.data.any():
            raise EmptyMask(f"{rec['patient_id']} {view}: mask empty after resampling")
        patch = extract_patch(vol, mask, spec, tuple(pp["percentiles"]), pp["normalize_after_crop"])
        path = out_dir / f"{rec['patient_id']}_{view}.nii"
        write_nifti(patch, path)
        return path

    jobs = [(rec, view) for rec in doc["cases"] for view in VIEWS]
    paths = _pmap(one, jobs)
    index = {"cases": [{"patient_id": rec["patient_id"], "evi": rec["evi"], "mfi": rec["mfi"],
                        "split": rec["split"], "site": rec["site"],
                        "patches": {v: f"{rec['patient_id']}_{v}.nii" for v in VIEWS}}
                       for rec in doc["cases"]]}
    run.wrote(*paths, _write_json(out_dir / "index.json", index))


def _load_patch(run: Run, harmonized: bool, rec: dict, view: str):
    return load_volume(run.need(run.patch_dir(harmonized) / rec["patches"][view], "patch"), view)


def cmd_harmonize_train(run: Run) -> None:
    h = run.cfg["harmonize"]
    index = _patch_index(run, False)
    candidates = []
    for rec in index["cases"]:
        if rec["split"] != "train":
            continue
        for view in VIEWS:
            data = _load_patch(run, False, rec, view).data
            candidates.extend(data[:, :, k] for k in range(data.shape[2]))
    if not candidates:
        raise MissingInput("no training-split patches to learn from")
    rng = np.random.default_rng(run.seed)
    pick = np.sort(rng.permutation(len(candidates))[:h["max_slices"]])
    slices = [candidates[i] for i in pick]
    pcfg = PerturbationConfig(h["n_variants"], tuple(h["radius_frac_range"]), tuple(h["gain_range"]),
                              run.seed, h["taper"])
    result = train_harmonizer(slices, pcfg, epochs=h["epochs"], lam=h["lambda"], step=h["step"], seed=run.seed,
                              batch_size=h["batch_size"], channels=tuple(h["channels"]))
    path = run.harmonizer_path()
    path.parent.mkdir(parents=True, exist_ok=True)
    save_harmonizer(result.model, path)
    hist = _write_json(path.with_suffix(".history.json"), {"loss": result.history, "n_slices": len(slices)})
    run.wrote(path, hist)


def _require_harmonizer(run: Run) -> Path:
    return run.need(run.harmonizer_path(), "harmonizer model (harmonized input requested)")


def cmd_harmonize_apply(run: Run) -> None:
    model = load_harmonizer(_require_harmonizer(run))
    index = _patch_index(run, False)
    out_dir = run.patch_dir(True)
    out_dir.mkdir(parents=True, exist_ok=True)

    def one(job):
        rec, view = job
        path = out_dir / rec["patches"][view]
        write_nifti(harmonize_volume(model, _load_patch(run, False, rec, view)), path)
        return path

    # the model caches nothing when cache=False, so threads can share it
    paths = _pmap(one, [(rec, view) for rec in index["cases"] for view in VIEWS])
    run.wrote(*paths, _write_json(out_dir / "index.json", index))


def cmd_featurize(run: Run) -> None:
    harmonized = run.cfg["train"]["harmonized"]
    if harmonized:
        _require_harmonizer(run)
    index = _patch_index(run, harmonized)
    path = run.feature_path(harmonized)
    path.parent.mkdir(parents=True, exist_ok=True)
    if run.cfg["features"]["encoder"] == "external":
        ext = run.cfg["paths"]["external_features"]
        if ext is None:
            raise ConfigInvalid("features.encoder 'external' needs paths.external_features")
        stacks = load_feature_file(run.need(Path(ext), "external feature file"))
        by_pid = stacks_by_patient(stacks)
        missing = [r["patient_id"] for r in index["cases"]
                   if any(v not in by_pid.get(r["patient_id"], {}) for v in VIEWS)]
        if missing:
            raise MissingInput(f"external features lack {len(missing)} patients, e.g. {missing[0]}")
        ordered = [by_pid[r["patient_id"]][v] for r in index["cases"] for v in VIEWS]
    else:
        seed = run.cfg["features"]["encoder_seed"]

        def one(job):
            rec, view = job
            return SliceFeatureStack(rec["patient_id"], view,
                                     encode_volume(_load_patch(run, harmonized, rec, view).data, seed))

        ordered = _pmap(one, [(rec, view) for rec in index["cases"] for view in VIEWS])
    write_feature_file(path, ordered, ordered[0].dim if ordered else FEATURE_DIM)
    run.wrote(path)


# ---- training / evaluation helpers


def cell_tag(model: str, view: str, harmonized: bool) -> str:
    return f"{model}_{view}_{'harmonized' if harmonized else 'raw'}"


def _cases(run: Run, harmonized: bool, splits: tuple[str, ...]) -> list[dict]:
    return [r for r in _patch_index(run, harmonized)["cases"] if r["split"] in splits]


def _view_inputs(stacks: dict, cases: list[dict], view: str) -> list[np.ndarray]:
    """Per-case slice stacks for a single view, or one fused 1024-d row per case."""
    if view == "fused":
        return [fuse_views(grouper_aggregate(stacks[r["patient_id"]]["axial"]),
                           grouper_aggregate(stacks[r["patient_id"]]["sagittal"]),
                           stacks[r["patient_id"]]["axial"].dim)[None, :] for r in cases]
    return [stacks[r["patient_id"]][view].vectors for r in cases]


def _labels(cases: list[dict], task: str) -> np.ndarray:
    return np.array([r[task.lower()] for r in cases], dtype=int)


def _model_path(run: Run, tag: str, task: str, model: str) -> Path:
    return run.out / "models" / f"{tag}_{task}.{'fsrn' if model == 'seresnet_toy' else 'json'}"


def _patch_array(run: Run, harmonized: bool, cases: list[dict], view: str) -> np.ndarray:
    return np.stack([_load_patch(run, harmonized, r, view).data for r in cases])


def _toy_cnn_config(run: Run):
    return toy_config(stride_plan=run.cfg["train"]["seresnet"]["stride_plan"])


def train_cell(run: Run, model: str, view: str, harmonized: bool) -> list[Path]:
    t = run.cfg["train"]
    if harmonized:
        _require_harmonizer(run)
    cases = _cases(run, harmonized, ("train", "val"))
    tag = cell_tag(model, view, harmonized)
    written = []
    if model == "seresnet_toy":
        if view == "fused":
            raise ConfigInvalid("seresnet_toy works on one view at a time")
        x = _patch_array(run, harmonized, cases, view)
        s = t["seresnet"]
        for task in t["tasks"]:
            res = train_toy(_toy_cnn_config(run), x, _labels(cases, task), epochs=s["epochs"],
                            base_lr=s["base_lr"], momentum=s["momentum"], gamma=s["gamma"], seed=run.seed)
            path = _model_path(run, tag, task, model)
            path.parent.mkdir(parents=True, exist_ok=True)
            save_seresnet(res.model, path)
            written.append(path)
        run.wrote(*written)
        return written

    stacks = stacks_by_patient(load_feature_file(run.need(run.feature_path(harmonized), "feature file")))
    inputs = _view_inputs(stacks, cases, view)
    meta = {"view": view, "harmonized": harmonized, "n_fit": len(cases)}
    for task in t["tasks"]:
        y = _labels(cases, task)
        path = _model_path(run, tag, task, model)
        path.parent.mkdir(parents=True, exist_ok=True)
        if model == "umedpt_lr":
            X = np.stack([grouper_aggregate(s) for s in inputs])
            pca = pca_fit(X, t["pca_variance"], t["pca_components"])
            lr = logreg_fit(pca_transform(pca, X), y, lam=t["lr_lambda"])
            save_pca_lr(path, pca, lr, {**meta, "task": task})
        else:
            m = t["mlp"]
            res = train_mlp_head(inputs, y, epochs=m["epochs"], lr=m["lr"], weight_decay=m["weight_decay"],
                                 hidden=m["hidden"], train_grouper=m["train_grouper"] and view != "fused",
                                 seed=run.seed)
            save_mlp(path, res, {**meta, "task": task})
        written.append(path)
    run.wrote(*written)
    return written


def predict_cell(run: Run, model: str, view: str, harmonized: bool) -> dict[str, PredictionSet]:
    cases = _cases(run, harmonized, ("test",))
    tag = cell_tag(model, view, harmonized)
    preds = {}
    if model == "seresnet_toy":
        x = _patch_array(run, harmonized, cases, view)
    else:
        stacks = stacks_by_patient(load_feature_file(run.need(run.feature_path(harmonized), "feature file")))
        inputs = _view_inputs(stacks, cases, view)
    for task in run.cfg["train"]["tasks"]:
        path = run.need(_model_path(run, tag, task, model), f"{task} model")
        if model == "seresnet_toy":
            scores = load_seresnet(path).predict_proba(x)
        elif model == "umedpt_lr":
            pca, lr, _ = load_pca_lr(path)
            X = np.stack([grouper_aggregate(s) for s in inputs])
            scores = logreg_predict(lr, pca_transform(pca, X))
        else:
            scores = predict_mlp(load_mlp(path), inputs)
        preds[task] = PredictionSet(_labels(cases, task), np.atleast_1d(scores), task)
    return preds


def evaluate_cell(run: Run, model: str, view: str, harmonized: bool):
    e = run.cfg["evaluate"]
    report = evaluate_run(predict_cell(run, model, view, harmonized), n_iter=e["n_bootstrap"], level=e["level"],
                          seed=run.seed, threshold=e["threshold"])
    report.extra.update({"model": model, "view": view, "harmonized": harmonized})
    run.wrote(*write_report(report, run.out / "reports", cell_tag(model, view, harmonized)))
    return report


def cmd_train(run: Run) -> None:
    t = run.cfg["train"]
    train_cell(run, t["model"], t["view"], t["harmonized"])


def cmd_evaluate(run: Run) -> None:
    t = run.cfg["train"]
    evaluate_cell(run, t["model"], t["view"], t["harmonized"])


def cmd_table(run: Run) -> None:
    tb = run.cfg["table"]
    rows: dict[str, list[list[str]]] = {task: [] for task in run.cfg["train"]["tasks"]}
    for model in tb["models"]:
        for harmonized in tb["harmonized"]:
            for view in tb["views"]:
                train_cell(run, model, view, harmonized)
                report = evaluate_cell(run, model, view, harmonized)
                for task, entries in report.tasks.items():
                    rows[task].append([model, view, "yes" if harmonized else "no"]
                                      + [format_cell(entries[m]) for m in METRICS])
    header = ["Model", "View", "Harmonized", "AUC (95% CI)", "Sensitivity (95% CI)", "Specificity (95% CI)",
              "F1 (95% CI)", "Balanced_acc (95% CI)"]
    out_dir = run.out / "tables"
    out_dir.mkdir(parents=True, exist_ok=True)
    for task, body in rows.items():
        path = out_dir / f"table_{task}.csv"
        path.write_text("\n".join(",".join(f'"{c}"' if "," in c else c for c in row)
                                  for row in [header] + body) + "\n")
        run.wrote(path)


COMMANDS: dict[str, Callable[[Run], None]] = {
    "phantom-gen": cmd_phantom_gen,
    "preprocess": cmd_preprocess,
    "harmonize-train": cmd_harmonize_train,
    "harmonize-apply": cmd_harmonize_apply,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "table": cmd_table,
}


def _manifest_name(command: str, cfg: dict) -> str:
    t = cfg["train"]
    if command in ("train", "evaluate"):
        return f"{command}_{cell_tag(t['model'], t['view'], t['harmonized'])}"
    if command == "featurize":
        return f"featurize_{'harmonized' if t['harmonized'] else 'raw'}"
    return command


def run_command(command: str, config: str | Path, seed: int | None = None, out: str | None = None) -> Path:
    """Run one subcommand; returns the manifest path."""
    if command not in COMMANDS:
        raise ConfigInvalid(f"unknown command {command!r}")
    cfg, defaulted = load_config(config, seed, out)
    run = Run(command, cfg, defaulted)
    run.out.mkdir(parents=True, exist_ok=True)
    COMMANDS[command](run)
    return run.write_manifest(_manifest_name(command, cfg))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fstg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"fstg {__version__}")
    parser.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override paths.out")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        manifest = run_command(args.command, args.config, args.seed, args.out)
    except FstgError as exc:
        print(f"fstg {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FloatingPointError as exc:
        print(f"fstg {args.command}: numeric failure: {exc}", file=sys.stderr)
        return 4
    print(manifest)
    return 0


if __name__ == "__main__":
    sys.exit(main())
