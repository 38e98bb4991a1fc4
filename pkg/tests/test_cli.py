import csv
import hashlib
import json

import pytest

from fstg.cli import load_config, main
from fstg.errors import ConfigInvalid

BASE = {
    "seed": 0,
    "paths": {"out": "run"},
    "phantom": {"n_patients": 20, "contrast": 2.0},
    "preprocess": {"target_spacing": [1.0, 1.0, 4.0]},
    "harmonize": {"n_variants": 4, "epochs": 3, "max_slices": 4},
    "train": {"model": "umedpt_lr", "view": "fused", "harmonized": True, "mlp": {"epochs": 30},
              "seresnet": {"epochs": 3}},
    "evaluate": {"n_bootstrap": 50},
    "table": {"views": ["axial", "sagittal", "fused"], "harmonized": [False, True]},
}
PIPELINE = ("phantom-gen", "preprocess", "harmonize-train", "harmonize-apply", "featurize", "train", "evaluate",
            "table")


def _config(tmp, name="cfg.json", **sections):
    doc = json.loads(json.dumps(BASE))
    for key, val in sections.items():
        if isinstance(val, dict):
            doc.setdefault(key, {}).update(val)
        else:
            doc[key] = val
    path = tmp / name
    path.write_text(json.dumps(doc))
    return path


def _snapshot(root):
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg = _config(tmp)
    raw_cfg = _config(tmp, "raw.json", train={"harmonized": False})
    _run_all(cfg, raw_cfg)
    return tmp, cfg, raw_cfg


def _run_all(cfg, raw_cfg):
    for cmd in PIPELINE:
        if cmd == "table":
            # the table grid also needs raw features
            assert main(["featurize", "--config", str(raw_cfg)]) == 0
        assert main([cmd, "--config", str(cfg)]) == 0, cmd


def test_pipeline_outputs(pipeline):
    tmp, _, _ = pipeline
    out = tmp / "run"
    assert (out / "dataset" / "dataset.json").exists()
    assert (out / "harmonizer" / "harmonizer.fhae").exists()
    assert (out / "features" / "raw.feat").exists() and (out / "features" / "harmonized.feat").exists()
    report = json.loads((out / "reports" / "umedpt_lr_fused_harmonized.json").read_text())
    for task in ("EVI", "MFI"):
        assert set(report["tasks"][task]) == {"auc", "sensitivity", "specificity", "f1", "balanced_acc"}


def test_table_has_grid_rows(pipeline):
    tmp, _, _ = pipeline
    for task in ("EVI", "MFI"):
        rows = list(csv.reader(open(tmp / "run" / "tables" / f"table_{task}.csv")))
        assert rows[0][:3] == ["Model", "View", "Harmonized"]
        assert rows[0][3:] == ["AUC (95% CI)", "Sensitivity (95% CI)", "Specificity (95% CI)", "F1 (95% CI)",
                               "Balanced_acc (95% CI)"]
        grid = {(r[1], r[2]) for r in rows[1:]}
        assert len(rows) == 7 and len(grid) == 6


def test_manifest_records_defaults(pipeline):
    tmp, _, _ = pipeline
    doc = json.loads((tmp / "run" / "manifests" / "preprocess.json").read_text())
    assert "preprocess.patch_size" in doc["defaults_used"]
    assert "preprocess.target_spacing" not in doc["defaults_used"]
    assert doc["config"]["preprocess"]["patch_size"] == [32, 32, 8]
    assert len(doc["config_sha256"]) == 64
    assert doc["design"] and doc["versions"]["fstg"]
    for rel, digest in doc["outputs"].items():
        assert hashlib.sha256((tmp / "run" / rel).read_bytes()).hexdigest() == digest
    assert "time" not in json.dumps(doc).lower()


def test_rerun_is_byte_identical(pipeline):
    tmp, cfg, raw_cfg = pipeline
    before = _snapshot(tmp / "run")
    _run_all(cfg, raw_cfg)
    assert _snapshot(tmp / "run") == before


@pytest.mark.parametrize("model,view", [("mlp_head", "fused"), ("seresnet_toy", "axial")])
def test_other_models(pipeline, model, view):
    tmp, _, _ = pipeline
    cfg = _config(tmp, f"{model}.json", train={"model": model, "view": view, "harmonized": False})
    assert main(["train", "--config", str(cfg)]) == 0
    assert main(["evaluate", "--config", str(cfg)]) == 0
    assert (tmp / "run" / "reports" / f"{model}_{view}_raw.csv").exists()


def test_exit_codes(pipeline, tmp_path, capsys):
    tmp, _, _ = pipeline
    fused_cnn = _config(tmp, "cnn_fused.json", train={"model": "seresnet_toy", "view": "fused"})
    assert main(["train", "--config", str(fused_cnn)]) == 2
    missing = _config(tmp, "missing.json", paths={"out": "run", "harmonizer": "nope.fhae"})
    assert main(["harmonize-apply", "--config", str(missing)]) == 3
    bad = tmp_path / "bad.json"
    bad.write_text('{"bogus": 1}')
    assert main(["train", "--config", str(bad)]) == 2
    assert main(["train", "--config", str(tmp_path / "absent.json")]) == 3
    fresh = _config(tmp_path, paths={"out": "empty"})
    assert main(["featurize", "--config", str(fresh)]) == 3
    capsys.readouterr()


def test_load_config_validation(tmp_path):
    cfg, defaulted = load_config(_config(tmp_path), seed=7, out="elsewhere")
    assert cfg["seed"] == 7
    assert cfg["paths"]["out"].endswith("elsewhere")
    assert "evaluate.threshold" in defaulted
    p = _config(tmp_path, "p.json", preprocess={"percentiles": [90, 10]})
    with pytest.raises(ConfigInvalid):
        load_config(p)
    p = _config(tmp_path, "v.json", train={"view": "coronal"})
    with pytest.raises(ConfigInvalid):
        load_config(p)
