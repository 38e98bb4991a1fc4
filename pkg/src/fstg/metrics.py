"""Threshold metrics, rank AUC, stratified bootstrap CIs and report files."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
from scipy.stats import rankdata

from .errors import SingleClass, UndefinedMetric

METRICS = ("auc", "sensitivity", "specificity", "f1", "balanced_acc")
TABLE_COLUMNS = ("AUC (95% CI)", "Sensitivity (95% CI)", "Specificity (95% CI)", "F1 (95% CI)",
                 "Balanced_acc (95% CI)")


@dataclass
class PredictionSet:
    labels: np.ndarray
    scores: np.ndarray
    task: str = "EVI"

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=int)
        self.scores = np.asarray(self.scores, dtype=float)
        if self.labels.shape != self.scores.shape or self.labels.ndim != 1:
            raise ValueError("labels and scores must be 1-D arrays of equal length")
        if len(self.labels) == 0:
            raise ValueError("prediction set is empty")
        if not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
        if not np.isfinite(self.scores).all():
            raise ValueError("scores must be finite")


def confusion(labels, scores, threshold: float = 0.5) -> tuple[int, int, int, int]:
    """(TP, FP, TN, FN); a score equal to the threshold counts as positive."""
    y = np.asarray(labels, dtype=int)
    pred = np.asarray(scores, dtype=float) >= threshold
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    tn = int(np.sum(~pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))
    return tp, fp, tn, fn


def sensitivity(tp: int, fn: int) -> float:
    if tp + fn == 0:
        raise UndefinedMetric("sensitivity undefined without positives")
    return tp / (tp + fn)


def specificity(tn: int, fp: int) -> float:
    if tn + fp == 0:
        raise UndefinedMetric("specificity undefined without negatives")
    return tn / (tn + fp)


def balanced_accuracy(sens: float, spec: float) -> float:
    return (sens + spec) / 2


def f1(tp: int, fp: int, fn: int) -> float:
    if tp + fp + fn == 0:
        raise UndefinedMetric("F1 undefined when TP, FP and FN are all zero")
    return tp / (tp + 0.5 * (fp + fn))


def roc_auc(labels, scores) -> float:
    """Mann-Whitney AUC from mid-ranks; ties contribute one half."""
    y = np.asarray(labels, dtype=int)
    s = np.asarray(scores, dtype=float)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC needs both classes")
    ranks = rankdata(s)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def roc_curve(labels, scores) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(fpr, tpr, thresholds), thresholds descending from +inf."""
    y = np.asarray(labels, dtype=int)
    s = np.asarray(scores, dtype=float)
    n_pos, n_neg = int(y.sum()), int(len(y) - y.sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("ROC curve needs both classes")
    thresholds = np.concatenate([[np.inf], np.unique(s)[::-1]])
    tpr = np.array([np.sum((s >= t) & (y == 1)) for t in thresholds]) / n_pos
    fpr = np.array([np.sum((s >= t) & (y == 0)) for t in thresholds]) / n_neg
    return fpr, tpr, thresholds


def metric_values(labels, scores, threshold: float = 0.5) -> dict[str, float]:
    tp, fp, tn, fn = confusion(labels, scores, threshold)
    sens, spec = sensitivity(tp, fn), specificity(tn, fp)
    return {
        "auc": roc_auc(labels, scores),
        "sensitivity": sens,
        "specificity": spec,
        "f1": f1(tp, fp, fn),
        "balanced_acc": balanced_accuracy(sens, spec),
    }


def metric_fn(name: str, threshold: float = 0.5) -> Callable[[np.ndarray, np.ndarray], float]:
    if name == "auc":
        return roc_auc
    return lambda y, s: metric_values(y, s, threshold)[name]


def _resample_indices(pos: np.ndarray, neg: np.ndarray, seed: int, i: int) -> np.ndarray:
    # one stream per iteration, so any execution order gives the same draws
    rng = np.random.default_rng([seed, i])
    return np.concatenate([rng.choice(pos, len(pos)), rng.choice(neg, len(neg))])


def bootstrap_distribution(labels, scores, metric: Callable, n_iter: int = 1000, seed: int = 0) -> np.ndarray:
    """Metric over ``n_iter`` class-stratified resamples of the cases."""
    y = np.asarray(labels, dtype=int)
    s = np.asarray(scores, dtype=float)
    pos, neg = np.flatnonzero(y == 1), np.flatnonzero(y == 0)
    if len(pos) == 0 or len(neg) == 0:
        raise SingleClass("stratified bootstrap needs both classes")
    out = np.empty(n_iter)
    for i in range(n_iter):
        idx = _resample_indices(pos, neg, seed, i)
        out[i] = metric(y[idx], s[idx])
    return out


def bootstrap_ci(labels, scores, metric: Callable, n_iter: int = 1000, level: float = 0.95,
                 seed: int = 0) -> tuple[float, float]:
    """Percentile interval of the stratified bootstrap distribution."""
    dist = bootstrap_distribution(labels, scores, metric, n_iter, seed)
    tail = 100 * (1 - level) / 2
    lo, hi = np.percentile(dist, [tail, 100 - tail])
    return float(lo), float(hi)


def bootstrap_all(labels, scores, n_iter: int = 1000, level: float = 0.95, seed: int = 0,
                  threshold: float = 0.5) -> dict[str, tuple[float, float]]:
    """CIs for all five metrics from one shared set of resamples."""
    y = np.asarray(labels, dtype=int)
    s = np.asarray(scores, dtype=float)
    pos, neg = np.flatnonzero(y == 1), np.flatnonzero(y == 0)
    if len(pos) == 0 or len(neg) == 0:
        raise SingleClass("stratified bootstrap needs both classes")
    dist = {m: np.empty(n_iter) for m in METRICS}
    for i in range(n_iter):
        idx = _resample_indices(pos, neg, seed, i)
        for m, v in metric_values(y[idx], s[idx], threshold).items():
            dist[m][i] = v
    tail = 100 * (1 - level) / 2
    return {m: tuple(float(v) for v in np.percentile(d, [tail, 100 - tail])) for m, d in dist.items()}


# --------------------------------------------------------------------------
# reports


@dataclass
class EvalReport:
    tasks: dict[str, dict[str, dict[str, float]]]
    n_bootstrap: int
    threshold: float
    seed: int
    level: float = 0.95
    roc: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]] = field(default_factory=dict, repr=False)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"tasks": self.tasks, "n_bootstrap": self.n_bootstrap, "threshold": self.threshold,
                "seed": self.seed, "level": self.level, **self.extra}


def evaluate_run(preds: Mapping[str, PredictionSet] | PredictionSet, n_iter: int = 1000, level: float = 0.95,
                 seed: int = 0, threshold: float = 0.5, overall_score: float | None = None) -> EvalReport:
    """Point estimates and bootstrap CIs for every task.

    ``overall_score`` is stored verbatim when given; it is never computed.
    """
    if isinstance(preds, PredictionSet):
        preds = {preds.task: preds}
    tasks, roc = {}, {}
    for task, ps in preds.items():
        est = metric_values(ps.labels, ps.scores, threshold)
        cis = bootstrap_all(ps.labels, ps.scores, n_iter, level, seed, threshold)
        tasks[task] = {m: {"est": est[m], "lo": cis[m][0], "hi": cis[m][1]} for m in METRICS}
        roc[task] = roc_curve(ps.labels, ps.scores)
    extra = {} if overall_score is None else {"overall_score": overall_score}
    return EvalReport(tasks, n_iter, threshold, seed, level, roc, extra)


def format_cell(entry: Mapping[str, float]) -> str:
    return f"{entry['est']:.2f} ({entry['lo']:.2f}, {entry['hi']:.2f})"


def write_report(report: EvalReport, out_dir: str | Path, stem: str = "report") -> list[Path]:
    """JSON report, table-layout CSV, and one ROC CSV + SVG per task."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    js = out_dir / f"{stem}.json"
    js.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    written.append(js)
    table = out_dir / f"{stem}.csv"
    with open(table, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("Task",) + TABLE_COLUMNS)
        for task, entries in report.tasks.items():
            w.writerow([task] + [format_cell(entries[m]) for m in METRICS])
    written.append(table)
    for task, (fpr, tpr, thr) in report.roc.items():
        path = out_dir / f"{stem}_roc_{task}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("fpr", "tpr", "threshold"))
            for a, b, t in zip(fpr, tpr, thr):
                w.writerow((repr(float(a)), repr(float(b)), repr(float(t))))
        written.append(path)
        svg = out_dir / f"{stem}_roc_{task}.svg"
        svg.write_text(roc_svg(fpr, tpr, f"{task} AUC {report.tasks[task]['auc']['est']:.2f}"))
        written.append(svg)
    return written


def roc_svg(fpr, tpr, title: str = "", size: int = 320) -> str:
    pad = 30
    span = size - 2 * pad
    pts = " ".join(f"{pad + span * x:.2f},{size - pad - span * y:.2f}" for x, y in zip(fpr, tpr))
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">\n'
        f'<rect x="{pad}" y="{pad}" width="{span}" height="{span}" fill="none" stroke="black"/>\n'
        f'<line x1="{pad}" y1="{size - pad}" x2="{size - pad}" y2="{pad}" stroke="grey" stroke-dasharray="4"/>\n'
        f'<polyline points="{pts}" fill="none" stroke="navy" stroke-width="2"/>\n'
        f'<text x="{pad}" y="{pad - 8}" font-size="12">{title}</text>\n'
        "</svg>\n"
    )
