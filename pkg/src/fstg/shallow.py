"""PCA, L2 logistic regression, the MLP head and the classification losses."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DegenerateData, DimensionMismatch, Divergence, IoFailure, SingleClass
from .features import GrouperModel, grouper_aggregate, grouper_backward
from .nn import Adam, LeakyReLU, Linear, Module, sigmoid

# --------------------------------------------------------------------------
# PCA


@dataclass
class PCAModel:
    mean: np.ndarray
    components: np.ndarray  # (k, d), orthonormal rows
    explained_variance: np.ndarray
    total_variance: float

    @property
    def k(self) -> int:
        return self.components.shape[0]

    @property
    def dim(self) -> int:
        return self.components.shape[1]


def pca_fit(X: np.ndarray, variance_target: float = 0.95, n_components: int | None = None) -> PCAModel:
    """Thin SVD of the centred data.

    ``k`` is the smallest count whose cumulative explained-variance ratio reaches
    ``variance_target`` (or ``n_components`` when given), capped at min(n-1, d).
    Component signs are fixed so each row's largest-magnitude entry is positive.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2 or X.shape[1] < 1:
        raise DegenerateData(f"need an n x d matrix with n >= 2, got {X.shape}")
    n, d = X.shape
    mean = X.mean(axis=0)
    _, s, vt = np.linalg.svd(X - mean, full_matrices=False)
    var = s ** 2 / (n - 1)
    total = float(var.sum())
    if total <= 0:
        raise DegenerateData("data has zero total variance")
    cap = min(n - 1, d)
    if n_components is not None:
        k = min(int(n_components), cap)
    else:
        ratio = np.cumsum(var) / total
        k = min(int(np.searchsorted(ratio, variance_target - 1e-12) + 1), cap)
    comps = vt[:k].copy()
    flip = np.sign(comps[np.arange(k), np.argmax(np.abs(comps), axis=1)])
    comps *= flip[:, None]
    return PCAModel(mean, comps, var[:k].copy(), total)


def pca_transform(model: PCAModel, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.dim:
        raise DimensionMismatch(f"expected {model.dim} columns, got {X.shape[1]}")
    return (X - model.mean) @ model.components.T


def pca_inverse(model: PCAModel, scores: np.ndarray) -> np.ndarray:
    return model.mean + np.asarray(scores) @ model.components


# --------------------------------------------------------------------------
# logistic regression


@dataclass
class LRModel:
    w: np.ndarray
    b: float = 0.0
    lam: float = 0.0
    n_iter: int = 0
    grad_norm: float = float("nan")


def _softplus(z):
    return np.logaddexp(0.0, z)


def logreg_objective(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, lam: float) -> float:
    z = X @ w + b
    return float(np.mean(_softplus(z) - y * z) + 0.5 * lam * (w @ w))


def logreg_gradient(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, lam: float) -> tuple[np.ndarray, float]:
    r = sigmoid(X @ w + b) - y
    return X.T @ r / len(y) + lam * w, float(r.mean())


def logreg_fit(X: np.ndarray, y: Sequence[int], lam: float = 1.0, tol: float = 1e-8,
               max_iter: int = 10_000) -> LRModel:
    """Gradient descent with Armijo backtracking on the mean logistic loss + (lam/2)|w|^2.

    The weight step is scaled by 1/(1 + lam), a diagonal preconditioner that
    keeps the unpenalized intercept moving when lam is large. The trial step
    starts at twice the last accepted step. Stops when the gradient
    infinity-norm drops below ``tol`` or after ``max_iter`` steps.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if len(np.unique(y)) < 2:
        raise SingleClass("logistic regression needs both classes")
    if lam < 0:
        raise ValueError("lam must be >= 0")
    w, b = np.zeros(X.shape[1]), 0.0
    f = logreg_objective(w, b, X, y, lam)
    step = 1.0
    scale = 1.0 / (1.0 + lam)
    it, gnorm = 0, float("inf")
    for it in range(1, max_iter + 1):
        gw, gb = logreg_gradient(w, b, X, y, lam)
        gnorm = max(float(np.max(np.abs(gw), initial=0.0)), abs(gb))
        if gnorm < tol:
            break
        dw = gw * scale
        sq = float(gw @ dw + gb * gb)
        step *= 2.0
        while True:
            w_new, b_new = w - step * dw, b - step * gb
            f_new = logreg_objective(w_new, b_new, X, y, lam)
            if f_new <= f - 0.5 * step * sq or step < 1e-20:
                break
            step *= 0.5
        w, b, f = w_new, b_new, f_new
        if not (np.isfinite(f) and np.isfinite(w).all()):
            raise Divergence("logistic regression parameters became non-finite")
    return LRModel(w, float(b), lam, it, gnorm)


def logreg_predict(model: LRModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != model.w.shape[0]:
        raise DimensionMismatch(f"expected {model.w.shape[0]} features, got {X.shape[1]}")
    p = sigmoid(X @ model.w + model.b)
    return p[0] if single else p


# --------------------------------------------------------------------------
# losses (mean over the batch)


def focal_loss(p, y, alpha: float = 0.25, gamma: float = 2.0) -> float:
    """Alpha-balanced focal loss on probabilities."""
    p, y = np.asarray(p, float), np.asarray(y, float)
    loss = -alpha * y * (1 - p) ** gamma * np.log(p) - (1 - alpha) * (1 - y) * p ** gamma * np.log1p(-p)
    return float(np.mean(loss))


def focal_loss_logits(z, y, alpha: float = 0.25, gamma: float = 2.0) -> tuple[float, np.ndarray]:
    """Focal loss from logits, with its gradient w.r.t. each logit."""
    z, y = np.asarray(z, float), np.asarray(y, float)
    p = sigmoid(z)
    log_p, log_q = -_softplus(-z), -_softplus(z)
    q = 1.0 - p
    loss = -alpha * y * q ** gamma * log_p - (1 - alpha) * (1 - y) * p ** gamma * log_q
    d_pos = alpha * (gamma * q ** gamma * p * log_p - q ** (gamma + 1))
    d_neg = (1 - alpha) * (p ** (gamma + 1) - gamma * p ** gamma * q * log_q)
    grad = (y * d_pos + (1 - y) * d_neg) / z.size
    return float(np.mean(loss)), grad


def weighted_bce(p, y, w_pos: float = 1.0) -> float:
    p, y = np.asarray(p, float), np.asarray(y, float)
    if w_pos <= 0:
        raise ValueError("w_pos must be positive")
    return float(np.mean(-w_pos * y * np.log(p) - (1 - y) * np.log1p(-p)))


def weighted_bce_logits(z, y, w_pos: float = 1.0) -> tuple[float, np.ndarray]:
    z, y = np.asarray(z, float), np.asarray(y, float)
    loss = w_pos * y * _softplus(-z) + (1 - y) * _softplus(z)
    p = sigmoid(z)
    grad = (w_pos * y * (p - 1) + (1 - y) * p) / z.size
    return float(np.mean(loss)), grad


def inverse_frequency_alpha(y: Sequence[int]) -> float:
    """Positive-class weight 1 - prevalence, the focal-loss alpha default."""
    y = np.asarray(y, float)
    return float(1.0 - y.mean())


# --------------------------------------------------------------------------
# MLP head


class MlpHead(Module):
    """d_in -> hidden (LeakyReLU) -> 1 logit."""

    def __init__(self, d_in: int = 512, hidden: int = 128, seed: int = 0, zero_output: bool = False):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.d_in, self.hidden = d_in, hidden
        self.fc1 = self.add("fc1", Linear(d_in, hidden, rng))
        self.act = LeakyReLU()
        self.fc2 = self.add("fc2", Linear(hidden, 1, rng, init="zeros" if zero_output else "he"))

    def logits(self, X: np.ndarray, cache: bool = True) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.d_in:
            raise DimensionMismatch(f"MLP head expects {self.d_in} inputs, got {X.shape[1]}")
        return self.fc2.forward(self.act.forward(self.fc1.forward(X, cache), cache), cache)[:, 0]

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        """Accumulate parameter grads; returns the gradient w.r.t. the inputs."""
        return self.fc1.backward(self.act.backward(self.fc2.backward(np.asarray(dlogits)[:, None])))


def mlp_forward(head: MlpHead, f: np.ndarray) -> np.ndarray | float:
    f = np.asarray(f, float)
    p = sigmoid(head.logits(f, cache=True))
    return float(p[0]) if f.ndim == 1 else p


def mlp_backward(head: MlpHead, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Parameter gradients for the last :func:`mlp_forward` call."""
    head.zero_grad()
    head.backward(np.atleast_1d(dlogits))
    return head.gradients()


@dataclass
class MlpTrainResult:
    head: MlpHead
    grouper: GrouperModel | None
    history: list[float] = field(default_factory=list)


def cosine_lr(base: float, epoch: int, epochs: int) -> float:
    return 0.5 * base * (1 + math.cos(math.pi * epoch / max(epochs, 1)))


def train_mlp_head(stacks: Sequence[np.ndarray], y: Sequence[int], epochs: int = 200, lr: float = 5e-4,
                   weight_decay: float = 1e-2, w_pos: float | None = None, hidden: int = 128,
                   train_grouper: bool = True, seed: int = 0) -> MlpTrainResult:
    """Fit grouper + MLP head jointly with weighted BCE, AdamW and cosine decay.

    ``stacks`` holds one (n_slices, dim) array per case; full-batch steps.
    ``w_pos`` defaults to negatives / positives.
    """
    y = np.asarray(y, float)
    if len(np.unique(y)) < 2:
        raise SingleClass("MLP head needs both classes")
    dim = np.atleast_2d(stacks[0]).shape[1]
    if w_pos is None:
        w_pos = float((1 - y).sum() / y.sum())
    head = MlpHead(dim, hidden, seed)
    grouper = GrouperModel.zeros(dim) if train_grouper else None
    params = head.parameters()
    if grouper is not None:
        params["grouper.w"] = grouper.w
    opt = Adam(params, lr=lr)
    history = []
    for epoch in range(epochs):
        opt.lr = cosine_lr(lr, epoch, epochs)
        X = np.stack([grouper_aggregate(s, grouper) for s in stacks])
        head.zero_grad()
        loss, dz = weighted_bce_logits(head.logits(X), y, w_pos)
        if not np.isfinite(loss):
            raise Divergence(f"MLP loss became {loss} at epoch {epoch}")
        dX = head.backward(dz)
        grads = head.gradients()
        if grouper is not None:
            gw = np.zeros_like(grouper.w)
            for s, dx in zip(stacks, dX):
                gw += grouper_backward(np.atleast_2d(s), grouper, dx)[0]
            grads["grouper.w"] = gw
        for k in params:  # decoupled weight decay (AdamW)
            if k.endswith("W") or k == "grouper.w":
                params[k] *= 1 - opt.lr * weight_decay
        opt.step(grads)
        history.append(loss)
    return MlpTrainResult(head, grouper, history)


def predict_mlp(result: MlpTrainResult, stacks: Sequence[np.ndarray]) -> np.ndarray:
    X = np.stack([grouper_aggregate(s, result.grouper) for s in stacks])
    return sigmoid(result.head.logits(X, cache=False))


# --------------------------------------------------------------------------
# persistence


def _arr(a) -> list:
    return np.asarray(a, float).tolist()


def save_pca_lr(path: str | Path, pca: PCAModel, lr: LRModel, meta: dict | None = None) -> None:
    doc = {
        "header": {"kind": "pca_lr", "dim": pca.dim, "k": pca.k, "lambda": lr.lam, **(meta or {})},
        "pca": {"mean": _arr(pca.mean), "components": _arr(pca.components),
                "explained_variance": _arr(pca.explained_variance), "total_variance": pca.total_variance},
        "lr": {"w": _arr(lr.w), "b": lr.b, "n_iter": lr.n_iter},
    }
    try:
        Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_pca_lr(path: str | Path) -> tuple[PCAModel, LRModel, dict]:
    doc = json.loads(Path(path).read_text())
    p = doc["pca"]
    pca = PCAModel(np.array(p["mean"]), np.array(p["components"]).reshape(doc["header"]["k"], -1),
                   np.array(p["explained_variance"]), p["total_variance"])
    lr = LRModel(np.array(doc["lr"]["w"]), doc["lr"]["b"], doc["header"]["lambda"], doc["lr"]["n_iter"])
    return pca, lr, doc["header"]


def save_mlp(path: str | Path, result: MlpTrainResult, meta: dict | None = None) -> None:
    doc = {
        "header": {"kind": "mlp_head", "dim": result.head.d_in, "hidden": result.head.hidden, **(meta or {})},
        "params": {k: _arr(v) for k, v in result.head.parameters().items()},
        "grouper": None if result.grouper is None else {"w": _arr(result.grouper.w), "b": result.grouper.b},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1))


def load_mlp(path: str | Path) -> MlpTrainResult:
    doc = json.loads(Path(path).read_text())
    head = MlpHead(doc["header"]["dim"], doc["header"]["hidden"])
    head.load_parameters({k: np.array(v) for k, v in doc["params"].items()})
    g = doc["grouper"]
    grouper = None if g is None else GrouperModel(np.array(g["w"]), g["b"])
    return MlpTrainResult(head, grouper)
