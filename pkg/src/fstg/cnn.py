"""Anisotropic 3-D SE-ResNet classifier (toy-scale trainable, full-scale forward).

Layout: stem conv -> five residual stages (downsampling in each stage's first
block, no max pooling) -> global average pool -> 512-unit FC -> logit.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import BadGeometry, Divergence
from .nn import (
    SGD,
    Conv3d,
    Identity,
    InstanceNorm,
    LeakyReLU,
    Linear,
    Module,
    SqueezeExcite,
    conv_output_shape,
    sigmoid,
)
from .shallow import focal_loss_logits
from .weights import load_params, save_params

log = logging.getLogger(__name__)

MAGIC = b"FSRN"

STRIDE_PLANS = {
    # stages 1, 2 and 5 keep z; stages 3 and 4 downsample z as well
    "adopted": ((2, 2, 1), (2, 2, 1), (2, 2, 2), (2, 2, 2), (2, 2, 1)),
    # "final stages" read as stages 4 and 5; only stage 3 downsamples z
    "alternative": ((2, 2, 1), (2, 2, 1), (2, 2, 2), (2, 2, 1), (2, 2, 1)),
}


@dataclass(frozen=True)
class SeResNetConfig:
    in_channels: int = 1
    stem_kernel: tuple[int, int, int] = (3, 3, 1)
    stem_stride: tuple[int, int, int] = (1, 1, 1)
    channels: tuple[int, ...] = (32, 64, 128, 256, 512)
    blocks: tuple[int, ...] = (1, 3, 4, 6, 3)
    kernels: tuple[tuple[int, int, int], ...] = ((3, 3, 1), (3, 3, 1), (3, 3, 3), (3, 3, 3), (3, 3, 3))
    strides: tuple[tuple[int, int, int], ...] = STRIDE_PLANS["adopted"]
    se_reduction: int = 16
    leaky_slope: float = 0.01
    fc_units: int = 512
    norm: str = "instance"

    def __post_init__(self):
        n = len(self.channels)
        if not (len(self.blocks) == len(self.kernels) == len(self.strides) == n):
            raise BadGeometry("channels, blocks, kernels and strides must have one entry per stage")
        if any(b < 1 for b in self.blocks):
            raise BadGeometry("every stage needs at least one block")
        if any(min(s) < 1 for s in self.strides) or min(self.stem_stride) < 1:
            raise BadGeometry("strides must be >= 1")
        if any(b <= a for a, b in zip(self.channels, self.channels[1:])):
            raise BadGeometry("stage channels must be strictly increasing")
        if self.norm not in ("instance", "none"):
            raise BadGeometry(f"norm must be 'instance' or 'none', got {self.norm!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "SeResNetConfig":
        d = dict(d)
        plan = d.pop("stride_plan", None)
        if plan is not None:
            d["strides"] = STRIDE_PLANS[plan]
        for key in ("stem_kernel", "stem_stride", "channels", "blocks"):
            if key in d:
                d[key] = tuple(d[key])
        for key in ("kernels", "strides"):
            if key in d:
                d[key] = tuple(tuple(v) for v in d[key])
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def toy_config(**overrides) -> SeResNetConfig:
    """Scaled-down variant: channels 4..64 with the same stage structure.

    Normalization is off by default: at toy input sizes the last stages shrink
    to one or two voxels, where instance normalization erases the signal.
    """
    base = dict(channels=(4, 8, 16, 32, 64), se_reduction=4, fc_units=16, norm="none")
    base.update(overrides)
    return SeResNetConfig.from_dict(base)


def stage_shapes(cfg: SeResNetConfig, input_shape: Sequence[int]) -> list[tuple[int, int, int]]:
    """Closed-form spatial dims after the stem and after each stage."""
    dims = conv_output_shape(input_shape, cfg.stem_stride)
    out = [tuple(dims)]
    for stride in cfg.strides:
        dims = conv_output_shape(dims, stride)
        out.append(tuple(dims))
    return out


def _norm(cfg: SeResNetConfig, channels: int) -> Module:
    return InstanceNorm(channels) if cfg.norm == "instance" else Identity()


class ResidualBlock(Module):
    """act( SE(norm(conv(act(norm(conv(x)))))) + shortcut(x) )."""

    def __init__(self, c_in: int, c_out: int, kernel, stride, cfg: SeResNetConfig,
                 rng: np.random.Generator):
        super().__init__()
        self.conv1 = self.add("conv1", Conv3d(c_in, c_out, kernel, stride, rng=rng))
        self.norm1 = self.add("norm1", _norm(cfg, c_out))
        self.act1 = LeakyReLU(cfg.leaky_slope)
        self.conv2 = self.add("conv2", Conv3d(c_out, c_out, kernel, 1, rng=rng))
        self.norm2 = self.add("norm2", _norm(cfg, c_out))
        self.se = self.add("se", SqueezeExcite(c_out, cfg.se_reduction, rng))
        self.se.act.slope = cfg.leaky_slope
        if tuple(np.broadcast_to(stride, 3)) != (1, 1, 1) or c_in != c_out:
            self.shortcut = self.add("proj", Conv3d(c_in, c_out, (1, 1, 1), stride, bias=False, rng=rng))
            self.short_norm = self.add("proj_norm", _norm(cfg, c_out))
        else:
            self.shortcut = Identity()
            self.short_norm = Identity()
        self.act_out = LeakyReLU(cfg.leaky_slope)

    def forward(self, x, cache: bool = True):
        h = self.act1.forward(self.norm1.forward(self.conv1.forward(x, cache), cache), cache)
        h = self.se.forward(self.norm2.forward(self.conv2.forward(h, cache), cache), cache)
        s = self.short_norm.forward(self.shortcut.forward(x, cache), cache)
        return self.act_out.forward(h + s, cache)

    def backward(self, dout):
        g = self.act_out.backward(dout)
        dx = self.shortcut.backward(self.short_norm.backward(g))
        h = self.norm2.backward(self.se.backward(g))
        h = self.conv2.backward(h)
        h = self.conv1.backward(self.norm1.backward(self.act1.backward(h)))
        return dx + h


class SeResNet(Module):
    def __init__(self, cfg: SeResNetConfig = SeResNetConfig(), seed: int = 0, zero_fc: bool = False):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        c0 = cfg.channels[0]
        self.stem = self.add("stem", Conv3d(cfg.in_channels, c0, cfg.stem_kernel, cfg.stem_stride, rng=rng))
        self.stem_norm = self.add("stem_norm", _norm(cfg, c0))
        self.stem_act = LeakyReLU(cfg.leaky_slope)
        self.blocks: list[ResidualBlock] = []
        c_in = c0
        for si, (c, nb, k, s) in enumerate(zip(cfg.channels, cfg.blocks, cfg.kernels, cfg.strides)):
            for bi in range(nb):
                blk = ResidualBlock(c_in, c, k, s if bi == 0 else 1, cfg, rng)
                self.blocks.append(self.add(f"stage{si + 1}.block{bi}", blk))
                c_in = c
        self._stage_ends = set(np.cumsum(cfg.blocks) - 1)
        self.fc = self.add("fc", Linear(c_in, cfg.fc_units, rng))
        self.fc_act = LeakyReLU(cfg.leaky_slope)
        self.out = self.add("out", Linear(cfg.fc_units, 1, rng, init="zeros" if zero_fc else "he"))
        self.trace: list[tuple[int, ...]] = []

    def features(self, x: np.ndarray, cache: bool = True) -> np.ndarray:
        """Final feature map (N, C, X, Y, Z); records per-stage shapes in ``self.trace``."""
        x = np.asarray(x)
        if x.ndim == 4:
            x = x[:, None]
        if x.ndim != 5 or x.shape[1] != self.cfg.in_channels:
            raise BadGeometry(f"expected (N, {self.cfg.in_channels}, X, Y, Z) input, got {x.shape}")
        h = self.stem_act.forward(self.stem_norm.forward(self.stem.forward(x, cache), cache), cache)
        self.trace = [h.shape[1:]]
        for i, blk in enumerate(self.blocks):
            h = blk.forward(h, cache)
            if i in self._stage_ends:
                self.trace.append(h.shape[1:])
        return h

    def forward(self, x: np.ndarray, cache: bool = True) -> np.ndarray:
        """Logits, one per batch item."""
        h = self.features(x, cache)
        self._pool_shape = h.shape
        pooled = h.mean(axis=(2, 3, 4))
        z = self.out.forward(self.fc_act.forward(self.fc.forward(pooled, cache), cache), cache)
        return z[:, 0]

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return sigmoid(self.forward(x, cache=False))

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        g = self.fc.backward(self.fc_act.backward(self.out.backward(np.asarray(dlogits)[:, None])))
        n, c, X, Y, Z = self._pool_shape
        g = np.broadcast_to((g / (X * Y * Z))[:, :, None, None, None], self._pool_shape)
        for blk in reversed(self.blocks):
            g = blk.backward(g)
        return self.stem.backward(self.stem_norm.backward(self.stem_act.backward(g)))


def seresnet_forward(model: SeResNet, patch: np.ndarray) -> tuple[float, float]:
    """(logit, probability) for a single (X, Y, Z) patch, without caching."""
    patch = np.asarray(patch)
    total = np.ones(3, dtype=int)
    for s in (model.cfg.stem_stride,) + tuple(model.cfg.strides):
        total *= np.asarray(s)
    if any(n % t for n, t in zip(patch.shape, total)):
        raise BadGeometry(f"patch dims {patch.shape} not divisible by the stride plan {tuple(total)}")
    z = float(model.forward(patch[None, None], cache=False)[0])
    return z, float(sigmoid(np.array([z]))[0])


# --------------------------------------------------------------------------
# training


@dataclass
class PlateauSchedule:
    """Linear warm-up, then halve the step after ``patience`` epochs without improvement."""

    base: float = 1e-3
    warmup: int = 10
    factor: float = 0.5
    patience: int = 10
    min_delta: float = 0.0
    lr: float = field(init=False)
    best: float = field(init=False, default=float("inf"))
    bad_epochs: int = field(init=False, default=0)

    def __post_init__(self):
        self.lr = self.base

    def lr_for(self, epoch: int) -> float:
        if epoch < self.warmup:
            return self.base * (epoch + 1) / self.warmup
        return self.lr

    def update(self, epoch: int, loss: float) -> None:
        if loss < self.best - self.min_delta:
            self.best, self.bad_epochs = loss, 0
            return
        if epoch < self.warmup:
            return
        self.bad_epochs += 1
        if self.bad_epochs >= self.patience:
            self.lr *= self.factor
            self.bad_epochs = 0


@dataclass
class ToyTrainResult:
    model: SeResNet
    history: list[float]
    lrs: list[float]


def train_toy(cfg: SeResNetConfig, patches: np.ndarray, labels: Sequence[int], epochs: int = 500,
              base_lr: float = 1e-3, momentum: float = 0.9, alpha: float | None = None, gamma: float = 2.0,
              seed: int = 0, target_loss: float | None = None) -> ToyTrainResult:
    """Full-batch SGD on focal loss with warm-up + plateau schedule.

    ``alpha`` defaults to the inverse positive frequency. Stops early once the
    epoch loss drops below ``target_loss`` when that is given.
    """
    patches = np.asarray(patches, dtype=float)
    y = np.asarray(labels, dtype=float)
    if len(patches) > 64:
        raise ValueError("train_toy is desk scale: at most 64 samples")
    if alpha is None:
        alpha = 1.0 - float(y.mean())
    model = SeResNet(cfg, seed)
    opt = SGD(model.parameters(), lr=base_lr, momentum=momentum)
    sched = PlateauSchedule(base_lr)
    history, lrs = [], []
    for epoch in range(epochs):
        opt.lr = sched.lr_for(epoch)
        model.zero_grad()
        z = model.forward(patches)
        loss, dz = focal_loss_logits(z, y, alpha, gamma)
        if not np.isfinite(loss):
            raise Divergence(f"SE-ResNet loss became {loss} at epoch {epoch}")
        model.backward(dz)
        opt.step(model.gradients())
        history.append(loss)
        lrs.append(opt.lr)
        sched.update(epoch, loss)
        if target_loss is not None and loss < target_loss:
            break
    log.info("seresnet toy training: %d epochs, final loss %.4f", len(history), history[-1])
    return ToyTrainResult(model, history, lrs)


def save_seresnet(model: SeResNet, path: str | Path) -> None:
    save_params(path, MAGIC, model.cfg.to_dict(), model.parameters())


def load_seresnet(path: str | Path) -> SeResNet:
    config, params = load_params(path, MAGIC)
    model = SeResNet(SeResNetConfig.from_dict(config))
    model.load_parameters(params)
    return model
