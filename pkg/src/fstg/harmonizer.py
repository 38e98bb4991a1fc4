"""Self-supervised harmonization autoencoder on 2-D slices.

Encoder: three 3x3 stride-2 convs (16, 32, 64 channels) with LeakyReLU.
Decoder: nearest upsampling + 3x3 conv per level, with the matching encoder
activation added back in, then a linear 1-channel output conv over the last
decoder level stacked with the input slice. The output conv starts as a
pass-through of the input, so training learns a correction to the identity.
Training pairs map each frequency-perturbed variant back to its original slice.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import BadGeometry, Divergence
from .fourier import PerturbationConfig, generate_variants
from .nn import Adam, Conv3d, LeakyReLU, Module, Upsample
from .volume import Volume
from .weights import load_params, save_params

log = logging.getLogger(__name__)

MAGIC = b"FHAE"
K2 = (3, 3, 1)


class HarmonizerModel(Module):
    def __init__(self, channels: Sequence[int] = (16, 32, 64), seed: int = 0, head_init: str = "identity"):
        super().__init__()
        self.channels = tuple(int(c) for c in channels)
        rng = np.random.default_rng(seed)
        c1, c2, c3 = self.channels
        self.enc1 = self.add("enc1", Conv3d(1, c1, K2, (2, 2, 1), rng=rng))
        self.enc2 = self.add("enc2", Conv3d(c1, c2, K2, (2, 2, 1), rng=rng))
        self.enc3 = self.add("enc3", Conv3d(c2, c3, K2, (2, 2, 1), rng=rng))
        self.dec3 = self.add("dec3", Conv3d(c3, c2, K2, 1, rng=rng))
        self.dec2 = self.add("dec2", Conv3d(c2, c1, K2, 1, rng=rng))
        self.dec1 = self.add("dec1", Conv3d(c1, c1, K2, 1, rng=rng))
        # the head also sees the raw input: the full-resolution skip level
        self.head = self.add("head", Conv3d(c1 + 1, 1, K2, 1, rng=rng, init="he" if head_init == "he" else "zeros"))
        if head_init == "identity":
            # start as a pass-through of the input channel
            self.head.params["W"][0, c1, 1, 1, 0] = 1.0
        self.acts = [LeakyReLU() for _ in range(6)]
        self.ups = [Upsample((2, 2, 1)) for _ in range(3)]

    @property
    def conv_weights(self) -> list[np.ndarray]:
        return [arr for name, arr, _ in self.named_parameters() if name.endswith(".W")]

    def forward(self, x: np.ndarray, cache: bool = True) -> np.ndarray:
        """``x``: (N, H, W) slices -> (N, H, W) reconstructions."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:
            return self.forward(x[None], cache)[0]
        n, h, w = x.shape
        if h % 8 or w % 8:
            raise BadGeometry(f"slice dims must be divisible by 8, got {h}x{w}")
        a = self.acts
        x5 = x[:, None, :, :, None]
        e1 = a[0].forward(self.enc1.forward(x5, cache), cache)
        e2 = a[1].forward(self.enc2.forward(e1, cache), cache)
        e3 = a[2].forward(self.enc3.forward(e2, cache), cache)
        d3 = a[3].forward(self.dec3.forward(self.ups[0].forward(e3), cache), cache) + e2
        d2 = a[4].forward(self.dec2.forward(self.ups[1].forward(d3), cache), cache) + e1
        d1 = a[5].forward(self.dec1.forward(self.ups[2].forward(d2), cache), cache)
        return self.head.forward(np.concatenate([d1, x5], axis=1), cache)[:, 0, :, :, 0]

    def backward(self, dout: np.ndarray) -> np.ndarray:
        a = self.acts
        g = self.head.backward(dout[:, None, :, :, None])
        dx_skip = g[:, -1:]
        g = self.ups[2].backward(self.dec1.backward(a[5].backward(g[:, :-1])))
        de1 = g
        g = self.ups[1].backward(self.dec2.backward(a[4].backward(g)))
        de2 = g
        g = self.ups[0].backward(self.dec3.backward(a[3].backward(g)))
        g = self.enc3.backward(a[2].backward(g))
        g = self.enc2.backward(a[1].backward(g + de2))
        g = self.enc1.backward(a[0].backward(g + de1)) + dx_skip
        return g[:, 0, :, :, 0]


def ae_loss(model: HarmonizerModel, predicted: np.ndarray, target: np.ndarray, lam: float) -> float:
    """Pixel MSE plus ``lam`` times the squared norm of all conv weights (no biases)."""
    predicted, target = np.asarray(predicted, float), np.asarray(target, float)
    if predicted.shape != target.shape:
        raise BadGeometry(f"shape mismatch {predicted.shape} vs {target.shape}")
    if lam < 0:
        raise ValueError("lam must be >= 0")
    reg = sum(float(np.sum(w * w)) for w in model.conv_weights)
    return float(np.mean((predicted - target) ** 2)) + lam * reg


def ae_loss_and_grad(model: HarmonizerModel, inputs: np.ndarray, targets: np.ndarray,
                     lam: float) -> tuple[float, dict[str, np.ndarray]]:
    model.zero_grad()
    pred = model.forward(inputs)
    loss = ae_loss(model, pred, targets, lam)
    model.backward(2.0 * (pred - targets) / pred.size)
    grads = model.gradients()
    for name, arr in model.parameters().items():
        if name.endswith(".W"):
            grads[name] = grads[name] + 2.0 * lam * arr
    return loss, grads


@dataclass
class TrainResult:
    model: HarmonizerModel
    history: list[float] = field(default_factory=list)


def make_pairs(slices: Sequence[np.ndarray], cfg: PerturbationConfig) -> tuple[np.ndarray, np.ndarray]:
    """(perturbed variant, original) pairs; each slice gets its own seed offset."""
    inputs, targets = [], []
    for i, s in enumerate(slices):
        sub = PerturbationConfig(cfg.n_variants, cfg.radius_frac_range, cfg.gain_range,
                                 cfg.rng_seed + i, cfg.taper)
        for v in generate_variants(s, sub):
            inputs.append(v)
            targets.append(np.asarray(s, float))
    return np.stack(inputs), np.stack(targets)


def train_harmonizer(slices: Sequence[np.ndarray], cfg: PerturbationConfig = PerturbationConfig(),
                     epochs: int = 100, lam: float = 1e-5, step: float = 1e-3, seed: int = 0,
                     batch_size: int | None = None, channels: Sequence[int] = (16, 32, 64)) -> TrainResult:
    """Adam on (variant -> original) pairs; full batch unless ``batch_size`` is set.

    Minibatches follow a per-epoch permutation drawn from ``seed``, so the loss
    trajectory is reproducible. The recorded epoch loss is the mean over batches.
    """
    if len(slices) < 1:
        raise ValueError("need at least one training slice")
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    inputs, targets = make_pairs(slices, cfg)
    model = HarmonizerModel(channels, seed=seed)
    opt = Adam(model.parameters(), lr=step)
    rng = np.random.default_rng(seed)
    n = len(inputs)
    bs = n if batch_size is None else min(int(batch_size), n)
    history = []
    for epoch in range(epochs):
        order = np.arange(n) if bs == n else rng.permutation(n)
        losses = []
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            loss, grads = ae_loss_and_grad(model, inputs[idx], targets[idx], lam)
            if not np.isfinite(loss):
                raise Divergence(f"harmonizer loss became {loss} at epoch {epoch}")
            opt.step(grads)
            losses.append(loss)
        history.append(float(np.mean(losses)))
        if epoch % 25 == 0 or epoch == epochs - 1:
            log.info("harmonizer epoch %d loss %.5f", epoch, history[-1])
    return TrainResult(model, history)


def harmonize_volume(model: HarmonizerModel, vol: Volume) -> Volume:
    """Apply the autoencoder to every z slice."""
    nx, ny, _ = vol.dims
    if nx % 8 or ny % 8:
        raise BadGeometry(f"in-plane dims must be divisible by 8, got {nx}x{ny}")
    slices = np.moveaxis(vol.data, 2, 0)
    out = model.forward(slices, cache=False)
    return vol.with_data(np.moveaxis(out, 0, 2))


def save_harmonizer(model: HarmonizerModel, path: str | Path) -> None:
    save_params(path, MAGIC, {"channels": list(model.channels)}, model.parameters())


def load_harmonizer(path: str | Path) -> HarmonizerModel:
    config, params = load_params(path, MAGIC)
    model = HarmonizerModel(config["channels"])
    model.load_parameters(params)
    return model
