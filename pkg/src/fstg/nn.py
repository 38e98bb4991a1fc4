"""Minimal numpy layers with explicit backward passes.

Activations are 5-D arrays ``(batch, channels, x, y, z)``. 2-D slices use a
singleton z axis with ``(3, 3, 1)`` kernels. Every layer caches what its
backward pass needs on ``forward`` and accumulates parameter gradients into
``self.grads`` on ``backward``.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, Iterable

import numpy as np

from .errors import ShapeMismatch

LEAKY_SLOPE = 0.01


def _triple(v) -> tuple[int, int, int]:
    if np.isscalar(v):
        return (int(v),) * 3
    v = tuple(int(a) for a in v)
    if len(v) != 3:
        raise ShapeMismatch(f"expected 3 components, got {v}")
    return v


def conv_output_shape(shape: Iterable[int], stride) -> tuple[int, ...]:
    """Spatial dims after a same-padded conv: ceil(n / stride) per axis."""
    return tuple(-(-int(n) // int(s)) for n, s in zip(shape, _triple(stride)))


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class Module:
    """Container base: parameters are gathered from ``params`` and children."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.children: dict[str, "Module"] = {}

    def add(self, name: str, child: "Module") -> "Module":
        self.children[name] = child
        return child

    def named_parameters(self, prefix: str = ""):
        for k, v in self.params.items():
            yield prefix + k, v, self
        for name, child in self.children.items():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> dict[str, np.ndarray]:
        return {name: arr for name, arr, _ in self.named_parameters()}

    def gradients(self) -> dict[str, np.ndarray]:
        out = {}
        for name, arr, owner in self.named_parameters():
            key = name.rsplit(".", 1)[-1]
            g = owner.grads.get(key)
            out[name] = np.zeros_like(arr) if g is None else g
        return out

    def zero_grad(self):
        self.grads = {}
        for child in self.children.values():
            child.zero_grad()

    def load_parameters(self, values: dict[str, np.ndarray]):
        for name, arr, _ in self.named_parameters():
            if name not in values:
                raise KeyError(f"missing parameter {name}")
            src = np.asarray(values[name])
            if src.shape != arr.shape:
                raise ShapeMismatch(f"{name}: expected {arr.shape}, got {src.shape}")
            arr[...] = src

    def astype(self, dtype) -> "Module":
        for k in list(self.params):
            self.params[k] = self.params[k].astype(dtype)
        for child in self.children.values():
            child.astype(dtype)
        return self

    def _accumulate(self, key: str, g: np.ndarray):
        if key in self.grads:
            self.grads[key] = self.grads[key] + g
        else:
            self.grads[key] = g


class Conv3d(Module):
    """Same-padded 3-D convolution with odd kernels and per-axis stride."""

    def __init__(self, c_in: int, c_out: int, kernel=(3, 3, 3), stride=1, bias: bool = True,
                 rng: np.random.Generator | None = None, init: str = "he"):
        super().__init__()
        self.kernel = _triple(kernel)
        self.stride = _triple(stride)
        if any(k % 2 == 0 for k in self.kernel):
            raise ShapeMismatch(f"kernel must be odd on every axis, got {self.kernel}")
        if min(self.stride) < 1:
            raise ShapeMismatch(f"stride must be >= 1, got {self.stride}")
        self.c_in, self.c_out = c_in, c_out
        shape = (c_out, c_in) + self.kernel
        if init == "zeros":
            w = np.zeros(shape)
        else:
            rng = rng or np.random.default_rng(0)
            fan_in = c_in * int(np.prod(self.kernel))
            w = rng.normal(0.0, math.sqrt(2.0 / fan_in), shape)
        self.params["W"] = w
        if bias:
            self.params["b"] = np.zeros(c_out)
        self._cache = None

    def _windows(self, out_shape):
        for off in itertools.product(*(range(k) for k in self.kernel)):
            sl = tuple(slice(o, o + s * (n - 1) + 1, s) for o, s, n in zip(off, self.stride, out_shape))
            yield off, sl

    def forward(self, x: np.ndarray, cache: bool = True) -> np.ndarray:
        if x.ndim != 5 or x.shape[1] != self.c_in:
            raise ShapeMismatch(f"conv expects (N, {self.c_in}, X, Y, Z), got {x.shape}")
        pads = [k // 2 for k in self.kernel]
        # channel-last internally so every tap is one contiguous 2-D matmul
        xp = np.pad(x.transpose(0, 2, 3, 4, 1), [(0, 0)] + [(p, p) for p in pads] + [(0, 0)])
        out_shape = conv_output_shape(x.shape[2:], self.stride)
        n = x.shape[0]
        w = self.params["W"]
        acc = np.zeros((n * int(np.prod(out_shape)), self.c_out), dtype=np.result_type(x, w))
        for off, sl in self._windows(out_shape):
            xs = xp[(slice(None),) + sl].reshape(-1, self.c_in)
            acc += xs @ np.ascontiguousarray(w[(slice(None), slice(None)) + off].T)
        if "b" in self.params:
            acc += self.params["b"]
        self._cache = (x.shape, xp, out_shape) if cache else None
        return np.ascontiguousarray(acc.reshape((n,) + out_shape + (self.c_out,)).transpose(0, 4, 1, 2, 3))

    def backward(self, dout: np.ndarray) -> np.ndarray:
        x_shape, xp, out_shape = self._cache
        w = self.params["W"]
        dw = np.zeros_like(w)
        dxp = np.zeros(xp.shape, dtype=np.result_type(dout, w))
        d2 = np.ascontiguousarray(dout.transpose(0, 2, 3, 4, 1)).reshape(-1, self.c_out)
        block = (x_shape[0],) + tuple(out_shape) + (self.c_in,)
        for off, sl in self._windows(out_shape):
            xs = xp[(slice(None),) + sl].reshape(-1, self.c_in)
            dw[(slice(None), slice(None)) + off] = d2.T @ xs
            dxp[(slice(None),) + sl] += (d2 @ np.ascontiguousarray(w[(slice(None), slice(None)) + off])).reshape(block)
        self._accumulate("W", dw)
        if "b" in self.params:
            self._accumulate("b", d2.sum(axis=0))
        pads = [k // 2 for k in self.kernel]
        crop = tuple(slice(p, p + n) for p, n in zip(pads, x_shape[2:]))
        return np.ascontiguousarray(dxp[(slice(None),) + crop + (slice(None),)].transpose(0, 4, 1, 2, 3))


class LeakyReLU(Module):
    def __init__(self, slope: float = LEAKY_SLOPE):
        super().__init__()
        self.slope = slope

    def forward(self, x, cache: bool = True):
        self._mask = x > 0 if cache else None
        return np.where(x > 0, x, self.slope * x)

    def backward(self, dout):
        return np.where(self._mask, dout, self.slope * dout)


class InstanceNorm(Module):
    """Per-sample, per-channel normalization over spatial axes with affine."""

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.params["gamma"] = np.ones(channels)
        self.params["beta"] = np.zeros(channels)

    def forward(self, x, cache: bool = True):
        mu = x.mean(axis=(2, 3, 4), keepdims=True)
        var = x.var(axis=(2, 3, 4), keepdims=True)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * inv
        self._cache = (xhat, inv) if cache else None
        g = self.params["gamma"].reshape(1, -1, 1, 1, 1)
        b = self.params["beta"].reshape(1, -1, 1, 1, 1)
        return g * xhat + b

    def backward(self, dout):
        xhat, inv = self._cache
        self._accumulate("gamma", (dout * xhat).sum(axis=(0, 2, 3, 4)))
        self._accumulate("beta", dout.sum(axis=(0, 2, 3, 4)))
        dxhat = dout * self.params["gamma"].reshape(1, -1, 1, 1, 1)
        m = dxhat.mean(axis=(2, 3, 4), keepdims=True)
        mx = (dxhat * xhat).mean(axis=(2, 3, 4), keepdims=True)
        return inv * (dxhat - m - xhat * mx)


class Identity(Module):
    def forward(self, x, cache: bool = True):
        return x

    def backward(self, dout):
        return dout


class Linear(Module):
    """Dense layer on ``(batch, features)`` arrays."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator | None = None,
                 init: str = "he"):
        super().__init__()
        if init == "zeros":
            w = np.zeros((d_out, d_in))
        else:
            rng = rng or np.random.default_rng(0)
            w = rng.normal(0.0, math.sqrt(2.0 / d_in), (d_out, d_in))
        self.params["W"] = w
        self.params["b"] = np.zeros(d_out)

    def forward(self, x, cache: bool = True):
        self._x = x if cache else None
        return x @ self.params["W"].T + self.params["b"]

    def backward(self, dout):
        self._accumulate("W", dout.T @ self._x)
        self._accumulate("b", dout.sum(axis=0))
        return dout @ self.params["W"]


class SqueezeExcite(Module):
    """Channel gate: GAP -> FC(c, c/r) -> LeakyReLU -> FC(c/r, c) -> sigmoid -> scale."""

    def __init__(self, channels: int, reduction: int = 16, rng: np.random.Generator | None = None,
                 init: str = "he"):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.fc1 = self.add("fc1", Linear(channels, hidden, rng, init))
        self.act = LeakyReLU()
        self.fc2 = self.add("fc2", Linear(hidden, channels, rng, init))
        self.enabled = True

    def gates(self, x, cache: bool = True):
        s = x.mean(axis=(2, 3, 4))
        return sigmoid(self.fc2.forward(self.act.forward(self.fc1.forward(s, cache), cache), cache))

    def forward(self, x, cache: bool = True):
        if not self.enabled:
            return x
        g = self.gates(x, cache)
        self._cache = (x, g) if cache else None
        return x * g[:, :, None, None, None]

    def backward(self, dout):
        if not self.enabled:
            return dout
        x, g = self._cache
        dg = (dout * x).sum(axis=(2, 3, 4))
        dz = dg * g * (1.0 - g)
        ds = self.fc1.backward(self.act.backward(self.fc2.backward(dz)))
        m = int(np.prod(x.shape[2:]))
        return dout * g[:, :, None, None, None] + (ds / m)[:, :, None, None, None]


class Upsample(Module):
    """Nearest-neighbour upsampling by an integer factor per spatial axis."""

    def __init__(self, factor=(2, 2, 1)):
        super().__init__()
        self.factor = _triple(factor)

    def forward(self, x, cache: bool = True):
        for axis, f in zip((2, 3, 4), self.factor):
            if f > 1:
                x = np.repeat(x, f, axis=axis)
        return x

    def backward(self, dout):
        n, c, X, Y, Z = dout.shape
        fx, fy, fz = self.factor
        return dout.reshape(n, c, X // fx, fx, Y // fy, fy, Z // fz, fz).sum(axis=(3, 5, 7))


# --------------------------------------------------------------------------
# optimizers


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k in sorted(self.params):
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            mhat = self.m[k] / (1 - b1 ** self.t)
            vhat = self.v[k] / (1 - b2 ** self.t)
            self.params[k] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


class SGD:
    def __init__(self, params: dict[str, np.ndarray], lr: float = 1e-3, momentum: float = 0.9):
        self.params = params
        self.lr, self.momentum = lr, momentum
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]):
        for k in sorted(self.params):
            self.velocity[k] = self.momentum * self.velocity[k] - self.lr * grads[k]
            self.params[k] += self.velocity[k]


# --------------------------------------------------------------------------
# finite differences


def numerical_gradient(f: Callable[[], float], arr: np.ndarray, eps: float = 1e-5,
                       indices: Iterable[tuple] | None = None) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. ``arr``, perturbed in place."""
    grad = np.zeros_like(arr, dtype=float)
    it = indices if indices is not None else np.ndindex(arr.shape)
    for idx in it:
        old = arr[idx]
        arr[idx] = old + eps
        fp = f()
        arr[idx] = old - eps
        fm = f()
        arr[idx] = old
        grad[idx] = (fp - fm) / (2 * eps)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """max |a - b| / max(|a| + |b|, floor), elementwise."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), floor)))
