"""Minimal float64 neural-network core with explicit forward/backward passes.

Everything runs on numpy float64 arrays. Layers cache whatever their backward
pass needs during forward; calling backward before forward is an error.
Batched layouts: dense inputs are (B, D), image inputs are (B, C, H, W).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

Array = np.ndarray


class ShapeError(ValueError):
    """Raised when an input shape does not match what a layer expects."""


class NumericalError(RuntimeError):
    """Raised when a computation produces non-finite values."""


def as_f64(x) -> Array:
    return np.asarray(x, dtype=np.float64)


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


class Layer:
    """Base layer: named parameter tensors plus matching gradient buffers."""

    name = "layer"

    def __init__(self):
        self.params: dict[str, Array] = {}
        self.grads: dict[str, Array] = {}
        self._cache = None

    def forward(self, x: Array) -> Array:
        raise NotImplementedError

    def backward(self, dout: Array) -> Array:
        raise NotImplementedError

    def _require_cache(self):
        if self._cache is None:
            raise RuntimeError(f"{self.name}: backward called before forward")

    def _fail_shape(self, got, expected):
        raise ShapeError(f"{self.name}: got input shape {got}, expected {expected}")


def _he_uniform(rng: np.random.Generator, shape, fan_in: int) -> Array:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(np.float64)


class Dense(Layer):
    name = "dense"

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        self.params = {
            "w": _he_uniform(rng, (n_in, n_out), n_in),
            "b": np.zeros(n_out),
        }

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            self._fail_shape(x.shape, f"(B, {self.n_in})")
        self._cache = x
        return x @ self.params["w"] + self.params["b"]

    def backward(self, dout):
        self._require_cache()
        x = self._cache
        self.grads["w"] = x.T @ dout
        self.grads["b"] = dout.sum(axis=0)
        return dout @ self.params["w"].T


class Conv2d(Layer):
    """k x k convolution; stride 1 is plain, stride 2 is the downsampler."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator,
                 kernel: int = 3, stride: int = 1, pad: int = 1):
        super().__init__()
        self.c_in, self.c_out = c_in, c_out
        self.kernel, self.stride, self.pad = kernel, stride, pad
        self.name = "conv2d" if stride == 1 else "strided-conv2d"
        fan_in = c_in * kernel * kernel
        self.params = {
            "w": _he_uniform(rng, (c_out, c_in, kernel, kernel), fan_in),
            "b": np.zeros(c_out),
        }

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.c_in:
            self._fail_shape(x.shape, f"(B, {self.c_in}, H, W)")
        k, s, p = self.kernel, self.stride, self.pad
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        B, _, Hp, Wp = xp.shape
        Ho = (Hp - k) // s + 1
        Wo = (Wp - k) // s + 1
        win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
        win = win[:, :, ::s, ::s]
        cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5))
        cols = cols.reshape(B * Ho * Wo, self.c_in * k * k)
        wmat = self.params["w"].reshape(self.c_out, -1)
        out = cols @ wmat.T + self.params["b"]
        self._cache = (cols, (B, Hp, Wp), Ho, Wo)
        return out.reshape(B, Ho, Wo, self.c_out).transpose(0, 3, 1, 2)

    def backward(self, dout):
        self._require_cache()
        cols, (B, Hp, Wp), Ho, Wo = self._cache
        k, s, p = self.kernel, self.stride, self.pad
        w = self.params["w"]
        dmat = np.ascontiguousarray(dout.transpose(0, 2, 3, 1)).reshape(-1, self.c_out)
        self.grads["w"] = (dmat.T @ cols).reshape(w.shape)
        self.grads["b"] = dmat.sum(axis=0)
        dcols = dmat @ w.reshape(self.c_out, -1)
        dwin = dcols.reshape(B, Ho, Wo, self.c_in, k, k).transpose(0, 3, 1, 2, 4, 5)
        dxp = np.zeros((B, self.c_in, Hp, Wp))
        for di in range(k):
            for dj in range(k):
                dxp[:, :, di:di + s * Ho:s, dj:dj + s * Wo:s] += dwin[..., di, dj]
        if p:
            dxp = dxp[:, :, p:-p, p:-p]
        return dxp


class NearestUpsample(Layer):
    """Nearest-neighbor 2x upsampling; paired with a conv it replaces a
    transpose convolution."""

    name = "nearest-upsample"

    def __init__(self, factor: int = 2):
        super().__init__()
        self.factor = factor

    def forward(self, x):
        if x.ndim != 4:
            self._fail_shape(x.shape, "(B, C, H, W)")
        f = self.factor
        self._cache = x.shape
        return x.repeat(f, axis=2).repeat(f, axis=3)

    def backward(self, dout):
        self._require_cache()
        B, C, H, W = self._cache
        f = self.factor
        return dout.reshape(B, C, H, f, W, f).sum(axis=(3, 5))


class Relu(Layer):
    name = "relu"

    def forward(self, x):
        self._cache = x > 0
        return np.where(self._cache, x, 0.0)

    def backward(self, dout):
        self._require_cache()
        return np.where(self._cache, dout, 0.0)


class Sigmoid(Layer):
    name = "sigmoid"

    def forward(self, x):
        y = sigmoid(x)
        self._cache = y
        return y

    def backward(self, dout):
        self._require_cache()
        y = self._cache
        return dout * y * (1.0 - y)


class Flatten(Layer):
    name = "flatten"

    def forward(self, x):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        self._require_cache()
        return dout.reshape(self._cache)


class Reshape(Layer):
    """(B, D) -> (B, *target); inverse of Flatten."""

    name = "reshape"

    def __init__(self, target: tuple[int, ...]):
        super().__init__()
        self.target = tuple(target)

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != int(np.prod(self.target)):
            self._fail_shape(x.shape, f"(B, {int(np.prod(self.target))})")
        self._cache = x.shape
        return x.reshape((x.shape[0],) + self.target)

    def backward(self, dout):
        self._require_cache()
        return dout.reshape(self._cache)


# ---------------------------------------------------------------------------
# Network
# ---------------------------------------------------------------------------


class Network:
    """An ordered stack of layers with a shared forward/backward protocol."""

    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)

    def forward(self, x: Array) -> Array:
        for i, layer in enumerate(self.layers):
            try:
                x = layer.forward(x)
            except ShapeError as e:
                raise ShapeError(f"layer {i} ({layer.name}): {e}") from None
        return x

    def backward(self, dout: Array) -> Array:
        """Propagate an upstream gradient; returns the input gradient."""
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def named_params(self):
        for i, layer in enumerate(self.layers):
            for name, p in layer.params.items():
                yield f"{i}.{name}", p

    def param_dict(self) -> dict[str, Array]:
        return dict(self.named_params())

    def grad_dict(self) -> dict[str, Array]:
        return {f"{i}.{n}": g
                for i, layer in enumerate(self.layers)
                for n, g in layer.grads.items()}

    def load_param_dict(self, params: dict[str, Array]):
        for key, value in params.items():
            idx, name = key.split(".", 1)
            target = self.layers[int(idx)].params[name]
            if target.shape != value.shape:
                raise ShapeError(f"param {key}: shape {value.shape} != {target.shape}")
            target[...] = value


def params_checksum(params: dict[str, Array]) -> str:
    h = hashlib.sha256()
    for key in sorted(params):
        h.update(key.encode())
        h.update(np.ascontiguousarray(params[key]).tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


@dataclass
class SgdState:
    """Classical (non-Nesterov) SGD with momentum."""

    learning_rate: float
    momentum: float = 0.0
    velocity: dict[str, Array] = field(default_factory=dict)

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError("momentum must be in [0, 1)")


def sgd_step(state: SgdState, params: dict[str, Array], grads: dict[str, Array]):
    """v <- momentum*v + g;  p <- p - lr*v.  Updates params in place."""
    for key, p in params.items():
        g = grads[key]
        if g.shape != p.shape:
            raise ShapeError(f"grad {key}: shape {g.shape} != {p.shape}")
        v = state.velocity.get(key)
        if v is None:
            v = np.zeros_like(p)
        v = state.momentum * v + g
        state.velocity[key] = v
        p -= state.learning_rate * v


# ---------------------------------------------------------------------------
# Scalar ops and loss helpers
# ---------------------------------------------------------------------------


def cosine_similarity(a: Array, b: Array) -> float:
    """a.b / (|a||b|); defined as 0 when either norm is below 1e-12."""
    a = as_f64(a).ravel()
    b = as_f64(b).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"cosine_similarity: lengths {a.size} != {b.size}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na < 1e-12 or nb < 1e-12:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def sigmoid(x: Array) -> Array:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(logits: Array) -> Array:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def bce_with_logits(logits: Array, targets: Array) -> tuple[float, Array]:
    """Mean sigmoid binary cross-entropy; returns (loss, dloss/dlogits)."""
    l = as_f64(logits)
    y = as_f64(targets)
    loss = np.maximum(l, 0.0) - l * y + np.log1p(np.exp(-np.abs(l)))
    p = sigmoid(l)
    return float(loss.mean()), (p - y) / l.size


def softmax_ce_with_logits(logits: Array, class_idx: Array) -> tuple[float, Array]:
    """Mean categorical cross-entropy over a batch of logit rows."""
    l = as_f64(logits)
    idx = np.asarray(class_idx, dtype=np.intp)
    z = l - l.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = l.shape[0]
    loss = -logp[np.arange(n), idx].mean()
    dlogits = np.exp(logp)
    dlogits[np.arange(n), idx] -= 1.0
    return float(loss), dlogits / n


def require_finite(x, what: str):
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"non-finite values in {what}")
