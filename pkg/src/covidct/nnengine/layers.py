"""Layers with hand-written forward and backward passes.

Activations are float32 numpy arrays in NCHW layout (NF for dense
layers). A layer caches what its backward pass needs only when called with
``train=True``; eval-mode forward passes leave the layer untouched, so a
trained model can serve several threads at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from ..errors import InvalidArgument, ShapeError

DTYPE = np.float32


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _need_cache(self):
        if self._cache is None:
            raise RuntimeError(f"{self.kind}: backward without a train-mode forward")
        return self._cache

    def __repr__(self):
        return f"{type(self).__name__}()"


def he_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(DTYPE)


class Conv3x3(Layer):
    """3x3 cross-correlation, stride 1, zero padding 1 ('same')."""

    kind = "conv3x3"

    def __init__(self, in_channels: int, out_channels: int, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_channels, self.out_channels = in_channels, out_channels
        self.params["weight"] = he_uniform(
            rng, (out_channels, in_channels, 3, 3), in_channels * 9)
        self.params["bias"] = np.zeros(out_channels, dtype=DTYPE)

    def forward(self, x, train=False):
        w = self.params["weight"]
        if x.ndim != 4 or x.shape[1] != w.shape[1]:
            raise ShapeError(f"conv3x3 expects [N,{w.shape[1]},H,W], got {x.shape}")
        n, c, h, wd = x.shape
        padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        # (N, C, H, W, 3, 3) -> rows of length C*9 per output pixel
        cols = sliding_window_view(padded, (3, 3), axis=(2, 3))
        cols = cols.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * wd, c * 9)
        out = cols @ w.reshape(w.shape[0], -1).T + self.params["bias"]
        if train:
            self._cache = (cols, x.shape)
        return out.reshape(n, h, wd, -1).transpose(0, 3, 1, 2)

    def backward(self, grad):
        cols, (n, c, h, wd) = self._need_cache()
        w = self.params["weight"]
        k = w.shape[0]
        g = grad.transpose(0, 2, 3, 1).reshape(n * h * wd, k)
        self.grads["weight"] = (g.T @ cols).reshape(w.shape)
        self.grads["bias"] = g.sum(axis=0)
        dcols = (g @ w.reshape(k, -1)).reshape(n, h, wd, c, 3, 3)
        dpad = np.zeros((n, c, h + 2, wd + 2), dtype=grad.dtype)
        for i in range(3):
            for j in range(3):
                dpad[:, :, i:i + h, j:j + wd] += dcols[..., i, j].transpose(0, 3, 1, 2)
        return dpad[:, :, 1:-1, 1:-1]

    def __repr__(self):
        return f"Conv3x3({self.in_channels}, {self.out_channels})"


class BatchNorm(Layer):
    """Per-channel batch normalisation for [N,C,H,W] or [N,F] inputs.

    Running statistics follow ``running = momentum * running +
    (1 - momentum) * batch`` and use the biased batch variance.
    """

    kind = "batchnorm"

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.9):
        super().__init__()
        self.channels, self.eps, self.momentum = channels, eps, momentum
        self.params["gamma"] = np.ones(channels, dtype=DTYPE)
        self.params["beta"] = np.zeros(channels, dtype=DTYPE)
        self.buffers["running_mean"] = np.zeros(channels, dtype=DTYPE)
        self.buffers["running_var"] = np.ones(channels, dtype=DTYPE)

    def _axes(self, x):
        if x.ndim == 4:
            return (0, 2, 3), (1, -1, 1, 1)
        if x.ndim == 2:
            return (0,), (1, -1)
        raise ShapeError(f"batchnorm expects 2-D or 4-D input, got {x.shape}")

    def forward(self, x, train=False):
        if x.shape[1] != self.channels:
            raise ShapeError(f"batchnorm has {self.channels} channels, input {x.shape}")
        axes, bshape = self._axes(x)
        gamma = self.params["gamma"].reshape(bshape)
        beta = self.params["beta"].reshape(bshape)
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.momentum
            self.buffers["running_mean"] = (
                m * self.buffers["running_mean"] + (1 - m) * mean).astype(DTYPE)
            self.buffers["running_var"] = (
                m * self.buffers["running_var"] + (1 - m) * var).astype(DTYPE)
        else:
            mean = self.buffers["running_mean"]
            var = self.buffers["running_var"]
        inv_std = (1.0 / np.sqrt(var + self.eps)).astype(x.dtype)
        xhat = (x - mean.reshape(bshape)) * inv_std.reshape(bshape)
        if train:
            self._cache = (xhat, inv_std, axes, bshape)
        return gamma * xhat + beta

    def backward(self, grad):
        xhat, inv_std, axes, bshape = self._need_cache()
        count = grad.size // grad.shape[1]
        self.grads["gamma"] = (grad * xhat).sum(axis=axes)
        self.grads["beta"] = grad.sum(axis=axes)
        dxhat = grad * self.params["gamma"].reshape(bshape)
        s1 = dxhat.sum(axis=axes).reshape(bshape)
        s2 = (dxhat * xhat).sum(axis=axes).reshape(bshape)
        return (inv_std.reshape(bshape) / count) * (count * dxhat - s1 - xhat * s2)

    def __repr__(self):
        return f"BatchNorm({self.channels})"


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False):
        if train:
            self._cache = x > 0
        return np.maximum(x, 0)

    def backward(self, grad):
        return grad * self._need_cache()


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x, train=False):
        if train:
            self._cache = x
        return expit(x)

    def backward(self, grad):
        z = self._need_cache()
        # expit(z) * expit(-z) stays non-zero where 1 - expit(z) rounds to 0
        return grad * (expit(z) * expit(-z))


class MaxPool2(Layer):
    """2x2 max pooling, stride 2.

    Odd spatial sizes are padded with -inf on the bottom/right. The gradient
    goes to the first maximum of each window in row-major order.
    """

    kind = "maxpool2"

    def forward(self, x, train=False):
        n, c, h, w = x.shape
        ph, pw = h % 2, w % 2
        if ph or pw:
            x = np.pad(x, ((0, 0), (0, 0), (0, ph), (0, pw)), constant_values=-np.inf)
        ho, wo = (h + ph) // 2, (w + pw) // 2
        win = x.reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
        idx = win.argmax(axis=-1)
        out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
        if train:
            self._cache = (idx, (n, c, h, w))
        return out

    def backward(self, grad):
        idx, (n, c, h, w) = self._need_cache()
        ho, wo = grad.shape[2], grad.shape[3]
        win = np.zeros((n, c, ho, wo, 4), dtype=grad.dtype)
        np.put_along_axis(win, idx[..., None], grad[..., None], axis=-1)
        full = win.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return full.reshape(n, c, 2 * ho, 2 * wo)[:, :, :h, :w]


class UpSample2(Layer):
    """Nearest-neighbour 2x upsampling."""

    kind = "upsample2"

    def forward(self, x, train=False):
        return x.repeat(2, axis=2).repeat(2, axis=3)

    def backward(self, grad):
        n, c, h, w = grad.shape
        return grad.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, train=False):
        if train:
            self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._need_cache())


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features: int, units: int, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_features, self.units = in_features, units
        self.params["weight"] = he_uniform(rng, (in_features, units), in_features)
        self.params["bias"] = np.zeros(units, dtype=DTYPE)

    def forward(self, x, train=False):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"dense expects [N,{self.in_features}], got {x.shape}")
        if train:
            self._cache = x
        return x @ self.params["weight"] + self.params["bias"]

    def backward(self, grad):
        x = self._need_cache()
        self.grads["weight"] = x.T @ grad
        self.grads["bias"] = grad.sum(axis=0)
        return grad @ self.params["weight"].T

    def __repr__(self):
        return f"Dense({self.in_features}, {self.units})"


class Dropout(Layer):
    """Inverted dropout: survivors are scaled by ``1 / (1 - rate)``."""

    kind = "dropout"

    def __init__(self, rate: float = 0.1, rng=None):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise InvalidArgument(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def forward(self, x, train=False):
        if not train or self.rate == 0.0:
            if train:
                self._cache = None
            return x
        keep = self.rng.random(x.shape) >= self.rate
        scale = np.asarray(1.0 / (1.0 - self.rate), dtype=x.dtype)
        self._cache = keep * scale
        return x * self._cache

    def backward(self, grad):
        if self._cache is None:
            return grad
        return grad * self._cache

    def __repr__(self):
        return f"Dropout({self.rate})"


def concat_channels(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"cannot concatenate {a.shape} and {b.shape}")
    return np.concatenate([a, b], axis=1)


def split_channels(grad: np.ndarray, first: int):
    return grad[:, :first], grad[:, first:]


@dataclass(frozen=True)
class LayerSpec:
    """Declarative layer description used to build sequential models.

    ``args`` holds the kind-specific parameters, e.g. ``(in, out)`` for
    ``Conv3x3Same``/``Dense``, ``(channels,)`` for ``BatchNorm``,
    ``(rate,)`` for ``Dropout``.
    """

    kind: str
    args: tuple = field(default_factory=tuple)


_ARITY = {
    "Conv3x3Same": 2, "Dense": 2, "BatchNorm": 1, "Dropout": 1,
    "ReLU": 0, "Sigmoid": 0, "MaxPool2": 0, "Flatten": 0, "UpSample2": 0,
}


def build_layer(spec: LayerSpec, rng: np.random.Generator) -> Layer:
    if spec.kind not in _ARITY:
        raise InvalidArgument(f"unknown layer kind {spec.kind!r}")
    if spec.kind == "BatchNorm":
        if len(spec.args) not in (1, 2, 3):
            raise InvalidArgument(f"BatchNorm takes (channels[, eps[, momentum]]), got {spec.args}")
        return BatchNorm(*spec.args)
    if len(spec.args) != _ARITY[spec.kind]:
        raise InvalidArgument(
            f"{spec.kind} takes {_ARITY[spec.kind]} arguments, got {spec.args}")
    if spec.kind == "Conv3x3Same":
        return Conv3x3(*spec.args, rng=rng)
    if spec.kind == "Dense":
        return Dense(*spec.args, rng=rng)
    if spec.kind == "Dropout":
        return Dropout(spec.args[0], rng=np.random.default_rng(rng.integers(2**63)))
    return {"ReLU": ReLU, "Sigmoid": Sigmoid, "MaxPool2": MaxPool2,
            "Flatten": Flatten, "UpSample2": UpSample2}[spec.kind]()
