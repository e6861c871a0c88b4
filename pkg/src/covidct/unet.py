"""UNet lung segmenter built on the numpy engine.

Each encoder level is two 3x3 convolutions (optionally batch-normalised)
with ReLU, followed by 2x2 max pooling; channels double per level starting
from ``base_channels``. The decoder mirrors it with nearest-neighbour
upsampling, skip concatenation and two convolutions per level. A final
single-channel 3x3 convolution and a sigmoid give the lung probability map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument
from .imaging import Mask, NormImage
from .nnengine import (
    BatchNorm, Conv3x3, MaxPool2, Module, ReLU, Sequential, Sigmoid, TrainConfig,
    UpSample2, concat_channels, split_channels, train,
)
from .nnengine.training import TrainResult


@dataclass(frozen=True)
class UNetConfig:
    base_channels: int = 16
    depth: int = 3
    with_batchnorm: bool = True
    input_size: int = 224
    mask_threshold: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.base_channels < 1:
            raise InvalidArgument("base_channels must be >= 1")
        if self.depth < 1:
            raise InvalidArgument("depth must be >= 1")
        if self.input_size <= 0 or self.input_size % (2 ** self.depth):
            raise InvalidArgument(
                f"input_size {self.input_size} must be a positive multiple of {2 ** self.depth}")
        if not 0.0 <= self.mask_threshold <= 1.0:
            raise InvalidArgument("mask_threshold must be a probability")


def _block(c_in: int, c_out: int, batchnorm: bool, rng) -> Sequential:
    layers = []
    for a, b in ((c_in, c_out), (c_out, c_out)):
        layers.append(Conv3x3(a, b, rng))
        if batchnorm:
            layers.append(BatchNorm(b))
        layers.append(ReLU())
    return Sequential(layers)


class UNet(Module):
    def __init__(self, cfg: UNetConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        bn = cfg.with_batchnorm
        widths = [cfg.base_channels * 2 ** i for i in range(cfg.depth)]
        self.encoders, self.pools = [], []
        c_in = 1
        for w in widths:
            self.encoders.append(_block(c_in, w, bn, rng))
            self.pools.append(MaxPool2())
            c_in = w
        bottom = cfg.base_channels * 2 ** cfg.depth
        self.bottleneck = _block(c_in, bottom, bn, rng)
        self.ups, self.decoders = [], []
        c_in = bottom
        for w in reversed(widths):
            self.ups.append(UpSample2())
            self.decoders.append(_block(c_in + w, w, bn, rng))
            c_in = w
        self.head = Sequential([Conv3x3(c_in, 1, rng), Sigmoid()])
        self._split = []

    @property
    def output_conv(self) -> Conv3x3:
        return self.head.layers()[0]

    def forward(self, x, train=False):
        skips = []
        for enc, pool in zip(self.encoders, self.pools):
            x = enc.forward(x, train)
            skips.append(x)
            x = pool.forward(x, train)
        x = self.bottleneck.forward(x, train)
        split = []
        for up, dec, skip in zip(self.ups, self.decoders, reversed(skips)):
            x = up.forward(x, train)
            split.append(x.shape[1])
            x = dec.forward(concat_channels(x, skip), train)
        if train:
            self._split = split
        return self.head.forward(x, train)

    def backward(self, grad):
        grad = self.head.backward(grad)
        skip_grads = []
        for up, dec, n_up in zip(reversed(self.ups), reversed(self.decoders),
                                 reversed(self._split)):
            g_up, g_skip = split_channels(dec.backward(grad), n_up)
            skip_grads.append(g_skip)
            grad = up.backward(g_up)
        grad = self.bottleneck.backward(grad)
        # skip_grads runs shallow -> deep; the encoders are unwound deep -> shallow
        for enc, pool, g_skip in zip(reversed(self.encoders), reversed(self.pools),
                                     reversed(skip_grads)):
            grad = enc.backward(pool.backward(grad) + g_skip)
        return grad

    def layers(self):
        out = []
        for enc, pool in zip(self.encoders, self.pools):
            out.extend(enc.layers())
            out.append(pool)
        out.extend(self.bottleneck.layers())
        for up, dec in zip(self.ups, self.decoders):
            out.append(up)
            out.extend(dec.layers())
        out.extend(self.head.layers())
        return out


def build_unet(cfg: UNetConfig) -> UNet:
    return UNet(cfg)


def unet_parameter_count(base: int, with_batchnorm: bool = True, depth: int = 3) -> int:
    """Closed-form trainable parameter count (conv weights + biases, BN gamma/beta)."""
    def conv(c_in, c_out):
        return 9 * c_in * c_out + c_out + (2 * c_out if with_batchnorm else 0)

    total = 0
    c_in = 1
    widths = [base * 2 ** i for i in range(depth)]
    for w in widths:
        total += conv(c_in, w) + conv(w, w)
        c_in = w
    bottom = base * 2 ** depth
    total += conv(c_in, bottom) + conv(bottom, bottom)
    c_in = bottom
    for w in reversed(widths):
        total += conv(c_in + w, w) + conv(w, w)
        c_in = w
    return total + 9 * c_in + 1


def _stack_images(images, size: int) -> np.ndarray:
    arrs = []
    for img in images:
        if img.shape != (size, size):
            raise InvalidArgument(f"expected {size}x{size} input, got {img.shape}")
        arrs.append(img.values)
    return np.stack(arrs)[:, None].astype(np.float32)


def train_unet(model: UNet, pairs, cfg: TrainConfig = TrainConfig(),
               validation=None) -> TrainResult:
    """Fit the probability map to the masks with BCE and Adam.

    ``pairs`` is a sequence of ``(NormImage, Mask)``.
    """
    pairs = list(pairs)
    size = model.cfg.input_size
    x = _stack_images([p[0] for p in pairs], size)
    y = np.stack([p[1].bits for p in pairs])[:, None].astype(np.float32)
    val = None
    if validation:
        validation = list(validation)
        val = (_stack_images([p[0] for p in validation], size),
               np.stack([p[1].bits for p in validation])[:, None].astype(np.float32))
    return train(model, x, y, cfg, validation=val)


def predict_proba(model: UNet, img: NormImage) -> np.ndarray:
    x = _stack_images([img], model.cfg.input_size)
    return model.forward(x, train=False)[0, 0]


def predict_mask(model: UNet, img: NormImage, threshold: float | None = None) -> Mask:
    """Lung mask where the sigmoid map exceeds the threshold."""
    t = model.cfg.mask_threshold if threshold is None else threshold
    return Mask(predict_proba(model, img) > t)
