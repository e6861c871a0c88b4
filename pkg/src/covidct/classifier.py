"""Slice classifier: a stack of conv blocks and a small dense head.

Each conv block is Conv3x3Same -> BatchNorm -> ReLU -> MaxPool2. The head is
Flatten -> Dense(256) -> BatchNorm -> ReLU -> Dropout(0.1) -> Dense(1) ->
Sigmoid. The output is the probability that a slice is non-COVID, so the
training target is 1 for non-COVID and 0 for COVID.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument
from .imaging import Image, squeeze_intensity
from .nnengine import (
    BatchNorm, Conv3x3, Dense, Dropout, Flatten, MaxPool2, ReLU, Sequential, Sigmoid,
    TrainConfig, train,
)
from .nnengine.training import TrainResult
from .scan import Label


@dataclass(frozen=True)
class ClfConfig:
    conv_channels: tuple[int, ...] = (16, 32, 64, 128)
    dense_units: int = 256
    dropout: float = 0.10
    input_size: int = 224
    batch_size: int = 128
    initial_lr: float = 0.1
    epochs: int = 20
    rng_seed: int = 0
    augment: bool = True

    def __post_init__(self):
        channels = tuple(int(c) for c in self.conv_channels)
        object.__setattr__(self, "conv_channels", channels)
        if not channels or min(channels) < 1:
            raise InvalidArgument("conv_channels must be a non-empty list of positive counts")
        if any(b < a for a, b in zip(channels, channels[1:])):
            raise InvalidArgument(f"conv_channels must be ascending, got {channels}")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidArgument("dropout must lie in [0, 1)")
        if self.dense_units < 1:
            raise InvalidArgument("dense_units must be >= 1")
        factor = 2 ** len(channels)
        if self.input_size <= 0 or self.input_size % factor:
            raise InvalidArgument(
                f"input_size {self.input_size} is not divisible by {factor} "
                f"({len(channels)} pooling stages)")

    def train_config(self) -> TrainConfig:
        return TrainConfig(batch_size=self.batch_size, epochs=self.epochs,
                           initial_lr=self.initial_lr, rng_seed=self.rng_seed)


class Classifier(Sequential):
    def __init__(self, cfg: ClfConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.rng_seed)
        layers = []
        c_in = 1
        for c in cfg.conv_channels:
            layers += [Conv3x3(c_in, c, rng), BatchNorm(c), ReLU(), MaxPool2()]
            c_in = c
        side = cfg.input_size // 2 ** len(cfg.conv_channels)
        layers += [
            Flatten(),
            Dense(c_in * side * side, cfg.dense_units, rng),
            BatchNorm(cfg.dense_units),
            ReLU(),
            Dropout(cfg.dropout, np.random.default_rng(rng.integers(2**63))),
            Dense(cfg.dense_units, 1, rng),
            Sigmoid(),
        ]
        super().__init__(layers)

    @property
    def output_dense(self) -> Dense:
        return self.layers()[-2]


def build_classifier(cfg: ClfConfig = ClfConfig()) -> Classifier:
    return Classifier(cfg)


def classifier_parameter_count(conv_channels, dense_units: int, input_size: int) -> int:
    """Closed-form trainable parameter count for :class:`Classifier`."""
    total, c_in = 0, 1
    for c in conv_channels:
        total += 9 * c_in * c + c + 2 * c
        c_in = c
    side = input_size // 2 ** len(conv_channels)
    flat = c_in * side * side
    total += flat * dense_units + dense_units + 2 * dense_units
    return total + dense_units + 1


def flips(rng) -> tuple[bool, bool]:
    """Draw (horizontal, vertical) flip decisions, each with probability 0.5."""
    return rng.random() < 0.5, rng.random() < 0.5


def augment(img: Image, rng) -> Image:
    horizontal, vertical = flips(rng)
    px = img.pixels
    if horizontal:
        px = px[:, ::-1]
    if vertical:
        px = px[::-1, :]
    return Image(px.copy())


def augment_batch(batch: np.ndarray, rng) -> np.ndarray:
    """Per-sample random flips of an [N, C, H, W] batch."""
    out = batch.copy()
    for i in range(len(out)):
        horizontal, vertical = flips(rng)
        if horizontal:
            out[i] = out[i][..., ::-1]
        if vertical:
            out[i] = out[i][..., ::-1, :]
    return out


def to_input(images, size: int) -> np.ndarray:
    arrs = []
    for img in images:
        if img.shape != (size, size):
            raise InvalidArgument(f"classifier expects {size}x{size} slices, got {img.shape}")
        arrs.append(squeeze_intensity(img).values)
    return np.stack(arrs)[:, None].astype(np.float32)


def train_classifier(model: Classifier, images, labels,
                     cfg: ClfConfig | None = None) -> TrainResult:
    """Fit the classifier on lung-extracted slices.

    ``labels`` are :class:`Label` values (or strings); non-COVID maps to
    target 1. Flips are redrawn per sample every epoch when
    ``cfg.augment`` is set.
    """
    cfg = cfg or model.cfg
    images = list(images)
    labels = [lab if isinstance(lab, Label) else Label.parse(lab) for lab in labels]
    if len(images) != len(labels):
        raise InvalidArgument(f"{len(images)} slices but {len(labels)} labels")
    x = to_input(images, model.cfg.input_size)
    y = np.array([[lab.target] for lab in labels], dtype=np.float32)
    return train(model, x, y, cfg.train_config(),
                 augment=augment_batch if cfg.augment else None)


def predict_slice(model: Classifier, img: Image) -> float:
    """Eval-mode probability that ``img`` is a non-COVID slice."""
    return float(model.forward(to_input([img], model.cfg.input_size), train=False)[0, 0])


def predict_slices(model: Classifier, images) -> np.ndarray:
    """Per-slice probabilities; each slice runs alone so results never
    depend on which other slices share a call."""
    return np.array([predict_slice(model, img) for img in images], dtype=np.float64)
