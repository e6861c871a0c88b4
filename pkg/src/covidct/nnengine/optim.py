"""Binary cross-entropy, Adam and the exponential learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidArgument, ShapeError
from .model import Module

CLAMP = 1e-7


def bce_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean binary cross-entropy with predictions clamped to [1e-7, 1 - 1e-7]."""
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} vs target {target.shape}")
    p = np.clip(pred.astype(np.float64), CLAMP, 1.0 - CLAMP)
    t = target.astype(np.float64)
    return float(np.mean(-(t * np.log(p) + (1.0 - t) * np.log(1.0 - p))))


def bce_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """d(loss)/d(pred), evaluated at the clamped prediction."""
    p = np.clip(pred.astype(np.float64), CLAMP, 1.0 - CLAMP)
    t = target.astype(np.float64)
    g = (p - t) / (p * (1.0 - p)) / pred.size
    return g.astype(pred.dtype)


@dataclass
class AdamState:
    first: list[np.ndarray]
    second: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: list[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params: list[np.ndarray], grads: list[np.ndarray],
              state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.first):
        raise ShapeError("params, grads and Adam state differ in length")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.first, state.second):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"parameter {p.shape} vs gradient {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)


@dataclass
class Adam:
    """Adam bound to a model's parameter list."""

    model: Module
    state: AdamState = field(init=False)

    def __post_init__(self):
        self.state = AdamState.zeros_like(self._params())

    def _params(self):
        return [layer.params[name] for layer, name in self.model.parameters()]

    def step(self, lr: float) -> None:
        grads = [layer.grads[name] for layer, name in self.model.parameters()]
        adam_step(self._params(), grads, self.state, lr)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 20
    initial_lr: float = 0.1
    train_set_size: int | None = None
    test_set_size: int | None = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.batch_size <= 0:
            raise InvalidArgument("batch_size must be positive")
        if self.epochs < 0:
            raise InvalidArgument("epochs must be non-negative")
        if not self.initial_lr > 0:
            raise InvalidArgument("initial_lr must be positive")
        for name in ("train_set_size", "test_set_size"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise InvalidArgument(f"{name} must be positive")


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    """``initial_lr * exp(-epoch)``."""
    if epoch < 0:
        raise InvalidArgument("epoch must be >= 0")
    return cfg.initial_lr * math.exp(-epoch)


def steps_per_epoch(set_size: int, batch_size: int) -> int:
    """Batches needed to visit every sample once (ceiling division)."""
    if set_size <= 0 or batch_size <= 0:
        raise InvalidArgument("set_size and batch_size must be positive")
    return -(-set_size // batch_size)
