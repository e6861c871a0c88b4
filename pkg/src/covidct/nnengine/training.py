from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import DivergenceError, InvalidArgument
from .model import Module
from .optim import Adam, TrainConfig, bce_grad, bce_loss, lr_at_epoch, steps_per_epoch


@dataclass(frozen=True)
class LossRecord:
    epoch: int
    step: int
    lr: float
    loss: float


@dataclass
class TrainResult:
    history: list[LossRecord] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)

    def epoch_losses(self) -> list[float]:
        by_epoch: dict[int, list[float]] = {}
        for rec in self.history:
            by_epoch.setdefault(rec.epoch, []).append(rec.loss)
        return [float(np.mean(v)) for _, v in sorted(by_epoch.items())]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "step", "lr", "loss"])
            for rec in self.history:
                writer.writerow([rec.epoch, rec.step, repr(rec.lr), repr(rec.loss)])


Augment = Callable[[np.ndarray, np.random.Generator], np.ndarray]


def evaluate_loss(model: Module, x: np.ndarray, y: np.ndarray, batch_size: int) -> float:
    """Eval-mode mean BCE over ``steps_per_epoch(len(x), batch_size)`` batches."""
    total = 0.0
    for step in range(steps_per_epoch(len(x), batch_size)):
        sl = slice(step * batch_size, (step + 1) * batch_size)
        pred = model.forward(x[sl], train=False)
        total += bce_loss(pred, y[sl]) * len(x[sl])
    return total / len(x)


def train(model: Module, x: np.ndarray, y: np.ndarray, cfg: TrainConfig,
          augment: Augment | None = None, validation=None,
          on_step: Callable[[LossRecord], None] | None = None) -> TrainResult:
    """Mini-batch Adam on binary cross-entropy.

    Each epoch visits the samples in a fresh permutation drawn from
    ``cfg.rng_seed``; the learning rate is fixed within an epoch at
    ``lr_at_epoch``. Dropout masks and augmentation draws come from the same
    seeded stream, so two calls with identical inputs produce identical
    histories.
    """
    x = np.asarray(x, dtype=np.float32)
    y = np.asarray(y, dtype=np.float32)
    if len(x) != len(y):
        raise InvalidArgument(f"{len(x)} inputs but {len(y)} targets")
    n = cfg.train_set_size if cfg.train_set_size is not None else len(x)
    if n > len(x):
        raise InvalidArgument(f"train_set_size {n} exceeds the {len(x)} samples given")
    if n == 0:
        raise InvalidArgument("no training samples")

    rng = np.random.default_rng(cfg.rng_seed)
    model.reseed(rng)
    opt = Adam(model)
    result = TrainResult()
    steps = steps_per_epoch(n, cfg.batch_size)

    for epoch in range(cfg.epochs):
        lr = lr_at_epoch(cfg, epoch)
        order = rng.permutation(len(x))[:n]
        for step in range(steps):
            idx = order[step * cfg.batch_size:(step + 1) * cfg.batch_size]
            xb, yb = x[idx], y[idx]
            if augment is not None:
                xb = augment(xb, rng)
            pred = model.forward(xb, train=True)
            loss = bce_loss(pred, yb)
            if not math.isfinite(loss):
                raise DivergenceError(epoch)
            model.backward(bce_grad(pred, yb))
            opt.step(lr)
            rec = LossRecord(epoch, step, lr, loss)
            result.history.append(rec)
            if on_step is not None:
                on_step(rec)
        if validation is not None:
            vx, vy = validation
            bs = cfg.batch_size
            size = cfg.test_set_size if cfg.test_set_size is not None else len(vx)
            result.val_loss.append(evaluate_loss(
                model, np.asarray(vx[:size], np.float32), np.asarray(vy[:size], np.float32), bs))
    return result
