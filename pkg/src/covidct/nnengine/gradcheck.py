"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

import copy

import numpy as np

from .layers import Dropout
from .model import Module
from .optim import bce_grad, bce_loss


def projection_loss(weights: np.ndarray):
    """Loss ``sum(out * weights)``; handy for checking a single layer."""
    w64 = weights.astype(np.float64)

    def value(out, _target):
        return float(np.sum(out.astype(np.float64) * w64))

    def grad(out, _target):
        return weights.astype(out.dtype)

    return value, grad


BCE = (bce_loss, bce_grad)


def _dropout_states(model: Module):
    return [layer.rng.bit_generator.state for layer in model.layers()
            if isinstance(layer, Dropout)]


def _restore_dropout(model: Module, states) -> None:
    it = iter(states)
    for layer in model.layers():
        if isinstance(layer, Dropout):
            layer.rng.bit_generator.state = next(it)


def _as_float64(model: Module) -> Module:
    twin = copy.deepcopy(model)
    for layer in twin.layers():
        for store in (layer.params, layer.buffers):
            for name in store:
                store[name] = store[name].astype(np.float64)
    return twin


def relative_error(analytic: float, numeric: float, floor: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def gradient_check(model: Module, x: np.ndarray, target: np.ndarray | None = None,
                   loss=BCE, h: float = 1e-3, samples: int = 12, seed: int = 0,
                   check_input: bool = True, floor: float = 1e-3,
                   numeric_dtype=np.float64) -> float:
    """Largest relative error between analytic and central-difference gradients.

    The analytic gradients come from the model itself (float32, train mode).
    The numeric side perturbs a copy of the model held in ``numeric_dtype``
    by ``+-h`` at up to ``samples`` random coordinates per parameter tensor
    (and of the input when ``check_input``). Relative error is
    ``|a - n| / max(|a|, |n|, floor)``; the floor keeps coordinates whose
    true gradient is ~0 from dominating. Dropout masks are replayed so every
    evaluation sees the same mask. The model's parameters and running
    statistics are left as they were.
    """
    value_fn, grad_fn = loss
    x = np.asarray(x, dtype=np.float32)
    rng = np.random.default_rng(seed)
    saved = model.state()
    drop_states = _dropout_states(model)

    out = model.forward(x, train=True)
    x_grad = model.backward(grad_fn(out, target))
    analytic = {(i, name): layer.grads[name].copy()
                for i, layer in enumerate(model.layers()) for name in layer.params}

    model.load_state(saved)
    _restore_dropout(model, drop_states)
    twin = _as_float64(model) if numeric_dtype == np.float64 else copy.deepcopy(model)
    twin_drop = _dropout_states(twin)
    xn = x.astype(numeric_dtype)

    def evaluate() -> float:
        _restore_dropout(twin, twin_drop)
        return value_fn(twin.forward(xn, train=True), target)

    def sampled(shape):
        size = int(np.prod(shape))
        flat = rng.choice(size, size=min(samples, size), replace=False)
        return [np.unravel_index(k, shape) for k in flat]

    worst = 0.0
    layers = twin.layers()
    for (i, name), grad in analytic.items():
        param = layers[i].params[name]
        for idx in sampled(param.shape):
            orig = param[idx]
            param[idx] = orig + h
            plus = evaluate()
            param[idx] = orig - h
            minus = evaluate()
            param[idx] = orig
            numeric = (plus - minus) / (2 * h)
            worst = max(worst, relative_error(float(grad[idx]), numeric, floor))

    if check_input:
        for idx in sampled(xn.shape):
            orig = xn[idx]
            xn[idx] = orig + h
            plus = evaluate()
            xn[idx] = orig - h
            minus = evaluate()
            xn[idx] = orig
            numeric = (plus - minus) / (2 * h)
            worst = max(worst, relative_error(float(x_grad[idx]), numeric, floor))
    return worst
