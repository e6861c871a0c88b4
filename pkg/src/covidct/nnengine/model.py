from __future__ import annotations

import numpy as np

from .layers import Dropout, Layer, LayerSpec, build_layer


class Module:
    """Anything with forward/backward over an ordered set of layers."""

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def layers(self) -> list[Layer]:
        raise NotImplementedError

    def __call__(self, x, train=False):
        return self.forward(x, train)

    def param_layers(self) -> list[Layer]:
        """Layers that own parameters or buffers, in a stable order."""
        return [layer for layer in self.layers() if layer.params or layer.buffers]

    def parameters(self) -> list[tuple[Layer, str]]:
        return [(layer, name) for layer in self.layers() for name in layer.params]

    def n_parameters(self) -> int:
        return sum(layer.params[name].size for layer, name in self.parameters())

    def reseed(self, rng: np.random.Generator) -> None:
        """Give every dropout layer a fresh generator drawn from ``rng``."""
        for layer in self.layers():
            if isinstance(layer, Dropout):
                layer.rng = np.random.default_rng(rng.integers(2**63))

    def state(self) -> list[np.ndarray]:
        """Copies of all parameters and buffers (for snapshots/comparisons)."""
        out = []
        for layer in self.param_layers():
            out.extend(v.copy() for v in layer.params.values())
            out.extend(v.copy() for v in layer.buffers.values())
        return out

    def load_state(self, arrays: list[np.ndarray]) -> None:
        it = iter(arrays)
        for layer in self.param_layers():
            for store in (layer.params, layer.buffers):
                for name in store:
                    store[name] = np.array(next(it), dtype=store[name].dtype)


class Sequential(Module):
    def __init__(self, layers: list[Layer]):
        self._layers = list(layers)

    @classmethod
    def from_specs(cls, specs: list[LayerSpec], seed: int = 0) -> "Sequential":
        rng = np.random.default_rng(seed)
        return cls([build_layer(spec, rng) for spec in specs])

    def forward(self, x, train=False):
        for layer in self._layers:
            x = layer.forward(x, train)
        return x

    def backward(self, grad):
        for layer in reversed(self._layers):
            grad = layer.backward(grad)
        return grad

    def layers(self):
        return list(self._layers)

    def __repr__(self):
        inner = ", ".join(repr(layer) for layer in self._layers)
        return f"Sequential([{inner}])"
