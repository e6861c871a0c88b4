"""Versioned binary weight files.

Layout (all integers little-endian)::

    b"CTPW"  uint32 version  uint32 layer_count
    per layer:  uint8 kind_tag  uint8 tensor_count
        per tensor:  uint8 ndim  uint32 dims[ndim]  float32 data[prod(dims)]

Only layers carrying parameters or buffers are written, in model order.
Batch-norm layers store gamma, beta, running mean and running variance.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from ..errors import FormatError, IoError, ShapeError
from .model import Module

MAGIC = b"CTPW"
VERSION = 1
KIND_TAGS = {"conv3x3": 1, "batchnorm": 2, "dense": 3}


def _layer_tensors(layer):
    return list(layer.params.values()) + list(layer.buffers.values())


def encode_weights(model: Module) -> bytes:
    layers = model.param_layers()
    chunks = [MAGIC, struct.pack("<II", VERSION, len(layers))]
    for layer in layers:
        tensors = _layer_tensors(layer)
        chunks.append(struct.pack("<BB", KIND_TAGS[layer.kind], len(tensors)))
        for t in tensors:
            chunks.append(struct.pack("<B", t.ndim))
            chunks.append(struct.pack(f"<{t.ndim}I", *t.shape))
            chunks.append(np.ascontiguousarray(t, dtype="<f4").tobytes())
    return b"".join(chunks)


def save_weights(model: Module, path) -> None:
    path = os.fspath(path)
    tmp = f"{path}.tmp{os.getpid()}"
    try:
        with open(tmp, "wb") as fh:
            fh.write(encode_weights(model))
        os.replace(tmp, path)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("weight file is truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_weights(data: bytes) -> list[tuple[int, list[np.ndarray]]]:
    """Parse a weight blob into ``[(kind_tag, [tensors...]), ...]``."""
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise FormatError("not a CTPW weight file")
    version, count = r.unpack("<II")
    if version != VERSION:
        raise FormatError(f"unsupported weight format version {version}")
    layers = []
    for _ in range(count):
        tag, n_tensors = r.unpack("<BB")
        tensors = []
        for _ in range(n_tensors):
            (ndim,) = r.unpack("<B")
            shape = r.unpack(f"<{ndim}I") if ndim else ()
            size = int(np.prod(shape)) if shape else 1
            raw = r.take(4 * size)
            tensors.append(np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(shape))
        layers.append((tag, tensors))
    if r.pos != len(data):
        raise FormatError("trailing bytes after last layer")
    return layers


def load_weights(model: Module, path) -> Module:
    """Fill ``model`` with the parameters stored at ``path`` and return it."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    stored = decode_weights(data)
    layers = model.param_layers()
    if len(stored) != len(layers):
        raise ShapeError(f"file holds {len(stored)} layers, model has {len(layers)}")
    for (tag, tensors), layer in zip(stored, layers):
        if tag != KIND_TAGS[layer.kind]:
            raise ShapeError(f"layer kind tag {tag} does not match {layer.kind}")
        current = _layer_tensors(layer)
        if len(tensors) != len(current) or any(
                a.shape != b.shape for a, b in zip(tensors, current)):
            raise ShapeError(f"tensor shapes in file do not match {layer!r}")
    for (_, tensors), layer in zip(stored, layers):
        it = iter(tensors)
        for store in (layer.params, layer.buffers):
            for name in store:
                store[name] = next(it).copy()
    return model
