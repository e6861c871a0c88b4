"""Raster types, binary PGM I/O, resizing and intensity normalisation.

Images are stored as 2-D numpy arrays indexed ``[row, col]`` (row-major),
so ``width`` is ``shape[1]`` and ``height`` is ``shape[0]``.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, IoError, ParseError, UnsupportedFormat

__all__ = [
    "Image",
    "Mask",
    "NormImage",
    "read_pgm",
    "write_pgm",
    "read_mask",
    "write_mask",
    "resize_bilinear",
    "resize_nearest_mask",
    "squeeze_intensity",
    "count_nondark",
]


def _check_dims(arr: np.ndarray, kind: str) -> None:
    if arr.ndim != 2:
        raise InvalidArgument(f"{kind} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] <= 0 or arr.shape[1] <= 0:
        raise InvalidArgument(f"{kind} dimensions must be positive, got {arr.shape}")


@dataclass(frozen=True, eq=False)
class Image:
    """8-bit grayscale slice."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pixels)
        _check_dims(arr, "Image")
        if arr.dtype != np.uint8:
            if np.any(arr < 0) or np.any(arr > 255):
                raise InvalidArgument("Image intensities must lie in [0, 255]")
            arr = arr.astype(np.uint8)
        object.__setattr__(self, "pixels", np.ascontiguousarray(arr))

    @classmethod
    def from_flat(cls, width: int, height: int, values) -> "Image":
        flat = np.asarray(values)
        if flat.size != width * height:
            raise InvalidArgument(
                f"expected {width * height} pixels, got {flat.size}")
        return cls(flat.reshape(height, width))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)

    def __repr__(self):
        return f"Image(width={self.width}, height={self.height})"


@dataclass(frozen=True, eq=False)
class Mask:
    """Binary raster; True marks foreground (lung)."""

    bits: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.bits)
        _check_dims(arr, "Mask")
        object.__setattr__(self, "bits", np.ascontiguousarray(arr, dtype=bool))

    @classmethod
    def empty(cls, width: int, height: int) -> "Mask":
        return cls(np.zeros((height, width), dtype=bool))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    def count(self) -> int:
        return int(np.count_nonzero(self.bits))

    def __invert__(self) -> "Mask":
        return Mask(~self.bits)

    def __or__(self, other: "Mask") -> "Mask":
        return Mask(self.bits | other.bits)

    def __and__(self, other: "Mask") -> "Mask":
        return Mask(self.bits & other.bits)

    def issubset(self, other: "Mask") -> bool:
        return not np.any(self.bits & ~other.bits)

    def __eq__(self, other):
        if not isinstance(other, Mask):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)

    def __repr__(self):
        return f"Mask(width={self.width}, height={self.height}, count={self.count()})"


@dataclass(frozen=True, eq=False)
class NormImage:
    """Float32 slice with intensities squeezed into [0, 100]."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float32)
        _check_dims(arr, "NormImage")
        if arr.size and (arr.min() < 0.0 or arr.max() > 100.0):
            raise InvalidArgument("NormImage values must lie in [0, 100]")
        object.__setattr__(self, "values", np.ascontiguousarray(arr))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


# PGM header tokens are whitespace separated; '#' starts a comment running
# to end of line. Exactly one whitespace byte follows maxval.
_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _parse_pgm(data: bytes, source: str) -> Image:
    if data[:2] != b"P5":
        raise ParseError(f"{source}: not a binary PGM (magic {data[:2]!r})")
    pos = 2
    fields = []
    for _ in range(3):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise ParseError(f"{source}: truncated PGM header")
        try:
            fields.append(int(m.group(1)))
        except ValueError:
            raise ParseError(f"{source}: bad header token {m.group(1)!r}") from None
        pos = m.end()
    if pos >= len(data) or data[pos:pos + 1] not in (b" ", b"\t", b"\n", b"\r"):
        raise ParseError(f"{source}: missing whitespace after maxval")
    pos += 1
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise ParseError(f"{source}: invalid dimensions {width}x{height}")
    if maxval != 255:
        raise UnsupportedFormat(f"{source}: maxval {maxval} (only 255 supported)")
    raster = data[pos:pos + width * height]
    if len(raster) != width * height:
        raise ParseError(
            f"{source}: expected {width * height} raster bytes, got {len(raster)}")
    return Image(np.frombuffer(raster, dtype=np.uint8).reshape(height, width))


def read_pgm(path) -> Image:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    return _parse_pgm(data, str(path))


def encode_pgm(img: Image) -> bytes:
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.pixels.tobytes()


def write_pgm(img: Image, path) -> None:
    """Write ``img`` with the canonical header ``P5\\n<w> <h>\\n255\\n``.

    The file is written to a temporary sibling and renamed into place so a
    reader never observes a half-written slice.
    """
    path = os.fspath(path)
    tmp = f"{path}.tmp{os.getpid()}"
    try:
        with open(tmp, "wb") as fh:
            fh.write(encode_pgm(img))
        os.replace(tmp, path)
    except OSError as exc:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_mask(path) -> Mask:
    """Read a mask stored as a PGM (any non-zero byte is foreground)."""
    return Mask(read_pgm(path).pixels > 0)


def write_mask(mask: Mask, path) -> None:
    write_pgm(Image(np.where(mask.bits, 255, 0).astype(np.uint8)), path)


def _linear_axis(n_in: int, n_out: int):
    """Integer sample grid: output ``i`` sits at ``lo + num / den`` input pixels.

    Corner-aligned, so the first and last output pixels land exactly on the
    first and last input pixels.
    """
    den = max(n_out - 1, 1)
    exact = np.arange(n_out, dtype=np.int64) * (n_in - 1 if n_out > 1 else 0)
    lo = exact // den
    num = exact - lo * den
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, num, den


def resize_bilinear(img: Image, out_w: int, out_h: int) -> Image:
    """Bilinear resize rounded half up, computed in exact integer arithmetic."""
    if out_w <= 0 or out_h <= 0:
        raise InvalidArgument(f"target size must be positive, got {out_w}x{out_h}")
    if (out_w, out_h) == (img.width, img.height):
        return Image(img.pixels.copy())
    src = img.pixels.astype(np.int64)
    y0, y1, ny, dy = _linear_axis(img.height, out_h)
    x0, x1, nx, dx = _linear_axis(img.width, out_w)
    rows = src[y0] * (dy - ny)[:, None] + src[y1] * ny[:, None]
    acc = rows[:, x0] * (dx - nx)[None, :] + rows[:, x1] * nx[None, :]
    scale = dy * dx
    return Image(((2 * acc + scale) // (2 * scale)).astype(np.uint8))


def resize_nearest_mask(mask: Mask, out_w: int, out_h: int) -> Mask:
    """Nearest-neighbour resize for masks (keeps them binary)."""
    if out_w <= 0 or out_h <= 0:
        raise InvalidArgument(f"target size must be positive, got {out_w}x{out_h}")
    ys = np.minimum((np.arange(out_h) + 0.5) * mask.height / out_h, mask.height - 1)
    xs = np.minimum((np.arange(out_w) + 0.5) * mask.width / out_w, mask.width - 1)
    return Mask(mask.bits[ys.astype(np.intp)][:, xs.astype(np.intp)])


def squeeze_intensity(img: Image) -> NormImage:
    """Map 8-bit intensities onto [0, 100] via ``v * 100 / 255``."""
    vals = img.pixels.astype(np.float64) * 100.0 / 255.0
    return NormImage(vals.astype(np.float32))


def count_nondark(img: Image) -> int:
    """Number of pixels with intensity strictly above zero."""
    return int(np.count_nonzero(img.pixels))
