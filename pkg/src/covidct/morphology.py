"""Binary morphology and the lung-extraction chain.

The extraction chain turns a raw (possibly noisy) lung mask into a cleaned
mask and overlays it on the slice:

    clear_border -> erode(disk 2) -> close(disk 10)
    -> (Roberts edges of the closed mask) OR (closed mask)
    -> fill_holes -> overlay
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .classicseg import remove_border_connected
from .errors import InvalidArgument
from .imaging import Image, Mask, NormImage

__all__ = [
    "Disk",
    "clear_border",
    "erode",
    "dilate",
    "close",
    "roberts_edges",
    "fill_holes",
    "overlay",
    "ExtractionParams",
    "extract_mask",
    "extract_lungs",
]


@dataclass(frozen=True)
class Disk:
    radius: int

    def __post_init__(self):
        if self.radius < 1:
            raise InvalidArgument(f"disk radius must be >= 1, got {self.radius}")

    def offsets(self) -> tuple[tuple[int, int], ...]:
        """All (dy, dx) with ``dx**2 + dy**2 <= radius**2``."""
        return _disk_offsets(self.radius)


@lru_cache(maxsize=None)
def _disk_offsets(r: int):
    return tuple((dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1)
                 if dx * dx + dy * dy <= r * r)


def _shifted_reduce(bits: np.ndarray, disk: Disk, fill: bool, combine) -> np.ndarray:
    r = disk.radius
    h, w = bits.shape
    padded = np.pad(bits, r, constant_values=fill)
    out = None
    for dy, dx in disk.offsets():
        view = padded[r + dy:r + dy + h, r + dx:r + dx + w]
        out = view.copy() if out is None else combine(out, view, out=out)
    return out


def clear_border(m: Mask) -> Mask:
    """Remove every 4-connected foreground component touching the edge."""
    return Mask(remove_border_connected(m.bits))


def erode(m: Mask, d: Disk, border: bool = False) -> Mask:
    """Pixel stays foreground iff the whole disk around it is foreground.

    Out-of-bounds pixels count as ``border`` (background by default).
    """
    return Mask(_shifted_reduce(m.bits, d, border, np.logical_and))


def dilate(m: Mask, d: Disk) -> Mask:
    """Out-of-bounds pixels count as background."""
    return Mask(_shifted_reduce(m.bits, d, False, np.logical_or))


def close(m: Mask, d: Disk) -> Mask:
    """Dilation followed by erosion with the same disk.

    The dilation sees background outside the raster; the erosion treats the
    outside as foreground. That pair is an adjunction on the raster window,
    which is what makes the closing extensive and idempotent right up to the
    image edge.
    """
    return erode(dilate(m, d), d, border=True)


def roberts_edges(img: NormImage, edge_thresh: float = 10.0) -> Mask:
    """Roberts cross gradient magnitude thresholded at ``edge_thresh``.

    Uses the kernels ``[[1, 0], [0, -1]]`` and ``[[0, 1], [-1, 0]]`` anchored
    at the top-left pixel; the bottom row and right column see zero padding.
    """
    v = np.pad(img.values.astype(np.float64), ((0, 1), (0, 1)))
    g1 = v[:-1, :-1] - v[1:, 1:]
    g2 = v[:-1, 1:] - v[1:, :-1]
    return Mask(np.sqrt(g1 * g1 + g2 * g2) > edge_thresh)


def fill_holes(m: Mask) -> Mask:
    """Set background regions that cannot reach the border (4-connected)."""
    background = ~m.bits
    enclosed = remove_border_connected(background)
    return Mask(m.bits | enclosed)


def overlay(img: Image, m: Mask) -> Image:
    """Keep ``img`` where the mask is set, zero elsewhere (bitwise AND)."""
    if img.shape != m.shape:
        raise InvalidArgument(f"image {img.shape} and mask {m.shape} differ in size")
    return Image(np.where(m.bits, img.pixels, 0).astype(np.uint8))


@dataclass(frozen=True)
class ExtractionParams:
    erode_radius: int = 2
    close_radius: int = 10
    edge_thresh: float = 10.0


def extract_mask(raw: Mask, params: ExtractionParams = ExtractionParams()) -> Mask:
    """The cleaned lung mask produced by the extraction chain."""
    m = clear_border(raw)
    m = erode(m, Disk(params.erode_radius))
    m = close(m, Disk(params.close_radius))
    rendered = NormImage(np.where(m.bits, 100.0, 0.0))
    m = m | roberts_edges(rendered, params.edge_thresh)
    return fill_holes(m)


def extract_lungs(img: Image, raw: Mask,
                  params: ExtractionParams = ExtractionParams()) -> Image:
    if img.shape != raw.shape:
        raise InvalidArgument(f"image {img.shape} and mask {raw.shape} differ in size")
    return overlay(img, extract_mask(raw, params))

