"""Traditional lung segmenters: Otsu thresholding, 1-D k-means (k=2) and
seeded region growing.

All three follow the same convention: lungs are air filled and therefore
the *darker* population. Thresholding methods additionally drop dark
regions that are connected to the image border (the air surrounding the
body), so the returned mask holds the dark class inside the body only.
Pass ``body_only=False`` to get the raw binarisation.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DegenerateHistogram, InvalidArgument
from .imaging import Image, Mask

__all__ = [
    "SegMethod",
    "otsu_threshold",
    "segment_otsu",
    "kmeans2_1d",
    "KMeansResult",
    "segment_kmeans2",
    "segment_region",
    "default_seeds",
    "remove_border_connected",
]

FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


class SegMethod(enum.Enum):
    REGION = "region"
    OTSU = "otsu"
    KMEANS = "kmeans"
    UNET = "unet"

    @classmethod
    def parse(cls, name: str) -> "SegMethod":
        try:
            return cls(name.lower())
        except ValueError:
            raise InvalidArgument(
                f"unknown segmentation method {name!r}; "
                f"choose from {[m.value for m in cls]}") from None


def _histogram(img: Image) -> np.ndarray:
    return np.bincount(img.pixels.ravel(), minlength=256).astype(np.int64)


def otsu_threshold(img: Image) -> int:
    """Otsu level ``t``; the dark class is ``pixel <= t``.

    Ties between candidate levels resolve to the smallest ``t``.
    """
    hist = _histogram(img)
    if np.count_nonzero(hist) < 2:
        raise DegenerateHistogram("Otsu needs at least two distinct intensities")
    levels = np.arange(256, dtype=np.int64)
    n0 = np.cumsum(hist)
    s0 = np.cumsum(hist * levels)
    total_n, total_s = int(n0[-1]), int(s0[-1])

    best_t, best_num, best_den = 0, 0, 1
    # integer arithmetic keeps plateau ties exact
    for t in range(255):
        a, s = int(n0[t]), int(s0[t])
        b = total_n - a
        if a == 0 or b == 0:
            continue
        diff = s * b - (total_s - s) * a
        num, den = diff * diff, a * b
        if num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    return best_t


def remove_border_connected(mask: np.ndarray) -> np.ndarray:
    """Drop 4-connected foreground components that touch the image edge."""
    labels, n = ndimage.label(mask, structure=FOUR_CONNECTED)
    if n == 0:
        return mask.copy()
    edge = np.concatenate([labels[0], labels[-1], labels[:, 0], labels[:, -1]])
    touching = np.unique(edge[edge > 0])
    return mask & ~np.isin(labels, touching)


def _dark_mask(img: Image, t: int, body_only: bool) -> Mask:
    dark = img.pixels <= t
    if body_only:
        dark = remove_border_connected(dark)
    return Mask(dark)


def segment_otsu(img: Image, body_only: bool = True) -> Mask:
    return _dark_mask(img, otsu_threshold(img), body_only)


@dataclass
class KMeansResult:
    centers: tuple[float, float]
    threshold: int
    """Largest intensity assigned to the low cluster."""
    iterations: int
    inertia: list[float]
    """Sum of squared distances after each assignment step."""


def kmeans2_1d(img: Image, max_iter: int = 100) -> KMeansResult:
    """Lloyd's algorithm with two clusters on pixel intensities.

    Works on the 256-bin histogram; centres start at the lowest and highest
    intensity present. A pixel equidistant from both centres joins the low
    cluster.
    """
    hist = _histogram(img).astype(np.float64)
    present = np.flatnonzero(hist)
    if present.size < 2:
        raise DegenerateHistogram("k-means needs at least two distinct intensities")
    levels = np.arange(256, dtype=np.float64)
    lo, hi = float(present[0]), float(present[-1])

    inertia = []
    cut = None
    iterations = 0
    for iterations in range(1, max_iter + 1):
        # with lo < hi, "closer to lo (ties to lo)" is exactly v <= midpoint
        new_cut = int(np.floor((lo + hi) / 2.0))
        low = levels <= new_cut
        inertia.append(float(np.sum(hist[low] * (levels[low] - lo) ** 2)
                             + np.sum(hist[~low] * (levels[~low] - hi) ** 2)))
        if new_cut == cut:
            break
        cut = new_cut
        n_lo, n_hi = hist[low].sum(), hist[~low].sum()
        if n_lo > 0:
            lo = float(np.sum(hist[low] * levels[low]) / n_lo)
        if n_hi > 0:
            hi = float(np.sum(hist[~low] * levels[~low]) / n_hi)
    return KMeansResult((lo, hi), cut, iterations, inertia)


def segment_kmeans2(img: Image, seed: int = 0, body_only: bool = True) -> Mask:
    """Lower-mean k-means cluster as the lung mask.

    ``seed`` is accepted for interface stability; with extreme-value
    initialisation the result does not depend on it.
    """
    del seed
    result = kmeans2_1d(img)
    return _dark_mask(img, result.threshold, body_only)


def default_seeds(width: int, height: int) -> list[tuple[int, int]]:
    """Typical lung centres, ``(w/4, h/2)`` and ``(3w/4, h/2)``, as (x, y)."""
    return [(width // 4, height // 2), ((3 * width) // 4, height // 2)]


def segment_region(img: Image, seeds, tol: float) -> Mask:
    """Seeded region growing with a running-mean homogeneity test.

    Each seed grows its own 4-connected region: a neighbour joins when its
    intensity lies within ``tol`` of the current mean of that region. The
    result is the union over seeds. Seeds are ``(x, y)`` pairs.
    """
    seeds = list(seeds)
    if not seeds:
        raise InvalidArgument("region growing needs at least one seed")
    h, w = img.height, img.width
    for x, y in seeds:
        if not (0 <= x < w and 0 <= y < h):
            raise InvalidArgument(f"seed ({x}, {y}) outside {w}x{h} image")

    pix = img.pixels.ravel().tolist()
    out = np.zeros(h * w, dtype=bool)
    for sx, sy in seeds:
        start = sy * w + sx
        if out[start]:
            continue
        region = bytearray(h * w)
        region[start] = 1
        total, count = pix[start], 1
        queue = deque([start])
        while queue:
            i = queue.popleft()
            y, x = divmod(i, w)
            neighbours = []
            if y > 0:
                neighbours.append(i - w)
            if y < h - 1:
                neighbours.append(i + w)
            if x > 0:
                neighbours.append(i - 1)
            if x < w - 1:
                neighbours.append(i + 1)
            for j in neighbours:
                if not region[j] and abs(pix[j] - total / count) <= tol:
                    region[j] = 1
                    total += pix[j]
                    count += 1
                    queue.append(j)
        out |= np.frombuffer(bytes(region), dtype=np.uint8) > 0
    return Mask(out.reshape(h, w))
