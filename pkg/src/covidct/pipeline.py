"""Scan-level workflow: segmentation, lung extraction, slice removal,
slice classification and patient-level voting."""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .classicseg import (
    SegMethod, default_seeds, segment_kmeans2, segment_otsu, segment_region,
)
from .classifier import Classifier, predict_slices
from .errors import DegenerateHistogram, InvalidArgument, ParseError
from .imaging import (
    Image, Mask, count_nondark, resize_bilinear, resize_nearest_mask, squeeze_intensity,
)
from .morphology import ExtractionParams, extract_lungs
from .scan import CtScan, Label
from .unet import UNet, predict_mask

__all__ = [
    "CtScan", "Label", "SliceFilterPolicy", "FILTER_PRESETS", "select_slices",
    "filter_slices", "filter_scan", "FilterResult", "PatientDecision", "aggregate",
    "classify_scan", "hybrid_vote", "Segmenter", "extract_scan", "run_pipeline",
    "run_pipeline_many", "write_decisions_csv", "read_decisions_csv",
    "write_slice_csv",
]

FILTER_PRESETS = {"45x45": 45 * 45, "42x42": 42 * 42, "40x40": 40 * 40}


@dataclass(frozen=True)
class SliceFilterPolicy:
    """Minimum non-dark pixel counts for keeping a slice.

    The primary threshold is tried first, then each fallback in turn, until
    at least one slice survives. If none ever does and ``keep_all_if_empty``
    is set, the scan is left unchanged.
    """

    primary_threshold: int = 1764
    fallbacks: tuple[int, ...] = (1000, 500)
    keep_all_if_empty: bool = True

    def __post_init__(self):
        object.__setattr__(self, "fallbacks", tuple(int(f) for f in self.fallbacks))
        chain = (self.primary_threshold,) + self.fallbacks
        if any(b >= a for a, b in zip(chain, chain[1:])):
            raise InvalidArgument(f"thresholds must be strictly decreasing, got {chain}")
        if min(chain) < 0:
            raise InvalidArgument("thresholds must be non-negative")

    @classmethod
    def training(cls, threshold: int = 1764) -> "SliceFilterPolicy":
        """Single threshold, no fallbacks; scans may come out empty."""
        return cls(threshold, (), False)

    @classmethod
    def preset(cls, name: str, fallbacks=(1000, 500), keep_all_if_empty=True):
        if name not in FILTER_PRESETS:
            raise InvalidArgument(
                f"unknown filter preset {name!r}; choose from {sorted(FILTER_PRESETS)}")
        return cls(FILTER_PRESETS[name], tuple(fallbacks), keep_all_if_empty)


def select_slices(counts, policy: SliceFilterPolicy) -> tuple[list[int], int | None]:
    """Indices of kept slices and the threshold that kept them.

    ``None`` as the threshold means no pass kept anything; the returned
    indices are then either every slice (``keep_all_if_empty``) or none.
    """
    counts = list(counts)
    for threshold in (policy.primary_threshold,) + policy.fallbacks:
        kept = [i for i, c in enumerate(counts) if c >= threshold]
        if kept:
            return kept, threshold
    if policy.keep_all_if_empty:
        return list(range(len(counts))), None
    return [], None


@dataclass
class FilterResult:
    scan: CtScan
    kept_indices: list[int]
    threshold_used: int | None
    n_slices_in: int


def filter_scan(scan: CtScan, policy: SliceFilterPolicy = SliceFilterPolicy()) -> FilterResult:
    kept, used = select_slices([count_nondark(s) for s in scan.slices], policy)
    out = CtScan(scan.scan_id, [scan.slices[i] for i in kept], scan.label)
    return FilterResult(out, kept, used, len(scan.slices))


def filter_slices(scan: CtScan, policy: SliceFilterPolicy = SliceFilterPolicy()) -> CtScan:
    return filter_scan(scan, policy).scan


@dataclass(frozen=True)
class PatientDecision:
    scan_id: str
    probabilities: tuple[float, ...]
    slice_threshold: float
    verdict: Label
    covid_slice_fraction: float
    n_slices_in: int = 0
    n_slices_kept: int = 0
    threshold_used: int | None = None
    slice_indices: tuple[int, ...] = field(default_factory=tuple)


def aggregate(probabilities, slice_threshold: float) -> tuple[Label, float]:
    """Majority vote over slices; a slice votes COVID when its non-COVID
    probability is below ``slice_threshold``. Ties go to COVID."""
    probabilities = list(probabilities)
    if not probabilities:
        raise InvalidArgument("cannot aggregate an empty scan")
    covid_votes = sum(1 for p in probabilities if p < slice_threshold)
    fraction = covid_votes / len(probabilities)
    verdict = Label.COVID if 2 * covid_votes >= len(probabilities) else Label.NON_COVID
    return verdict, fraction


def classify_scan(scan: CtScan, clf: Classifier, slice_threshold: float = 0.5) -> PatientDecision:
    if not scan.slices:
        raise InvalidArgument(f"scan {scan.scan_id} has no slices to classify")
    probs = tuple(float(p) for p in predict_slices(clf, scan.slices))
    verdict, fraction = aggregate(probs, slice_threshold)
    n = len(scan.slices)
    return PatientDecision(scan.scan_id, probs, slice_threshold, verdict, fraction,
                           n_slices_in=n, n_slices_kept=n,
                           slice_indices=tuple(range(n)))


def hybrid_vote(decisions) -> Label:
    """Majority verdict of exactly three decisions about the same scan."""
    decisions = list(decisions)
    if len(decisions) != 3:
        raise InvalidArgument(f"hybrid vote needs exactly 3 decisions, got {len(decisions)}")
    ids = {d.scan_id for d in decisions}
    if len(ids) != 1:
        raise InvalidArgument(f"decisions refer to different scans: {sorted(ids)}")
    covid = sum(1 for d in decisions if d.verdict is Label.COVID)
    return Label.COVID if covid >= 2 else Label.NON_COVID


@dataclass
class Segmenter:
    """A segmentation method plus whatever it needs to run."""

    method: SegMethod
    unet: UNet | None = None
    region_tol: float = 40.0
    seeds: list[tuple[int, int]] | None = None

    def __post_init__(self):
        if isinstance(self.method, str):
            self.method = SegMethod.parse(self.method)
        if self.method is SegMethod.UNET and self.unet is None:
            raise InvalidArgument("the unet method needs a trained UNet model")

    def segment(self, img: Image) -> Mask:
        """Raw lung mask. A constant slice has no lungs to find: empty mask."""
        try:
            if self.method is SegMethod.OTSU:
                return segment_otsu(img)
            if self.method is SegMethod.KMEANS:
                return segment_kmeans2(img)
            if self.method is SegMethod.REGION:
                seeds = self.seeds or default_seeds(img.width, img.height)
                return segment_region(img, seeds, self.region_tol)
        except DegenerateHistogram:
            return Mask.empty(img.width, img.height)
        size = self.unet.cfg.input_size
        if img.shape == (size, size):
            return predict_mask(self.unet, squeeze_intensity(img))
        # run the UNet at its own resolution, then map the mask back
        mask = predict_mask(self.unet, squeeze_intensity(resize_bilinear(img, size, size)))
        return resize_nearest_mask(mask, img.width, img.height)


def extract_scan(scan: CtScan, segmenter: Segmenter, size: int = 224,
                 params: ExtractionParams = ExtractionParams()) -> CtScan:
    """Resize every slice to ``size`` x ``size``, segment it and keep the lungs."""
    out = []
    for img in scan.slices:
        resized = resize_bilinear(img, size, size)
        out.append(extract_lungs(resized, segmenter.segment(resized), params))
    return CtScan(scan.scan_id, out, scan.label)


def run_pipeline(scan: CtScan, segmenter: Segmenter, clf: Classifier,
                 policy: SliceFilterPolicy = SliceFilterPolicy(),
                 slice_threshold: float = 0.5, size: int = 224,
                 params: ExtractionParams = ExtractionParams()) -> PatientDecision:
    """Segment, extract, filter and classify one scan."""
    if not scan.slices:
        raise InvalidArgument(f"scan {scan.scan_id} has no slices")
    if clf.cfg.input_size != size:
        raise InvalidArgument(
            f"classifier expects {clf.cfg.input_size}px slices, pipeline produces {size}px")
    extracted = extract_scan(scan, segmenter, size, params)
    filtered = filter_scan(extracted, policy)
    if not filtered.scan.slices:
        raise InvalidArgument(
            f"scan {scan.scan_id}: every slice was removed and the policy keeps none")
    decision = classify_scan(filtered.scan, clf, slice_threshold)
    return PatientDecision(
        decision.scan_id, decision.probabilities, slice_threshold, decision.verdict,
        decision.covid_slice_fraction, n_slices_in=filtered.n_slices_in,
        n_slices_kept=len(filtered.kept_indices), threshold_used=filtered.threshold_used,
        slice_indices=tuple(filtered.kept_indices))


def run_pipeline_many(scans, segmenter: Segmenter, clf: Classifier, jobs: int = 1,
                      **kwargs) -> list[PatientDecision]:
    """:func:`run_pipeline` over several scans; results keep input order.

    Models are only read during inference, so scans can share them across
    worker threads. The output does not depend on ``jobs``.
    """
    scans = list(scans)
    if jobs < 1:
        raise InvalidArgument("jobs must be >= 1")
    if jobs == 1:
        return [run_pipeline(s, segmenter, clf, **kwargs) for s in scans]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda s: run_pipeline(s, segmenter, clf, **kwargs), scans))


DECISION_FIELDS = ["scan_id", "n_slices_in", "n_slices_kept", "threshold_used",
                   "covid_slice_fraction", "verdict"]


def write_decisions_csv(decisions, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DECISION_FIELDS)
        for d in decisions:
            writer.writerow([
                d.scan_id, d.n_slices_in, d.n_slices_kept,
                "none" if d.threshold_used is None else d.threshold_used,
                f"{d.covid_slice_fraction:.6f}", d.verdict.value,
            ])


def read_decisions_csv(path) -> list[PatientDecision]:
    """Decisions as written by :func:`write_decisions_csv` (no slice probabilities)."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(DECISION_FIELDS) - set(reader.fieldnames or [])
        if missing:
            raise ParseError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            used = row["threshold_used"]
            out.append(PatientDecision(
                scan_id=row["scan_id"], probabilities=(), slice_threshold=float("nan"),
                verdict=Label.parse(row["verdict"]),
                covid_slice_fraction=float(row["covid_slice_fraction"]),
                n_slices_in=int(row["n_slices_in"]),
                n_slices_kept=int(row["n_slices_kept"]),
                threshold_used=None if used == "none" else int(used)))
    return out


def write_slice_csv(decisions, path) -> None:
    """Per-slice probabilities: ``scan_id,slice_index,prob_noncovid``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scan_id", "slice_index", "prob_noncovid"])
        for d in decisions:
            indices = d.slice_indices or tuple(range(len(d.probabilities)))
            for idx, p in zip(indices, d.probabilities):
                writer.writerow([d.scan_id, idx, f"{p:.8f}"])
