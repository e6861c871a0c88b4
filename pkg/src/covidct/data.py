"""Dataset discovery and the synthetic phantom CT generator.

On-disk layout::

    root/covid/<scan_id>/0000.pgm, 0001.pgm, ...
    root/non-covid/<scan_id>/...
    root/masks/<scan_id>/0000.pgm ...      (phantoms only: ground-truth lungs)

Test partitions may drop the label folders: ``root/<scan_id>/*.pgm``.

A phantom slice is a bright body ellipse (~180) on a black background with
two dark lung ellipses (~30). COVID slices also carry bright lesion blobs
(120-160) inside the lungs. Gaussian noise is added last and the result is
rounded and clamped to [0, 255].
"""

from __future__ import annotations

import csv
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .config import read_kv, write_kv
from .errors import DatasetIndexError, InvalidArgument, IoError
from .imaging import Image, Mask, read_mask, read_pgm, write_mask, write_pgm
from .scan import CtScan, Label

LABEL_DIRS = {"covid": Label.COVID, "non-covid": Label.NON_COVID}
MASK_DIR = "masks"
PARTITIONS = ("train", "validation", "test")


@dataclass(frozen=True)
class ScanEntry:
    scan_id: str
    path: Path
    label: Label | None
    slices: tuple[Path, ...]


@dataclass
class DatasetIndex:
    partition: str
    entries: list[ScanEntry] = field(default_factory=list)
    issues: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def labels(self) -> dict[str, Label | None]:
        return {e.scan_id: e.label for e in self.entries}


def _slice_files(folder: Path) -> tuple[Path, ...]:
    return tuple(sorted(p for p in folder.iterdir()
                        if p.is_file() and p.suffix.lower() == ".pgm"))


def index_dataset(root, partition: str = "train") -> DatasetIndex:
    """Scan ``root`` for CT folders; ordering is lexicographic throughout."""
    root = Path(root)
    if partition not in PARTITIONS:
        raise InvalidArgument(f"partition must be one of {PARTITIONS}")
    if not root.is_dir():
        raise IoError(f"dataset root {root} does not exist")
    index = DatasetIndex(partition)
    labelled = [d for d in LABEL_DIRS if (root / d).is_dir()]
    if labelled:
        groups = [(root / d, LABEL_DIRS[d]) for d in sorted(labelled)]
    else:
        groups = [(root, None)]

    seen: dict[str, Path] = {}
    for folder, label in groups:
        for scan_dir in sorted(p for p in folder.iterdir() if p.is_dir()):
            if label is None and scan_dir.name == MASK_DIR:
                continue
            if scan_dir.name in seen:
                raise DatasetIndexError(
                    f"scan id {scan_dir.name!r} appears in both {seen[scan_dir.name]} "
                    f"and {scan_dir}")
            seen[scan_dir.name] = scan_dir
            slices = _slice_files(scan_dir)
            if not slices:
                index.issues.append(f"{scan_dir}: no .pgm slices")
                continue
            index.entries.append(ScanEntry(scan_dir.name, scan_dir, label, slices))
    index.entries.sort(key=lambda e: e.scan_id)
    return index


def load_scan(entry: ScanEntry) -> CtScan:
    return CtScan(entry.scan_id, [read_pgm(p) for p in entry.slices], entry.label)


def load_truth_masks(mask_root, entry: ScanEntry) -> list[Mask]:
    """Ground-truth masks matching ``entry``'s slices by file name."""
    folder = Path(mask_root) / entry.scan_id
    return [read_mask(folder / p.name) for p in entry.slices]


_PUBLIC_NAME = re.compile(r"^t(\d+)$")


def split_public_seg(volumes) -> tuple[list[str], list[str]]:
    """Train/test split of the public segmentation volumes: t0 and t1 are
    held out for testing, t2..t8 train."""
    train, test = [], []
    for name in volumes:
        m = _PUBLIC_NAME.match(str(name))
        if m is None or int(m.group(1)) > 8:
            raise InvalidArgument(f"volume name {name!r} is not one of t0..t8")
        (test if int(m.group(1)) <= 1 else train).append(name)
    return train, test


@dataclass(frozen=True)
class PhantomSpec:
    rng_seed: int = 7
    image_size: int = 224
    n_scans: int = 3
    """Scans per class."""
    slices_min: int = 4
    slices_max: int = 8
    body_semi_axes: tuple[float, float] = (0.44, 0.36)
    """(x, y) semi-axes as fractions of the image size; centred."""
    body_intensity: int = 180
    lung_centers: tuple[float, float] = (0.25, 0.75)
    """x positions of the two lung centres (both at y = 0.5)."""
    lung_semi_axes: tuple[float, float] = (0.13, 0.20)
    lung_intensity: int = 30
    lung_scale_min: float = 0.6
    """Per-slice lung size factor is drawn from [lung_scale_min, 1]."""
    lesions_min: int = 1
    lesions_max: int = 3
    lesion_radius: tuple[float, float] = (0.025, 0.045)
    lesion_intensity: tuple[int, int] = (120, 160)
    noise_sigma: float = 5.0

    def __post_init__(self):
        if self.image_size < 16:
            raise InvalidArgument("image_size must be >= 16")
        if self.n_scans < 0 or self.slices_min < 1 or self.slices_max < self.slices_min:
            raise InvalidArgument("need n_scans >= 0 and 1 <= slices_min <= slices_max")
        if not 0.0 < self.lung_scale_min <= 1.0:
            raise InvalidArgument("lung_scale_min must be in (0, 1]")
        if self.lesions_min < 1 or self.lesions_max < self.lesions_min:
            raise InvalidArgument("need 1 <= lesions_min <= lesions_max")
        if self.noise_sigma < 0:
            raise InvalidArgument("noise_sigma must be >= 0")
        for lo, hi in (self.lesion_radius, self.lesion_intensity):
            if lo > hi:
                raise InvalidArgument("ranges must be (low, high)")
        bx, by = self.body_semi_axes
        lx, ly = self.lung_semi_axes
        if min(lx - self.lesion_radius[1], ly - self.lesion_radius[1]) * self.lung_scale_min <= 0:
            raise InvalidArgument("lesions must fit inside the smallest lungs")
        theta = np.linspace(0.0, 2.0 * np.pi, 720)
        for cx in self.lung_centers:
            px = cx - 0.5 + lx * np.cos(theta)
            py = ly * np.sin(theta)
            if np.any((px / bx) ** 2 + (py / by) ** 2 >= 1.0):
                raise InvalidArgument("lung ellipses must lie inside the body ellipse")
        left, right = sorted(self.lung_centers)
        if right - left <= 2 * lx:
            raise InvalidArgument("lung ellipses overlap")

    def to_config(self) -> dict[str, str]:
        out = {}
        for key, value in asdict(self).items():
            out[key] = ",".join(str(v) for v in value) if isinstance(value, tuple) else str(value)
        return out

    @classmethod
    def from_config(cls, values: dict[str, str]) -> "PhantomSpec":
        kwargs = {}
        for f in fields(cls):
            if f.name not in values:
                continue
            default = getattr(cls(), f.name)
            raw = values[f.name]
            if isinstance(default, tuple):
                kwargs[f.name] = tuple(type(default[0])(v) for v in raw.split(","))
            else:
                kwargs[f.name] = type(default)(raw)
        unknown = set(values) - {f.name for f in fields(cls)}
        if unknown:
            raise InvalidArgument(f"unknown phantom keys: {sorted(unknown)}")
        return cls(**kwargs)


@dataclass(frozen=True)
class PhantomSliceInfo:
    scan_id: str
    index: int
    label: Label
    n_lesions: int
    lung_scale: float


@dataclass
class PhantomScan:
    scan: CtScan
    masks: list[Mask]
    info: list[PhantomSliceInfo]


def _ellipse(size: int, cx: float, cy: float, ax: float, ay: float) -> np.ndarray:
    """Pixels whose centres fall inside the ellipse (all in pixel units)."""
    yy, xx = np.mgrid[0:size, 0:size]
    return ((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2 <= 1.0


def phantom_slice(spec: PhantomSpec, rng: np.random.Generator, covid: bool,
                  lung_scale: float | None = None):
    """One phantom slice: ``(image, lung mask, lesion count, lung scale)``."""
    n = spec.image_size
    centre = (n - 1) / 2.0
    if lung_scale is None:
        lung_scale = float(rng.uniform(spec.lung_scale_min, 1.0))
    canvas = np.zeros((n, n), dtype=np.float64)
    body = _ellipse(n, centre, centre, spec.body_semi_axes[0] * n, spec.body_semi_axes[1] * n)
    canvas[body] = spec.body_intensity

    ax = spec.lung_semi_axes[0] * n * lung_scale
    ay = spec.lung_semi_axes[1] * n * lung_scale
    lungs = np.zeros((n, n), dtype=bool)
    lung_geoms = []
    for fx in spec.lung_centers:
        cx = fx * (n - 1)
        lungs |= _ellipse(n, cx, centre, ax, ay)
        lung_geoms.append((cx, centre))
    canvas[lungs] = spec.lung_intensity

    n_lesions = 0
    if covid:
        n_lesions = int(rng.integers(spec.lesions_min, spec.lesions_max + 1))
        for _ in range(n_lesions):
            r = max(1.5, float(rng.uniform(*spec.lesion_radius)) * n)
            cx, cy = lung_geoms[int(rng.integers(len(lung_geoms)))]
            # centre drawn inside the lung shrunk by the lesion radius
            sx, sy = max(ax - r, 0.0), max(ay - r, 0.0)
            rho, phi = np.sqrt(rng.uniform()), rng.uniform(0.0, 2.0 * np.pi)
            lx, ly = cx + sx * rho * np.cos(phi), cy + sy * rho * np.sin(phi)
            blob = _ellipse(n, lx, ly, r, r) & lungs
            canvas[blob] = rng.uniform(*spec.lesion_intensity)

    if spec.noise_sigma > 0:
        canvas = canvas + rng.normal(0.0, spec.noise_sigma, size=canvas.shape)
    pixels = np.clip(np.floor(canvas + 0.5), 0, 255).astype(np.uint8)
    return Image(pixels), Mask(lungs), n_lesions, lung_scale


def scan_id_for(label: Label, i: int) -> str:
    return f"{'covid' if label is Label.COVID else 'noncovid'}_{i:03d}"


def generate_phantoms(spec: PhantomSpec) -> list[PhantomScan]:
    """All phantom scans for ``spec``: COVID scans first, then non-COVID.

    Every scan draws from its own child of ``SeedSequence(spec.rng_seed)``,
    so any scan can be regenerated independently of the others.
    """
    children = np.random.SeedSequence(spec.rng_seed).spawn(2 * spec.n_scans)
    out = []
    k = 0
    for label in (Label.COVID, Label.NON_COVID):
        for i in range(spec.n_scans):
            rng = np.random.default_rng(children[k])
            k += 1
            scan_id = scan_id_for(label, i)
            n_slices = int(rng.integers(spec.slices_min, spec.slices_max + 1))
            slices, masks, info = [], [], []
            for j in range(n_slices):
                img, mask, lesions, scale = phantom_slice(spec, rng, label is Label.COVID)
                slices.append(img)
                masks.append(mask)
                info.append(PhantomSliceInfo(scan_id, j, label, lesions, scale))
            out.append(PhantomScan(CtScan(scan_id, slices, label), masks, info))
    return out


def write_phantoms(spec: PhantomSpec, root) -> list[PhantomScan]:
    """Generate the phantoms for ``spec`` and write them under ``root``."""
    root = Path(root)
    scans = generate_phantoms(spec)
    try:
        root.mkdir(parents=True, exist_ok=True)
        for ph in scans:
            label_dir = "covid" if ph.scan.label is Label.COVID else "non-covid"
            img_dir = root / label_dir / ph.scan.scan_id
            mask_dir = root / MASK_DIR / ph.scan.scan_id
            img_dir.mkdir(parents=True, exist_ok=True)
            mask_dir.mkdir(parents=True, exist_ok=True)
            for j, (img, mask) in enumerate(zip(ph.scan.slices, ph.masks)):
                write_pgm(img, img_dir / f"{j:04d}.pgm")
                write_mask(mask, mask_dir / f"{j:04d}.pgm")
        write_kv(spec.to_config(), root / "phantom.cfg", header="phantom generator settings")
        with open(root / "phantom_meta.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["scan_id", "slice_index", "label", "n_lesions", "lung_scale"])
            for ph in scans:
                for inf in ph.info:
                    writer.writerow([inf.scan_id, inf.index, inf.label.value,
                                     inf.n_lesions, f"{inf.lung_scale:.6f}"])
    except OSError as exc:
        raise IoError(f"cannot write phantom dataset to {root}: {exc}") from exc
    return scans


def read_phantom_spec(path) -> PhantomSpec:
    return PhantomSpec.from_config(read_kv(path))


def write_scan(scan: CtScan, root) -> Path:
    """Write ``scan`` into the standard layout under ``root``."""
    root = Path(root)
    if scan.label is None:
        folder = root / scan.scan_id
    else:
        folder = root / ("covid" if scan.label is Label.COVID else "non-covid") / scan.scan_id
    folder.mkdir(parents=True, exist_ok=True)
    for j, img in enumerate(scan.slices):
        write_pgm(img, folder / f"{j:04d}.pgm")
    return folder
