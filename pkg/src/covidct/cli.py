"""Lung CT segmentation and COVID-19 diagnosis from the command line.

Every subcommand resolves its settings from built-in defaults, then an
optional ``--config`` key=value file, then explicit flags (last wins). The
resolved settings are echoed to a run manifest that can be fed back through
``--config`` to repeat the run. Exit codes: 0 success, 1 runtime error,
2 usage error. Outputs written by a failed run are removed.
"""

from __future__ import annotations

import argparse
import csv
import logging
import shutil
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .classicseg import SegMethod
from .classifier import ClfConfig, build_classifier, train_classifier
from .config import read_kv, write_kv
from .data import (
    MASK_DIR, PhantomSpec, index_dataset, load_scan, load_truth_masks, write_phantoms,
)
from .errors import CovidCtError, InvalidArgument, ParseError
from .imaging import (
    Image, read_pgm, resize_bilinear, resize_nearest_mask, squeeze_intensity, write_mask,
    write_pgm,
)
from .metrics import confusion, dice, report, write_dice_csv
from .morphology import ExtractionParams
from .nnengine import TrainConfig, load_weights, save_weights
from .pipeline import (
    FILTER_PRESETS, Segmenter, SliceFilterPolicy, extract_scan, filter_scan, hybrid_vote,
    read_decisions_csv, run_pipeline_many, write_decisions_csv, write_slice_csv,
)
from .scan import Label
from .unet import UNetConfig, build_unet, train_unet

log = logging.getLogger("covidct")

METHODS = [m.value for m in SegMethod]


class UsageError(Exception):
    """Bad or missing settings; reported with exit code 2."""


# -- settings -----------------------------------------------------------------

def _bool(text) -> bool:
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected true/false, got {text!r}")


def _int_list(text) -> tuple[int, ...]:
    text = str(text).strip()
    return tuple(int(v) for v in text.split(",")) if text else ()


def _str_list(text) -> tuple[str, ...]:
    return tuple(v.strip() for v in str(text).split(",") if v.strip())


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    return str(value)


@dataclass(frozen=True)
class Opt:
    name: str
    conv: object = str
    default: object = None
    help: str = ""
    choices: tuple | None = None
    required: bool = False
    nargs: str | None = None

    @property
    def key(self) -> str:
        return self.name.replace("-", "_")


def _convert(opt: Opt, raw):
    if isinstance(raw, list):
        raw = ",".join(raw)
    try:
        value = opt.conv(raw)
    except ValueError as exc:
        raise UsageError(f"--{opt.name}: {exc}") from None
    if opt.choices and value not in opt.choices:
        raise UsageError(f"--{opt.name}: {value!r} is not one of {', '.join(opt.choices)}")
    return value


def resolve(opts, flags: dict, config: dict | None, command: str) -> dict:
    """Merge defaults, config-file values and flags into typed settings."""
    known = {o.key: o for o in opts}
    config = {k.replace("-", "_"): v for k, v in (config or {}).items()}
    file_cmd = config.pop("command", command)
    config.pop("version", None)
    if file_cmd != command:
        raise UsageError(f"config was written for {file_cmd!r}, not {command!r}")
    unknown = sorted(set(config) - set(known))
    if unknown:
        raise UsageError(f"unknown config keys for {command}: {', '.join(unknown)}")
    out = {}
    for key, opt in known.items():
        if key in flags:
            raw = flags[key]
        elif key in config:
            raw = config[key]
        else:
            out[key] = opt.default
            continue
        if raw == "" and not opt.required:
            out[key] = opt.default if opt.conv not in (_int_list, _str_list) else ()
            continue
        out[key] = _convert(opt, raw)
    missing = [f"--{o.name}" for o in opts if o.required and out[o.key] in (None, ())]
    if missing:
        raise UsageError(f"missing required option(s): {', '.join(missing)}")
    return out


def _dataclass_to_kv(obj) -> dict[str, str]:
    return {f.name: _fmt(getattr(obj, f.name)) for f in fields(obj)}


def _dataclass_from_kv(cls, values: dict[str, str]):
    proto = cls()
    kwargs = {}
    for f in fields(cls):
        if f.name not in values:
            continue
        default, raw = getattr(proto, f.name), values[f.name]
        if isinstance(default, bool):
            kwargs[f.name] = _bool(raw)
        elif isinstance(default, tuple):
            kwargs[f.name] = _int_list(raw)
        else:
            kwargs[f.name] = type(default)(raw)
    return cls(**kwargs)


def sidecar(weights) -> Path:
    """Model config stored next to a weights file."""
    return Path(str(weights) + ".cfg")


# -- output bookkeeping -------------------------------------------------------

class Outputs:
    """Tracks what a run writes so a failed run can be rolled back."""

    def __init__(self):
        self._files: list[Path] = []
        self._dirs: list[tuple[Path, bool, set]] = []

    def file(self, path) -> Path:
        path = Path(path)
        self._make_parent(path.parent)
        self._files.append(path)
        return path

    def directory(self, path) -> Path:
        path = Path(path)
        existed = path.exists()
        before = set(path.rglob("*")) if existed else set()
        if not existed:
            self._make_parent(path.parent)
        path.mkdir(parents=True, exist_ok=True)
        self._dirs.append((path, existed, before))
        return path

    def _make_parent(self, parent: Path) -> None:
        missing = []
        while not parent.exists():
            missing.append(parent)
            parent = parent.parent
        if missing:
            missing[0].mkdir(parents=True)
            self._dirs.append((missing[-1], False, set()))

    def rollback(self) -> None:
        for f in self._files:
            f.unlink(missing_ok=True)
        for path, existed, before in reversed(self._dirs):
            if not existed:
                shutil.rmtree(path, ignore_errors=True)
                continue
            for p in sorted(set(path.rglob("*")) - before, reverse=True):
                if p.is_dir() and not p.is_symlink():
                    shutil.rmtree(p, ignore_errors=True)
                else:
                    p.unlink(missing_ok=True)


# -- shared helpers -----------------------------------------------------------

def _existing_dir(path, flag: str) -> Path:
    path = Path(path)
    if not path.is_dir():
        raise UsageError(f"--{flag}: directory {path} does not exist")
    return path


def _existing_file(path, flag: str) -> Path:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"--{flag}: file {path} does not exist")
    return path


def _load_unet(path):
    path = _existing_file(path, "unet")
    cfg = _dataclass_from_kv(UNetConfig, read_kv(_existing_file(sidecar(path), "unet")))
    return load_weights(build_unet(cfg), path)


def _load_classifier(path):
    path = _existing_file(path, "clf")
    cfg = _dataclass_from_kv(ClfConfig, read_kv(_existing_file(sidecar(path), "clf")))
    return load_weights(build_classifier(cfg), path)


def _segmenter(s) -> Segmenter:
    method = SegMethod.parse(s["method"])
    if method is SegMethod.UNET:
        if not s.get("unet"):
            raise UsageError("--method unet needs --unet WEIGHTS")
        return Segmenter(method, unet=_load_unet(s["unet"]), region_tol=s["region_tol"])
    return Segmenter(method, region_tol=s["region_tol"])


def _policy(s) -> SliceFilterPolicy:
    primary = s["threshold"] if s.get("threshold") is not None else FILTER_PRESETS[s["filter_preset"]]
    try:
        return SliceFilterPolicy(primary, tuple(s["fallbacks"]), s["keep_all"])
    except InvalidArgument as exc:
        raise UsageError(str(exc)) from None


def _extraction(s) -> ExtractionParams:
    return ExtractionParams(s["erode_radius"], s["close_radius"], s["edge_thresh"])


def _label_dir(label: Label | None) -> str | None:
    if label is None:
        return None
    return "covid" if label is Label.COVID else "non-covid"


def _scan_folder(root: Path, scan_id: str, label: Label | None) -> Path:
    sub = _label_dir(label)
    return root / sub / scan_id if sub else root / scan_id


def _fit(img: Image, size: int) -> Image:
    return img if img.shape == (size, size) else resize_bilinear(img, size, size)


def _index(root, flag="in"):
    index = index_dataset(_existing_dir(root, flag))
    for issue in index.issues:
        log.warning("skipped %s", issue)
    if not index.entries:
        raise InvalidArgument(f"no scans found under {root}")
    return index


# -- subcommands --------------------------------------------------------------

SEG_OPTS = [
    Opt("method", str, "kmeans", "segmentation method", tuple(METHODS)),
    Opt("unet", str, None, "UNet weights (method unet)"),
    Opt("region-tol", float, 40.0, "region-growing intensity tolerance"),
]
EXTRACT_OPTS = [
    Opt("erode-radius", int, 2, "erosion disk radius"),
    Opt("close-radius", int, 10, "closing disk radius"),
    Opt("edge-thresh", float, 10.0, "Roberts edge threshold (0..100 scale)"),
]
FILTER_OPTS = [
    Opt("filter-preset", str, "42x42", "minimum non-dark area preset", tuple(FILTER_PRESETS)),
    Opt("threshold", int, None, "explicit primary threshold (overrides the preset)"),
    Opt("fallbacks", _int_list, (1000, 500), "comma-separated fallback thresholds"),
    Opt("keep-all", _bool, True, "keep every slice when no threshold keeps any"),
]
TRAIN_OPTS = [
    Opt("epochs", int, 20, "training epochs"),
    Opt("lr", float, 0.1, "initial learning rate"),
    Opt("seed", int, 0, "initialisation and shuffling seed"),
    Opt("loss-csv", str, None, "write the per-step loss log here"),
]


def cmd_phantom(s, out: Outputs):
    spec = PhantomSpec(rng_seed=s["seed"], image_size=s["size"], n_scans=s["n_scans"],
                       slices_min=s["slices_min"], slices_max=s["slices_max"],
                       noise_sigma=s["noise"])
    root = out.directory(s["out"])
    scans = write_phantoms(spec, root)
    print(f"wrote {len(scans)} phantom scans to {root}")
    return root / "run_manifest.cfg"


def cmd_segment(s, out: Outputs):
    index = _index(s["in"])
    if not s["report"] and not s["out"]:
        raise UsageError("segment needs --report and/or --out")
    truth = s["truth"]
    if s["report"]:
        truth = _existing_dir(truth or Path(s["in"]) / MASK_DIR, "truth")
    seg = _segmenter(s)
    mask_root = out.directory(s["out"]) if s["out"] else None
    scores = []
    for entry in index.entries:
        scan = load_scan(entry)
        masks = [seg.segment(img) for img in scan.slices]
        if mask_root is not None:
            folder = mask_root / entry.scan_id
            folder.mkdir(parents=True, exist_ok=True)
            for path, m in zip(entry.slices, masks):
                write_mask(m, folder / path.name)
        if s["report"]:
            for pred, gt in zip(masks, load_truth_masks(truth, entry)):
                if gt.shape != pred.shape:
                    gt = resize_nearest_mask(gt, pred.width, pred.height)
                scores.append(dice(pred, gt))
    if s["report"]:
        avg, low = float(np.mean(scores)), float(np.min(scores))
        write_dice_csv([(s["method"], avg, low)], out.file(s["report"]))
        print(f"{s['method']}: avg dice {avg:.4f}, min dice {low:.4f} over {len(scores)} slices")
        return Path(str(s["report"]) + ".manifest.cfg")
    return mask_root / "run_manifest.cfg"


def cmd_train_unet(s, out: Outputs):
    index = _index(s["in"])
    truth = _existing_dir(s["truth"] or Path(s["in"]) / MASK_DIR, "truth")
    cfg = UNetConfig(base_channels=s["base"], depth=s["depth"], with_batchnorm=s["batchnorm"],
                     input_size=s["size"], mask_threshold=s["mask_threshold"], seed=s["seed"])
    size = cfg.input_size
    pairs = []
    for entry in index.entries:
        scan = load_scan(entry)
        for img, m in zip(scan.slices, load_truth_masks(truth, entry)):
            if m.shape != img.shape:
                raise InvalidArgument(f"{entry.scan_id}: mask and slice sizes differ")
            if m.shape != (size, size):
                m = resize_nearest_mask(m, size, size)
            pairs.append((squeeze_intensity(_fit(img, size)), m))
    model = build_unet(cfg)
    result = train_unet(model, pairs, TrainConfig(batch_size=s["batch_size"], epochs=s["epochs"],
                                                  initial_lr=s["lr"], rng_seed=s["seed"]))
    weights = out.file(s["out"])
    save_weights(model, weights)
    write_kv(_dataclass_to_kv(cfg), out.file(sidecar(weights)), header="UNet configuration")
    if s["loss_csv"]:
        result.write_csv(out.file(s["loss_csv"]))
    losses = result.epoch_losses()
    if losses:
        print(f"trained UNet on {len(pairs)} slices; final epoch loss {losses[-1]:.5f}")
    return Path(str(weights) + ".manifest.cfg")


def cmd_extract(s, out: Outputs):
    index = _index(s["in"])
    seg = _segmenter(s)
    params = _extraction(s)
    root = out.directory(s["out"])
    for entry in index.entries:
        scan = extract_scan(load_scan(entry), seg, s["size"], params)
        folder = _scan_folder(root, entry.scan_id, entry.label)
        folder.mkdir(parents=True, exist_ok=True)
        for path, img in zip(entry.slices, scan.slices):
            write_pgm(img, folder / path.name)
    print(f"extracted lungs from {len(index.entries)} scans into {root}")
    return root / "run_manifest.cfg"


def cmd_filter(s, out: Outputs):
    index = _index(s["in"])
    policy = _policy(s)
    root = out.directory(s["out"])
    rows = []
    for entry in index.entries:
        res = filter_scan(load_scan(entry), policy)
        rows.append([entry.scan_id, res.n_slices_in, len(res.kept_indices),
                     "none" if res.threshold_used is None else res.threshold_used])
        if not res.kept_indices:
            log.warning("%s: every slice removed", entry.scan_id)
            continue
        folder = _scan_folder(root, entry.scan_id, entry.label)
        folder.mkdir(parents=True, exist_ok=True)
        for i in res.kept_indices:
            shutil.copyfile(entry.slices[i], folder / entry.slices[i].name)
    if s["report"]:
        with open(out.file(s["report"]), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["scan_id", "n_slices_in", "n_slices_kept", "threshold_used"])
            writer.writerows(rows)
    kept = sum(r[2] for r in rows)
    print(f"kept {kept} of {sum(r[1] for r in rows)} slices")
    return root / "run_manifest.cfg"


def cmd_train_clf(s, out: Outputs):
    index = _index(s["in"])
    cfg = ClfConfig(conv_channels=s["channels"], dense_units=s["dense"], dropout=s["dropout"],
                    input_size=s["size"], batch_size=s["batch_size"], initial_lr=s["lr"],
                    epochs=s["epochs"], rng_seed=s["seed"], augment=s["augment"])
    images, labels = [], []
    for entry in index.entries:
        if entry.label is None:
            raise InvalidArgument(f"{entry.scan_id} has no label folder")
        for img in load_scan(entry).slices:
            images.append(_fit(img, cfg.input_size))
            labels.append(entry.label)
    model = build_classifier(cfg)
    result = train_classifier(model, images, labels)
    weights = out.file(s["out"])
    save_weights(model, weights)
    write_kv(_dataclass_to_kv(cfg), out.file(sidecar(weights)), header="classifier configuration")
    if s["loss_csv"]:
        result.write_csv(out.file(s["loss_csv"]))
    print(f"trained classifier on {len(images)} slices")
    return Path(str(weights) + ".manifest.cfg")


def cmd_predict(s, out: Outputs):
    index = _index(s["in"])
    clf = _load_classifier(s["clf"])
    seg = _segmenter(s)
    policy = _policy(s)
    if s["jobs"] < 1:
        raise UsageError("--jobs must be >= 1")
    scans = [load_scan(e) for e in index.entries]
    decisions = run_pipeline_many(scans, seg, clf, jobs=s["jobs"], policy=policy,
                                  slice_threshold=s["slice_threshold"],
                                  size=clf.cfg.input_size, params=_extraction(s))
    write_decisions_csv(decisions, out.file(s["out"]))
    if s["slices_csv"]:
        write_slice_csv(decisions, out.file(s["slices_csv"]))
    n_covid = sum(d.verdict is Label.COVID for d in decisions)
    print(f"{len(decisions)} scans: {n_covid} COVID, {len(decisions) - n_covid} non-COVID")
    return Path(str(s["out"]) + ".manifest.cfg")


def _read_verdicts(path) -> dict[str, Label]:
    path = _existing_file(path, "pred")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if not {"scan_id", "verdict"} <= set(reader.fieldnames or []):
            raise ParseError(f"{path}: needs scan_id and verdict columns")
        return {row["scan_id"]: Label.parse(row["verdict"]) for row in reader}


def _read_labels(source) -> dict[str, Label]:
    path = Path(source)
    if path.is_dir():
        labels = index_dataset(path, "test").labels()
        missing = [k for k, v in labels.items() if v is None]
        if missing:
            raise InvalidArgument(f"{path}: scans without label folders: {missing[:5]}")
        return labels
    path = _existing_file(path, "labels")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if not {"scan_id", "label"} <= set(reader.fieldnames or []):
            raise ParseError(f"{path}: needs scan_id and label columns")
        return {row["scan_id"]: Label.parse(row["label"]) for row in reader}


def cmd_evaluate(s, out: Outputs):
    preds = _read_verdicts(s["pred"])
    truth = _read_labels(s["labels"])
    missing = sorted(set(preds) - set(truth))
    if missing:
        raise InvalidArgument(f"no ground-truth label for {len(missing)} scans, e.g. {missing[0]}")
    ids = sorted(preds)
    rep = report(confusion([preds[i] for i in ids], [truth[i] for i in ids]), z=s["z"])
    print(rep.table())
    target = s["out"] or str(Path(s["pred"]).with_suffix("")) + ".metrics.csv"
    rep.write_csv(out.file(target))
    return Path(str(target) + ".manifest.cfg")


def cmd_hybrid(s, out: Outputs):
    paths = s["inputs"]
    if len(paths) != 3:
        raise UsageError(f"--inputs needs exactly 3 decision CSVs, got {len(paths)}")
    tables = []
    for p in paths:
        decisions = read_decisions_csv(_existing_file(p, "inputs"))
        tables.append({d.scan_id: d for d in decisions})
    ids = sorted(tables[0])
    if any(sorted(t) != ids for t in tables[1:]):
        raise InvalidArgument("the three decision files cover different scans")
    with open(out.file(s["out"]), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scan_id", "verdict_1", "verdict_2", "verdict_3", "verdict"])
        for i in ids:
            trio = [t[i] for t in tables]
            writer.writerow([i] + [d.verdict.value for d in trio] + [hybrid_vote(trio).value])
    print(f"hybrid verdicts for {len(ids)} scans written to {s['out']}")
    return Path(str(s["out"]) + ".manifest.cfg")


COMMANDS = {
    "phantom": (cmd_phantom, "generate a synthetic CT dataset with ground-truth masks", [
        Opt("out", str, None, "output dataset directory", required=True),
        Opt("seed", int, 7, "generator seed"),
        Opt("n-scans", int, 3, "scans per class"),
        Opt("size", int, 224, "slice side length"),
        Opt("slices-min", int, 4, "fewest slices per scan"),
        Opt("slices-max", int, 8, "most slices per scan"),
        Opt("noise", float, 5.0, "Gaussian noise sigma"),
    ]),
    "segment": (cmd_segment, "segment lungs and score against ground truth", [
        Opt("in", str, None, "dataset root", required=True),
        *SEG_OPTS,
        Opt("truth", str, None, "ground-truth mask root (default IN/masks)"),
        Opt("report", str, None, "dice report CSV"),
        Opt("out", str, None, "write predicted masks under this directory"),
    ]),
    "train-unet": (cmd_train_unet, "train the UNet segmenter", [
        Opt("in", str, None, "dataset root", required=True),
        Opt("truth", str, None, "ground-truth mask root (default IN/masks)"),
        Opt("out", str, None, "weights file", required=True),
        Opt("base", int, 16, "channels at the first level"),
        Opt("depth", int, 3, "pooling stages"),
        Opt("batchnorm", _bool, True, "use batch normalisation"),
        Opt("size", int, 224, "training resolution"),
        Opt("mask-threshold", float, 0.5, "probability cut for masks"),
        Opt("batch-size", int, 32, "training batch size"),
        *TRAIN_OPTS,
    ]),
    "extract": (cmd_extract, "resize, segment and keep only the lungs", [
        Opt("in", str, None, "dataset root", required=True),
        Opt("out", str, None, "output dataset directory", required=True),
        *SEG_OPTS,
        Opt("size", int, 224, "output slice side length"),
        *EXTRACT_OPTS,
    ]),
    "filter": (cmd_filter, "drop slices with too few non-dark pixels", [
        Opt("in", str, None, "lung-extracted dataset root", required=True),
        Opt("out", str, None, "output dataset directory", required=True),
        *FILTER_OPTS,
        Opt("report", str, None, "per-scan filter report CSV"),
    ]),
    "train-clf": (cmd_train_clf, "train the slice classifier", [
        Opt("in", str, None, "labelled, extracted and filtered dataset root", required=True),
        Opt("out", str, None, "weights file", required=True),
        Opt("channels", _int_list, (16, 32, 64, 128), "conv block widths"),
        Opt("dense", int, 256, "dense units"),
        Opt("dropout", float, 0.1, "dropout rate"),
        Opt("size", int, 224, "input side length"),
        Opt("batch-size", int, 128, "training batch size"),
        Opt("augment", _bool, True, "random flips during training"),
        *TRAIN_OPTS,
    ]),
    "predict": (cmd_predict, "full pipeline: per-scan COVID verdicts", [
        Opt("in", str, None, "dataset root of raw scans", required=True),
        Opt("clf", str, None, "classifier weights", required=True),
        Opt("out", str, None, "decisions CSV", required=True),
        *SEG_OPTS,
        *EXTRACT_OPTS,
        *FILTER_OPTS,
        Opt("slice-threshold", float, 0.5, "slices below this non-COVID probability vote COVID"),
        Opt("slices-csv", str, None, "per-slice probability CSV"),
        Opt("jobs", int, 1, "worker threads across scans"),
    ]),
    "evaluate": (cmd_evaluate, "metrics for a decisions CSV", [
        Opt("pred", str, None, "CSV with scan_id and verdict columns", required=True),
        Opt("labels", str, None, "labelled dataset root or CSV with scan_id,label", required=True),
        Opt("out", str, None, "metrics CSV (default PRED.metrics.csv)"),
        Opt("z", float, 1.96, "normal quantile for the confidence interval"),
    ]),
    "hybrid": (cmd_hybrid, "majority vote over three methods' decisions", [
        Opt("inputs", _str_list, (), "three decision CSVs", required=True, nargs="+"),
        Opt("out", str, None, "hybrid verdict CSV", required=True),
    ]),
}


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(prog="covidct", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"covidct {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    subparsers = {}
    for name, (_, help_text, opts) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        for o in opts:
            extra = {"nargs": o.nargs} if o.nargs else {}
            if o.choices:
                extra["choices"] = o.choices
            shown = "" if o.default in (None, ()) else f" (default {_fmt(o.default)})"
            p.add_argument(f"--{o.name}", dest=o.key, default=argparse.SUPPRESS,
                           help=o.help + shown, **extra)
        p.add_argument("--config", default=argparse.SUPPRESS,
                       help="key = value file; flags override it")
        p.add_argument("--manifest", default=argparse.SUPPRESS,
                       help="where to write the run manifest")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress")
        subparsers[name] = p
    return parser, subparsers


def main(argv=None) -> int:
    parser, subparsers = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    flags = vars(ns)
    command = flags.pop("command")
    verbose = flags.pop("verbose", False)
    config_path = flags.pop("config", None)
    manifest = flags.pop("manifest", None)
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    handler, _, opts = COMMANDS[command]
    out = Outputs()
    try:
        config = read_kv(config_path) if config_path else None
        settings = resolve(opts, flags, config, command)
        default_manifest = handler(settings, out)
        target = Path(manifest) if manifest else default_manifest
        values = {"command": command, "version": __version__}
        values.update({k: _fmt(v) for k, v in settings.items()})
        write_kv(values, out.file(target), header=f"covidct {command} run")
    except UsageError as exc:
        out.rollback()
        subparsers[command].print_usage(sys.stderr)
        print(f"covidct {command}: error: {exc}", file=sys.stderr)
        return 2
    except (CovidCtError, OSError, ValueError, ArithmeticError, IndexError) as exc:
        out.rollback()
        print(f"covidct {command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
