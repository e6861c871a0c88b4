import csv

import pytest

from covidct.cli import main, resolve, Opt, UsageError
from covidct.config import read_kv


def run(*args):
    return main([str(a) for a in args])


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def phantom_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli") / "d"
    assert run("phantom", "--seed", 7, "--out", d, "--size", 64, "--n-scans", 2) == 0
    return d


def test_phantom_then_segment_report(phantom_dir, tmp_path):
    report = tmp_path / "r.csv"
    assert run("segment", "--method", "kmeans", "--in", phantom_dir,
               "--truth", phantom_dir / "masks", "--report", report) == 0
    (row,) = rows(report)
    assert row["method"] == "kmeans"
    assert 0.8 <= float(row["min_dice"]) <= float(row["avg_dice"]) <= 1.0
    manifest = read_kv(str(report) + ".manifest.cfg")
    assert manifest["command"] == "segment" and manifest["method"] == "kmeans"


def test_manifest_reruns_identically(phantom_dir, tmp_path):
    first = tmp_path / "a.csv"
    assert run("segment", "--method", "otsu", "--in", phantom_dir, "--report", first) == 0
    config = tmp_path / "rerun.cfg"
    values = read_kv(str(first) + ".manifest.cfg")
    second = tmp_path / "b.csv"
    values["report"] = str(second)
    config.write_text("".join(f"{k} = {v}\n" for k, v in values.items()))
    assert run("segment", "--config", config) == 0
    assert first.read_bytes() == second.read_bytes()


def test_flags_override_config(tmp_path):
    opts = [Opt("method", str, "kmeans", "", ("otsu", "kmeans")), Opt("jobs", int, 1, "")]
    s = resolve(opts, {"jobs": "3"}, {"method": "otsu", "jobs": "2"}, "predict")
    assert s == {"method": "otsu", "jobs": 3}
    with pytest.raises(UsageError):
        resolve(opts, {}, {"bogus": "1"}, "predict")
    with pytest.raises(UsageError):
        resolve(opts, {}, {"command": "segment"}, "predict")


def test_missing_in_is_usage_error(capsys):
    assert run("segment", "--report", "x.csv") == 2
    assert "usage" in capsys.readouterr().err.lower()
    assert run("segment", "--in", "/nonexistent/dir", "--report", "x.csv") == 2


def test_runtime_error_rolls_back(phantom_dir, tmp_path):
    out = tmp_path / "new" / "ex"
    # a 0-sized erosion disk fails inside the run, after the output tree exists
    assert run("extract", "--in", phantom_dir, "--out", out, "--size", 64,
               "--erode-radius", 0) == 1
    assert not (tmp_path / "new").exists()


@pytest.fixture(scope="module")
def workflow(phantom_dir, tmp_path_factory):
    w = tmp_path_factory.mktemp("flow")
    radii = ["--erode-radius", 1, "--close-radius", 3]
    assert run("extract", "--in", phantom_dir, "--out", w / "ex", "--size", 64, *radii) == 0
    assert run("filter", "--in", w / "ex", "--out", w / "flt", "--threshold", 150,
               "--fallbacks", "100,50", "--report", w / "flt.csv") == 0
    assert run("train-clf", "--in", w / "flt", "--out", w / "clf.w", "--channels", "4,8",
               "--dense", 16, "--size", 64, "--batch-size", 8, "--epochs", 3) == 0
    preds = []
    for method in ("otsu", "kmeans", "region"):
        p = w / f"{method}.csv"
        assert run("predict", "--in", phantom_dir, "--clf", w / "clf.w", "--out", p,
                   "--method", method, "--threshold", 150, "--fallbacks", "100,50",
                   *radii) == 0
        preds.append(p)
    return w, preds


def test_workflow_outputs(workflow, phantom_dir):
    w, preds = workflow
    assert (w / "clf.w").exists() and (w / "clf.w.cfg").exists()
    assert (w / "ex" / "run_manifest.cfg").exists()
    report = rows(w / "flt.csv")
    assert len(report) == 4
    for p in preds:
        got = rows(p)
        assert [r["scan_id"] for r in got] == sorted(r["scan_id"] for r in got)
        assert all(r["verdict"] in ("covid", "non-covid") for r in got)


def test_predict_jobs_identical(workflow, phantom_dir):
    w, _ = workflow
    outs = []
    for jobs in (1, 4):
        p = w / f"jobs{jobs}.csv"
        assert run("predict", "--in", phantom_dir, "--clf", w / "clf.w", "--out", p,
                   "--jobs", jobs, "--threshold", 150, "--fallbacks", "100,50",
                   "--erode-radius", 1, "--close-radius", 3) == 0
        outs.append(p.read_bytes())
    assert outs[0] == outs[1]


def test_evaluate_table(workflow, phantom_dir, capsys):
    w, preds = workflow
    capsys.readouterr()
    assert run("evaluate", "--pred", preds[1], "--labels", phantom_dir) == 0
    text = capsys.readouterr().out
    assert "macro F1" in text and "CI" in text
    metrics = {r["metric"]: float(r["value"]) for r in rows(preds[1].with_suffix(".metrics.csv"))}
    assert metrics["n"] == 4 and 0.0 <= metrics["macro_f1"] <= 1.0


def test_evaluate_against_label_csv(tmp_path, capsys):
    pred = tmp_path / "p.csv"
    pred.write_text("scan_id,verdict\na,covid\nb,covid\nc,non-covid\nd,non-covid\n")
    labels = tmp_path / "l.csv"
    labels.write_text("scan_id,label\na,covid\nb,non-covid\nc,non-covid\nd,covid\n")
    assert run("evaluate", "--pred", pred, "--labels", labels, "--out", tmp_path / "m.csv") == 0
    metrics = {r["metric"]: float(r["value"]) for r in rows(tmp_path / "m.csv")}
    assert metrics["accuracy"] == 0.5 and metrics["macro_f1"] == 0.5
    labels.write_text("scan_id,label\na,covid\n")
    assert run("evaluate", "--pred", pred, "--labels", labels, "--out", tmp_path / "m2.csv") == 1
    assert not (tmp_path / "m2.csv").exists()


def test_hybrid(workflow, tmp_path):
    w, preds = workflow
    out = tmp_path / "h.csv"
    assert run("hybrid", "--inputs", *preds, "--out", out) == 0
    merged = rows(out)
    assert len(merged) == 4
    for r in merged:
        votes = [r["verdict_1"], r["verdict_2"], r["verdict_3"]]
        assert votes.count(r["verdict"]) >= 2
    assert run("hybrid", "--inputs", *preds[:2], "--out", tmp_path / "h2.csv") == 2


def test_unet_train_and_segment(phantom_dir, tmp_path):
    weights = tmp_path / "unet.w"
    assert run("train-unet", "--in", phantom_dir, "--out", weights, "--base", 2,
               "--size", 32, "--epochs", 1, "--batch-size", 8) == 0
    assert read_kv(str(weights) + ".cfg")["input_size"] == "32"
    masks = tmp_path / "m"
    assert run("segment", "--in", phantom_dir, "--method", "unet", "--unet", weights,
               "--out", masks) == 0
    written = sorted(masks.rglob("*.pgm"))
    assert len(written) == sum(1 for _ in (phantom_dir / "masks").rglob("*.pgm"))
    assert run("segment", "--in", phantom_dir, "--method", "unet", "--report",
               tmp_path / "x.csv") == 2
