import itertools

import numpy as np
import pytest

from covidct.data import generate_phantoms
from covidct.errors import InvalidArgument, ParseError
from covidct.imaging import Image, count_nondark
from covidct.morphology import ExtractionParams
from covidct.pipeline import (
    FILTER_PRESETS, PatientDecision, Segmenter, SliceFilterPolicy, aggregate, classify_scan,
    filter_scan, filter_slices, hybrid_vote, read_decisions_csv, run_pipeline,
    run_pipeline_many, select_slices, write_decisions_csv, write_slice_csv,
)
from covidct.scan import CtScan, Label

from conftest import SMALL_POLICY_ARGS, SMALL_RADII, small_spec

C, N = Label.COVID, Label.NON_COVID


def slice_with(count, size=64):
    """Extracted-style slice with exactly ``count`` non-dark pixels."""
    flat = np.zeros(size * size, np.uint8)
    flat[:count] = 77
    return Image(flat.reshape(size, size))


def scan_of(counts, scan_id="s"):
    return CtScan(scan_id, [slice_with(c) for c in counts])


def test_boundary():
    out = filter_scan(scan_of([1764, 1763]))
    assert out.kept_indices == [0] and out.threshold_used == 1764
    assert count_nondark(out.scan.slices[0]) == 1764


def test_cascade():
    out = filter_scan(scan_of([600] * 4))
    assert out.kept_indices == [0, 1, 2, 3] and out.threshold_used == 500
    out = filter_scan(scan_of([600, 1200, 400]))
    assert out.kept_indices == [1] and out.threshold_used == 1000


def test_keep_all_if_empty():
    scan = scan_of([0, 0, 0])
    out = filter_scan(scan)
    assert out.threshold_used is None and out.scan.slices == scan.slices
    strict = SliceFilterPolicy(1764, (1000, 500), keep_all_if_empty=False)
    assert filter_slices(scan, strict).slices == []
    assert len(filter_slices(scan_of([1800, 10]), SliceFilterPolicy.training())) == 1
    assert filter_slices(scan_of([1000]), SliceFilterPolicy.training()).slices == []


def test_policy_validation_and_presets():
    for bad in ((1000, (1000,)), (500, (1000,)), (10, (5, -1))):
        with pytest.raises(InvalidArgument):
            SliceFilterPolicy(*bad)
    assert FILTER_PRESETS == {"45x45": 2025, "42x42": 1764, "40x40": 1600}
    assert SliceFilterPolicy.preset("40x40").primary_threshold == 1600
    assert SliceFilterPolicy() == SliceFilterPolicy.preset("42x42")
    with pytest.raises(InvalidArgument):
        SliceFilterPolicy.preset("10x10")


def select_oracle(counts, chain, keep_all):
    for t in chain:
        kept = [i for i, c in enumerate(counts) if c >= t]
        if kept:
            return kept
    return list(range(len(counts))) if keep_all else []


def test_exhaustive_small_cases():
    values = (0, 499, 500, 999, 1000, 1763, 1764, 2000)
    policy = SliceFilterPolicy()
    higher = SliceFilterPolicy(2025, (1000, 500))
    for n in range(1, 4):
        for counts in itertools.product(values, repeat=n):
            kept, _ = select_slices(counts, policy)
            assert kept == select_oracle(counts, (1764, 1000, 500), True)
            assert kept == sorted(kept)
            primary = [i for i, c in enumerate(counts) if c >= 2025]
            assert set(primary) <= {i for i, c in enumerate(counts) if c >= 1764}
            if primary:
                assert select_slices(counts, higher)[0] == primary


def test_aggregate():
    assert aggregate([0.1, 0.2, 0.3, 0.8, 0.9], 0.5) == (C, 0.6)
    assert aggregate([0.9] * 4, 0.5) == (N, 0.0)
    assert aggregate([0.1, 0.2, 0.8, 0.9], 0.5)[0] is C
    assert aggregate([0.45, 0.45, 0.9], 0.4)[0] is N
    assert aggregate([0.45, 0.45, 0.9], 0.5)[0] is C
    with pytest.raises(InvalidArgument):
        aggregate([], 0.5)


def test_aggregate_permutation_invariant(rng):
    probs = list(rng.random(9))
    want = aggregate(probs, 0.5)
    for _ in range(10):
        assert aggregate(list(rng.permutation(probs)), 0.5) == want


def decision(verdict, scan_id="s"):
    return PatientDecision(scan_id, (), 0.5, verdict, 0.0)


def test_hybrid_vote():
    assert hybrid_vote([decision(C), decision(C), decision(N)]) is C
    assert hybrid_vote([decision(N)] * 3) is N
    for combo in itertools.product((C, N), repeat=3):
        out = hybrid_vote([decision(v) for v in combo])
        assert sum(v is out for v in combo) >= 2
    with pytest.raises(InvalidArgument):
        hybrid_vote([decision(C)] * 2)
    with pytest.raises(InvalidArgument):
        hybrid_vote([decision(C), decision(C), decision(C, "other")])


def test_segmenter_constant_slice_is_empty():
    img = Image(np.full((32, 32), 90, np.uint8))
    for method in ("otsu", "kmeans"):
        assert Segmenter(method).segment(img).count() == 0
    with pytest.raises(InvalidArgument):
        Segmenter("unet")


def test_classify_scan(phantom_classifier):
    with pytest.raises(InvalidArgument):
        classify_scan(CtScan("e", []), phantom_classifier)


def test_zero_scan_gets_a_verdict(phantom_classifier):
    scan = CtScan("z", [Image(np.zeros((80, 80), np.uint8))] * 3)
    d = run_pipeline(scan, Segmenter("otsu"), phantom_classifier, size=64)
    assert d.threshold_used is None and d.n_slices_kept == 3
    assert d.verdict in (C, N)


def test_size_mismatch(phantom_classifier):
    scan = CtScan("z", [Image(np.zeros((8, 8), np.uint8))])
    with pytest.raises(InvalidArgument):
        run_pipeline(scan, Segmenter("otsu"), phantom_classifier, size=224)


@pytest.fixture(scope="module")
def held_out():
    return generate_phantoms(small_spec(n_scans=6, slices_min=5, slices_max=5,
                                         noise_sigma=5.0, rng_seed=11))


def test_end_to_end_verdicts(phantom_classifier, held_out):
    policy = SliceFilterPolicy(*SMALL_POLICY_ARGS)
    for ph in held_out:
        d = run_pipeline(ph.scan, Segmenter("kmeans"), phantom_classifier, policy, size=64,
                         params=ExtractionParams(*SMALL_RADII))
        assert d.verdict is ph.scan.label, d
        assert len(d.probabilities) == d.n_slices_kept
        assert list(d.slice_indices) == sorted(d.slice_indices)


def test_jobs_do_not_change_output(phantom_classifier, held_out, tmp_path):
    scans = [ph.scan for ph in held_out]
    kw = dict(policy=SliceFilterPolicy(*SMALL_POLICY_ARGS), size=64,
              params=ExtractionParams(*SMALL_RADII))
    seg = Segmenter("otsu")
    one = run_pipeline_many(scans, seg, phantom_classifier, jobs=1, **kw)
    four = run_pipeline_many(scans, seg, phantom_classifier, jobs=4, **kw)
    write_decisions_csv(one, tmp_path / "1.csv")
    write_decisions_csv(four, tmp_path / "4.csv")
    assert (tmp_path / "1.csv").read_bytes() == (tmp_path / "4.csv").read_bytes()
    with pytest.raises(InvalidArgument):
        run_pipeline_many(scans, seg, phantom_classifier, jobs=0, **kw)


def test_decision_csv_round_trip(tmp_path):
    ds = [PatientDecision("a", (0.2, 0.7), 0.5, C, 0.5, 4, 2, 1764, (0, 3)),
          PatientDecision("b", (0.9,), 0.5, N, 0.0, 1, 1, None, (0,))]
    write_decisions_csv(ds, tmp_path / "d.csv")
    text = (tmp_path / "d.csv").read_text().splitlines()
    assert text[0] == "scan_id,n_slices_in,n_slices_kept,threshold_used,covid_slice_fraction,verdict"
    assert text[2] == "b,1,1,none,0.000000,non-covid"
    back = read_decisions_csv(tmp_path / "d.csv")
    assert [(d.scan_id, d.verdict, d.threshold_used, d.n_slices_kept) for d in back] == [
        ("a", C, 1764, 2), ("b", N, None, 1)]
    write_slice_csv(ds, tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[2] == "a,3,0.70000000"
    (tmp_path / "bad.csv").write_text("scan_id,verdict\na,covid\n")
    with pytest.raises(ParseError):
        read_decisions_csv(tmp_path / "bad.csv")
