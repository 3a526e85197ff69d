import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cxrcascade.data import BBox, ImageSample
from cxrcascade.evaluation import (ConfusionCounts, ReaderRecord, Report, auroc, auroc_or_none,
                                   classification_report, confusion, localization, prf1,
                                   read_reader_file, reader_compare, reader_report,
                                   stratified_accuracy, write_reader_file)
from cxrcascade.exceptions import LoadError, ParameterError, UndefinedMetricError
from cxrcascade.patching import Heatmap, window_grid
from cxrcascade.regions import OTHER, REVIEW_AREA, RegionRule, region_of

from oracles import auroc_pairs, confusion_loops


def test_confusion_perfect():
    c = confusion([0.9, 0.1, 0.7, 0.2], [1, 0, 1, 0])
    assert c.fp == c.fn == 0 and c.n == 4


def test_confusion_threshold_inclusive():
    c = confusion([0.5] * 4, [1, 0, 1, 0])
    assert (c.tp, c.fp, c.tn, c.fn) == (2, 2, 0, 0)


def test_confusion_matches_loops(rng):
    for _ in range(20):
        n = int(rng.integers(1, 60))
        scores, labels = rng.random(n), rng.integers(0, 2, n)
        t = float(rng.random())
        c = confusion(scores, labels, t)
        assert (c.tp, c.fp, c.tn, c.fn) == confusion_loops(scores, labels, t)
        assert c.n == n


@pytest.mark.parametrize("scores,labels", [([0.1, 0.2], [1]), ([], []), ([0.1], [2])])
def test_confusion_rejects(scores, labels):
    with pytest.raises(ParameterError):
        confusion(scores, labels)


def counts_for(precision, recall, tp=84 * 20):
    fp = round(tp / precision) - tp
    fn = round(tp / recall) - tp
    return ConfusionCounts(tp=tp, fp=fp, tn=0, fn=fn)


def test_prf1_table_values():
    m = prf1(counts_for(0.84, 0.80))
    assert m.precision == pytest.approx(0.84, abs=1e-12)
    assert m.recall == pytest.approx(0.80, abs=1e-12)
    assert m.f1 == pytest.approx(0.8195, abs=1e-4)
    assert f"{m.f1:.2f}" == "0.82"


def test_prf1_undefined():
    m = prf1(ConfusionCounts(tp=0, fp=0, tn=5, fn=3))
    assert m.precision is None and m.f1 is None and m.recall == 0.0
    assert prf1(ConfusionCounts(tn=4)).recall is None


def test_prf1_closed_form():
    m = prf1(ConfusionCounts(tp=7, fp=0, tn=2, fn=7))
    assert (m.precision, m.recall) == (1.0, 0.5)
    assert m.f1 == pytest.approx(2 / 3, abs=1e-15)


def test_prf1_zero_hits_is_zero_not_undefined():
    assert prf1(ConfusionCounts(tp=0, fp=3, tn=1, fn=2)).f1 == 0.0


@given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
def test_f1_bounds(tp, fp, fn):
    m = prf1(ConfusionCounts(tp=tp, fp=fp, tn=0, fn=fn))
    if m.f1 is None:
        return
    p, r = m.precision, m.recall
    assert m.f1 <= (p + r) / 2 + 1e-12
    assert m.f1 <= 2 * min(p, r) + 1e-12


def test_auroc_examples():
    assert auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auroc([0.3] * 6, [0, 1, 0, 1, 1, 0]) == 0.5


def test_auroc_single_class():
    with pytest.raises(UndefinedMetricError):
        auroc([0.1, 0.2], [1, 1])
    assert auroc_or_none([0.1, 0.2], [0, 0]) is None


def test_auroc_matches_pairs_with_ties(rng):
    for _ in range(100):
        n = int(rng.integers(2, 201))
        labels = rng.integers(0, 2, n)
        labels[:2] = (0, 1)
        scores = rng.integers(0, int(rng.integers(2, 30)), n) / 10
        assert abs(auroc(scores, labels) - auroc_pairs(scores, labels)) <= 1e-12


def test_auroc_monotone_invariance(rng):
    scores, labels = rng.random(80), rng.integers(0, 2, 80)
    labels[:2] = (0, 1)
    base = auroc(scores, labels)
    assert auroc(np.exp(3 * scores) - 7, labels) == base
    assert auroc(scores ** 3, labels) == base


def test_region_of_examples():
    side = 100
    assert region_of([BBox(0, 5, 10, 10)], side) == REVIEW_AREA
    assert region_of([BBox(65, 75, 10, 10)], side) == REVIEW_AREA
    assert region_of([BBox(25, 45, 10, 10)], side) == OTHER
    with pytest.raises(ParameterError):
        region_of([], side)


def test_stratified_all_correct():
    labels = [1, 1, 1, 0]
    boxes = [(BBox(0, 5, 10, 10),), (BBox(65, 75, 10, 10),), (BBox(25, 45, 10, 10),), ()]
    rows = stratified_accuracy(labels, labels, boxes, 100)
    assert all(r.accuracy == 1.0 for r in rows)
    assert {r.group: r.n for r in rows} == {"apex": 1, "heart": 1, "review_area": 2,
                                            "other": 1, "all_positives": 3, "all_samples": 4}


def test_stratified_empty_group_is_undefined():
    rows = stratified_accuracy([0, 0], [0, 1], [(), ()], 100)
    by = {r.group: r for r in rows}
    assert by["apex"].n == 0 and by["apex"].accuracy is None
    assert by["all_samples"].accuracy == 0.5


def test_stratified_error_injection(rng):
    n = 50
    labels = np.ones(n, dtype=int)
    boxes = [(BBox(40, 2, 8, 8),)] * n
    preds = labels.copy()
    preds[rng.choice(n, 10, replace=False)] = 0
    by = {r.group: r for r in stratified_accuracy(labels, preds, boxes, 100)}
    assert by["apex"].accuracy == 0.8
    assert by["other"].n == 0


def test_region_partitions_positives(rng):
    for _ in range(200):
        x, y = rng.integers(0, 90, 2)
        r = region_of([BBox(int(x), int(y), 10, 10)], 100, RegionRule())
        assert r in (REVIEW_AREA, OTHER)


def reader_rows():
    rows = [(1, 0, 1, 0), (2, 1, 1, 0), (5, 0, 1, 0), (6, 1, 0, 1), (20, 0, 0, 1)]
    return [ReaderRecord(str(i), t, h, m, "pneumonia" if t else "normal")
            for i, t, h, m in rows]


def test_reader_compare_small():
    r = reader_compare(reader_rows())
    assert r.human_acc == 0.4 and r.model_acc == 0.6 and r.union_acc == 1.0
    assert r.disagreements == [("1", "model"), ("2", "human"), ("5", "model"),
                               ("6", "model"), ("20", "human")]


def test_reader_identical_agents():
    recs = [ReaderRecord(str(i), t, h, h, "pneumonia" if t else "normal")
            for i, (t, h) in enumerate([(1, 1), (0, 1), (1, 0), (0, 0)])]
    r = reader_compare(recs)
    assert r.union_acc == r.human_acc == r.model_acc == 0.5
    assert r.disagreements == []


def test_reader_matches_loop_oracle(rng):
    recs = []
    for i in range(100):
        t = int(rng.integers(2))
        recs.append(ReaderRecord(f"r{i}", t, int(rng.integers(2)), int(rng.integers(2)),
                                 "pneumonia" if t else str(rng.choice(["normal",
                                                                       "other_disease"]))))
    r = reader_compare(recs)
    h = m = u = 0
    for rec in recs:
        h += rec.human == rec.truth
        m += rec.model == rec.truth
        u += rec.human == rec.truth or rec.model == rec.truth
    assert (r.human_acc, r.model_acc, r.union_acc) == (h / 100, m / 100, u / 100)
    assert max(r.human_acc, r.model_acc) <= r.union_acc <= min(1, r.human_acc + r.model_acc)


def test_reader_record_invariants():
    with pytest.raises(ParameterError):
        ReaderRecord("x", 1, 0, 0, "normal")
    with pytest.raises(ParameterError):
        ReaderRecord("x", 0, 2, 0, "normal")


def test_reader_file_round_trip(tmp_path):
    path = tmp_path / "r.tsv"
    write_reader_file(reader_rows(), path)
    assert read_reader_file(path) == reader_rows()


def test_reader_file_malformed_row_named(tmp_path):
    path = tmp_path / "r.tsv"
    path.write_text("id\ttruth\thuman\tmodel\tcategory\n1\t1\t0\t1\tpneumonia\n2\t1\tx\t0\tp\n")
    with pytest.raises(LoadError, match=":3:"):
        read_reader_file(path)
    path.write_text("a\tb\n")
    with pytest.raises(LoadError, match="header"):
        read_reader_file(path)


def test_localization_counts():
    grid = window_grid(8, 4, 4)
    bits = np.array([[1, 1], [0, 1]])
    hm = Heatmap(bits.astype(float), bits.astype(np.uint8))
    pos = ImageSample("p", np.zeros((8, 8)), 1, (BBox(0, 0, 3, 3),))
    neg = ImageSample("n", np.zeros((8, 8)), 0)
    assert localization([hm, hm], [pos, neg], [1, 1], grid) == (3, 1)
    assert localization([hm], [pos], [0], grid) == (0, 0)


def test_report_renderings(tmp_path):
    rep = classification_report([0.9, 0.2, 0.6, 0.4], [1, 0, 0, 1])
    rep.add("region.apex_y", "0,0.2")
    d = rep.as_dict()
    assert d["tp"] == 1 and d["auroc"] == 0.75
    assert "f1=0.5\n" in rep.to_kv()
    lines = dict(line.split(None, 1) for line in rep.to_text().splitlines()[2:])
    assert lines["auroc"].strip() == "0.75" and lines["precision"].strip() == "0.50"
    empty = Report("x")
    empty.add("precision", None)
    assert "precision=undefined" in empty.to_kv()
    txt, kv = rep.write(tmp_path / "out" / "eval")
    assert txt.read_text() == rep.to_text() and kv.read_text() == rep.to_kv()


def test_reader_report_keys():
    rep = reader_report(reader_compare(reader_rows()))
    d = rep.as_dict()
    assert d["disagreements"] == "1,2,5,6,20"
    assert d["disagreement.2"] == "human_correct"
