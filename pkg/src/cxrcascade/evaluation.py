"""Classification metrics, review-area stratification and reader comparison."""
import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from scipy.stats import rankdata

from .data.samples import CATEGORIES
from .data.transforms import scale_boxes
from .exceptions import LoadError, ParameterError, UndefinedMetricError
from .regions import OTHER, REVIEW_AREA, RegionRule, region_of

UNDEFINED = "undefined"


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def n(self):
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self):
        return (self.tp + self.tn) / self.n if self.n else None


def _binary(values, name):
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise ParameterError(f"{name} must be one-dimensional")
    if not np.all((arr == 0) | (arr == 1)):
        raise ParameterError(f"{name} must contain only 0 and 1")
    return arr.astype(np.int64)


def confusion(scores, labels, threshold=0.5):
    """Counts with ``prediction = score >= threshold``."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = _binary(labels, "labels")
    if scores.shape != labels.shape:
        raise ParameterError(f"{scores.shape[0]} scores vs {labels.shape[0]} labels")
    if not len(labels):
        raise ParameterError("confusion needs at least one sample")
    pred = scores >= threshold
    pos = labels == 1
    return ConfusionCounts(tp=int(np.sum(pred & pos)), fp=int(np.sum(pred & ~pos)),
                           tn=int(np.sum(~pred & ~pos)), fn=int(np.sum(~pred & pos)))


@dataclass(frozen=True)
class PRF1:
    """Precision, recall and F1; ``None`` marks an undefined value."""

    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]


def prf1(c):
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else None
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else None
    if precision is None or recall is None:
        f1 = None
    elif precision + recall == 0:
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return PRF1(precision, recall, f1)


def auroc(scores, labels):
    """Probability that a random positive outscores a random negative (ties = 1/2).

    Computed from average ranks (Mann-Whitney U).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = _binary(labels, "labels")
    if scores.shape != labels.shape:
        raise ParameterError(f"{scores.shape[0]} scores vs {labels.shape[0]} labels")
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs at least one positive and one negative")
    ranks = rankdata(scores)
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auroc_or_none(scores, labels):
    try:
        return auroc(scores, labels)
    except UndefinedMetricError:
        return None


# regions ---------------------------------------------------------------------

APEX, HEART = "apex", "heart"


def region_detail(boxes, side, rule=RegionRule()):
    """``apex``, ``heart`` or ``other``: the first box in a review area decides."""
    if not boxes:
        raise ParameterError("region_detail needs at least one box")
    for b in boxes:
        u, v = b.center[0] / side, b.center[1] / side
        if rule.in_apex(u, v):
            return APEX
        if rule.in_heart(u, v):
            return HEART
    return OTHER


@dataclass(frozen=True)
class AccuracyRow:
    group: str
    n: int
    correct: int

    @property
    def accuracy(self):
        return self.correct / self.n if self.n else None


STRATA = (APEX, HEART, REVIEW_AREA, OTHER, "all_positives", "all_samples")


def stratified_accuracy(labels, predictions, boxes, side, rule=RegionRule()):
    """Accuracy per review-area group (positives only) plus overall rows.

    ``boxes[i]`` are the lesion boxes of sample ``i`` at resolution ``side``.
    """
    labels = _binary(labels, "labels")
    predictions = _binary(predictions, "predictions")
    if not len(labels) == len(predictions) == len(boxes):
        raise ParameterError("labels, predictions and boxes must have equal length")
    counts = {g: [0, 0] for g in STRATA}
    for y, p, bx in zip(labels, predictions, boxes):
        ok = int(y == p)
        counts["all_samples"][0] += 1
        counts["all_samples"][1] += ok
        if y != 1:
            continue
        if not bx:
            raise ParameterError("every positive sample needs boxes for stratification")
        detail = region_detail(bx, side, rule)
        groups = [detail, "all_positives"]
        groups.append(OTHER if detail == OTHER else REVIEW_AREA)
        for g in set(groups):
            counts[g][0] += 1
            counts[g][1] += ok
    return [AccuracyRow(g, *counts[g]) for g in STRATA]


# reader comparison -----------------------------------------------------------


@dataclass(frozen=True)
class ReaderRecord:
    id: str
    truth: int
    human: int
    model: int
    category: str

    def __post_init__(self):
        for name in ("truth", "human", "model"):
            if getattr(self, name) not in (0, 1):
                raise ParameterError(f"{self.id}: {name} must be 0 or 1")
        if self.category not in CATEGORIES:
            raise ParameterError(f"{self.id}: unknown category {self.category!r}")
        if (self.category == "pneumonia") != (self.truth == 1):
            raise ParameterError(
                f"{self.id}: category {self.category!r} disagrees with truth {self.truth}")


@dataclass
class ReaderReport:
    n: int
    human_acc: float
    model_acc: float
    union_acc: float
    per_category: Dict[str, Dict[str, float]] = field(default_factory=dict)
    disagreements: List[tuple] = field(default_factory=list)


def reader_compare(records):
    """Human vs model accuracy and their union ("at least one is right")."""
    records = list(records)
    if not records:
        raise ParameterError("reader_compare needs at least one record")
    h = np.array([r.human == r.truth for r in records])
    m = np.array([r.model == r.truth for r in records])
    per_cat = {}
    for cat in CATEGORIES:
        idx = [i for i, r in enumerate(records) if r.category == cat]
        if idx:
            per_cat[cat] = {"n": len(idx), "human_acc": float(h[idx].mean()),
                            "model_acc": float(m[idx].mean()),
                            "union_acc": float((h[idx] | m[idx]).mean())}
    dis = [(r.id, "model" if mi else "human")
           for r, hi, mi in zip(records, h, m) if hi != mi]
    return ReaderReport(len(records), float(h.mean()), float(m.mean()), float((h | m).mean()),
                        per_cat, dis)


READER_HEADER = ("id", "truth", "human", "model", "category")


def read_reader_file(path):
    path = Path(path)
    if not path.is_file():
        raise LoadError(f"reader file not found: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    if not rows or tuple(rows[0]) != READER_HEADER:
        raise LoadError(f"{path}: header must be {' '.join(READER_HEADER)}")
    records = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            rid, truth, human, model, cat = row
            records.append(ReaderRecord(rid, int(truth), int(human), int(model), cat))
        except (ValueError, ParameterError) as exc:
            raise LoadError(f"{path}:{lineno}: malformed reader row {row!r}: {exc}") from None
    return records


def write_reader_file(records, path):
    lines = ["\t".join(READER_HEADER)]
    lines += [f"{r.id}\t{r.truth}\t{r.human}\t{r.model}\t{r.category}" for r in records]
    Path(path).write_text("\n".join(lines) + "\n")


# localisation ----------------------------------------------------------------


def localization(heatmaps, samples, predictions, grid):
    """Lit heatmap windows on true positives that touch a ground-truth box.

    Returns ``(lit, hits)``.
    """
    lit = hits = 0
    rects = grid.rects()
    for hm, s, p in zip(heatmaps, samples, predictions):
        if s.label != 1 or p != 1:
            continue
        boxes = s.boxes
        if s.side != grid.full_side:
            boxes = scale_boxes(boxes, s.side, grid.full_side)
        for r, bit in zip(rects, hm.bits.reshape(-1)):
            if bit:
                lit += 1
                hits += any(b.intersects(r.x, r.y, r.side, r.side) for b in boxes)
    return lit, hits


# reports ---------------------------------------------------------------------


def _fmt(value, digits=2):
    if value is None:
        return UNDEFINED
    if isinstance(value, float):
        return f"{value:.{digits}f}"
    return str(value)


def _kv(value):
    if value is None:
        return UNDEFINED
    if isinstance(value, float):
        return repr(value)
    return str(value)


class Report:
    """Ordered key/value pairs with text and ``key=value`` renderings."""

    def __init__(self, title):
        self.title = title
        self.items = []

    def add(self, key, value):
        self.items.append((key, value))

    def as_dict(self):
        return dict(self.items)

    def to_kv(self):
        return "".join(f"{k}={_kv(v)}\n" for k, v in self.items)

    def to_text(self):
        width = max((len(k) for k, _ in self.items), default=0)
        lines = [self.title, "=" * len(self.title)]
        lines += [f"{k:<{width}}  {_fmt(v)}" for k, v in self.items]
        return "\n".join(lines) + "\n"

    def write(self, stem):
        stem = Path(stem)
        stem.parent.mkdir(parents=True, exist_ok=True)
        txt = stem.with_suffix(".txt")
        kv = stem.with_suffix(".kv")
        txt.write_text(self.to_text())
        kv.write_text(self.to_kv())
        return [txt, kv]


def classification_report(scores, labels, threshold=0.5, title="evaluation"):
    rep = Report(title)
    c = confusion(scores, labels, threshold)
    m = prf1(c)
    rep.add("n", c.n)
    rep.add("threshold", float(threshold))
    for k in ("tp", "fp", "tn", "fn"):
        rep.add(k, getattr(c, k))
    rep.add("accuracy", c.accuracy)
    rep.add("precision", m.precision)
    rep.add("recall", m.recall)
    rep.add("f1", m.f1)
    rep.add("auroc", auroc_or_none(scores, labels))
    return rep


def add_strata(rep, rows, rule):
    for key, value in rule.describe().items():
        rep.add(key, value)
    for row in rows:
        rep.add(f"strata.{row.group}.n", row.n)
        rep.add(f"strata.{row.group}.accuracy", row.accuracy)


def reader_report(result):
    rep = Report("reader comparison")
    rep.add("n", result.n)
    rep.add("human_acc", result.human_acc)
    rep.add("model_acc", result.model_acc)
    rep.add("union_acc", result.union_acc)
    for cat, row in result.per_category.items():
        for k, v in row.items():
            rep.add(f"category.{cat}.{k}", v)
    rep.add("disagreements", ",".join(i for i, _ in result.disagreements))
    for rid, who in result.disagreements:
        rep.add(f"disagreement.{rid}", f"{who}_correct")
    return rep
