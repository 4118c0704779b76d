"""Confusion-matrix accounting and the evaluation report.

Detection has no natural true negatives, so scenarios declare explicit
negative probes; a probe frame that yields zero predictions counts one TN.
Report values are rounded half-up to 2 decimals.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional

from .errors import UndefinedMetricError
from .perception import Detection, GroundTruthItem, iou

IOU_MATCH_THRESHOLD = 0.5

CONDITION_TITLES = {"good": "Good Lighting", "low": "Low-Light"}
REPORT_COLUMNS = ("Precision", "Recall", "F1-Score", "Accuracy")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.tp + other.tp, self.fp + other.fp,
                               self.fn + other.fn, self.tn + other.tn)


def precision(m: ConfusionMatrix) -> float:
    if m.tp + m.fp == 0:
        raise UndefinedMetricError("precision undefined: tp + fp == 0")
    return m.tp / (m.tp + m.fp)


def recall(m: ConfusionMatrix) -> float:
    if m.tp + m.fn == 0:
        raise UndefinedMetricError("recall undefined: tp + fn == 0")
    return m.tp / (m.tp + m.fn)


def f_score(m: ConfusionMatrix) -> float:
    denom = 2 * m.tp + m.fp + m.fn
    if denom == 0:
        raise UndefinedMetricError("f-score undefined: 2tp + fp + fn == 0")
    return 2 * m.tp / denom


def accuracy(m: ConfusionMatrix) -> float:
    total = m.tp + m.tn + m.fp + m.fn
    if total == 0:
        raise UndefinedMetricError("accuracy undefined: empty matrix")
    return (m.tp + m.tn) / total


_METRIC_FRACTIONS = {
    "precision": lambda m: Fraction(m.tp, m.tp + m.fp) if m.tp + m.fp else None,
    "recall": lambda m: Fraction(m.tp, m.tp + m.fn) if m.tp + m.fn else None,
    "f_score": lambda m: Fraction(2 * m.tp, 2 * m.tp + m.fp + m.fn)
        if 2 * m.tp + m.fp + m.fn else None,
    "accuracy": lambda m: Fraction(m.tp + m.tn, m.tp + m.tn + m.fp + m.fn)
        if m.tp + m.tn + m.fp + m.fn else None,
}


def round_half_up_2(value: Fraction) -> str:
    """Exact half-up rounding of a rational to a 2-decimal string."""
    scaled = value * 100
    # floor(scaled + 1/2) computed on exact rationals
    shifted = scaled + Fraction(1, 2)
    n = shifted.numerator // shifted.denominator
    return f"{n // 100}.{n % 100:02d}"


def score_frame(predicted: list[Detection], truth: list[GroundTruthItem],
                iou_match: float = IOU_MATCH_THRESHOLD,
                negative_probe: bool = False) -> ConfusionMatrix:
    """Greedy one-to-one matching by descending IoU.

    A prediction pairs with a same-label truth at IoU >= iou_match (TP);
    leftover predictions are FP, leftover truths FN. Ties break by truth
    index, then prediction index. A negative probe with zero predictions
    contributes one TN.
    """
    pairs = []
    for ti, t in enumerate(truth):
        for pi, p in enumerate(predicted):
            if p.label != t.label:
                continue
            overlap = iou(p.box, t.box)
            if overlap >= iou_match:
                pairs.append((-overlap, ti, pi))
    pairs.sort()
    used_t: set[int] = set()
    used_p: set[int] = set()
    tp = 0
    for _, ti, pi in pairs:
        if ti in used_t or pi in used_p:
            continue
        used_t.add(ti)
        used_p.add(pi)
        tp += 1
    fp = len(predicted) - len(used_p)
    fn = len(truth) - len(used_t)
    tn = 1 if negative_probe and not predicted else 0
    return ConfusionMatrix(tp=tp, fp=fp, fn=fn, tn=tn)


@dataclass(frozen=True)
class ConditionReport:
    matrix: Optional[ConfusionMatrix]
    cells: dict[str, str]  # metric name -> 2-decimal string or "n/a"


@dataclass(frozen=True)
class EvaluationReport:
    conditions: dict[str, ConditionReport]  # keyed "good" / "low"

    def as_dict(self) -> dict:
        out: dict = {}
        for cond, rep in self.conditions.items():
            entry: dict = dict(rep.cells)
            if rep.matrix is not None:
                entry.update(tp=rep.matrix.tp, fp=rep.matrix.fp,
                             fn=rep.matrix.fn, tn=rep.matrix.tn)
            out[cond] = entry
        return out

    def render_text(self) -> str:
        header = f"{'Condition':<15}" + "".join(f"{c:>11}" for c in REPORT_COLUMNS)
        lines = [header]
        for cond in ("good", "low"):
            rep = self.conditions.get(cond)
            title = CONDITION_TITLES[cond]
            if rep is None or rep.matrix is None:
                row = [("n/a")] * 4
            else:
                row = [rep.cells["precision"], rep.cells["recall"],
                       rep.cells["f_score"], rep.cells["accuracy"]]
            lines.append(f"{title:<15}" + "".join(f"{v:>11}" for v in row))
        return "\n".join(lines)


def build_report(frame_scores: Iterable[tuple[str, ConfusionMatrix]]) -> EvaluationReport:
    """Aggregate per-frame matrices by lighting condition ('good'/'low')."""
    totals: dict[str, ConfusionMatrix] = {}
    for condition, matrix in frame_scores:
        if condition not in ("good", "low"):
            continue
        totals[condition] = totals.get(condition, ConfusionMatrix()) + matrix
    conditions: dict[str, ConditionReport] = {}
    for cond in ("good", "low"):
        matrix = totals.get(cond)
        cells = {}
        for name, frac_fn in _METRIC_FRACTIONS.items():
            frac = frac_fn(matrix) if matrix is not None else None
            cells[name] = round_half_up_2(frac) if frac is not None else "n/a"
        conditions[cond] = ConditionReport(matrix=matrix, cells=cells)
    return EvaluationReport(conditions=conditions)
