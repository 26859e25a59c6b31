"""Segmentation scores, approximation-accuracy measures and report tables.

Classification measures compare each ground-truth segment with the predicted
segment that overlaps it most. A ratio whose denominator is zero is undefined
and reported as ``None``; undefined values are left out of every mean.
"""

from __future__ import annotations

import csv
import math
from dataclasses import astuple, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .dataset import GroundTruthModel, Segmentation
from .geometry import (
    ImplicitPrimitive,
    ParametricPrimitive,
    bounding_box_diagonal,
    distance_to_surface,
)

FloatArray = NDArray[np.float64]

SCORE_NAMES = ("DSC", "PPV", "TPR", "TNR", "NPV", "ACC")
AGGREGATION_NOTE = "scores are unweighted means over ground-truth segments with a defined value"


class MetricsError(ValueError):
    """Inconsistent inputs to a measure."""


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class ClassificationScores:
    """The six ratios; ``None`` marks a zero denominator."""

    tpr: float | None
    tnr: float | None
    ppv: float | None
    npv: float | None
    acc: float | None
    dsc: float | None

    def by_name(self) -> dict[str, float | None]:
        return {"DSC": self.dsc, "PPV": self.ppv, "TPR": self.tpr, "TNR": self.tnr, "NPV": self.npv, "ACC": self.acc}


def _as_set(idx: ArrayLike | set[int]) -> set[int]:
    return set(idx) if isinstance(idx, (set, frozenset)) else set(np.asarray(idx, dtype=np.int64).tolist())


def confusion_counts(p_b: ArrayLike, p_s: ArrayLike, total: int) -> ConfusionCounts:
    """Point-level confusion of a true set ``p_b`` against a predicted set ``p_s``."""
    b, s = _as_set(p_b), _as_set(p_s)
    if any(i < 0 or i >= total for i in b | s):
        raise MetricsError("index outside the cloud")
    tp = len(b & s)
    fp = len(s) - tp
    fn = len(b) - tp
    return ConfusionCounts(tp, fp, fn, total - tp - fp - fn)


def _ratio(num: int, den: int) -> float | None:
    return None if den == 0 else num / den


def classification_scores(c: ConfusionCounts) -> ClassificationScores:
    return ClassificationScores(
        tpr=_ratio(c.tp, c.tp + c.fn),
        tnr=_ratio(c.tn, c.tn + c.fp),
        ppv=_ratio(c.tp, c.tp + c.fp),
        npv=_ratio(c.tn, c.tn + c.fn),
        acc=_ratio(c.tp + c.tn, c.total),
        dsc=_ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn),
    )


def _segments(x: GroundTruthModel | Segmentation) -> tuple[int, tuple[NDArray[np.int64], ...]]:
    return x.n_points, tuple(x.segments)


def match_segments(gt: GroundTruthModel | Segmentation, pred: GroundTruthModel | Segmentation) -> list[int | None]:
    """Index of the most-overlapping predicted segment per ground-truth segment.

    Ties go to the lower predicted index; no overlap at all gives ``None``.
    A predicted segment may be the match of several ground-truth segments.
    """
    n_gt, gt_segs = _segments(gt)
    n_pr, pr_segs = _segments(pred)
    if n_gt != n_pr:
        raise MetricsError(f"cloud sizes differ ({n_gt} vs {n_pr})")
    member = np.zeros((len(pr_segs), n_gt), dtype=bool)
    for j, s in enumerate(pr_segs):
        member[j, s] = True
    out: list[int | None] = []
    for s in gt_segs:
        if not len(pr_segs):
            out.append(None)
            continue
        overlap = member[:, s].sum(axis=1)
        j = int(np.argmax(overlap))  # first maximum = lowest index
        out.append(j if overlap[j] > 0 else None)
    return out


def mean_fitting_error(points: ArrayLike, surf: ParametricPrimitive) -> float:
    """Mean point-to-surface distance over the points' bbox diagonal."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise MetricsError("fitting error of an empty point set")
    diag = bounding_box_diagonal(pts)
    if diag == 0:
        raise MetricsError("points are coincident; bbox diagonal is zero")
    return float(np.mean(distance_to_surface(surf, pts)) / diag)


def directed_hausdorff(points: ArrayLike, surf: ParametricPrimitive) -> float:
    """Largest point-to-surface distance over the points' bbox diagonal."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise MetricsError("Hausdorff distance of an empty point set")
    diag = bounding_box_diagonal(pts)
    if diag == 0:
        raise MetricsError("points are coincident; bbox diagonal is zero")
    return float(np.max(distance_to_surface(surf, pts)) / diag)


def coefficient_distance(a: ImplicitPrimitive, b: ImplicitPrimitive) -> float:
    """l1 distance between normalized implicit coefficient vectors."""
    if a.coeffs.shape != b.coeffs.shape:
        raise MetricsError(f"cannot compare {a.kind.value} and {b.kind.value} coefficient vectors")
    return float(np.abs(a.coeffs - b.coeffs).sum())


# ---------------------------------------------------------------------------
# Per-model rows
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelReportRow:
    model: str
    n_points: int
    n_true: int
    n_pred: int
    dsc: float | None
    ppv: float | None
    tpr: float | None
    tnr: float | None
    npv: float | None
    acc: float | None
    missing_data: bool | None = None


@dataclass(frozen=True)
class AccuracyRow:
    model: str
    mfe: float | None
    d_dhaus: float | None
    d1: float | None


def _mean(values: Iterable[float | None]) -> float | None:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def segment_scores(gt: GroundTruthModel | Segmentation, pred: GroundTruthModel | Segmentation) -> list[ClassificationScores]:
    """Scores of every ground-truth segment against its match."""
    n, gt_segs = _segments(gt)
    _, pr_segs = _segments(pred)
    matches = match_segments(gt, pred)
    out = []
    for s, j in zip(gt_segs, matches):
        ps = pr_segs[j] if j is not None else ()
        out.append(classification_scores(confusion_counts(s, ps, n)))
    return out


def model_report(
    gt: GroundTruthModel | Segmentation,
    pred: GroundTruthModel | Segmentation,
    model_id: str = "",
    missing_data: bool | None = None,
) -> ModelReportRow:
    scores = [s.by_name() for s in segment_scores(gt, pred)]
    avg = {name: _mean(s[name] for s in scores) for name in SCORE_NAMES}
    n, gt_segs = _segments(gt)
    return ModelReportRow(
        model_id,
        n,
        len(gt_segs),
        len(pred.segments),
        avg["DSC"],
        avg["PPV"],
        avg["TPR"],
        avg["TNR"],
        avg["NPV"],
        avg["ACC"],
        missing_data,
    )


def accuracy_row(gt: GroundTruthModel, pred: GroundTruthModel, model_id: str = "") -> AccuracyRow:
    """MFE and directed Hausdorff averaged over predicted segments carrying a
    primitive; d1 averaged over ground-truth segments whose match has an
    implicit form with the same coefficient count.
    """
    mfe, haus, d1 = [], [], []
    if pred.parametric is not None:
        for s, p in zip(pred.segments, pred.parametric):
            if p is None or len(s) == 0:
                continue
            pts = pred.cloud[s]
            if bounding_box_diagonal(pts) == 0:
                continue
            mfe.append(mean_fitting_error(pts, p))
            haus.append(directed_hausdorff(pts, p))
    if gt.implicit is not None and pred.implicit is not None:
        for k, j in enumerate(match_segments(gt, pred)):
            a = gt.implicit[k]
            b = pred.implicit[j] if j is not None else None
            if a is not None and b is not None and a.coeffs.shape == b.coeffs.shape:
                d1.append(coefficient_distance(a, b))
    return AccuracyRow(model_id, _mean(mfe), _mean(haus), _mean(d1))


# ---------------------------------------------------------------------------
# Boxplots
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoxplotStats:
    """Five-number summary with 1.5 IQR whiskers.

    ``min`` and ``max`` are the whisker ends: the most extreme values inside
    the fences (clamped to the box). Values beyond the fences are listed in ``outliers``.
    """

    min: float
    q1: float
    median: float
    q3: float
    max: float
    outliers: tuple[float, ...] = ()


def boxplot_stats(values: Sequence[float]) -> BoxplotStats:
    x = np.asarray([v for v in values if v is not None], dtype=np.float64)
    if x.size == 0:
        raise MetricsError("boxplot of an empty sample")
    q1, med, q3 = np.quantile(x, [0.25, 0.5, 0.75])  # type-7 interpolation
    iqr = q3 - q1
    lo, hi = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = x[(x >= lo) & (x <= hi)]
    out = tuple(float(v) for v in np.sort(x[(x < lo) | (x > hi)]))
    # as in matplotlib, a whisker never retracts inside the box
    return BoxplotStats(
        float(min(inside.min(), q1)), float(q1), float(med), float(q3), float(max(inside.max(), q3)), out
    )


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------

REPORT_COLUMNS = ("model", "n_points", "n_true", "n_pred") + SCORE_NAMES + ("missing_data",)
ACCURACY_COLUMNS = ("model", "MFE", "d_dHaus", "d1")
BOXPLOT_COLUMNS = ("metric", "group", "n", "min", "q1", "median", "q3", "max", "outliers")


def _cell(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def _parse_float(s: str) -> float | None:
    return None if s == "" else float(s)


def _write_csv(path: str | Path, note: str | None, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if note:
            fh.write(f"# {note}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])


def _read_csv(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(lines))


def write_report_csv(rows: Iterable[ModelReportRow], path: str | Path) -> None:
    _write_csv(path, AGGREGATION_NOTE, REPORT_COLUMNS, (astuple(r) for r in rows))


def read_report_csv(path: str | Path) -> list[ModelReportRow]:
    out = []
    for rec in _read_csv(path):
        flag = rec.get("missing_data", "")
        out.append(
            ModelReportRow(
                rec["model"],
                int(rec["n_points"]),
                int(rec["n_true"]),
                int(rec["n_pred"]),
                *(_parse_float(rec[name]) for name in SCORE_NAMES),
                missing_data=None if flag == "" else flag == "1",
            )
        )
    return out


def write_accuracy_csv(rows: Iterable[AccuracyRow], path: str | Path) -> None:
    _write_csv(path, None, ACCURACY_COLUMNS, (astuple(r) for r in rows))


def read_accuracy_csv(path: str | Path) -> list[AccuracyRow]:
    return [
        AccuracyRow(r["model"], _parse_float(r["MFE"]), _parse_float(r["d_dHaus"]), _parse_float(r["d1"]))
        for r in _read_csv(path)
    ]


def write_boxplot_csv(rows: Iterable[tuple[str, str, int, BoxplotStats]], path: str | Path) -> None:
    def flat(metric, group, n, b):
        return (metric, group, n, b.min, b.q1, b.median, b.q3, b.max, " ".join(_cell(v) for v in b.outliers))

    _write_csv(path, None, BOXPLOT_COLUMNS, (flat(*r) for r in rows))
