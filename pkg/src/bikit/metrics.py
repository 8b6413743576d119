"""Multi-label evaluation: exact match ratio, recall by class, AUROC and aggregates.

Undefined quantities (a recall for a class without positives, an AUROC for a
class with only one label value) are ``None``, never silently zero.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from bikit.errors import MetricsError

DEFAULT_THRESHOLD = 0.5


@dataclass(frozen=True, eq=False)
class LabelMatrix:
    row_ids: tuple[str, ...]
    classes: tuple[str, ...]
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2 or data.shape != (len(self.row_ids), len(self.classes)):
            raise MetricsError(
                f"label matrix shape {data.shape} does not match {len(self.row_ids)} rows x {len(self.classes)} classes",
                code="shape-mismatch",
            )
        if not np.isin(data, (0, 1)).all():
            raise MetricsError("label matrix must be binary", code="not-binary")
        if len(set(self.row_ids)) != len(self.row_ids):
            raise MetricsError("duplicate row ids in label matrix", code="duplicate-id")
        data = data.astype(np.int8)
        data.setflags(write=False)
        object.__setattr__(self, "row_ids", tuple(self.row_ids))
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "data", data)

    @classmethod
    def from_index(cls, index, ids: Sequence[str] | None = None) -> "LabelMatrix":
        """Ground truth for ``ids`` (default: every record) in the given order."""
        recs = index.by_id()
        if ids is None:
            ids = index.image_ids
        try:
            rows = [recs[i].labels for i in ids]
        except KeyError as exc:
            raise MetricsError(f"id {exc.args[0]!r} not in index", code="unknown-id") from None
        data = np.asarray(rows, dtype=np.int8).reshape(len(ids), index.manifest.n_classes)
        return cls(tuple(ids), index.manifest.classes, data)


@dataclass(frozen=True, eq=False)
class ScoreMatrix:
    row_ids: tuple[str, ...]
    classes: tuple[str, ...]
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape != (len(self.row_ids), len(self.classes)):
            raise MetricsError(
                f"score matrix shape {data.shape} does not match {len(self.row_ids)} rows x {len(self.classes)} classes",
                code="shape-mismatch",
            )
        if not np.isfinite(data).all() or (data < 0).any() or (data > 1).any():
            raise MetricsError("scores must be finite and within [0, 1]", code="out-of-range-score")
        if len(set(self.row_ids)) != len(self.row_ids):
            raise MetricsError("duplicate row ids in score matrix", code="duplicate-id")
        data = data.copy()
        data.setflags(write=False)
        object.__setattr__(self, "row_ids", tuple(self.row_ids))
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "data", data)

    def reorder(self, row_ids: Sequence[str]) -> "ScoreMatrix":
        """Return the same scores with rows in ``row_ids`` order; the id sets must match."""
        pos = {r: i for i, r in enumerate(self.row_ids)}
        if len(row_ids) != len(pos) or any(r not in pos for r in row_ids):
            raise MetricsError("score rows do not match label rows", code="id-mismatch")
        return ScoreMatrix(tuple(row_ids), self.classes, self.data[[pos[r] for r in row_ids]])


def _check_aligned(a, b) -> None:
    if a.classes != b.classes:
        raise MetricsError(f"class order differs: {a.classes} vs {b.classes}", code="class-mismatch")
    if a.row_ids != b.row_ids:
        raise MetricsError("row ids are not aligned", code="id-mismatch")


def binarize(scores: ScoreMatrix, threshold: float = DEFAULT_THRESHOLD) -> LabelMatrix:
    if not 0.0 < threshold < 1.0:
        raise MetricsError(f"threshold must lie in (0, 1), got {threshold}", code="bad-threshold")
    return LabelMatrix(scores.row_ids, scores.classes, (scores.data >= threshold).astype(np.int8))


def exact_match_ratio(pred: LabelMatrix, truth: LabelMatrix) -> float:
    _check_aligned(pred, truth)
    n = len(truth.row_ids)
    if n == 0:
        raise MetricsError("no rows to score", code="empty")
    matches = int(np.all(pred.data == truth.data, axis=1).sum())
    return matches / n


def _confusion(pred: LabelMatrix, truth: LabelMatrix):
    p = pred.data.astype(np.int64)
    t = truth.data.astype(np.int64)
    tp = (p & t).sum(axis=0)
    fp = (p & (1 - t)).sum(axis=0)
    fn = ((1 - p) & t).sum(axis=0)
    return tp, fp, fn


def _ratio(num: int, den: int) -> float | None:
    return num / den if den > 0 else None


def recall_by_class(pred: LabelMatrix, truth: LabelMatrix) -> dict[str, float | None]:
    _check_aligned(pred, truth)
    tp, _, fn = _confusion(pred, truth)
    return {c: _ratio(int(tp[j]), int(tp[j] + fn[j])) for j, c in enumerate(truth.classes)}


def auroc_column(scores: np.ndarray, labels: np.ndarray) -> float | None:
    """Rank-statistic AUROC of one column; ties get average ranks. None if degenerate."""
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores, method="average")
    return (float(ranks[labels].sum()) - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg)


@dataclass(frozen=True)
class AurocResult:
    per_class: dict[str, float | None]
    macro: float | None
    undefined: list[str]


def auroc(scores: ScoreMatrix, truth: LabelMatrix) -> AurocResult:
    _check_aligned(scores, truth)
    per_class = {
        c: auroc_column(scores.data[:, j], truth.data[:, j]) for j, c in enumerate(truth.classes)
    }
    defined = [v for v in per_class.values() if v is not None]
    macro = sum(defined) / len(defined) if defined else None
    return AurocResult(per_class, macro, [c for c, v in per_class.items() if v is None])


@dataclass(frozen=True)
class MetricsReport:
    classes: list[str]
    n_samples: int
    threshold: float
    emr: float
    recall_per_class: dict[str, float | None]
    precision_per_class: dict[str, float | None]
    f1_per_class: dict[str, float | None]
    support_per_class: dict[str, int]
    auroc_per_class: dict[str, float | None]
    auroc_macro: float | None
    auroc_undefined: list[str]
    precision_micro: float | None
    recall_micro: float | None
    f1_micro: float | None
    precision_macro: float | None
    recall_macro: float | None
    f1_macro: float | None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        """Canonical serialization; equal reports give byte-identical output."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), allow_nan=False)

    @classmethod
    def from_dict(cls, doc: dict) -> "MetricsReport":
        return cls(**doc)


def _mean_defined(values) -> float | None:
    vals = [v for v in values if v is not None]
    return math.fsum(vals) / len(vals) if vals else None


def full_report(scores: ScoreMatrix, truth: LabelMatrix, threshold: float = DEFAULT_THRESHOLD) -> MetricsReport:
    """Score ``scores`` against ``truth`` (rows are matched by id, not position)."""
    if scores.row_ids != truth.row_ids:
        scores = scores.reorder(truth.row_ids)
    pred = binarize(scores, threshold)
    emr = exact_match_ratio(pred, truth)
    tp, fp, fn = _confusion(pred, truth)
    classes = truth.classes
    recall = recall_by_class(pred, truth)
    precision = {c: _ratio(int(tp[j]), int(tp[j] + fp[j])) for j, c in enumerate(classes)}
    f1 = {c: _ratio(2 * int(tp[j]), int(2 * tp[j] + fp[j] + fn[j])) for j, c in enumerate(classes)}
    au = auroc(scores, truth)
    TP, FP, FN = int(tp.sum()), int(fp.sum()), int(fn.sum())
    return MetricsReport(
        classes=list(classes),
        n_samples=len(truth.row_ids),
        threshold=float(threshold),
        emr=emr,
        recall_per_class=recall,
        precision_per_class=precision,
        f1_per_class=f1,
        support_per_class={c: int(tp[j] + fn[j]) for j, c in enumerate(classes)},
        auroc_per_class=au.per_class,
        auroc_macro=au.macro,
        auroc_undefined=au.undefined,
        precision_micro=_ratio(TP, TP + FP),
        recall_micro=_ratio(TP, TP + FN),
        f1_micro=_ratio(2 * TP, 2 * TP + FP + FN),
        precision_macro=_mean_defined(precision.values()),
        recall_macro=_mean_defined(recall.values()),
        f1_macro=_mean_defined(f1.values()),
    )


def _pct(v: float | None) -> str:
    return "-" if v is None else f"{100 * v:.2f}"


def format_report(report: MetricsReport) -> str:
    """Human-readable table (percentages with two decimals)."""
    width = max(len(c) for c in report.classes)
    lines = [
        f"samples: {report.n_samples}   threshold: {report.threshold:g}",
        f"EMR: {_pct(report.emr)}   AUROC (macro): {_pct(report.auroc_macro)}",
        "",
        f"{'class':<{width}}  {'support':>7}  {'recall':>7}  {'prec.':>7}  {'F1':>7}  {'AUROC':>7}",
    ]
    for c in report.classes:
        lines.append(
            f"{c:<{width}}  {report.support_per_class[c]:>7}  {_pct(report.recall_per_class[c]):>7}  "
            f"{_pct(report.precision_per_class[c]):>7}  {_pct(report.f1_per_class[c]):>7}  "
            f"{_pct(report.auroc_per_class[c]):>7}"
        )
    lines.append("")
    lines.append(
        f"micro P/R/F1: {_pct(report.precision_micro)} / {_pct(report.recall_micro)} / {_pct(report.f1_micro)}"
    )
    lines.append(
        f"macro P/R/F1: {_pct(report.precision_macro)} / {_pct(report.recall_macro)} / {_pct(report.f1_macro)}"
    )
    if report.auroc_undefined:
        lines.append(f"AUROC undefined for: {', '.join(report.auroc_undefined)}")
    return "\n".join(lines)
