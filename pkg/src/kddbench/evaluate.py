"""Confusion matrices, the usual classifier statistics and report rendering."""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .preprocess import CATEGORIES

log = logging.getLogger(__name__)


class MetricError(ValueError):
    """A statistic is undefined for the given data."""


@dataclass
class ConfusionMatrix:
    counts: np.ndarray
    classes: tuple[str, ...] = CATEGORIES

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        C = self.counts.shape[0]
        if self.counts.shape != (C, C) or (self.counts < 0).any():
            raise ValueError("confusion matrix must be square with non-negative cells")
        if len(self.classes) != C:
            self.classes = tuple(str(i) for i in range(C))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def rows(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def cols(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts, self.classes)


class Accumulator:
    """Single-pass collector of (truth, probability vector) pairs."""

    def __init__(self, n_classes: int | None = None, classes: Sequence[str] | None = None):
        self.n_classes = n_classes if n_classes is not None else (len(classes) if classes else None)
        self.classes = tuple(classes) if classes else None
        self._truth: list[np.ndarray] = []
        self._probs: list[np.ndarray] = []

    def add(self, truth, probs) -> None:
        truth = np.atleast_1d(np.asarray(truth, dtype=np.int64))
        probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
        if len(truth) != len(probs):
            raise ValueError("truth and probability rows differ in length")
        if len(truth) == 0:
            return
        if self.n_classes is None:
            self.n_classes = probs.shape[1]
        if probs.shape[1] != self.n_classes:
            raise ValueError(f"class arity changed from {self.n_classes} to {probs.shape[1]}")
        if (truth < 0).any() or (truth >= self.n_classes).any():
            raise ValueError("true class index out of range")
        self._truth.append(truth)
        self._probs.append(probs)

    def merge(self, other: "Accumulator") -> "Accumulator":
        for t, p in zip(other._truth, other._probs):
            self.add(t, p)
        return self

    @property
    def truth(self) -> np.ndarray:
        return np.concatenate(self._truth) if self._truth else np.empty(0, dtype=np.int64)

    @property
    def probs(self) -> np.ndarray:
        C = self.n_classes or 0
        return np.concatenate(self._probs) if self._probs else np.empty((0, C))

    def confusion(self) -> ConfusionMatrix:
        C = self.n_classes or len(CATEGORIES)
        classes = self.classes or (CATEGORIES if C == len(CATEGORIES) else ())
        return confusion_matrix(self.truth, self.probs, C, classes)


def accumulate(pairs: Iterable[tuple[Any, Any]], n_classes: int | None = None):
    """Consume (truth, probs) pairs; returns (ConfusionMatrix, (truth, probs))."""
    acc = Accumulator(n_classes)
    for t, p in pairs:
        acc.add(t, p)
    return acc.confusion(), (acc.truth, acc.probs)


def confusion_matrix(truth, probs, n_classes: int, classes: Sequence[str] = ()) -> ConfusionMatrix:
    truth = np.asarray(truth, dtype=np.int64)
    probs = np.asarray(probs, dtype=np.float64).reshape(len(truth), -1) if len(truth) else probs
    pred = np.argmax(probs, axis=1) if len(truth) else np.empty(0, dtype=np.int64)
    cm = np.bincount(truth * n_classes + pred, minlength=n_classes * n_classes).reshape(n_classes, n_classes)
    return ConfusionMatrix(cm, tuple(classes))


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise MetricError("accuracy of an empty confusion matrix")
    return float(np.trace(cm.counts) / cm.total)


def kappa(cm: ConfusionMatrix) -> float:
    n = cm.total
    if n == 0:
        raise MetricError("kappa of an empty confusion matrix")
    po = np.trace(cm.counts) / n
    pe = float((cm.rows.astype(np.float64) * cm.cols).sum() / (float(n) * n))
    if pe >= 1.0:
        raise MetricError("kappa undefined: chance agreement is 1")
    return float((po - pe) / (1.0 - pe))


def mae_rmse(truth, probs) -> tuple[float, float]:
    truth = np.asarray(truth, dtype=np.int64)
    probs = np.asarray(probs, dtype=np.float64)
    if len(truth) == 0:
        raise MetricError("MAE/RMSE of an empty score set")
    diff = probs.copy()
    diff[np.arange(len(truth)), truth] -= 1.0
    mae = np.abs(diff).mean(axis=1).mean()
    rmse = math.sqrt((diff * diff).mean(axis=1).mean())
    return float(mae), rmse


@dataclass
class ClassRates:
    tp_rate: np.ndarray
    fp_rate: np.ndarray
    precision: np.ndarray
    warnings: list[str] = field(default_factory=list)


def _ratio(num: np.ndarray, den: np.ndarray, what: str, classes, warnings: list[str]) -> np.ndarray:
    out = np.zeros(len(num))
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    for c in np.flatnonzero(~ok):
        warnings.append(f"{what} of class {classes[c]} has an empty denominator; reported as 0")
    return out


def per_class_rates(cm: ConfusionMatrix) -> ClassRates:
    if cm.total == 0:
        raise MetricError("rates of an empty confusion matrix")
    diag = np.diag(cm.counts).astype(np.float64)
    rows, cols = cm.rows.astype(np.float64), cm.cols.astype(np.float64)
    warnings: list[str] = []
    tp = _ratio(diag, rows, "TP rate", cm.classes, warnings)
    fp = _ratio(cols - diag, cm.total - rows, "FP rate", cm.classes, warnings)
    prec = _ratio(diag, cols, "precision", cm.classes, warnings)
    for w in warnings:
        log.warning(w)
    return ClassRates(tp, fp, prec, warnings)


def roc_auc(truth, probs, c: int) -> float:
    """One-vs-rest area under the ROC curve for class ``c`` (Mann-Whitney, ties count half)."""
    truth = np.asarray(truth, dtype=np.int64)
    score = np.asarray(probs, dtype=np.float64)[:, c]
    pos = truth == c
    n_pos = int(pos.sum())
    n_neg = len(truth) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError(f"ROC area of class {c} needs both positives and negatives")
    ranks = rankdata(score)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (float(n_pos) * n_neg))


def weighted_average(values, cm: ConfusionMatrix, mask=None) -> float:
    """Support-weighted mean over classes; ``mask`` drops classes from the average."""
    values = np.asarray(values, dtype=np.float64)
    w = cm.rows.astype(np.float64)
    if mask is not None:
        w = np.where(mask, w, 0.0)
    if w.sum() == 0:
        raise MetricError("weighted average with zero total support")
    return float((w * np.where(w > 0, values, 0.0)).sum() / w.sum())


@dataclass
class EvaluationReport:
    classifier: str
    confusion: ConfusionMatrix
    accuracy: float
    kappa: float
    mae: float
    rmse: float
    rates: ClassRates
    roc: np.ndarray                 # per class, nan where undefined
    weighted_tp: float
    weighted_fp: float
    weighted_precision: float
    weighted_roc: float
    params: dict[str, Any] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    runtime: float | None = None

    @property
    def correct(self) -> int:
        return int(np.trace(self.confusion.counts))

    @property
    def incorrect(self) -> int:
        return self.confusion.total - self.correct

    @property
    def total(self) -> int:
        return self.confusion.total


def evaluate_scores(classifier: str, truth, probs, classes: Sequence[str] = CATEGORIES,
                    params: dict[str, Any] | None = None) -> EvaluationReport:
    truth = np.asarray(truth, dtype=np.int64)
    probs = np.asarray(probs, dtype=np.float64)
    cm = confusion_matrix(truth, probs, probs.shape[1], classes)
    rates = per_class_rates(cm)
    warnings = list(rates.warnings)
    roc = np.full(probs.shape[1], np.nan)
    for c in range(probs.shape[1]):
        try:
            roc[c] = roc_auc(truth, probs, c)
        except MetricError:
            if cm.rows[c] > 0:
                warnings.append(f"ROC area of class {cm.classes[c]} undefined; left out of the weighted mean")
    try:
        k = kappa(cm)
    except MetricError as exc:
        warnings.append(str(exc))
        k = math.nan
    defined = ~np.isnan(roc)
    try:
        wroc = weighted_average(np.nan_to_num(roc), cm, defined)
    except MetricError:
        wroc = math.nan
    mae, rmse = mae_rmse(truth, probs)
    return EvaluationReport(
        classifier, cm, accuracy(cm), k, mae, rmse, rates, roc,
        weighted_average(rates.tp_rate, cm), weighted_average(rates.fp_rate, cm),
        weighted_average(rates.precision, cm), wroc, dict(params or {}), warnings)


def format_accuracy(x: float) -> str:
    s = f"{x * 100:.4f}".rstrip("0").rstrip(".")
    return f"{s} %"


def _fmt(v: float, digits: int = 4) -> str:
    return "n/a" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.{digits}f}"


def _table(title: str, header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    line = lambda r: "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
    out = [title, line(header), "  ".join("-" * w for w in widths)]
    out += [line(r) for r in rows]
    return "\n".join(out) + "\n"


def render_text(reports: Sequence[EvaluationReport], notes: Sequence[str] = ()) -> str:
    if not reports:
        raise ValueError("nothing to render")
    stats = [[r.classifier, _fmt(r.kappa), _fmt(r.mae), _fmt(r.rmse)] for r in reports]
    rates = [[r.classifier, _fmt(r.weighted_tp, 3), _fmt(r.weighted_fp, 3),
              _fmt(r.weighted_precision, 3), _fmt(r.weighted_roc, 3)] for r in reports]
    acc = [[r.classifier, str(r.correct), str(r.incorrect), format_accuracy(r.accuracy)] for r in reports]
    parts = [
        _table("Statistics", ["Classifier", "Kappa statistic", "Mean absolute error",
                              "Root mean squared error"], stats),
        _table("Weighted averages", ["Classifier", "TP Rate", "FP Rate", "Precision", "ROC Area"], rates),
        _table("Accuracy", ["Classifier", "Correctly Classified Instances",
                            "Incorrectly Classified Instances", "Accuracy"], acc),
    ]
    for r in reports:
        cm = r.confusion
        width = max(6, max(len(c) for c in cm.classes), len(str(cm.counts.max())))
        body = [f"Confusion matrix: {r.classifier} (rows = actual, columns = predicted)",
                " " * (width + 2) + " ".join(c.rjust(width) for c in cm.classes)]
        for name, row in zip(cm.classes, cm.counts):
            body.append(name.ljust(width + 2) + " ".join(str(v).rjust(width) for v in row))
        parts.append("\n".join(body) + "\n")
    warnings = [f"{r.classifier}: {w}" for r in reports for w in r.warnings]
    if warnings or notes:
        parts.append("\n".join(["Notes"] + [f"- {n}" for n in notes] + [f"- {w}" for w in warnings]) + "\n")
    return "\n".join(parts)


def _num(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "nan" if math.isnan(v) else format(v, ".17g")


def report_rows(r: EvaluationReport) -> list[tuple[str, str]]:
    rows = [("instances", r.total), ("correctly_classified_instances", r.correct),
            ("incorrectly_classified_instances", r.incorrect), ("accuracy", r.accuracy),
            ("kappa_statistic", r.kappa), ("mean_absolute_error", r.mae),
            ("root_mean_squared_error", r.rmse), ("weighted_tp_rate", r.weighted_tp),
            ("weighted_fp_rate", r.weighted_fp), ("weighted_precision", r.weighted_precision),
            ("weighted_roc_area", r.weighted_roc)]
    for i, c in enumerate(r.confusion.classes):
        rows += [(f"tp_rate[{c}]", r.rates.tp_rate[i]), (f"fp_rate[{c}]", r.rates.fp_rate[i]),
                 (f"precision[{c}]", r.rates.precision[i]), (f"roc_area[{c}]", r.roc[i])]
    for i, a in enumerate(r.confusion.classes):
        for j, b in enumerate(r.confusion.classes):
            rows.append((f"confusion[{a},{b}]", r.confusion.counts[i, j]))
    return [(k, _num(v)) for k, v in rows]


def render_csv(reports: Sequence[EvaluationReport]) -> str:
    out = io.StringIO()
    out.write("classifier,metric,value\n")
    for r in reports:
        for metric, value in report_rows(r):
            out.write(f"{r.classifier},\"{metric}\",{value}\n" if "," in metric
                      else f"{r.classifier},{metric},{value}\n")
    return out.getvalue()


def render_report(reports: Sequence[EvaluationReport], notes: Sequence[str] = ()) -> tuple[str, str]:
    """(text tables, long-format CSV) for the given reports, in the order given."""
    return render_text(reports, notes), render_csv(reports)
