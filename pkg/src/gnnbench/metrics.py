"""Classification metrics and cross-seed aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

METRIC_NAMES = ("loss", "precision", "recall", "accuracy", "bacc", "auc")
CSV_HEADER = ("model", "seed", "epoch", "loss", "tn", "fp", "fn", "tp",
              "precision", "recall", "accuracy", "bacc", "auc")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    loss: float
    tp: int
    fp: int
    tn: int
    fn: int
    precision: float
    recall: float
    accuracy: float
    bacc: float
    auc: float  # NaN when undefined
    test_loss: float = math.nan


@dataclass
class RunSeries:
    model: str
    seed: int
    epochs: list[EpochMetrics] = field(default_factory=list)

    def __post_init__(self):
        for k, m in enumerate(self.epochs, start=1):
            if m.epoch != k:
                raise ValueError(f"epochs must run contiguously from 1; got {m.epoch} at position {k}")

    def column(self, metric: str) -> np.ndarray:
        return np.array([getattr(m, metric) for m in self.epochs], dtype=np.float64)


def confusion(scores, labels, mask=None, threshold: float = 0.5) -> ConfusionCounts:
    """Counts over masked nodes; a node is predicted positive iff score >= threshold."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        scores, labels = scores[mask], labels[mask]
    if scores.size == 0:
        raise ValueError("confusion needs at least one evaluated node")
    pred = scores >= threshold
    pos = labels == 1
    return ConfusionCounts(
        tp=int(np.sum(pred & pos)), fp=int(np.sum(pred & ~pos)),
        tn=int(np.sum(~pred & ~pos)), fn=int(np.sum(~pred & pos)),
    )


def _ratio(num: int, den: int) -> float:
    return num / den if den > 0 else 0.0


def basic_metrics(c: ConfusionCounts) -> tuple[float, float, float, float]:
    """(accuracy, precision, recall, balanced accuracy); zero-denominator terms count as 0."""
    if c.total == 0:
        raise ValueError("empty confusion counts")
    recall = _ratio(c.tp, c.tp + c.fn)
    specificity = _ratio(c.tn, c.tn + c.fp)
    return (
        (c.tp + c.tn) / c.total,
        _ratio(c.tp, c.tp + c.fp),
        recall,
        (recall + specificity) / 2.0,
    )


def auc(scores, labels, mask=None) -> float:
    """ROC AUC as the Mann-Whitney statistic with midranks; NaN if one class is absent."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        scores, labels = scores[mask], labels[mask]
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return math.nan
    ranks = rankdata(scores, method="average")
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def epoch_metrics(epoch: int, loss: float, scores, labels, mask, test_loss=math.nan) -> EpochMetrics:
    c = confusion(scores, labels, mask)
    accuracy, precision, recall, bacc = basic_metrics(c)
    return EpochMetrics(epoch, float(loss), c.tp, c.fp, c.tn, c.fn, float(precision),
                        float(recall), float(accuracy), float(bacc),
                        float(auc(scores, labels, mask)), float(test_loss))


# ---------------------------------------------------------------- aggregation

@dataclass
class MetricTrack:
    mean: np.ndarray
    std: np.ndarray  # NaN when fewer than two series
    stderr: np.ndarray


@dataclass
class ModelAggregate:
    model: str
    n_series: int
    tracks: dict[str, MetricTrack]
    best_epoch: int
    best_mean_bacc: float
    best_std_bacc: float


@dataclass
class AggregateReport:
    models: dict[str, ModelAggregate]

    def best_model(self) -> str:
        """Model with the highest best-epoch mean BACC (first in name order on ties)."""
        return max(sorted(self.models), key=lambda m: self.models[m].best_mean_bacc)


def aggregate(series: list[RunSeries], metrics=METRIC_NAMES) -> AggregateReport:
    """Per-model, per-epoch mean / sample std / stderr, and best epoch by mean BACC."""
    groups: dict[str, list[RunSeries]] = {}
    for s in sorted(series, key=lambda s: (s.model, s.seed)):
        groups.setdefault(s.model, []).append(s)
    out = {}
    for model, runs in groups.items():
        lengths = {len(r.epochs) for r in runs}
        if len(lengths) != 1:
            raise ValueError(f"{model}: series disagree on epoch count {sorted(lengths)}")
        n = len(runs)
        tracks = {}
        for metric in metrics:
            stack = np.vstack([r.column(metric) for r in runs])
            # constant columns are taken verbatim so zero spread is exactly zero
            const = np.all(stack == stack[:1], axis=0)
            mean = np.where(const, stack[0], stack.mean(axis=0))
            if n >= 2:
                std = np.where(const, 0.0, stack.std(axis=0, ddof=1))
                stderr = std / math.sqrt(n)
            else:
                std = np.full(stack.shape[1], math.nan)
                stderr = std.copy()
            tracks[metric] = MetricTrack(mean, std, stderr)
        bacc = tracks["bacc"]
        k = int(np.argmax(bacc.mean))
        out[model] = ModelAggregate(model, n, tracks, k + 1, float(bacc.mean[k]), float(bacc.std[k]))
    return AggregateReport(out)
