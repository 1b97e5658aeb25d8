"""Exact evaluation metrics: rank-based ROC-AUC, macro one-vs-rest ROC-AUC,
accuracy, and mean/std aggregation across seeds."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np


class UndefinedMetricError(ValueError):
    """Metric has no defined value on the given inputs."""


@dataclass
class MetricReport:
    name: str
    value: float
    n_samples: int
    per_class: dict = field(default_factory=dict)


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks, ties receive the average of their rank range."""
    order = np.argsort(x, kind="mergesort")
    sx = x[order]
    boundaries = np.nonzero(np.diff(sx) != 0)[0] + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [x.size]])
    group_rank = 0.5 * (starts + 1 + ends)
    ranks = np.empty(x.size, dtype=np.float64)
    ranks[order] = np.repeat(group_rank, ends - starts)
    return ranks


def roc_auc_binary(scores, labels) -> float:
    """Probability a random positive outranks a random negative (ties count
    half), computed from average ranks in O(n log n)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError(f"scores/labels must be matching vectors, got "
                         f"{scores.shape} and {labels.shape}")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be binary 0/1")
    pos = labels == 1
    p = int(pos.sum())
    n = labels.size - p
    if p == 0 or n == 0:
        raise UndefinedMetricError("roc_auc_binary needs both classes present")
    ranks = _average_ranks(scores)
    return float((ranks[pos].sum() - p * (p + 1) / 2.0) / (p * n))


def roc_auc_macro_ovr(scores, labels) -> float:
    """Unweighted mean of per-class one-vs-rest binary AUCs.

    Classes with no positives or no negatives in the evaluated set are
    skipped with a warning.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.ndim != 2 or scores.shape[0] != labels.shape[0]:
        raise ValueError(f"need (N,C) scores and (N,) labels, got "
                         f"{scores.shape} and {labels.shape}")
    n_classes = scores.shape[1]
    aucs = []
    for c in range(n_classes):
        one_vs_rest = (labels == c).astype(np.int64)
        n_pos = int(one_vs_rest.sum())
        if n_pos == 0 or n_pos == labels.size:
            warnings.warn(f"class {c} absent from one side of the evaluated set; skipped",
                          RuntimeWarning, stacklevel=2)
            continue
        aucs.append(roc_auc_binary(scores[:, c], one_vs_rest))
    if not aucs:
        raise UndefinedMetricError("no class had both positives and negatives")
    return float(np.mean(aucs))


def accuracy(pred, true, mask=None) -> float:
    pred = np.asarray(pred)
    true = np.asarray(true)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            raise ValueError("accuracy over an empty mask is undefined")
        pred, true = pred[mask], true[mask]
    if pred.size == 0:
        raise ValueError("accuracy of empty inputs is undefined")
    return float(np.mean(pred == true))


def aggregate(values) -> tuple[float, float]:
    """Mean and sample standard deviation (n-1); std is 0 for a single value."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("aggregate of no records")
    mean = float(arr.mean())
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return mean, std
