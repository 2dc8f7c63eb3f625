"""Class statistics, misclassification costs and the derived loss weights.

The cost of mistaking class ``j`` for class ``k`` grows with the log of the
frequency ratio ``N_k / N_j`` and is never allowed to fall below one::

    w_jk = 0                               if j == k
    w_jk = max(1, log2(N_k / N_j))         otherwise

Positive examples of class ``j`` are weighted by the prior-weighted expected
cost of misclassifying ``j``::

    u_j = 1 / (1 - P_j) * sum_{k != j} P_k * w_jk

and an example whose true class is ``c`` acts as a negative for every other
class ``k`` with weight ``w_ck`` (row ``c`` of the cost matrix).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class InsufficientSupportError(ValueError):
    """A class has no (or negative) training examples."""


class DegeneratePriorError(ValueError):
    """A class carries all of the probability mass, so ``1 - P_j`` is zero."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ClassStats:
    """Per-class example counts, in model-column order.

    When ``background`` is true, column 0 is the background class and
    columns ``1..C`` are the foreground predicates.
    """

    counts: np.ndarray
    background: bool = False

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts)
        if counts.ndim != 1 or counts.size < 2:
            raise ValueError("need counts for at least two classes")
        if not np.issubdtype(counts.dtype, np.integer):
            if not np.all(np.asarray(counts, dtype=np.float64) == np.round(counts)):
                raise ValueError("counts must be integers")
        counts = counts.astype(np.int64)
        if np.any(counts < 1):
            bad = np.flatnonzero(counts < 1).tolist()
            raise InsufficientSupportError(f"insufficient class support: classes {bad} have count < 1")
        object.__setattr__(self, "counts", _frozen(counts.copy()))

    @property
    def num_classes(self) -> int:
        return int(self.counts.size)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def priors(self) -> np.ndarray:
        return self.counts / float(self.total)


def class_stats_from_counts(counts: Sequence[int] | np.ndarray, *, background: bool = False) -> ClassStats:
    return ClassStats(np.asarray(counts), background=background)


def class_stats_from_labels(labels: np.ndarray, num_classes: int, *, background: bool = False) -> ClassStats:
    """Count column indices ``0..num_classes-1`` in ``labels``."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError("label out of range")
    return ClassStats(np.bincount(labels, minlength=num_classes), background=background)


@dataclass(frozen=True)
class CostMatrix:
    """``entries[j, k]``: cost of predicting ``k`` when the truth is ``j``."""

    entries: np.ndarray

    def __post_init__(self) -> None:
        w = np.array(self.entries, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError("cost matrix must be square")
        if not np.all(np.isfinite(w)):
            raise ValueError("cost matrix must be finite")
        if np.any(np.diag(w) != 0.0):
            raise ValueError("cost matrix diagonal must be zero")
        off = ~np.eye(w.shape[0], dtype=bool)
        if np.any(w[off] < 1.0):
            raise ValueError("off-diagonal costs must be >= 1")
        object.__setattr__(self, "entries", _frozen(w))

    @property
    def num_classes(self) -> int:
        return int(self.entries.shape[0])


@dataclass(frozen=True)
class WeightPair:
    """Positive weights ``u`` and the negative-weight rows (row = true class)."""

    positive_weights: np.ndarray
    negative_weight_rows: np.ndarray

    def __post_init__(self) -> None:
        u = np.array(self.positive_weights, dtype=np.float64)
        v = np.array(self.negative_weight_rows, dtype=np.float64)
        if u.ndim != 1 or v.shape != (u.size, u.size):
            raise ValueError("weights must be a length-C vector and a CxC matrix")
        object.__setattr__(self, "positive_weights", _frozen(u))
        object.__setattr__(self, "negative_weight_rows", _frozen(v))

    @property
    def num_classes(self) -> int:
        return int(self.positive_weights.size)

    @classmethod
    def uniform(cls, num_classes: int) -> "WeightPair":
        """All-ones weights; the loss reduces to plain binary cross entropy."""
        return cls(np.ones(num_classes), np.ones((num_classes, num_classes)))


def build_cost_matrix(stats: ClassStats) -> CostMatrix:
    n = stats.counts.astype(np.float64)
    # ratio[j, k] = N_k / N_j
    ratio = n[None, :] / n[:, None]
    w = np.maximum(1.0, np.log2(ratio))
    np.fill_diagonal(w, 0.0)
    return CostMatrix(w)


def weight_pair_from_cost_matrix(stats: ClassStats, cost: CostMatrix) -> WeightPair:
    """Expected misclassification costs as positive weights, cost rows as negatives.

    ``u_j`` is evaluated as ``sum_{k != j} N_k w_jk / (N - N_j)``, which is the
    prior form multiplied through by ``N``; integer counts keep it exact on
    balanced inputs.
    """
    if cost.num_classes != stats.num_classes:
        raise ValueError(
            f"cost matrix is {cost.num_classes}x{cost.num_classes} but stats have {stats.num_classes} classes"
        )
    n = stats.counts.astype(np.float64)
    rest = float(stats.total) - n
    if np.any(rest <= 0):
        raise DegeneratePriorError("degenerate prior: a class has prior 1")
    w = cost.entries
    u = (w @ n) / rest  # diagonal is zero, so the k == j term drops out
    return WeightPair(u, w.copy())


def cost_sensitive_weights(stats: ClassStats) -> WeightPair:
    return weight_pair_from_cost_matrix(stats, build_cost_matrix(stats))
