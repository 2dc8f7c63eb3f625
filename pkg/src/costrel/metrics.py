"""Evaluation measures for relationship predictions.

Predictions and ground truth are collections of :class:`RelInstance`, keyed
by ``(image, subject, object)``.  A ground-truth pair with no prediction, or
with predicate 0, counts as a miss: the model abstained (background).
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import stats as sps

BACKGROUND = 0


class DegenerateVarianceError(ValueError):
    pass


@dataclass(frozen=True)
class RelInstance:
    """One subject-predicate-object record; ``predicate`` 0 means background."""

    image: int
    subject: int
    object: int
    predicate: int
    score: float | None = None

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.image, self.subject, self.object)


def index_by_pair(instances: Iterable[RelInstance], what: str = "instances") -> dict[tuple[int, int, int], int]:
    out: dict[tuple[int, int, int], int] = {}
    for inst in instances:
        if inst.key in out:
            raise ValueError(f"duplicate {what} for pair {inst.key}")
        out[inst.key] = inst.predicate
    return out


def _ground_truth(ground_truth: Iterable[RelInstance]) -> dict[tuple[int, int, int], int]:
    gt = index_by_pair(ground_truth, "ground truth")
    if not gt:
        raise ValueError("empty ground truth")
    return gt


def per_class_recall(predictions: Iterable[RelInstance], ground_truth: Iterable[RelInstance]) -> dict[int, float]:
    """Recall of every class that has at least one ground-truth pair."""
    gt = _ground_truth(ground_truth)
    pred = index_by_pair(predictions, "predictions")
    hits: dict[int, int] = {}
    support: dict[int, int] = {}
    for key, cls in gt.items():
        support[cls] = support.get(cls, 0) + 1
        if pred.get(key, BACKGROUND) == cls:
            hits[cls] = hits.get(cls, 0) + 1
    return {cls: hits.get(cls, 0) / n for cls, n in sorted(support.items())}


def mpcr(predictions: Iterable[RelInstance], ground_truth: Iterable[RelInstance]) -> float:
    """Mean per-class recall; classes absent from the ground truth are skipped."""
    recalls = per_class_recall(predictions, ground_truth)
    return math.fsum(recalls.values()) / len(recalls)


def _flatten_ranked(ranked: Mapping[int, Sequence[RelInstance]], k: int) -> list[RelInstance]:
    if k <= 0:
        raise ValueError("K must be positive")
    return [inst for image in ranked for inst in list(ranked[image])[:k]]


def _matched(retained: Iterable[RelInstance], gt: dict[tuple[int, int, int], int]) -> int:
    seen = set()
    for inst in retained:
        if inst.predicate != BACKGROUND and gt.get(inst.key) == inst.predicate:
            seen.add(inst.key)
    return len(seen)


def micro_recall_at_k(ranked: Mapping[int, Sequence[RelInstance]], ground_truth: Iterable[RelInstance],
                      k: int) -> float:
    """Fraction of ground-truth triplets matched among each image's first ``k`` predictions."""
    gt = _ground_truth(ground_truth)
    return _matched(_flatten_ranked(ranked, k), gt) / len(gt)


def precision_recall_f1(retained: Iterable[RelInstance], ground_truth: Iterable[RelInstance]) -> tuple[float, float, float]:
    gt = _ground_truth(ground_truth)
    retained = [r for r in retained if r.predicate != BACKGROUND]
    matched = _matched(retained, gt)
    p = matched / len(retained) if retained else 0.0
    r = matched / len(gt)
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f1


def _bin_index(scores: np.ndarray, num_bins: int) -> np.ndarray:
    # bin m covers (m/M, (m+1)/M]; a score of exactly 0 joins bin 0
    edges = np.arange(num_bins + 1) / num_bins
    return np.clip(np.searchsorted(edges, scores, side="left") - 1, 0, num_bins - 1)


def _calibration_inputs(scores, correct, num_bins: int) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    c = np.asarray(correct, dtype=np.float64).ravel()
    if s.size == 0:
        raise ValueError("no predictions to calibrate")
    if s.shape != c.shape:
        raise ValueError("need one correctness flag per score")
    if num_bins < 1:
        raise ValueError("num_bins must be >= 1")
    if np.any((s < 0) | (s > 1)) or np.any(np.isnan(s)):
        raise ValueError("scores must lie in [0, 1]")
    return s, c


class ReliabilityBin(NamedTuple):
    lower: float
    upper: float
    count: int
    confidence: float
    accuracy: float


def reliability_table(scores, correct, num_bins: int = 10) -> list[ReliabilityBin]:
    """Per-bin count, mean confidence and accuracy (NaN for empty bins)."""
    s, c = _calibration_inputs(scores, correct, num_bins)
    idx = _bin_index(s, num_bins)
    count = np.bincount(idx, minlength=num_bins)
    conf_sum = np.bincount(idx, weights=s, minlength=num_bins)
    acc_sum = np.bincount(idx, weights=c, minlength=num_bins)
    rows = []
    for m in range(num_bins):
        n = int(count[m])
        conf = conf_sum[m] / n if n else float("nan")
        acc = acc_sum[m] / n if n else float("nan")
        rows.append(ReliabilityBin(m / num_bins, (m + 1) / num_bins, n, float(conf), float(acc)))
    return rows


def expected_calibration_error(scores, correct, num_bins: int = 10) -> float:
    s, _ = _calibration_inputs(scores, correct, num_bins)
    total = 0.0
    for b in reliability_table(scores, correct, num_bins):
        if b.count:
            total += b.count / s.size * abs(b.accuracy - b.confidence)
    return total


def score_histogram(scores, num_bins: int = 10) -> np.ndarray:
    s, _ = _calibration_inputs(scores, np.zeros(np.size(scores)), num_bins)
    return np.bincount(_bin_index(s, num_bins), minlength=num_bins)


@dataclass(frozen=True)
class ConfusionMatrix:
    """``counts[r, c]``: pairs of true class ``labels[r]`` predicted as ``labels[c]``."""

    counts: np.ndarray
    labels: tuple[int, ...]

    def __post_init__(self) -> None:
        counts = np.array(self.counts, dtype=np.int64)
        if counts.shape != (len(self.labels), len(self.labels)):
            raise ValueError("confusion counts must be square and match the labels")
        if np.any(counts < 0):
            raise ValueError("confusion counts must be nonnegative")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "labels", tuple(int(x) for x in self.labels))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def row_sums(self) -> dict[int, int]:
        return dict(zip(self.labels, self.counts.sum(axis=1).tolist()))


def confusion(predictions: Iterable[RelInstance], ground_truth: Iterable[RelInstance], num_classes: int,
              include_background: bool = False) -> ConfusionMatrix:
    """Confusion over all ground-truth pairs, classes ordered by descending frequency.

    With ``include_background`` the background class leads both axes and
    missing predictions count as background; without it every ground-truth
    pair needs a foreground prediction.
    """
    gt = _ground_truth(ground_truth)
    pred = index_by_pair(predictions, "predictions")
    support = np.zeros(num_classes + 1, dtype=np.int64)
    for cls in gt.values():
        if not 1 <= cls <= num_classes:
            raise ValueError(f"ground-truth label {cls} out of range 1..{num_classes}")
        support[cls] += 1
    fg = sorted(range(1, num_classes + 1), key=lambda j: (-support[j], j))
    labels = ([BACKGROUND] if include_background else []) + fg
    pos = {cls: i for i, cls in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for key, cls in gt.items():
        p = pred.get(key, BACKGROUND)
        if p not in pos:
            raise ValueError(f"predicted label {p} for pair {key} out of range")
        counts[pos[cls], pos[p]] += 1
    return ConfusionMatrix(counts, tuple(labels))


def zero_recall_fraction(cm: ConfusionMatrix) -> float:
    """Share of classes with ground-truth support that are never predicted correctly."""
    support = cm.counts.sum(axis=1)
    present = support > 0
    if not present.any():
        raise ValueError("confusion matrix is empty")
    return float(np.sum(present & (np.diag(cm.counts) == 0)) / np.sum(present))


class TTestResult(NamedTuple):
    statistic: float
    dof: float
    significant: bool
    p_value: float


def welch_t_test(sample_a: Sequence[float], sample_b: Sequence[float], alpha: float = 0.05) -> TTestResult:
    """Two-sided Welch test with Welch-Satterthwaite degrees of freedom."""
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ValueError("each sample needs at least two values")
    qa, qb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    if qa + qb == 0:
        raise DegenerateVarianceError("both samples have zero variance")
    t = (a.mean() - b.mean()) / math.sqrt(qa + qb)
    dof = (qa + qb) ** 2 / (qa**2 / (a.size - 1) + qb**2 / (b.size - 1))
    return _two_sided(t, dof, alpha)


def one_sample_t_test(values: Sequence[float], reference: float, alpha: float = 0.05) -> TTestResult:
    """Student's t-test of the sample mean against a fixed reference value."""
    x = np.asarray(values, dtype=np.float64)
    if x.size < 2:
        raise ValueError("need at least two values")
    sd = x.std(ddof=1)
    if sd == 0:
        raise DegenerateVarianceError("sample has zero variance")
    t = (x.mean() - reference) / (sd / math.sqrt(x.size))
    return _two_sided(t, x.size - 1, alpha)


def _two_sided(t: float, dof: float, alpha: float) -> TTestResult:
    crit = sps.t.ppf(1 - alpha / 2, dof)
    p = 2 * sps.t.sf(abs(t), dof)
    return TTestResult(float(t), float(dof), bool(abs(t) > crit), float(p))


@dataclass(frozen=True)
class EvalReport:
    recall: float
    mpcr: float
    precision: float
    f1: float
    ece: float
    zero_recall_fraction: float
    per_class_recall: dict[int, float]
    confusion: ConfusionMatrix
    k: int
    theta: float | None
    num_bins: int = 10

    SCALARS = ("recall", "mpcr", "precision", "f1", "ece", "zero_recall_fraction")

    def rows(self) -> list[tuple[str, str]]:
        """``(metric, value)`` pairs in a fixed order, as written to the CSV report."""
        out = [(name, repr(float(getattr(self, name)))) for name in self.SCALARS]
        out.append(("k", str(self.k)))
        out.append(("theta", "none" if self.theta is None else repr(float(self.theta))))
        out.append(("num_bins", str(self.num_bins)))
        out += [(f"recall_class_{j}", repr(float(r))) for j, r in sorted(self.per_class_recall.items())]
        return out

    def table_row(self) -> str:
        return "  ".join(f"{name}={100 * getattr(self, name):6.2f}" for name in ("recall", "mpcr", "precision", "f1"))


def evaluate(ranked: Mapping[int, Sequence[RelInstance]], ground_truth: Sequence[RelInstance], num_classes: int,
             k: int, theta: float | None, num_bins: int = 10) -> EvalReport:
    """Full report for ranked per-image predictions (already decided and truncated).

    Calibration is measured on the retained triplets: the score of each
    emitted triplet against whether it matches a ground-truth triplet.
    """
    gt_list = list(ground_truth)
    gt = _ground_truth(gt_list)
    retained = _flatten_ranked(ranked, k)
    p, r, f1 = precision_recall_f1(retained, gt_list)
    pcr = per_class_recall(retained, gt_list)
    cm = confusion(retained, gt_list, num_classes, include_background=True)
    if retained:
        scores = [inst.score for inst in retained]
        correct = [gt.get(inst.key) == inst.predicate for inst in retained]
        ece = expected_calibration_error(scores, correct, num_bins)
    else:
        ece = 0.0
    return EvalReport(
        recall=r,
        mpcr=math.fsum(pcr.values()) / len(pcr),
        precision=p,
        f1=f1,
        ece=ece,
        zero_recall_fraction=zero_recall_fraction(cm),
        per_class_recall=pcr,
        confusion=cm,
        k=k,
        theta=theta,
        num_bins=num_bins,
    )
