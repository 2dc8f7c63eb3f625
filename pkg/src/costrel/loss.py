"""Cost-sensitive binary cross entropy and the softmax cross-entropy baseline.

All functions take a score (or logit) matrix of shape ``(N, C)`` and integer
class labels of length ``N`` (column indices); one-hot targets are built
internally with :func:`one_hot` where needed.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit, log_softmax, softmax

from .cost_model import WeightPair

CLAMP_EPS = 1e-7


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1:
        raise ValueError("labels must be one-dimensional")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError("label out of range")
    t = np.zeros((labels.size, num_classes))
    t[np.arange(labels.size), labels] = 1.0
    return t


def labels_from_one_hot(targets: np.ndarray) -> np.ndarray:
    """Inverse of :func:`one_hot`; rejects rows that are not exactly one-hot."""
    t = np.asarray(targets, dtype=np.float64)
    if t.ndim != 2:
        raise ValueError("targets must be an N x C matrix")
    if not np.all((t == 0.0) | (t == 1.0)) or not np.all(t.sum(axis=1) == 1.0):
        raise ValueError("target rows must be one-hot")
    return t.argmax(axis=1)


def sigmoid(a: np.ndarray) -> np.ndarray:
    return expit(a)


def _check(z: np.ndarray, labels: np.ndarray, weights: WeightPair | None) -> tuple[np.ndarray, np.ndarray]:
    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(labels)
    if z.ndim != 2 or z.shape[0] < 1:
        raise ValueError("scores must be a non-empty N x C matrix")
    if labels.ndim == 2:
        if labels.shape != z.shape:
            raise ValueError(f"target shape {labels.shape} does not match scores {z.shape}")
        labels = labels_from_one_hot(labels)
    elif labels.shape != (z.shape[0],):
        raise ValueError(f"expected {z.shape[0]} labels, got shape {labels.shape}")
    labels = labels.astype(np.int64)
    if labels.min() < 0 or labels.max() >= z.shape[1]:
        raise ValueError("label out of range")
    if weights is not None and weights.num_classes != z.shape[1]:
        raise ValueError(f"weights cover {weights.num_classes} classes, scores have {z.shape[1]}")
    return z, labels


def _coefficients(labels: np.ndarray, num_classes: int, weights: WeightPair) -> tuple[np.ndarray, np.ndarray]:
    """Per-entry positive (``u_j t_ij``) and negative (``v_{c(i),j} (1 - t_ij)``) weights."""
    t = one_hot(labels, num_classes)
    pos = t * weights.positive_weights[None, :]
    neg = (1.0 - t) * weights.negative_weight_rows[labels]
    return pos, neg


def cs_bce_loss(z: np.ndarray, labels: np.ndarray, weights: WeightPair, eps: float = CLAMP_EPS) -> float:
    """Weighted BCE averaged over examples and summed over classes.

    ``labels`` may be class indices or a one-hot matrix.  Scores are clamped
    to ``[eps, 1 - eps]`` before taking logarithms.
    """
    z, labels = _check(z, labels, weights)
    zc = np.clip(z, eps, 1.0 - eps)
    pos, neg = _coefficients(labels, z.shape[1], weights)
    per_entry = pos * np.log(zc) + neg * np.log1p(-zc)
    return float(-per_entry.sum() / z.shape[0])


def bce_loss(z: np.ndarray, labels: np.ndarray, eps: float = CLAMP_EPS) -> float:
    """Unweighted binary cross entropy, written out independently of the weighted path."""
    z, labels = _check(z, labels, None)
    zc = np.clip(z, eps, 1.0 - eps)
    t = one_hot(labels, z.shape[1])
    return float(-(t * np.log(zc) + (1.0 - t) * np.log1p(-zc)).sum() / z.shape[0])


def cs_bce_grad_scores(z: np.ndarray, labels: np.ndarray, weights: WeightPair) -> np.ndarray:
    """d loss / d z. Kept for verification; training uses :func:`cs_bce_grad_logits`."""
    z, labels = _check(z, labels, weights)
    pos, neg = _coefficients(labels, z.shape[1], weights)
    return -(pos / z - neg / (1.0 - z)) / z.shape[0]


def cs_bce_grad_logits(a: np.ndarray, labels: np.ndarray, weights: WeightPair) -> np.ndarray:
    """d loss / d a with ``z = sigmoid(a)``; no division by ``z`` or ``1 - z``."""
    a, labels = _check(a, labels, weights)
    z = expit(a)
    pos, neg = _coefficients(labels, a.shape[1], weights)
    return -(pos * (1.0 - z) - neg * z) / a.shape[0]


def cs_bce_loss_logits(a: np.ndarray, labels: np.ndarray, weights: WeightPair, eps: float = CLAMP_EPS) -> float:
    return cs_bce_loss(expit(np.asarray(a, dtype=np.float64)), labels, weights, eps)


def softmax_ce_loss(a: np.ndarray, labels: np.ndarray) -> float:
    a, labels = _check(a, labels, None)
    logp = log_softmax(a, axis=1)
    return float(-logp[np.arange(a.shape[0]), labels].sum() / a.shape[0])


def softmax_ce_grad(a: np.ndarray, labels: np.ndarray) -> np.ndarray:
    a, labels = _check(a, labels, None)
    g = softmax(a, axis=1)
    g[np.arange(a.shape[0]), labels] -= 1.0
    return g / a.shape[0]


def bce_grad_logits(a: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Standard sigmoid-BCE gradient ``(sigmoid(a) - t) / N``."""
    a, labels = _check(a, labels, None)
    g = expit(a)
    g[np.arange(a.shape[0]), labels] -= 1.0
    return g / a.shape[0]
