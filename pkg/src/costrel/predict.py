"""Hard decisions from score vectors, and per-image ranking of the results.

Score vectors carry the background class at index 0 followed by the
foreground predicates ``1..C``.  Without filtering, every pair is assigned
its best foreground predicate.  With a :class:`FilterRule`, a pair whose
background score reaches ``theta`` is routed to background and emits nothing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metrics import BACKGROUND, RelInstance

ScoredTriplet = RelInstance


@dataclass(frozen=True)
class FilterRule:
    theta: float = 0.5
    background_index: int = BACKGROUND

    def __post_init__(self) -> None:
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1], got {self.theta}")
        if self.background_index != BACKGROUND:
            raise ValueError("background must be class 0")


def argmax_decision(scores) -> int:
    """1-based index of the best foreground score; ties go to the lowest index."""
    z = np.asarray(scores, dtype=np.float64)
    if z.ndim != 1 or z.size == 0:
        raise ValueError("need a non-empty score vector")
    return int(np.argmax(z)) + 1


def nrf_decision(scores, rule: FilterRule = FilterRule()) -> int:
    """Background (0) if ``z_0 >= theta``, else the best foreground class."""
    z = np.asarray(scores, dtype=np.float64)
    if z.ndim != 1 or z.size < 2:
        raise ValueError("need a background score and at least one foreground score")
    if not z[0] < rule.theta:
        return BACKGROUND
    return argmax_decision(z[1:])


def decide(scores: np.ndarray, rule: FilterRule | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise decisions for an ``(n, C + 1)`` score matrix.

    Returns the decided class of each row and the score of its winning
    foreground class (the score reported for the triplet even when the row
    is filtered).
    """
    z = np.asarray(scores, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] < 2:
        raise ValueError("need an n x (C + 1) score matrix")
    best = np.argmax(z[:, 1:], axis=1)
    cls = best + 1
    win = z[np.arange(z.shape[0]), cls]
    if rule is not None:
        cls = np.where(z[:, 0] < rule.theta, cls, BACKGROUND)
    return cls, win


def rank_predictions(image, subject, obj, scores, rule: FilterRule | None, k: int) -> dict[int, list[ScoredTriplet]]:
    """One triplet per pair, ranked by score within each image and cut to ``k``.

    Row position is the pair id and breaks score ties.  Every image present
    in the input gets an entry, possibly empty.
    """
    if k <= 0:
        raise ValueError("K must be positive")
    image = np.asarray(image, dtype=np.int64)
    subject = np.asarray(subject, dtype=np.int64)
    obj = np.asarray(obj, dtype=np.int64)
    n = image.size
    if subject.shape != (n,) or obj.shape != (n,) or np.shape(scores)[0] != n:
        raise ValueError("pair arrays and score rows must have equal length")
    _check_unique_pairs(image, subject, obj)

    cls, win = decide(scores, rule)
    out: dict[int, list[ScoredTriplet]] = {int(i): [] for i in np.unique(image)}
    kept = np.flatnonzero(cls != BACKGROUND)
    order = kept[np.lexsort((kept, -win[kept], image[kept]))]
    if order.size:
        img = image[order]
        starts = np.r_[0, np.flatnonzero(np.diff(img)) + 1]
        rank = np.arange(order.size) - np.repeat(starts, np.diff(np.r_[starts, order.size]))
        order = order[rank < k]
    for i in order.tolist():
        out[int(image[i])].append(
            RelInstance(int(image[i]), int(subject[i]), int(obj[i]), int(cls[i]), float(win[i]))
        )
    return out


def _check_unique_pairs(image: np.ndarray, subject: np.ndarray, obj: np.ndarray) -> None:
    if image.size < 2:
        return
    keys = np.stack([image, subject, obj], axis=1)
    order = np.lexsort(keys.T[::-1])
    dup = np.all(keys[order][1:] == keys[order][:-1], axis=1)
    if dup.any():
        i = order[1:][dup][0]
        raise ValueError(f"duplicate entry for pair {tuple(keys[i].tolist())}")
