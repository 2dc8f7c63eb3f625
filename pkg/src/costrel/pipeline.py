"""Train -> score -> decide -> rank -> evaluate, on a dataset's held-out split."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .data_io import Dataset
from .metrics import EvalReport, evaluate
from .model import ClassifierParams, TrainConfig, TrainHistory, predict_scores, split_indices, train
from .predict import FilterRule, rank_predictions

DEFAULT_K = 100
DEFAULT_THETA = 0.5


def eval_indices(dataset: Dataset, seed: int, split: str = "heldout") -> np.ndarray:
    if split == "all":
        return np.arange(len(dataset))
    if split == "heldout":
        return np.sort(split_indices(len(dataset), seed)[1])
    raise ValueError(f"unknown split {split!r}")


def fit(dataset: Dataset, config: TrainConfig) -> tuple[ClassifierParams, TrainHistory]:
    """Train on the dataset; cost-sensitive weights use training-split counts."""
    stats = None
    if config.mode == "csl":
        train_idx, _ = split_indices(len(dataset), config.seed)
        stats = dataset.stats(train_idx)
    return train(config, dataset.features, dataset.columns(), dataset.num_outputs, stats)


def score_pairs(params: ClassifierParams, dataset: Dataset, idx: np.ndarray) -> np.ndarray:
    """``(len(idx), C + 1)`` scores with background in column 0."""
    if params.input_dim != dataset.features.shape[1] or params.num_outputs != dataset.num_outputs:
        raise ValueError(
            f"model maps {params.input_dim} -> {params.num_outputs}, data has "
            f"{dataset.features.shape[1]} features and {dataset.num_outputs} classes"
        )
    return dataset.full_scores(predict_scores(params, dataset.features[idx]))


def evaluate_model(params: ClassifierParams, dataset: Dataset, idx: np.ndarray, k: int = DEFAULT_K,
                   theta: float | None = DEFAULT_THETA, num_bins: int = 10) -> EvalReport:
    """Report for the pairs in ``idx``; ``theta=None`` disables background filtering."""
    scores = score_pairs(params, dataset, idx)
    rule = None if theta is None else FilterRule(theta)
    ranked = rank_predictions(dataset.image[idx], dataset.subject[idx], dataset.object[idx], scores, rule, k)
    return evaluate(ranked, dataset.ground_truth(idx), dataset.num_classes, k, theta, num_bins)


def train_and_evaluate(dataset: Dataset, config: TrainConfig, k: int = DEFAULT_K,
                       thetas: tuple[float | None, ...] = (None,), num_bins: int = 10) -> list[EvalReport]:
    """One training run, evaluated on its held-out split under each filter setting."""
    params, _ = fit(dataset, config)
    idx = eval_indices(dataset, config.seed)
    return [evaluate_model(params, dataset, idx, k, theta, num_bins) for theta in thetas]


def with_seed(config: TrainConfig, seed: int) -> TrainConfig:
    return replace(config, seed=seed)
