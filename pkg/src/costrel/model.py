"""A small classifier head and its gradient-descent training loop.

The head is either affine (``D -> C``) or affine-ReLU-affine
(``D -> H -> C``).  Training is plain (minibatch) gradient descent with no
momentum or weight decay, so that the loss function is the only thing that
differs between the plain, cost-sensitive and softmax runs.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit, softmax

from . import loss as L
from .cost_model import ClassStats, WeightPair, class_stats_from_labels, cost_sensitive_weights

MODES = ("bce", "csl", "softmax")
_MODE_ALIASES = {
    "plain-bce": "bce",
    "cost-sensitive": "csl",
    "softmax-ce": "softmax",
}
CHECKPOINT_FORMAT = "costrel-checkpoint"
CHECKPOINT_VERSION = 1
HELDOUT_FRACTION = 0.2


class NonFiniteLossError(FloatingPointError):
    pass


def canonical_mode(mode: str) -> str:
    mode = _MODE_ALIASES.get(mode, mode)
    if mode not in MODES:
        raise ValueError(f"unknown training mode {mode!r}; expected one of {MODES}")
    return mode


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "csl"
    learning_rate: float = 0.1
    epochs: int = 200
    batch_size: int = 0  # 0 = full batch
    seed: int = 0
    hidden: int = 0
    clamp_eps: float = L.CLAMP_EPS

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", canonical_mode(self.mode))
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 0:
            raise ValueError("batch size must be >= 1 (or 0 for full batch)")
        if self.hidden < 0:
            raise ValueError("hidden width must be >= 0")
        if not 0 < self.clamp_eps < 0.5:
            raise ValueError("clamp epsilon must lie in (0, 0.5)")

    @property
    def output(self) -> str:
        return "softmax" if self.mode == "softmax" else "sigmoid"


@dataclass(frozen=True)
class ClassifierParams:
    """Layer weights (``fan_in x fan_out``) and biases, applied in order.

    A ReLU sits between consecutive layers.
    """

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    output: str = "sigmoid"

    def __post_init__(self) -> None:
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix")
        if self.output not in ("sigmoid", "softmax"):
            raise ValueError(f"unknown output activation {self.output!r}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: weight {w.shape} and bias {b.shape} disagree")
            if i and w.shape[0] != self.weights[i - 1].shape[1]:
                raise ValueError(f"layer {i} input width does not match previous layer")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i} has non-finite parameters")

    @property
    def input_dim(self) -> int:
        return int(self.weights[0].shape[0])

    @property
    def num_outputs(self) -> int:
        return int(self.weights[-1].shape[1])

    @property
    def hidden(self) -> int:
        return int(self.weights[0].shape[1]) if len(self.weights) > 1 else 0


def init_params(input_dim: int, num_outputs: int, hidden: int = 0, seed: int = 0,
                output: str = "sigmoid", rng: np.random.Generator | None = None) -> ClassifierParams:
    rng = np.random.default_rng(seed) if rng is None else rng
    widths = [input_dim, hidden, num_outputs] if hidden else [input_dim, num_outputs]
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return ClassifierParams(tuple(weights), tuple(biases), output)


def logits(params: ClassifierParams, features: np.ndarray) -> np.ndarray:
    return _forward_cache(params, features)[-1]


def forward(params: ClassifierParams, features: np.ndarray) -> np.ndarray:
    """Sigmoid scores for a sigmoid head, raw logits for a softmax head."""
    a = logits(params, features)
    return expit(a) if params.output == "sigmoid" else a


def predict_scores(params: ClassifierParams, features: np.ndarray) -> np.ndarray:
    """Per-class scores in ``[0, 1]`` for either head type."""
    a = logits(params, features)
    return expit(a) if params.output == "sigmoid" else softmax(a, axis=1)


def _forward_cache(params: ClassifierParams, features: np.ndarray) -> list[np.ndarray]:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ValueError(f"features have shape {x.shape}, model expects width {params.input_dim}")
    acts = [x]
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = acts[-1] @ w + b
        if i < len(params.weights) - 1:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return acts


def _backward(params: ClassifierParams, acts: list[np.ndarray], grad_out: np.ndarray):
    gw, gb = [None] * len(params.weights), [None] * len(params.weights)
    g = grad_out
    for i in range(len(params.weights) - 1, -1, -1):
        gw[i] = acts[i].T @ g
        gb[i] = g.sum(axis=0)
        if i:
            g = (g @ params.weights[i].T) * (acts[i] > 0)
    return tuple(gw), tuple(gb)


def sgd_step(params: ClassifierParams, grads: tuple[tuple[np.ndarray, ...], tuple[np.ndarray, ...]],
             learning_rate: float) -> ClassifierParams:
    gw, gb = grads
    for g in (*gw, *gb):
        if not np.all(np.isfinite(g)):
            raise NonFiniteLossError("non-finite gradient")
    with np.errstate(over="ignore", invalid="ignore"):
        weights = tuple(w - learning_rate * g for w, g in zip(params.weights, gw))
        biases = tuple(b - learning_rate * g for b, g in zip(params.biases, gb))
    if not all(np.all(np.isfinite(p)) for p in (*weights, *biases)):
        raise NonFiniteLossError("parameters overflowed")
    return ClassifierParams(weights, biases, params.output)


class _Objective:
    """Loss value and logit gradient for one training mode."""

    def __init__(self, config: TrainConfig, weights: WeightPair | None):
        self.mode = config.mode
        self.eps = config.clamp_eps
        self.weights = weights

    def value(self, a: np.ndarray, y: np.ndarray) -> float:
        if self.mode == "softmax":
            return L.softmax_ce_loss(a, y)
        if self.mode == "bce":
            return L.bce_loss(expit(a), y, self.eps)
        return L.cs_bce_loss_logits(a, y, self.weights, self.eps)

    def grad(self, a: np.ndarray, y: np.ndarray) -> np.ndarray:
        if self.mode == "softmax":
            return L.softmax_ce_grad(a, y)
        if self.mode == "bce":
            return L.bce_grad_logits(a, y)
        return L.cs_bce_grad_logits(a, y, self.weights)


@dataclass
class TrainHistory:
    """One entry per epoch; metrics are measured on the held-out split."""

    loss: list[float] = field(default_factory=list)
    heldout_mpcr: list[float] = field(default_factory=list)
    heldout_recall: list[float] = field(default_factory=list)

    def rows(self) -> list[tuple[int, float, float, float]]:
        return [(i + 1, *vals) for i, vals in enumerate(zip(self.loss, self.heldout_mpcr, self.heldout_recall))]

    def to_csv(self) -> str:
        lines = ["epoch,loss,heldout_mpcr,heldout_recall"]
        lines += [f"{e},{l!r},{m!r},{r!r}" for e, l, m, r in self.rows()]
        return "\n".join(lines) + "\n"


def split_indices(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle; the last 20% of the shuffled order is held out."""
    order = np.random.default_rng(seed).permutation(n)
    n_held = int(round(HELDOUT_FRACTION * n))
    if n - n_held < 1:
        raise ValueError("dataset too small to split")
    return order[: n - n_held], order[n - n_held:]


def _classification_rates(pred: np.ndarray, y: np.ndarray, num_classes: int) -> tuple[float, float]:
    if y.size == 0:
        return float("nan"), float("nan")
    hits = np.bincount(y[pred == y], minlength=num_classes)
    support = np.bincount(y, minlength=num_classes)
    present = support > 0
    return float((hits[present] / support[present]).mean()), float(hits.sum() / y.size)


def train(config: TrainConfig, features: np.ndarray, labels: np.ndarray, num_classes: int,
          stats: ClassStats | None = None) -> tuple[ClassifierParams, TrainHistory]:
    """Fit a classifier to ``features`` and column-index ``labels``.

    In ``csl`` mode the loss weights come from ``stats``; when it is omitted
    they are computed from the training-split labels.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("training set is empty")
    if not np.all(np.isfinite(x)):
        raise ValueError("features contain non-finite values")
    if y.shape != (x.shape[0],):
        raise ValueError("need one label per feature row")
    if y.min() < 0 or y.max() >= num_classes:
        raise ValueError("label out of range")

    train_idx, held_idx = split_indices(x.shape[0], config.seed)
    x_tr, y_tr = x[train_idx], y[train_idx]
    x_ho, y_ho = x[held_idx], y[held_idx]

    weights = None
    if config.mode == "csl":
        if stats is None:
            stats = class_stats_from_labels(y_tr, num_classes)
        if stats.num_classes != num_classes:
            raise ValueError("class statistics do not match the number of outputs")
        weights = cost_sensitive_weights(stats)
    objective = _Objective(config, weights)

    # Init and minibatch order draw from one stream seeded after the split.
    rng = np.random.default_rng([config.seed, 1])
    params = init_params(x.shape[1], num_classes, config.hidden, output=config.output, rng=rng)
    n = x_tr.shape[0]
    batch = n if config.batch_size in (0, None) or config.batch_size >= n else config.batch_size

    history = TrainHistory()
    for _ in range(config.epochs):
        try:
            params = _run_epoch(params, objective, x_tr, y_tr, batch, config.learning_rate, rng)
        except NonFiniteLossError as exc:
            raise NonFiniteLossError(f"non-finite loss ({exc})") from None
        value = objective.value(logits(params, x_tr), y_tr)
        if not math.isfinite(value):
            raise NonFiniteLossError("non-finite loss")
        history.loss.append(value)
        if y_ho.size:
            mpcr, recall = _classification_rates(logits(params, x_ho).argmax(axis=1), y_ho, num_classes)
        else:
            mpcr = recall = float("nan")
        history.heldout_mpcr.append(mpcr)
        history.heldout_recall.append(recall)
    return params, history


def _run_epoch(params: ClassifierParams, objective: _Objective, x: np.ndarray, y: np.ndarray,
               batch: int, lr: float, rng: np.random.Generator) -> ClassifierParams:
    n = x.shape[0]
    if batch == n:
        acts = _forward_cache(params, x)
        return sgd_step(params, _backward(params, acts, objective.grad(acts[-1], y)), lr)
    order = rng.permutation(n)
    for start in range(0, n, batch):
        idx = order[start:start + batch]
        acts = _forward_cache(params, x[idx])
        params = sgd_step(params, _backward(params, acts, objective.grad(acts[-1], y[idx])), lr)
    return params


def save_checkpoint(path: str | Path, params: ClassifierParams, config: TrainConfig,
                    extra: dict | None = None) -> None:
    from .data_io import atomic_write_text

    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(config),
        "output": params.output,
        "layers": [
            {"shape": list(w.shape), "weight": w.ravel(order="C").tolist(), "bias": b.tolist()}
            for w, b in zip(params.weights, params.biases)
        ],
    }
    if extra:
        doc["extra"] = extra
    atomic_write_text(path, json.dumps(doc, indent=1) + "\n")


def load_checkpoint(path: str | Path) -> tuple[ClassifierParams, TrainConfig, dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    weights, biases = [], []
    for layer in doc["layers"]:
        shape = tuple(layer["shape"])
        weights.append(np.asarray(layer["weight"], dtype=np.float64).reshape(shape))
        biases.append(np.asarray(layer["bias"], dtype=np.float64))
    params = ClassifierParams(tuple(weights), tuple(biases), doc["output"])
    return params, TrainConfig(**doc["config"]), doc.get("extra", {})
