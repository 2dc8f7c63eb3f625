"""Synthetic long-tail relationship data and the on-disk formats.

Relationship records (ground truth and predictions) are line-delimited JSON::

    # costrel-relations v1
    {"image": 0, "subject": 0, "object": 1, "predicate": 3}
    {"image": 0, "subject": 1, "object": 0, "predicate": 0, "score": 0.81, "scores": [...]}

Lines starting with ``#`` are comments.  Ground truth uses predicates
``1..C``; predictions may also use 0 (background).

A dataset is a directory holding ``header.json`` (format version, shapes,
generator config, class counts), ``features.npy`` (``n x D`` float64),
``pairs.npy`` (``n x 4`` int64 columns image, subject, object, label) and
``ground_truth.jsonl`` with the foreground pairs.
"""

from __future__ import annotations

import io
import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .cost_model import ClassStats
from .metrics import BACKGROUND, ConfusionMatrix, EvalReport, ReliabilityBin, RelInstance

RELATIONS_HEADER = "# costrel-relations v1"
DATASET_FORMAT = "costrel-dataset"
DATASET_VERSION = 1
MAX_RESAMPLE = 100


class ZeroCountError(RuntimeError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    num_classes: int = 20
    zipf_s: float = 1.5
    images: int = 4167
    pairs_per_image: int = 200
    fg_fraction: float = 0.06
    dim: int = 8
    separation: float = 0.5
    noise: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_classes < 2:
            raise ValueError("need at least 2 predicate classes")
        if not self.zipf_s > 0:
            raise ValueError("Zipf exponent must be positive")
        if self.images < 1 or self.pairs_per_image < 1:
            raise ValueError("need at least one image and one pair per image")
        if not 0 < self.fg_fraction <= 1:
            raise ValueError("foreground fraction must lie in (0, 1]")
        if self.dim < 1:
            raise ValueError("feature dimension must be >= 1")
        if not (self.separation > 0 and self.noise > 0):
            raise ValueError("separation and noise scales must be positive")

    @property
    def num_pairs(self) -> int:
        return self.images * self.pairs_per_image

    @property
    def num_foreground(self) -> int:
        return int(round(self.fg_fraction * self.num_pairs))


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray  # 0 = background, 1..C foreground
    image: np.ndarray
    subject: np.ndarray
    object: np.ndarray
    num_classes: int
    config: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        n = self.labels.shape[0]
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise ValueError("features must have one row per pair")
        for name in ("image", "subject", "object"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have one entry per pair")
        if n and (self.labels.min() < 0 or self.labels.max() > self.num_classes):
            raise ValueError("label out of range")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.num_classes == other.num_classes
            and self.config == other.config
            and all(np.array_equal(getattr(self, f), getattr(other, f))
                    for f in ("features", "labels", "image", "subject", "object"))
        )

    @property
    def has_background(self) -> bool:
        return bool(np.any(self.labels == BACKGROUND))

    @property
    def label_offset(self) -> int:
        """Label of model column 0: 0 with a background column, else 1."""
        return 0 if self.has_background else 1

    @property
    def num_outputs(self) -> int:
        return self.num_classes + (1 if self.has_background else 0)

    def columns(self) -> np.ndarray:
        return self.labels - self.label_offset

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes + 1)

    def stats(self, idx: np.ndarray | None = None) -> ClassStats:
        labels = self.labels if idx is None else self.labels[idx]
        counts = np.bincount(labels - self.label_offset, minlength=self.num_outputs)
        return ClassStats(counts, background=self.has_background)

    def ground_truth(self, idx: np.ndarray | None = None) -> list[RelInstance]:
        rows = np.arange(len(self)) if idx is None else np.sort(np.asarray(idx))
        rows = rows[self.labels[rows] != BACKGROUND]
        return [
            RelInstance(int(i), int(s), int(o), int(p))
            for i, s, o, p in zip(self.image[rows], self.subject[rows], self.object[rows], self.labels[rows])
        ]

    def full_scores(self, column_scores: np.ndarray) -> np.ndarray:
        """Score matrix with background in column 0, padding with zeros if the model has none."""
        if self.has_background:
            return column_scores
        return np.hstack([np.zeros((column_scores.shape[0], 1)), column_scores])


def zipf_weights(num_classes: int, s: float) -> np.ndarray:
    w = 1.0 / np.arange(1, num_classes + 1) ** s
    return w / w.sum()


def sample_zipf(rng: np.random.Generator, num_classes: int, s: float, size: int) -> np.ndarray:
    """Labels ``1..C`` by inverse CDF over normalised ``1/j**s`` weights."""
    cdf = np.cumsum(zipf_weights(num_classes, s))
    cdf[-1] = 1.0
    return np.searchsorted(cdf, rng.random(size), side="right") + 1


def _pair_ids(pairs_per_image: int) -> tuple[np.ndarray, np.ndarray]:
    n_obj = 2
    while n_obj * (n_obj - 1) < pairs_per_image:
        n_obj += 1
    s, o = np.meshgrid(np.arange(n_obj), np.arange(n_obj), indexing="ij")
    mask = s != o
    return s[mask][:pairs_per_image], o[mask][:pairs_per_image]


def generate_synthetic(config: SynthConfig) -> Dataset:
    """Zipf-distributed foreground pairs around fixed class centres plus diffuse background.

    Foreground pair positions are a uniformly random subset of exactly
    ``round(fg_fraction * n)`` pairs.  Background features come from a
    centred Gaussian with the same overall spread as the foreground, so it
    overlaps every class.
    """
    rng = np.random.default_rng(config.seed)
    n, n_fg, c = config.num_pairs, config.num_foreground, config.num_classes
    if n_fg < c:
        raise ZeroCountError(f"{n_fg} foreground pairs cannot cover {c} classes")
    for _ in range(MAX_RESAMPLE):
        fg_labels = sample_zipf(rng, c, config.zipf_s, n_fg)
        if np.bincount(fg_labels, minlength=c + 1)[1:].min() >= 1:
            break
    else:
        raise ZeroCountError(f"a foreground class stayed empty after {MAX_RESAMPLE} draws")

    labels = np.zeros(n, dtype=np.int64)
    labels[rng.choice(n, size=n_fg, replace=False)] = fg_labels

    centers = rng.normal(scale=config.separation, size=(c, config.dim))
    features = np.empty((n, config.dim))
    fg = labels != BACKGROUND
    features[fg] = centers[labels[fg] - 1] + rng.normal(scale=config.noise, size=(n_fg, config.dim))
    spread = math.hypot(config.separation, config.noise)
    features[~fg] = rng.normal(scale=spread, size=(n - n_fg, config.dim))

    s_ids, o_ids = _pair_ids(config.pairs_per_image)
    return Dataset(
        features=features,
        labels=labels,
        image=np.repeat(np.arange(config.images, dtype=np.int64), config.pairs_per_image),
        subject=np.tile(s_ids, config.images).astype(np.int64),
        object=np.tile(o_ids, config.images).astype(np.int64),
        num_classes=c,
        config=asdict(config),
    )


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write via a temporary file in the target directory, then rename into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, arr, allow_pickle=False)
    return buf.getvalue()


def write_dataset(dataset: Dataset, path: str | Path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    header = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "num_pairs": len(dataset),
        "dim": int(dataset.features.shape[1]),
        "num_classes": dataset.num_classes,
        "class_counts": dataset.class_counts().tolist(),
        "config": dataset.config,
    }
    pairs = np.stack([dataset.image, dataset.subject, dataset.object, dataset.labels], axis=1).astype(np.int64)
    atomic_write_bytes(path / "features.npy", _npy_bytes(np.ascontiguousarray(dataset.features, dtype=np.float64)))
    atomic_write_bytes(path / "pairs.npy", _npy_bytes(pairs))
    write_relations(path / "ground_truth.jsonl", dataset.ground_truth())
    atomic_write_text(path / "header.json", json.dumps(header, indent=2, sort_keys=True) + "\n")


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    header = json.loads((path / "header.json").read_text())
    if header.get("format") != DATASET_FORMAT:
        raise ValueError(f"{path}: not a {DATASET_FORMAT} directory")
    if header.get("version") != DATASET_VERSION:
        raise ValueError(f"{path}: unsupported dataset version {header.get('version')}")
    features = np.load(path / "features.npy", allow_pickle=False)
    pairs = np.load(path / "pairs.npy", allow_pickle=False)
    if features.shape != (header["num_pairs"], header["dim"]) or pairs.shape != (header["num_pairs"], 4):
        raise ValueError(f"{path}: array shapes disagree with header")
    ds = Dataset(
        features=features,
        labels=pairs[:, 3].copy(),
        image=pairs[:, 0].copy(),
        subject=pairs[:, 1].copy(),
        object=pairs[:, 2].copy(),
        num_classes=int(header["num_classes"]),
        config=header["config"],
    )
    if ds.class_counts().tolist() != header["class_counts"]:
        raise ValueError(f"{path}: class counts disagree with header")
    return ds


def _record(inst: RelInstance, scores: Iterable[float] | None = None) -> str:
    rec = {"image": inst.image, "subject": inst.subject, "object": inst.object, "predicate": inst.predicate}
    if inst.score is not None:
        rec["score"] = inst.score
    if scores is not None:
        rec["scores"] = [float(x) for x in scores]
    return json.dumps(rec)


def write_relations(path: str | Path, instances: Iterable[RelInstance],
                    scores: Iterable[Iterable[float]] | None = None) -> None:
    """Write records, optionally with a full per-class score vector each."""
    lines = [RELATIONS_HEADER]
    if scores is None:
        lines += [_record(inst) for inst in instances]
    else:
        lines += [_record(inst, vec) for inst, vec in zip(instances, scores, strict=True)]
    atomic_write_text(path, "\n".join(lines) + "\n")


def _int_field(rec: dict, name: str, where: str) -> int:
    val = rec.get(name)
    if isinstance(val, bool) or not isinstance(val, int):
        raise ValueError(f"{where}: field {name!r} must be an integer")
    return val


def _load_relations(path: str | Path, *, allow_background: bool, num_classes: int | None) -> tuple[list[RelInstance], list[list[float] | None]]:
    out: list[RelInstance] = []
    vectors: list[list[float] | None] = []
    seen: dict[tuple[int, int, int], int] = {}
    low = BACKGROUND if allow_background else 1
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            where = f"{path}:{lineno}"
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{where}: malformed record ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise ValueError(f"{where}: record must be an object")
            img, sub, obj, pred = (_int_field(rec, k, where) for k in ("image", "subject", "object", "predicate"))
            if pred < low or (num_classes is not None and pred > num_classes):
                raise ValueError(f"{where}: predicate {pred} out of range")
            score = rec.get("score")
            if score is not None:
                if not isinstance(score, (int, float)) or isinstance(score, bool) or not 0.0 <= score <= 1.0:
                    raise ValueError(f"{where}: score must be a number in [0, 1]")
                score = float(score)
            vec = rec.get("scores")
            if vec is not None:
                if not isinstance(vec, list) or not all(
                    isinstance(x, (int, float)) and not isinstance(x, bool) and 0.0 <= x <= 1.0 for x in vec
                ):
                    raise ValueError(f"{where}: scores must be a list of numbers in [0, 1]")
                vec = [float(x) for x in vec]
            key = (img, sub, obj)
            if key in seen:
                raise ValueError(f"{where}: duplicate pair {key} (first seen on line {seen[key]})")
            seen[key] = lineno
            out.append(RelInstance(img, sub, obj, pred, score))
            vectors.append(vec)
    return out, vectors


def load_ground_truth(path: str | Path, num_classes: int | None = None) -> list[RelInstance]:
    return _load_relations(path, allow_background=False, num_classes=num_classes)[0]


def load_predictions(path: str | Path, num_classes: int | None = None,
                     with_vectors: bool = False):
    """Scored prediction records; with ``with_vectors`` also the per-record score lists."""
    records, vectors = _load_relations(path, allow_background=True, num_classes=num_classes)
    return (records, vectors) if with_vectors else records


def group_by_image(instances: Iterable[RelInstance]) -> dict[int, list[RelInstance]]:
    out: dict[int, list[RelInstance]] = {}
    for inst in instances:
        out.setdefault(inst.image, []).append(inst)
    return out


def report_csv(report: EvalReport) -> str:
    return "metric,value\n" + "".join(f"{name},{value}\n" for name, value in report.rows())


def report_json(report: EvalReport) -> str:
    doc = {
        "format": "costrel-report",
        "version": 1,
        **{name: float(getattr(report, name)) for name in EvalReport.SCALARS},
        "k": report.k,
        "theta": report.theta,
        "num_bins": report.num_bins,
        "per_class_recall": {str(j): r for j, r in sorted(report.per_class_recall.items())},
        "confusion_labels": list(report.confusion.labels),
        "confusion": report.confusion.counts.tolist(),
    }
    return json.dumps(doc, indent=2) + "\n"


def confusion_csv(cm: ConfusionMatrix) -> str:
    """Dense grid: header row of predicted labels, one row per true label."""
    lines = ["true\\pred," + ",".join(str(x) for x in cm.labels)]
    for label, row in zip(cm.labels, cm.counts.tolist()):
        lines.append(f"{label}," + ",".join(str(x) for x in row))
    return "\n".join(lines) + "\n"


def write_report(report: EvalReport, path: str | Path) -> None:
    """Write ``<path>`` as the metric CSV, plus ``.json`` and ``.confusion.csv`` siblings."""
    path = Path(path)
    atomic_write_text(path, report_csv(report))
    atomic_write_text(path.with_suffix(".json"), report_json(report))
    atomic_write_text(path.with_suffix(".confusion.csv"), confusion_csv(report.confusion))


def reliability_csv(rows: list[ReliabilityBin]) -> str:
    lines = ["bin_lower,bin_upper,count,mean_confidence,accuracy"]
    lines += [f"{b.lower!r},{b.upper!r},{b.count},{b.confidence!r},{b.accuracy!r}" for b in rows]
    return "\n".join(lines) + "\n"


def histogram_csv(counts: np.ndarray) -> str:
    m = len(counts)
    lines = ["bin_lower,bin_upper,count"]
    lines += [f"{i / m!r},{(i + 1) / m!r},{int(n)}" for i, n in enumerate(counts)]
    return "\n".join(lines) + "\n"
