"""Accuracy metrics, confusion, weight self-similarity, classifier concat.

Ranking ties are broken toward the lowest class index everywhere, which
makes results reproducible and gives degenerate (all-equal) logits a
defined behavior.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError
from .model import (
    ClassifierWeights,
    FeatureBatch,
    SyntheticEncoder,
    Translator,
    classifier_forward,
    l2_normalize,
    student_embed,
    teacher_embed,
)

METRICS_COLUMNS = (
    "round",
    "lr",
    "clip_norm",
    "sigma",
    "client_top1",
    "client_top5",
    "server_top1",
    "server_top5",
)


def predictions(logits: np.ndarray) -> np.ndarray:
    """Argmax per row with lowest-index tie-breaking."""
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    return z.argmax(axis=1)


def topk_accuracy(logits: np.ndarray, labels: np.ndarray, k: int) -> float:
    """Fraction of rows whose label ranks in the top k logits."""
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    if not 1 <= k <= z.shape[1]:
        raise ValueError(f"k must lie in [1, {z.shape[1]}], got {k}")
    if labels.size == 0:
        return 0.0
    # Stable sort on -logits ranks equal values by ascending class index.
    topk = np.argsort(-z, axis=1, kind="stable")[:, :k]
    return float((topk == labels[:, None]).any(axis=1).mean())


def accuracy_pair(logits: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """(top-1, top-5) with top-5 capped at the class count."""
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    k5 = min(5, z.shape[1])
    return topk_accuracy(z, labels, 1), topk_accuracy(z, labels, k5)


def client_eval(
    encoder: SyntheticEncoder,
    translator: Translator,
    decoder: ClassifierWeights,
    batch: FeatureBatch,
) -> tuple[float, float]:
    """Accuracy of the decoder on the proxy (student) path."""
    feats = l2_normalize(student_embed(encoder, translator, batch))
    return accuracy_pair(classifier_forward(decoder, feats), batch.labels)


def server_plug_eval(
    teacher: SyntheticEncoder,
    decoder: ClassifierWeights,
    batch: FeatureBatch,
) -> tuple[float, float]:
    """Accuracy of the decoder plugged directly onto the teacher encoder."""
    feats = l2_normalize(teacher_embed(teacher, batch))
    return accuracy_pair(classifier_forward(decoder, feats), batch.labels)


def confusion_matrix(
    predicted: np.ndarray, labels: np.ndarray, num_classes: int
) -> np.ndarray:
    """Counts indexed (true, predicted); row sums are per-class frequencies."""
    predicted = np.asarray(predicted, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predicted.shape != labels.shape:
        raise DimensionError("predictions and labels must align")
    if predicted.size and not (
        0 <= predicted.min() and predicted.max() < num_classes
        and 0 <= labels.min() and labels.max() < num_classes
    ):
        raise ValueError("entries outside [0, num_classes)")
    m = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(m, (labels, predicted), 1)
    return m


def weight_self_similarity(w: ClassifierWeights) -> np.ndarray:
    """Cosine similarity between class rows of the decoder.

    Rows are unit-normalized first. Zero rows get similarity 0 to every
    other row and a forced 1 on the diagonal.
    """
    weights = w.weight
    norms = np.linalg.norm(weights, axis=1, keepdims=True)
    dead = norms[:, 0] == 0.0
    normalized = weights / np.where(norms == 0.0, 1.0, norms)
    normalized[dead] = 0.0
    s = normalized @ normalized.T
    np.fill_diagonal(s, 1.0)
    return s


def mean_abs_off_diagonal(s: np.ndarray) -> float:
    """Average |S_ij| over i != j; the cross-talk summary of a similarity map."""
    c = s.shape[0]
    if c < 2:
        return 0.0
    mask = ~np.eye(c, dtype=bool)
    return float(np.abs(s[mask]).mean())


@dataclass(frozen=True)
class MultiDomainClassifier:
    """Row-stacked decoders with the (start, stop) class block per domain."""

    weights: ClassifierWeights
    blocks: tuple[tuple[int, int], ...]

    def domain_of_class(self, global_class: int) -> int:
        for i, (start, stop) in enumerate(self.blocks):
            if start <= global_class < stop:
                return i
        raise ValueError(f"class {global_class} outside all blocks")


def concat_classifiers(decoders: list[ClassifierWeights]) -> MultiDomainClassifier:
    """Stack per-domain decoders into one classifier over the union of classes."""
    if not decoders:
        raise ValueError("need at least one decoder")
    feature_dim = decoders[0].feature_dim
    for d in decoders[1:]:
        if d.feature_dim != feature_dim:
            raise DimensionError(
                f"feature dims differ: {d.feature_dim} vs {feature_dim}"
            )
    blocks = []
    start = 0
    for d in decoders:
        blocks.append((start, start + d.num_classes))
        start += d.num_classes
    stacked = np.concatenate([d.weight for d in decoders], axis=0)
    return MultiDomainClassifier(ClassifierWeights(stacked), tuple(blocks))


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


@dataclass(frozen=True)
class RoundRecord:
    """One metrics row; accuracy or DP fields may be absent (None)."""

    round: int
    lr: float
    clip_norm: float | None = None
    sigma: float | None = None
    client_top1: float | None = None
    client_top5: float | None = None
    server_top1: float | None = None
    server_top5: float | None = None

    def csv_row(self) -> str:
        return ",".join(
            _format_cell(getattr(self, name)) for name in METRICS_COLUMNS
        )


@dataclass
class RunMetrics:
    """Per-round protocol measurements plus end-of-run matrices."""

    records: list[RoundRecord] = field(default_factory=list)
    confusion: np.ndarray | None = None
    self_similarity: np.ndarray | None = None
    skipped_rounds: int = 0

    def final(self) -> RoundRecord:
        if not self.records:
            raise ValueError("no rounds recorded")
        return self.records[-1]

    def csv_text(self) -> str:
        lines = [",".join(METRICS_COLUMNS)]
        lines.extend(rec.csv_row() for rec in self.records)
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.csv_text())


def write_square_matrix(path, matrix: np.ndarray) -> None:
    """Dense text export: one line with the size, then the rows."""
    m = np.asarray(matrix)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{m.shape[0]}\n")
        for row in m:
            fh.write(" ".join(_format_cell(v) for v in row) + "\n")
