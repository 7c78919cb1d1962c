"""Synthetic multi-domain data, Dirichlet partitioning, and feature files.

A domain is a Gaussian cluster mixture: class prototypes drawn from a
standard normal in R^d, samples scattered around them with configurable
noise. Class counts are uniform or Zipf long-tailed. Everything is a pure
function of the DomainSpec seed.

The feature-file format bridges to externally precomputed embeddings:
line 1 is ``n d C``; each of the next n lines is ``v_1 ... v_d label``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FeatureFileError
from .model import FeatureBatch
from .rng import STREAM_DATA, STREAM_PARTITION, derive_rng

TRAIN_FRACTION = 0.8


@dataclass(frozen=True)
class DomainSpec:
    """Recipe for one synthetic domain.

    Defaults give a mildly long-tailed 20-class domain whose cluster noise
    leaves a linear decoder in the mid-accuracy range, so protocol effects
    stay visible. ``samples_per_class`` is the mean count; the Zipf exponent
    shapes the tail (0 = uniform).
    """

    domain_id: int = 0
    num_classes: int = 20
    input_dim: int = 32
    samples_per_class: int = 100
    zipf_exponent: float = 0.95
    noise_sigma: float = 1.45
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if self.input_dim < 1 or self.samples_per_class < 1:
            raise ValueError("input_dim and samples_per_class must be positive")
        if self.zipf_exponent < 0 or self.noise_sigma < 0:
            raise ValueError("zipf_exponent and noise_sigma must be non-negative")


def class_counts(spec: DomainSpec) -> np.ndarray:
    """Per-class sample counts: uniform, or Zipf with the given exponent.

    Counts are non-increasing in the class index, each at least 1, and sum
    to num_classes * samples_per_class.
    """
    c = spec.num_classes
    total = c * spec.samples_per_class
    if spec.zipf_exponent == 0:
        return np.full(c, spec.samples_per_class, dtype=np.int64)
    weights = np.arange(1, c + 1, dtype=np.float64) ** (-spec.zipf_exponent)
    weights /= weights.sum()
    counts = np.floor(total * weights).astype(np.int64)
    counts[: total - counts.sum()] += 1
    # Long tails may floor to zero; keep every class represented.
    short = np.int64(1) - counts
    np.maximum(counts, 1, out=counts)
    counts[0] -= short[short > 0].sum()
    return -np.sort(-counts)


def generate_domain(spec: DomainSpec) -> tuple[FeatureBatch, FeatureBatch]:
    """Synthesize one domain and split it 80/20 into (train, validation)."""
    rng = derive_rng(spec.seed, STREAM_DATA, spec.domain_id)
    counts = class_counts(spec)
    prototypes = rng.standard_normal((spec.num_classes, spec.input_dim))
    features = np.concatenate(
        [
            prototypes[c] + spec.noise_sigma * rng.standard_normal((counts[c], spec.input_dim))
            for c in range(spec.num_classes)
        ]
    )
    labels = np.repeat(np.arange(spec.num_classes), counts)
    perm = rng.permutation(features.shape[0])
    n_train = int(np.floor(TRAIN_FRACTION * features.shape[0]))
    train = FeatureBatch(features[perm[:n_train]], labels[perm[:n_train]])
    val = FeatureBatch(features[perm[n_train:]], labels[perm[n_train:]])
    return train, val


@dataclass(frozen=True)
class PartitionSpec:
    """Assignment of every sample index to exactly one client."""

    alpha: float
    num_clients: int
    assignment: np.ndarray

    def __post_init__(self):
        a = np.array(self.assignment, dtype=np.int64)
        if a.ndim != 1:
            raise ValueError("assignment must be a flat index vector")
        if a.size and (a.min() < 0 or a.max() >= self.num_clients):
            raise ValueError("assignment contains out-of-range client ids")
        a.setflags(write=False)
        object.__setattr__(self, "assignment", a)

    def client_indices(self, client_id: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == client_id)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.num_clients)

    def counts_matrix(self, labels: np.ndarray, num_classes: int) -> np.ndarray:
        """(num_classes x num_clients) sample counts, heatmap-ready."""
        m = np.zeros((num_classes, self.num_clients), dtype=np.int64)
        np.add.at(m, (np.asarray(labels), self.assignment), 1)
        return m


def dirichlet_partition(
    labels: np.ndarray, num_clients: int, alpha: float, seed: int
) -> PartitionSpec:
    """Label-skewed split: per class, client shares drawn from Dirichlet(alpha).

    Each class's samples are assigned to clients by independent draws from
    that class's proportion vector, so smaller alpha concentrates a class on
    fewer clients.
    """
    if num_clients < 1:
        raise ValueError("num_clients must be at least 1")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    labels = np.asarray(labels, dtype=np.int64)
    rng = derive_rng(seed, STREAM_PARTITION)
    assignment = np.zeros(labels.shape[0], dtype=np.int64)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        proportions = rng.dirichlet(np.full(num_clients, alpha))
        assignment[idx] = rng.choice(num_clients, size=idx.size, p=proportions)
    return PartitionSpec(alpha, num_clients, assignment)


def read_feature_header(path) -> tuple[int, int, int]:
    """Return (n, d, C) from a feature file without parsing the rows."""
    with open(path, "r", encoding="utf-8") as fh:
        head = fh.readline().split()
    if len(head) != 3:
        raise FeatureFileError(f"header must be 'n d C', got {len(head)} fields", 1)
    try:
        n, d, c = (int(tok) for tok in head)
    except ValueError:
        raise FeatureFileError("header fields must be integers", 1) from None
    if n < 0 or d < 1 or c < 1:
        raise FeatureFileError("header requires n >= 0, d >= 1, C >= 1", 1)
    return n, d, c


def load_feature_file(path) -> FeatureBatch:
    """Parse a feature file, validating arity and label range per line."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].strip():
        raise FeatureFileError("missing 'n d C' header", 1)
    head = lines[0].split()
    if len(head) != 3:
        raise FeatureFileError(f"header must be 'n d C', got {len(head)} fields", 1)
    try:
        n, d, c = (int(tok) for tok in head)
    except ValueError:
        raise FeatureFileError("header fields must be integers", 1) from None
    if n < 0 or d < 1 or c < 1:
        raise FeatureFileError("header requires n >= 0, d >= 1, C >= 1", 1)

    features = np.zeros((n, d))
    labels = np.zeros(n, dtype=np.int64)
    for i in range(n):
        line_no = i + 2
        if i + 1 >= len(lines):
            raise FeatureFileError(f"expected {n} data rows, file ends early", line_no)
        fields = lines[i + 1].split()
        if len(fields) != d + 1:
            raise FeatureFileError(
                f"expected {d} values and a label, got {len(fields)} fields", line_no
            )
        try:
            features[i] = [float(tok) for tok in fields[:d]]
            labels[i] = int(fields[d])
        except ValueError:
            raise FeatureFileError("non-numeric field", line_no) from None
        if not (0 <= labels[i] < c):
            raise FeatureFileError(f"label {labels[i]} outside [0, {c})", line_no)
    for j in range(n + 1, len(lines)):
        if lines[j].strip():
            raise FeatureFileError("unexpected content after declared rows", j + 1)
    return FeatureBatch(features, labels)


def write_feature_file(path, batch: FeatureBatch, num_classes: int | None = None) -> None:
    """Write a batch in the feature-file format with round-trip-exact reals."""
    if num_classes is None:
        num_classes = int(batch.labels.max()) + 1 if len(batch) else 1
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(batch)} {batch.feature_dim} {num_classes}\n")
        for row, label in zip(batch.features, batch.labels):
            values = " ".join(repr(float(v)) for v in row)
            fh.write(f"{values} {int(label)}\n")
