"""Encoders, translator, normalization, and the shared linear decoder.

All components are plain weight matrices acting on row-major
(batch x feature) float64 arrays. Instances are immutable after
construction and safe to share across threads; every forward pass is a
pure function of its inputs.

The teacher encoder maps inputs to the shared feature space R^F. The
student encoder maps inputs to a smaller space R^F'; composing it with the
translator lifts student features into R^F so the one decoder can serve
both paths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericError

# Rows with Euclidean norm below this pass through l2_normalize unchanged,
# so degenerate all-zero samples never produce NaNs.
NORM_EPSILON = 1e-12

_NONLINEARITIES = ("none", "tanh")


def _as_frozen_matrix(a, name: str) -> np.ndarray:
    out = np.array(a, dtype=np.float64)
    if out.ndim != 2:
        raise DimensionError(f"{name} must be a 2-d matrix, got shape {out.shape}")
    if out.size == 0:
        raise DimensionError(f"{name} must be non-empty")
    if not np.all(np.isfinite(out)):
        raise NumericError(f"{name} contains non-finite entries")
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class SyntheticEncoder:
    """Linear stand-in for a vision backbone: x -> weight @ x.

    ``nonlinearity`` optionally applies tanh to the output; the default is a
    pure linear map, which keeps teacher targets exactly realizable by a
    linear translator.
    """

    weight: np.ndarray
    nonlinearity: str = "none"

    def __post_init__(self):
        object.__setattr__(self, "weight", _as_frozen_matrix(self.weight, "encoder weight"))
        if self.nonlinearity not in _NONLINEARITIES:
            raise ValueError(f"nonlinearity must be one of {_NONLINEARITIES}")

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]


@dataclass(frozen=True)
class Translator:
    """Linear map from the student feature space R^F' into the shared R^F."""

    weight: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weight", _as_frozen_matrix(self.weight, "translator weight"))

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]


@dataclass(frozen=True)
class ClassifierWeights:
    """The shared linear decoder: a bias-free (num_classes x feature_dim) matrix.

    This is the only trainable object exchanged between clients and server.
    There is deliberately no bias vector: the de-biasing step removes the
    per-feature class mean, and a bias would reintroduce a per-class offset
    that the subtraction cannot touch.
    """

    weight: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weight", _as_frozen_matrix(self.weight, "classifier weight"))

    @property
    def num_classes(self) -> int:
        return self.weight.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.weight.shape[1]

    def replace(self, weight: np.ndarray) -> "ClassifierWeights":
        return ClassifierWeights(weight)


@dataclass(frozen=True)
class FeatureBatch:
    """Row-major samples: features (B x d) with integer labels (B,)."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        feats = np.array(self.features, dtype=np.float64)
        if feats.ndim != 2:
            raise DimensionError(f"features must be 2-d, got shape {feats.shape}")
        labels = np.array(self.labels, dtype=np.int64)
        if labels.ndim != 1 or labels.shape[0] != feats.shape[0]:
            raise DimensionError(
                f"labels shape {labels.shape} does not match {feats.shape[0]} feature rows"
            )
        if labels.size and labels.min() < 0:
            raise DimensionError("labels must be non-negative")
        feats.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: np.ndarray) -> "FeatureBatch":
        return FeatureBatch(self.features[indices], self.labels[indices])


def _encode(encoder: SyntheticEncoder, x: np.ndarray) -> np.ndarray:
    z = x @ encoder.weight.T
    if encoder.nonlinearity == "tanh":
        z = np.tanh(z)
    return z


def teacher_embed(encoder: SyntheticEncoder, batch: FeatureBatch) -> np.ndarray:
    """Embed a batch with the server-side (teacher) encoder, shape (B x F)."""
    if batch.feature_dim != encoder.in_dim:
        raise DimensionError(
            f"batch feature dim {batch.feature_dim} != encoder in_dim {encoder.in_dim}"
        )
    return _encode(encoder, batch.features)


def student_embed(
    encoder: SyntheticEncoder, translator: Translator, batch: FeatureBatch
) -> np.ndarray:
    """Embed a batch with the client path translator(student(x)), shape (B x F)."""
    if batch.feature_dim != encoder.in_dim:
        raise DimensionError(
            f"batch feature dim {batch.feature_dim} != encoder in_dim {encoder.in_dim}"
        )
    if encoder.out_dim != translator.in_dim:
        raise DimensionError(
            f"student out_dim {encoder.out_dim} != translator in_dim {translator.in_dim}"
        )
    return _encode(encoder, batch.features) @ translator.weight.T


def l2_normalize(features: np.ndarray, epsilon: float = NORM_EPSILON) -> np.ndarray:
    """Scale each row to unit Euclidean norm.

    Rows with norm below ``epsilon`` are returned unchanged rather than
    divided, so degenerate samples cannot poison downstream math.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    feats = np.asarray(features, dtype=np.float64)
    if not np.all(np.isfinite(feats)):
        raise NumericError("cannot normalize non-finite features")
    norms = np.linalg.norm(feats, axis=-1, keepdims=True)
    safe = np.where(norms < epsilon, 1.0, norms)
    return feats / safe


def classifier_forward(w: ClassifierWeights, features: np.ndarray) -> np.ndarray:
    """Logits for each sample: logits[b, c] = w[c] . features[b]."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[1] != w.feature_dim:
        raise DimensionError(
            f"features shape {feats.shape} incompatible with feature_dim {w.feature_dim}"
        )
    return feats @ w.weight.T


def predict_probs(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, stabilized by max subtraction."""
    z = np.asarray(logits, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def random_encoder(
    out_dim: int,
    in_dim: int,
    rng: np.random.Generator,
    nonlinearity: str = "none",
) -> SyntheticEncoder:
    """Gaussian encoder scaled by 1/sqrt(in_dim) so outputs stay O(|x|)."""
    w = rng.standard_normal((out_dim, in_dim)) / np.sqrt(in_dim)
    return SyntheticEncoder(w, nonlinearity)


def random_translator(out_dim: int, in_dim: int, rng: np.random.Generator) -> Translator:
    w = rng.standard_normal((out_dim, in_dim)) / np.sqrt(in_dim)
    return Translator(w)


def zero_classifier(num_classes: int, feature_dim: int) -> ClassifierWeights:
    return ClassifierWeights(np.zeros((num_classes, feature_dim)))


def random_classifier(
    num_classes: int, feature_dim: int, rng: np.random.Generator, scale: float = 0.01
) -> ClassifierWeights:
    return ClassifierWeights(scale * rng.standard_normal((num_classes, feature_dim)))
