"""Training objectives for the linear stack and their analytic gradients.

The distillation loss compares student and teacher embeddings with three
terms: mean absolute difference, mean squared difference, and mean
(1 - cosine similarity) over the batch. The first two are means over batch
and feature dimensions so magnitudes stay comparable across feature widths;
the cosine term is a mean over rows. Rows where either side has (near-)zero
norm contribute a fixed 1.0 to the cosine term, penalizing collapsed
features instead of producing NaN; their cosine gradient is zero.

Cross-entropy goes through a max-stabilized log-softmax. All gradients here
are exact for the bias-free linear decoder and are checked against central
finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, LabelError
from .model import NORM_EPSILON, ClassifierWeights, predict_probs


@dataclass(frozen=True)
class LossBreakdown:
    """Per-term view of the pretraining objective.

    ``total`` is always l1 + l2 + cos + lam * ce; plain distillation losses
    carry ce_term = 0 and lam = 0.
    """

    l1_term: float
    l2_term: float
    cos_term: float
    ce_term: float = 0.0
    lam: float = 0.0

    @property
    def kd_total(self) -> float:
        return self.l1_term + self.l2_term + self.cos_term

    @property
    def total(self) -> float:
        return self.kd_total + self.lam * self.ce_term


def _check_labels(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise LabelError("batch must be non-empty")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise LabelError(
            f"labels must lie in [0, {num_classes}), got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    return labels.astype(np.int64)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean over the batch of -log p[label]."""
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = _check_labels(labels, z.shape[1])
    logp = log_softmax(z)
    return float(-logp[np.arange(z.shape[0]), labels].mean())


def cross_entropy_grad_logits(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Gradient of cross_entropy w.r.t. the logits: (softmax - onehot) / B."""
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = _check_labels(labels, z.shape[1])
    g = predict_probs(z)
    g[np.arange(z.shape[0]), labels] -= 1.0
    return g / z.shape[0]


def classifier_ce_grads(
    w: ClassifierWeights, features: np.ndarray, labels: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of mean cross-entropy w.r.t. decoder weights and its input.

    ``features`` are the decoder inputs (already normalized when the
    normalization layer is in play). Returns (grad_w, grad_features) with
    shapes (C x F) and (B x F). grad_w[c] = mean_b (p_c - 1{y=c}) f_b.
    """
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[1] != w.feature_dim:
        raise DimensionError(
            f"features shape {feats.shape} incompatible with feature_dim {w.feature_dim}"
        )
    g_logits = cross_entropy_grad_logits(feats @ w.weight.T, labels)
    return g_logits.T @ feats, g_logits @ w.weight


def kd_loss(student: np.ndarray, teacher: np.ndarray) -> LossBreakdown:
    """Distillation distance between student and teacher embeddings."""
    f = np.atleast_2d(np.asarray(student, dtype=np.float64))
    o = np.atleast_2d(np.asarray(teacher, dtype=np.float64))
    if f.shape != o.shape:
        raise DimensionError(f"student shape {f.shape} != teacher shape {o.shape}")
    diff = f - o
    l1 = float(np.abs(diff).mean())
    l2 = float((diff * diff).mean())
    cos = float(_row_cosine_penalty(f, o).mean())
    return LossBreakdown(l1, l2, cos)


def _row_cosine_penalty(f: np.ndarray, o: np.ndarray) -> np.ndarray:
    fn = np.linalg.norm(f, axis=1)
    on = np.linalg.norm(o, axis=1)
    degenerate = (fn < NORM_EPSILON) | (on < NORM_EPSILON)
    denom = np.where(degenerate, 1.0, fn * on)
    sim = np.where(degenerate, 0.0, (f * o).sum(axis=1) / denom)
    return 1.0 - sim


def kd_term_grads(
    student: np.ndarray, teacher: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of the three distillation terms w.r.t. the student rows."""
    f = np.atleast_2d(np.asarray(student, dtype=np.float64))
    o = np.atleast_2d(np.asarray(teacher, dtype=np.float64))
    if f.shape != o.shape:
        raise DimensionError(f"student shape {f.shape} != teacher shape {o.shape}")
    b, d = f.shape
    diff = f - o
    g_l1 = np.sign(diff) / (b * d)
    g_l2 = 2.0 * diff / (b * d)

    fn = np.linalg.norm(f, axis=1, keepdims=True)
    on = np.linalg.norm(o, axis=1, keepdims=True)
    degenerate = (fn < NORM_EPSILON) | (on < NORM_EPSILON)
    fn_safe = np.where(degenerate, 1.0, fn)
    on_safe = np.where(degenerate, 1.0, on)
    sim = ((f * o).sum(axis=1, keepdims=True)) / (fn_safe * on_safe)
    # d(1 - cos)/df = -o/(|f||o|) + f cos/|f|^2, zero on degenerate rows
    g_cos = (-o / (fn_safe * on_safe) + f * sim / (fn_safe * fn_safe)) / b
    g_cos = np.where(degenerate, 0.0, g_cos)
    return g_l1, g_l2, g_cos


def kd_grad(student: np.ndarray, teacher: np.ndarray) -> np.ndarray:
    """Gradient of kd_loss(...).total w.r.t. the student embeddings."""
    g1, g2, gc = kd_term_grads(student, teacher)
    return g1 + g2 + gc


def pretrain_objective(
    student: np.ndarray,
    teacher: np.ndarray,
    logits: np.ndarray,
    labels: np.ndarray,
    lam: float,
) -> LossBreakdown:
    """Distillation terms plus lam-weighted cross-entropy."""
    kd = kd_loss(student, teacher)
    ce = cross_entropy(logits, labels)
    return LossBreakdown(kd.l1_term, kd.l2_term, kd.cos_term, ce, float(lam))


def l2_normalize_vjp(
    raw: np.ndarray, upstream: np.ndarray, epsilon: float = NORM_EPSILON
) -> np.ndarray:
    """Backpropagate ``upstream`` through row-wise l2_normalize at ``raw``.

    Pass-through rows (norm < epsilon) behave as identity.
    """
    raw = np.atleast_2d(np.asarray(raw, dtype=np.float64))
    up = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
    if raw.shape != up.shape:
        raise DimensionError(f"raw shape {raw.shape} != upstream shape {up.shape}")
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    small = norms < epsilon
    safe = np.where(small, 1.0, norms)
    z = raw / safe
    projected = (up - z * (z * up).sum(axis=1, keepdims=True)) / safe
    return np.where(small, up, projected)
