"""Server-side cross-architecture pretraining.

Each batch makes two sequential updates. First the decoder takes a
cross-entropy step on normalized teacher features only. Then the translator
(and optionally the raw student encoder) takes a step on the distillation
terms plus weighted cross-entropy computed through the just-updated decoder,
which is held constant for this step: no gradient reaches the decoder from
the student branch. The teacher encoder is never touched.

Distillation compares raw (unnormalized) embeddings, so it aligns norms as
well as directions; only the decoder input is normalized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericError
from .losses import (
    LossBreakdown,
    classifier_ce_grads,
    kd_grad,
    l2_normalize_vjp,
    pretrain_objective,
)
from .model import (
    ClassifierWeights,
    FeatureBatch,
    SyntheticEncoder,
    Translator,
    l2_normalize,
    student_embed,
    teacher_embed,
)
from .optim import AdamState, adam_step, cosine_lr
from .rng import STREAM_PRETRAIN, derive_rng


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 60
    batch_size: int = 64
    lr_max: float = 0.005
    lam: float = 0.5
    train_student_encoder: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")


@dataclass(frozen=True)
class PretrainResult:
    translator: Translator
    student: SyntheticEncoder
    classifier: ClassifierWeights
    history: tuple[LossBreakdown, ...]


def epoch_batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Seeded shuffle cut into floor(n / batch_size) full batches."""
    perm = rng.permutation(n)
    return [perm[i * batch_size : (i + 1) * batch_size] for i in range(n // batch_size)]


def student_gradients(
    student_raw: np.ndarray,
    teacher_feats: np.ndarray,
    translator_weight: np.ndarray,
    frozen_classifier: ClassifierWeights,
    labels: np.ndarray,
    lam: float,
    inputs: np.ndarray | None = None,
    nonlinearity: str = "none",
    want_encoder: bool = False,
) -> tuple[LossBreakdown, np.ndarray, np.ndarray | None]:
    """Objective and exact gradients of the student-path step.

    The objective is the distillation distance between f = u @ T^T and the
    teacher features, plus lam * cross-entropy of the frozen decoder applied
    to normalized f. Returns (breakdown, grad wrt translator, grad wrt the
    raw student encoder weight or None). ``inputs`` is required for the
    encoder gradient; tanh encoders backpropagate through u = tanh(x W^T).
    """
    u = np.asarray(student_raw, dtype=np.float64)
    f = u @ translator_weight.T
    f_norm = l2_normalize(f)
    breakdown = pretrain_objective(
        f, teacher_feats, f_norm @ frozen_classifier.weight.T, labels, lam
    )
    _, grad_fnorm = classifier_ce_grads(frozen_classifier, f_norm, labels)
    g_f = kd_grad(f, teacher_feats) + lam * l2_normalize_vjp(f, grad_fnorm)
    grad_t = g_f.T @ u
    grad_e = None
    if want_encoder:
        if inputs is None:
            raise ValueError("encoder gradient needs the raw inputs")
        g_u = g_f @ translator_weight
        if nonlinearity == "tanh":
            g_u = g_u * (1.0 - u * u)
        grad_e = g_u.T @ np.asarray(inputs, dtype=np.float64)
    return breakdown, grad_t, grad_e


def _check_dims(teacher, student, translator, classifier, data):
    if teacher.in_dim != data.feature_dim or student.in_dim != data.feature_dim:
        raise DimensionError("encoder input dims must match the data")
    if translator.in_dim != student.out_dim:
        raise DimensionError("translator input dim must match student out_dim")
    if translator.out_dim != teacher.out_dim:
        raise DimensionError("translator output dim must match teacher out_dim")
    if classifier.feature_dim != teacher.out_dim:
        raise DimensionError("classifier feature_dim must match teacher out_dim")


def pretrain(
    teacher: SyntheticEncoder,
    student: SyntheticEncoder,
    translator: Translator,
    classifier: ClassifierWeights,
    data: FeatureBatch,
    cfg: PretrainConfig,
    seed: int = 0,
) -> PretrainResult:
    """Train decoder (teacher path) and translator (student path) jointly.

    The learning rate follows the cosine schedule over epochs starting at
    its peak. Raises NumericError, naming epoch and batch, if the objective
    ever goes non-finite.
    """
    _check_dims(teacher, student, translator, classifier, data)
    if len(data) == 0:
        raise ValueError("pretraining data is empty")

    teacher_feats = teacher_embed(teacher, data)
    teacher_norm = l2_normalize(teacher_feats)
    student_raw = None  # cache is valid only while the student stays frozen
    if not cfg.train_student_encoder:
        student_raw = _encode_raw(student, data.features)

    w = classifier.weight.copy()
    t_w = translator.weight.copy()
    e_w = student.weight.copy()
    adam_w = AdamState.zeros(w.shape)
    adam_t = AdamState.zeros(t_w.shape)
    adam_e = AdamState.zeros(e_w.shape)

    history: list[LossBreakdown] = []
    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg.epochs, cfg.lr_max)
        rng = derive_rng(seed, STREAM_PRETRAIN, epoch)
        batches = epoch_batches(len(data), cfg.batch_size, rng)
        sums = np.zeros(4)
        for batch_no, idx in enumerate(batches):
            y = data.labels[idx]
            o_norm = teacher_norm[idx]

            # Decoder learns from the teacher path only, before the student step.
            grad_w, _ = classifier_ce_grads(ClassifierWeights(w), o_norm, y)
            w, adam_w = adam_step(w, grad_w, adam_w, lr)

            if cfg.train_student_encoder:
                u = _apply_encoder(e_w, student.nonlinearity, data.features[idx])
            else:
                u = student_raw[idx]
            breakdown, grad_t, grad_e = student_gradients(
                u,
                teacher_feats[idx],
                t_w,
                ClassifierWeights(w),
                y,
                cfg.lam,
                inputs=data.features[idx],
                nonlinearity=student.nonlinearity,
                want_encoder=cfg.train_student_encoder,
            )
            if not np.isfinite(breakdown.total):
                raise NumericError(
                    f"non-finite loss at epoch {epoch + 1}, batch {batch_no + 1}"
                )
            sums += (
                breakdown.l1_term,
                breakdown.l2_term,
                breakdown.cos_term,
                breakdown.ce_term,
            )
            if cfg.train_student_encoder:
                e_w, adam_e = adam_step(e_w, grad_e, adam_e, lr)
            t_w, adam_t = adam_step(t_w, grad_t, adam_t, lr)

        if batches:
            sums /= len(batches)
            history.append(LossBreakdown(sums[0], sums[1], sums[2], sums[3], cfg.lam))
        else:
            # Dataset smaller than one batch: log the objective without stepping.
            u = _apply_encoder(e_w, student.nonlinearity, data.features)
            f = u @ t_w.T
            logits = l2_normalize(f) @ w.T
            history.append(
                pretrain_objective(f, teacher_feats, logits, data.labels, cfg.lam)
            )

    trained_student = (
        SyntheticEncoder(e_w, student.nonlinearity) if cfg.train_student_encoder else student
    )
    return PretrainResult(Translator(t_w), trained_student, ClassifierWeights(w), tuple(history))


def _encode_raw(encoder: SyntheticEncoder, x: np.ndarray) -> np.ndarray:
    return _apply_encoder(encoder.weight, encoder.nonlinearity, x)


def _apply_encoder(weight: np.ndarray, nonlinearity: str, x: np.ndarray) -> np.ndarray:
    z = x @ weight.T
    if nonlinearity == "tanh":
        z = np.tanh(z)
    return z


def alignment_report(
    teacher: SyntheticEncoder,
    student: SyntheticEncoder,
    translator: Translator,
    data: FeatureBatch,
    dump_path=None,
) -> tuple[float, float]:
    """(mean cosine, mean L2 distance) between normalized student/teacher features.

    When ``dump_path`` is given, raw embeddings of both paths are written as
    lines of ``tag class_id v_1 ... v_F`` for external projection tools.
    """
    teacher_feats = teacher_embed(teacher, data)
    student_feats = student_embed(student, translator, data)
    t_norm = l2_normalize(teacher_feats)
    s_norm = l2_normalize(student_feats)
    cos = float((s_norm * t_norm).sum(axis=1).mean())
    dist = float(np.linalg.norm(s_norm - t_norm, axis=1).mean())
    if dump_path is not None:
        write_embeddings(
            dump_path,
            [("teacher", data.labels, teacher_feats), ("student", data.labels, student_feats)],
        )
    return cos, dist


def write_embeddings(path, tagged: list[tuple[str, np.ndarray, np.ndarray]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for tag, labels, matrix in tagged:
            for label, row in zip(labels, matrix):
                values = " ".join(repr(float(v)) for v in row)
                fh.write(f"{tag} {int(label)} {values}\n")
