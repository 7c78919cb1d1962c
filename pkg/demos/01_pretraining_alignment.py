"""Cross-architecture distillation: aligning a small encoder to a big one.

A frozen "teacher" encoder maps inputs to a 32-d feature space; a frozen
"student" encoder only reaches 16 dimensions. Pretraining fits a linear
translator so that translated student features imitate the teacher's, while
a shared linear decoder learns to classify the teacher's features. Because
the decoder only ever trains on teacher features, it transfers to the
student path exactly as well as the features align.

Run:  python3 demos/01_pretraining_alignment.py
Writes figures into demos/output/.
"""

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from cafkt import DomainSpec, PretrainConfig, alignment_report, generate_domain, pretrain
from cafkt.model import random_encoder, random_translator, zero_classifier
from cafkt.pipeline import evaluate_decoder
from cafkt.rng import STREAM_INIT, derive_rng

OUT = os.path.join(os.path.dirname(__file__), "output")
os.makedirs(OUT, exist_ok=True)
SEED = 42

# ------------------------------------------------------------------
# 1. A synthetic domain: 20 Gaussian classes with a long-tailed profile
# ------------------------------------------------------------------
spec = DomainSpec(seed=SEED)
train, val = generate_domain(spec)
print(f"domain: {len(train)} train / {len(val)} val samples, "
      f"{spec.num_classes} classes, d={spec.input_dim}")

# ------------------------------------------------------------------
# 2. Encoders: teacher 32-d, student 16-d, translator to be learned
# ------------------------------------------------------------------
teacher = random_encoder(32, spec.input_dim, derive_rng(SEED, STREAM_INIT, 0))
student = random_encoder(16, spec.input_dim, derive_rng(SEED, STREAM_INIT, 1))
translator = random_translator(32, 16, derive_rng(SEED, STREAM_INIT, 2))
decoder = zero_classifier(spec.num_classes, 32)

before_cos, before_l2 = alignment_report(teacher, student, translator, val)
print(f"alignment before pretraining: cos={before_cos:.4f}  l2={before_l2:.4f}")

# ------------------------------------------------------------------
# 3. Pretrain: decoder on teacher features, translator on the combined loss
# ------------------------------------------------------------------
cfg = PretrainConfig()  # 60 epochs, batch 64, lr 0.005 cosine, lam 0.5
result = pretrain(teacher, student, translator, decoder, train, cfg, seed=SEED)
after_cos, after_l2 = alignment_report(
    teacher, result.student, result.translator, val,
    dump_path=os.path.join(OUT, "embeddings.txt"),
)
print(f"alignment after pretraining:  cos={after_cos:.4f}  l2={after_l2:.4f}")

scores = evaluate_decoder(teacher, result.student, result.translator, result.classifier, val)
print("validation accuracy:",
      " ".join(f"{k}={v:.3f}" for k, v in sorted(scores.items())))

# ------------------------------------------------------------------
# 4. Loss curves: the three feature distances plus weighted cross-entropy
# ------------------------------------------------------------------
epochs = np.arange(1, len(result.history) + 1)
fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
for field, label in (("l1_term", "mean |F-O|"), ("l2_term", "mean (F-O)^2"),
                     ("cos_term", "1 - cos(F,O)")):
    ax1.semilogy(epochs, [getattr(h, field) for h in result.history], label=label)
ax1.set_xlabel("epoch")
ax1.set_title("feature distillation terms")
ax1.legend()
ax2.plot(epochs, [h.ce_term for h in result.history], color="tab:red")
ax2.set_xlabel("epoch")
ax2.set_title("teacher-path cross-entropy")
fig.tight_layout()
fig.savefig(os.path.join(OUT, "pretrain_losses.png"), dpi=120)
print("wrote", os.path.join(OUT, "pretrain_losses.png"))

# ------------------------------------------------------------------
# 5. A 2-d look at the aligned embedding spaces (PCA via SVD)
# ------------------------------------------------------------------
from cafkt.model import l2_normalize, student_embed, teacher_embed

t_feats = l2_normalize(teacher_embed(teacher, val))
s_feats = l2_normalize(student_embed(result.student, result.translator, val))
stacked = np.concatenate([t_feats, s_feats])
_, _, vt = np.linalg.svd(stacked - stacked.mean(axis=0), full_matrices=False)
t2, s2 = t_feats @ vt[:2].T, s_feats @ vt[:2].T

fig, ax = plt.subplots(figsize=(6, 5))
show = val.labels < 8  # a subset of classes keeps the plot readable
ax.scatter(t2[show, 0], t2[show, 1], c=val.labels[show], cmap="tab10",
           marker="o", s=18, alpha=0.7, label="teacher")
ax.scatter(s2[show, 0], s2[show, 1], c=val.labels[show], cmap="tab10",
           marker="s", s=18, alpha=0.7, label="student (translated)")
ax.set_title("normalized features, first two principal directions")
ax.legend()
fig.tight_layout()
fig.savefig(os.path.join(OUT, "alignment_scatter.png"), dpi=120)
print("wrote", os.path.join(OUT, "alignment_scatter.png"))
