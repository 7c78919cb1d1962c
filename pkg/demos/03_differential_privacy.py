"""Differential privacy on the uplink: clipping schedule and the price of epsilon.

Before transmission each client clips its decoder update to a round-scheduled
Frobenius bound and adds Gaussian noise calibrated to (epsilon, delta) with
sensitivity 2 * bound / min_k |D_k|. The schedule plateaus at 12.6 and then
follows the squared-cosine decay of the learning rate, so late rounds move
(and leak) less.

Run:  python3 demos/03_differential_privacy.py
"""

import math
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from cafkt import DPConfig, clip_schedule, sensitivity
from cafkt.config import RunConfig
from cafkt.privacy import noise_sigma
from cafkt import pipeline

OUT = os.path.join(os.path.dirname(__file__), "output")
os.makedirs(OUT, exist_ok=True)

# ------------------------------------------------------------------
# 1. The clipping-norm schedule
# ------------------------------------------------------------------
dp = DPConfig(enabled=True, epsilon=10.0)
rounds = 500
values = [clip_schedule(r, rounds, dp) for r in range(rounds + 1)]
fig, ax = plt.subplots(figsize=(6.5, 4))
ax.plot(values)
ax.axhline(dp.clip_hat, ls="--", c="gray", lw=0.8)
ax.set_xlabel("round")
ax.set_ylabel("clipping norm")
ax.set_title("plateau at 12.6, then squared-cosine decay to 0")
fig.tight_layout()
fig.savefig(os.path.join(OUT, "clip_schedule.png"), dpi=120)
print("wrote", os.path.join(OUT, "clip_schedule.png"))

# ------------------------------------------------------------------
# 2. Sensitivity and noise scale at the plateau
# ------------------------------------------------------------------
delta_s = sensitivity(dp.clip_hat, dp.min_client_size)
print(f"sensitivity at the plateau: 2*{dp.clip_hat}/{dp.min_client_size} = {delta_s:.6f}")
for eps in (50, 10, 5, 2.5, 1):
    print(f"  epsilon={eps:>4}: sigma = {noise_sigma(delta_s, eps, dp.delta):.5f}")

# ------------------------------------------------------------------
# 3. End to end: accuracy as the budget tightens (one seed for speed)
# ------------------------------------------------------------------
BASE = {
    "seed": "42",
    "federate.num_clients": "20",
    "federate.active_per_round": "5",
    "federate.rounds": "200",
}
epsilons = [math.inf, 50, 10, 5, 2.5, 1]
accs = []
for eps in epsilons:
    overrides = dict(BASE)
    if math.isfinite(eps):
        overrides["dp.epsilon"] = str(eps)
    cfg = RunConfig.load(overrides=overrides, env={})
    pre = pipeline.run_pretrain(cfg)
    fed = pipeline.run_federate(cfg, pre)
    last = fed.metrics[0].final()
    accs.append(last.server_top1)
    sigma1 = fed.metrics[0].records[0].sigma
    print(f"epsilon={eps}: server_top1={last.server_top1:.3f} (round-1 sigma={sigma1})")

fig, ax = plt.subplots(figsize=(6.5, 4))
ticks = ["no DP" if math.isinf(e) else str(e) for e in epsilons]
ax.bar(ticks, accs, color="tab:blue")
ax.set_xlabel("epsilon (delta = 1e-5)")
ax.set_ylabel("final server top-1")
ax.set_title("tighter budgets buy privacy with accuracy")
fig.tight_layout()
fig.savefig(os.path.join(OUT, "dp_tradeoff.png"), dpi=120)
print("wrote", os.path.join(OUT, "dp_tradeoff.png"))
