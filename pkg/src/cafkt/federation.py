"""Federated training of the shared linear decoder.

Protocol outline, per round r = 1..R:

* the server computes the round learning rate from the cosine schedule and
  samples the active client subset (both deterministic in the seed),
* each active client initializes its local decoder from the incoming global
  one and runs ``local_epochs`` epochs of Adam on cross-entropy over its
  private features; after every epoch, rows of classes it did not see this
  epoch are blended back toward the previous epoch's snapshot
  (inactive-class preservation, weight eta on the new value),
* after the last epoch the client removes the per-feature mean over classes
  from its decoder (class de-biasing) and uplinks it,
* the server drops each uplink independently with ``dropout_prob``,
  optionally clips and noises the surviving updates for differential
  privacy, aggregates them (sample-weighted mean, optionally blended into
  the previous global by EMA), and de-biases the aggregate again.

Clients never touch their encoder; their datasets here are already
decoder-ready feature batches. Client rounds are pure functions of
(seed, round, client_id, incoming decoder), and updates merge in client-id
order, so serial and parallel execution are bitwise identical.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import AggregationError, DimensionError
from .evaluation import RoundRecord, RunMetrics
from .model import ClassifierWeights, FeatureBatch
from .optim import AdamState, adam_step, cosine_lr
from .privacy import (
    DPConfig,
    clip_schedule,
    clip_update,
    gaussian_mechanism,
    noise_sigma,
    sensitivity,
)
from .rng import STREAM_CLIENT, STREAM_DROPOUT, STREAM_NOISE, STREAM_SAMPLING, derive_rng

AGGREGATIONS = ("fedavg", "fedavg_ema", "fedprox")
WEIGHTINGS = ("samples", "uniform")
ACTIVE_SCOPES = ("epoch", "last_batch")


@dataclass(frozen=True)
class FederationConfig:
    """All protocol hyperparameters for one federation."""

    num_clients: int = 100
    active_per_round: int = 10
    rounds: int = 500
    local_epochs: int = 10
    eta: float = 0.05
    batch_size: int = 64
    lr_max: float = 0.005
    aggregation: str = "fedavg"
    weighting: str = "samples"
    ema_rate: float = 0.5
    fedprox_mu: float = 0.01
    use_icp: bool = True
    use_cdb: bool = True
    active_scope: str = "epoch"
    dropout_prob: float = 0.0
    seed: int = 42
    dp: DPConfig = field(default_factory=DPConfig)

    def __post_init__(self):
        if not 1 <= self.active_per_round <= self.num_clients:
            raise ValueError("need 1 <= active_per_round <= num_clients")
        if self.rounds < 1 or self.local_epochs < 1 or self.batch_size < 1:
            raise ValueError("rounds, local_epochs, batch_size must be positive")
        if not 0 <= self.eta <= 1:
            raise ValueError("eta must lie in [0, 1]")
        if not 0 <= self.dropout_prob < 1:
            raise ValueError("dropout_prob must lie in [0, 1)")
        if not 0 <= self.ema_rate <= 1:
            raise ValueError("ema_rate must lie in [0, 1]")
        if self.fedprox_mu < 0:
            raise ValueError("fedprox_mu must be non-negative")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}")
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"weighting must be one of {WEIGHTINGS}")
        if self.active_scope not in ACTIVE_SCOPES:
            raise ValueError(f"active_scope must be one of {ACTIVE_SCOPES}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass(frozen=True)
class ClientState:
    """A client's private, decoder-ready features and labels.

    The per-round RNG and the previous-epoch decoder snapshot used by
    inactive-class preservation are derived inside ``client_round``; they
    are pure functions of (seed, round, client_id) and of the incoming
    decoder respectively, so no mutable state lives here.
    """

    client_id: int
    data: FeatureBatch

    @property
    def num_samples(self) -> int:
        return len(self.data)


@dataclass(frozen=True)
class ClientUpdate:
    client_id: int
    weights: ClassifierWeights
    num_samples: int


def build_client_states(
    features: np.ndarray, labels: np.ndarray, partition
) -> list[ClientState]:
    """Slice a decoder-ready feature matrix into per-client states."""
    states = []
    for k in range(partition.num_clients):
        idx = partition.client_indices(k)
        states.append(ClientState(k, FeatureBatch(features[idx], labels[idx])))
    return states


def icp_apply(
    current: ClassifierWeights,
    previous: ClassifierWeights,
    active: frozenset[int] | set[int],
    eta: float,
) -> ClassifierWeights:
    """Blend rows of inactive classes toward the previous snapshot.

    Rows of classes in ``active`` pass through untouched; every other row
    becomes eta * current + (1 - eta) * previous.
    """
    if current.weight.shape != previous.weight.shape:
        raise DimensionError(
            f"decoder shapes differ: {current.weight.shape} vs {previous.weight.shape}"
        )
    if not 0 <= eta <= 1:
        raise ValueError("eta must lie in [0, 1]")
    num_classes = current.num_classes
    idx = np.fromiter((int(c) for c in active), dtype=np.int64, count=len(active))
    if idx.size and (idx.min() < 0 or idx.max() >= num_classes):
        raise ValueError(f"active class index outside [0, {num_classes})")
    inactive = np.ones(num_classes, dtype=bool)
    inactive[idx] = False
    out = current.weight.copy()
    out[inactive] = eta * current.weight[inactive] + (1.0 - eta) * previous.weight[inactive]
    return ClassifierWeights(out)


def cdb_apply(w: ClassifierWeights) -> ClassifierWeights:
    """Subtract the per-feature mean over classes from every row.

    Shifts every logit vector by one sample-dependent constant, so single
    predictions are unchanged; the effect on accuracy comes only through
    training dynamics. Idempotent.
    """
    return ClassifierWeights(w.weight - w.weight.mean(axis=0))


def fedprox_penalty(
    local: ClassifierWeights, global_ref: ClassifierWeights, mu: float
) -> tuple[float, np.ndarray]:
    """Proximal term (mu/2)||w - w_global||^2 and its gradient mu (w - w_global)."""
    if local.weight.shape != global_ref.weight.shape:
        raise DimensionError("local and global decoders must share a shape")
    if mu < 0:
        raise ValueError("mu must be non-negative")
    diff = local.weight - global_ref.weight
    return 0.5 * mu * float((diff * diff).sum()), mu * diff


def sample_active(r: int, cfg: FederationConfig) -> tuple[int, ...]:
    """Uniform sample of active_per_round distinct client ids, sorted."""
    rng = derive_rng(cfg.seed, STREAM_SAMPLING, r)
    ids = rng.choice(cfg.num_clients, size=cfg.active_per_round, replace=False)
    return tuple(sorted(int(i) for i in ids))


def survives_uplink(seed: int, r: int, client_id: int, dropout_prob: float) -> bool:
    """Deterministic per-(round, client) uplink survival draw."""
    if dropout_prob <= 0:
        return True
    rng = derive_rng(seed, STREAM_DROPOUT, r, client_id)
    return bool(rng.random() >= dropout_prob)


def client_round(
    state: ClientState,
    incoming: ClassifierWeights,
    r: int,
    lr: float,
    cfg: FederationConfig,
) -> ClientUpdate:
    """One client's local optimization for round ``r``.

    An empty local dataset returns the incoming decoder unchanged with a
    zero sample count. Otherwise the client runs ``local_epochs`` epochs of
    floor(n / batch_size) Adam steps on cross-entropy (plus the proximal
    term under fedprox), applies the inactive-class blend per epoch, and
    de-biases once at the end.
    """
    n = state.num_samples
    if n == 0:
        return ClientUpdate(state.client_id, incoming, 0)
    if state.data.feature_dim != incoming.feature_dim:
        raise DimensionError(
            f"client features dim {state.data.feature_dim} != decoder "
            f"feature_dim {incoming.feature_dim}"
        )
    rng = derive_rng(cfg.seed, STREAM_CLIENT, r, state.client_id)
    feats = state.data.features
    labels = state.data.labels
    local = incoming
    snapshot = incoming
    adam = AdamState.zeros(incoming.weight.shape)
    num_batches = n // cfg.batch_size
    prox = cfg.aggregation == "fedprox" and cfg.fedprox_mu > 0

    for _ in range(cfg.local_epochs):
        perm = rng.permutation(n)
        active: set[int] = set()
        for b in range(num_batches):
            idx = perm[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            if cfg.active_scope == "last_batch":
                active = set(int(c) for c in np.unique(labels[idx]))
            else:
                active.update(int(c) for c in np.unique(labels[idx]))
            grad = _ce_grad(local.weight, feats[idx], labels[idx])
            if prox:
                grad = grad + cfg.fedprox_mu * (local.weight - incoming.weight)
            new_w, adam = adam_step(local.weight, grad, adam, lr)
            local = ClassifierWeights(new_w)
        if cfg.use_icp:
            local = icp_apply(local, snapshot, active, cfg.eta)
        snapshot = local

    if cfg.use_cdb:
        local = cdb_apply(local)
    return ClientUpdate(state.client_id, local, n)


def _ce_grad(weight: np.ndarray, feats: np.ndarray, labels: np.ndarray) -> np.ndarray:
    logits = feats @ weight.T
    shifted = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(shifted)
    p /= p.sum(axis=1, keepdims=True)
    p[np.arange(labels.shape[0]), labels] -= 1.0
    return (p.T @ feats) / labels.shape[0]


def aggregate(
    updates: list[ClientUpdate],
    cfg: FederationConfig,
    previous_global: ClassifierWeights,
) -> ClassifierWeights:
    """Merge surviving client decoders into a new global one.

    Sample-count-weighted mean by default (uniform available), EMA blend
    toward the previous global under fedavg_ema, then server-side
    de-biasing when enabled. An empty update list (or one with zero total
    weight) returns ``previous_global`` untouched; callers flag such rounds
    as skipped.
    """
    if not updates:
        return previous_global
    shape = previous_global.weight.shape
    for u in updates:
        if u.weights.weight.shape != shape:
            raise DimensionError("update shape does not match the global decoder")
    ordered = sorted(updates, key=lambda u: u.client_id)
    if cfg.weighting == "samples":
        weights = np.array([u.num_samples for u in ordered], dtype=np.float64)
    else:
        weights = np.ones(len(ordered))
    total = weights.sum()
    if total == 0:
        return previous_global
    acc = np.zeros(shape)
    for wt, u in zip(weights, ordered):
        acc += wt * u.weights.weight
    acc /= total
    if cfg.aggregation == "fedavg_ema":
        acc = cfg.ema_rate * acc + (1.0 - cfg.ema_rate) * previous_global.weight
    result = ClassifierWeights(acc)
    if cfg.use_cdb:
        result = cdb_apply(result)
    return result


def _round_is_aggregable(updates: list[ClientUpdate], cfg: FederationConfig) -> bool:
    if not updates:
        return False
    if cfg.weighting == "samples":
        return sum(u.num_samples for u in updates) > 0
    return True


def server_round_loop(
    cfg: FederationConfig,
    clients: list[ClientState],
    initial: ClassifierWeights,
    eval_hook=None,
    max_workers: int | None = None,
) -> tuple[ClassifierWeights, RunMetrics]:
    """Run the full R-round protocol from the pretrained decoder.

    ``eval_hook(round, decoder)``, when given, returns a mapping with any of
    client_top1/client_top5/server_top1/server_top5 to record. Setting
    ``max_workers`` executes client rounds in a thread pool; results are
    identical to serial execution. Raises AggregationError if every round
    was skipped (all uplinks lost).
    """
    if len(clients) != cfg.num_clients:
        raise ValueError(f"expected {cfg.num_clients} clients, got {len(clients)}")
    by_id = {c.client_id: c for c in clients}
    if len(by_id) != len(clients):
        raise ValueError("client ids must be unique")

    nonempty = [c.num_samples for c in clients if c.num_samples > 0]
    min_client = min(nonempty) if nonempty else cfg.dp.min_client_size

    global_w = initial
    metrics = RunMetrics()
    successes = 0
    for r in range(1, cfg.rounds + 1):
        lr = cosine_lr(r, cfg.rounds, cfg.lr_max)
        actives = sample_active(r, cfg)
        if max_workers:
            with ThreadPoolExecutor(max_workers=max_workers) as pool:
                produced = list(
                    pool.map(lambda cid: client_round(by_id[cid], global_w, r, lr, cfg), actives)
                )
        else:
            produced = [client_round(by_id[cid], global_w, r, lr, cfg) for cid in actives]

        clip = sigma = None
        delta_s = None
        if cfg.dp.enabled:
            clip = clip_schedule(r, cfg.rounds, cfg.dp)
            delta_s = sensitivity(clip, min_client)
            sigma = noise_sigma(delta_s, cfg.dp.epsilon, cfg.dp.delta)

        updates = []
        for upd in produced:
            if cfg.dropout_prob > 0 and not survives_uplink(
                cfg.seed, r, upd.client_id, cfg.dropout_prob
            ):
                continue
            if cfg.dp.enabled:
                delta = clip_update(upd.weights.weight - global_w.weight, clip)
                noisy = gaussian_mechanism(
                    delta,
                    delta_s,
                    cfg.dp.epsilon,
                    cfg.dp.delta,
                    derive_rng(cfg.seed, STREAM_NOISE, r, upd.client_id),
                )
                upd = ClientUpdate(
                    upd.client_id,
                    ClassifierWeights(global_w.weight + noisy),
                    upd.num_samples,
                )
            updates.append(upd)

        if _round_is_aggregable(updates, cfg):
            global_w = aggregate(updates, cfg, global_w)
            successes += 1
        else:
            metrics.skipped_rounds += 1

        scores = dict(eval_hook(r, global_w)) if eval_hook is not None else {}
        metrics.records.append(
            RoundRecord(
                round=r,
                lr=lr,
                clip_norm=clip,
                sigma=sigma,
                client_top1=scores.get("client_top1"),
                client_top5=scores.get("client_top5"),
                server_top1=scores.get("server_top1"),
                server_top5=scores.get("server_top5"),
            )
        )

    if successes == 0:
        raise AggregationError(
            f"all {cfg.rounds} rounds were skipped; no aggregation succeeded"
        )
    return global_w, metrics
