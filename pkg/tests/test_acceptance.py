"""Acceptance suite: one test per criterion, one PASS/FAIL line each.

Run ``pytest tests/test_acceptance.py -s -v`` to see the per-criterion
lines. Trend criteria run the synthetic benchmark (20 classes, d=32,
F'=16, F=32, 20 clients, 5 active per round, 200 rounds, alpha=1) over the
seed set {42, 21, 98}; expensive runs are cached and shared across
criteria, so the first criterion touching a configuration pays its cost.
"""

import time

import numpy as np

from cafkt.cli import main as cli_main
from cafkt.config import RunConfig
from cafkt.data import DomainSpec, dirichlet_partition, generate_domain
from cafkt.distill import PretrainConfig, alignment_report, pretrain
from cafkt.evaluation import concat_classifiers, topk_accuracy
from cafkt.federation import (
    ClientUpdate,
    FederationConfig,
    aggregate,
    build_client_states,
    cdb_apply,
    icp_apply,
    server_round_loop,
)
from cafkt.losses import classifier_ce_grads, cross_entropy, kd_loss, kd_term_grads
from cafkt.model import (
    ClassifierWeights,
    SyntheticEncoder,
    classifier_forward,
    l2_normalize,
    predict_probs,
    random_encoder,
    random_translator,
    student_embed,
    teacher_embed,
    zero_classifier,
)
from cafkt.privacy import DPConfig, clip_schedule, clip_update
from cafkt.rng import STREAM_INIT, derive_rng
from cafkt import pipeline
from tests_support import max_rel_error, numeric_grad

SEEDS = (42, 21, 98)

BENCHMARK = {
    "federate.num_clients": "20",
    "federate.active_per_round": "5",
    "federate.rounds": "200",
    "partition.alpha": "1.0",
}

_run_cache: dict = {}
_realizable_cache: dict = {}


def _report(num: int, name: str, ok: bool, elapsed: float, detail: str = ""):
    status = "PASS" if ok else "FAIL"
    print(f"[{status}] criterion {num:2d} ({elapsed:6.1f}s) {name}: {detail}")


def benchmark_run(seed, strategy="fedpromo", alpha=1.0, dropout=0.0, eps=None, domains=1, sigma=None):
    """Cached pretrain+federate for one benchmark configuration."""
    key = (seed, strategy, alpha, dropout, eps, domains, sigma)
    if key in _run_cache:
        return _run_cache[key]
    overrides = dict(BENCHMARK)
    overrides.update(
        seed=str(seed),
        **{
            "federate.strategy": strategy,
            "partition.alpha": str(alpha),
            "federate.dropout_prob": str(dropout),
            "domain.count": str(domains),
        },
    )
    if eps is not None:
        overrides["dp.epsilon"] = str(eps)
    if sigma is not None:
        overrides["domain.noise_sigma"] = str(sigma)
    cfg = RunConfig.load(overrides=overrides, env={})
    pre_key = ("pre", seed, domains, sigma)
    if pre_key not in _run_cache:
        _run_cache[pre_key] = pipeline.run_pretrain(cfg)
    pre = _run_cache[pre_key]
    fed = pipeline.run_federate(cfg, pre)
    _run_cache[key] = (cfg, pre, fed)
    return _run_cache[key]


def final_metric(seed, metric, **kw):
    _, _, fed = benchmark_run(seed, **kw)
    return getattr(fed.metrics[0].final(), metric) * 100.0


def mean_final(metric, **kw):
    return float(np.mean([final_metric(s, metric, **kw) for s in SEEDS]))


def realizable_run(seed):
    """Exactly realizable teacher: pretrain then the benchmark federation."""
    if seed in _realizable_cache:
        return _realizable_cache[seed]
    spec = DomainSpec(samples_per_class=63, zipf_exponent=0.0, seed=seed)
    train, val = generate_domain(spec)
    rng = derive_rng(seed, STREAM_INIT)
    student = random_encoder(16, 32, rng)
    t_star = random_translator(32, 16, rng).weight
    teacher = SyntheticEncoder(t_star @ student.weight)
    translator = random_translator(32, 16, derive_rng(seed, STREAM_INIT, 1))
    pre = pretrain(
        teacher,
        student,
        translator,
        zero_classifier(spec.num_classes, 32),
        train,
        PretrainConfig(epochs=60, batch_size=32),
        seed=seed,
    )
    alignment = alignment_report(teacher, pre.student, pre.translator, val)

    fed_cfg = RunConfig.load(overrides=dict(BENCHMARK, seed=str(seed)), env={}).federation_config()
    partition = dirichlet_partition(train.labels, fed_cfg.num_clients, 1.0, seed)
    feats = l2_normalize(student_embed(pre.student, pre.translator, train))
    clients = build_client_states(feats, train.labels, partition)
    hook = pipeline.make_eval_hook(teacher, pre.student, pre.translator, val)
    final, metrics = server_round_loop(fed_cfg, clients, pre.classifier, eval_hook=hook)
    _realizable_cache[seed] = (pre, alignment, final, metrics)
    return _realizable_cache[seed]


def test_criterion_01_cdb_invariance_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    worst_prob = worst_mean = worst_idem = 0.0
    for _ in range(1000):
        c = int(rng.integers(2, 12))
        f = int(rng.integers(1, 10))
        w = ClassifierWeights(rng.standard_normal((c, f)) * rng.uniform(0.1, 10))
        x = rng.standard_normal((1, f))
        before = predict_probs(classifier_forward(w, x))
        debiased = cdb_apply(w)
        after = predict_probs(classifier_forward(debiased, x))
        worst_prob = max(worst_prob, float(np.abs(before - after).max()))
        worst_mean = max(worst_mean, float(np.abs(debiased.weight.mean(axis=0)).max()))
        twice = cdb_apply(debiased)
        worst_idem = max(worst_idem, float(np.abs(twice.weight - debiased.weight).max()))
    elapsed = time.perf_counter() - t0
    ok = worst_prob <= 1e-9 and worst_idem <= 1e-12 and worst_mean <= 1e-12 and elapsed < 1.0
    _report(
        1,
        "class de-biasing invariance",
        ok,
        elapsed,
        f"prob_drift={worst_prob:.1e} idem={worst_idem:.1e} col_mean={worst_mean:.1e}",
    )
    assert worst_prob <= 1e-9
    assert worst_idem <= 1e-12
    assert worst_mean <= 1e-12
    assert elapsed < 1.0


def test_criterion_02_icp_boundary_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    freeze_ok = identity_ok = True
    for _ in range(200):
        c = int(rng.integers(2, 10))
        f = int(rng.integers(1, 8))
        cur = rng.standard_normal((c, f))
        prev = rng.standard_normal((c, f))
        active = set(int(i) for i in rng.choice(c, int(rng.integers(0, c)), replace=False))
        frozen = icp_apply(ClassifierWeights(cur), ClassifierWeights(prev), active, 0.0)
        inactive = sorted(set(range(c)) - active)
        freeze_ok &= np.array_equal(frozen.weight[inactive], prev[inactive])
        ident = icp_apply(ClassifierWeights(cur), ClassifierWeights(prev), active, 1.0)
        identity_ok &= np.array_equal(ident.weight, cur)
        eta = float(rng.uniform())
        blended = icp_apply(ClassifierWeights(cur), ClassifierWeights(prev), active, eta)
        expected = np.array(
            [cur[i] if i in active else eta * cur[i] + (1 - eta) * prev[i] for i in range(c)]
        )
        worst = max(worst, float(np.abs(blended.weight - expected).max()))
    elapsed = time.perf_counter() - t0
    ok = freeze_ok and identity_ok and worst <= 1e-15 and elapsed < 1.0
    _report(2, "inactive-class blend boundaries", ok, elapsed, f"blend_err={worst:.1e}")
    assert freeze_ok and identity_ok
    assert worst <= 1e-15
    assert elapsed < 1.0


def test_criterion_03_gradient_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        w0 = rng.standard_normal((4, 3))
        feats = rng.standard_normal((5, 3))
        labels = rng.integers(0, 4, 5)
        analytic, _ = classifier_ce_grads(ClassifierWeights(w0), feats, labels)
        numeric = numeric_grad(lambda w: cross_entropy(feats @ w.T, labels), w0)
        worst = max(worst, max_rel_error(analytic, numeric))
    for _ in range(100):
        f0 = rng.standard_normal((4, 3)) + 0.1
        o = rng.standard_normal((4, 3)) + 0.1
        _, g_l2, g_cos = kd_term_grads(f0, o)
        worst = max(worst, max_rel_error(g_l2, numeric_grad(lambda f: kd_loss(f, o).l2_term, f0)))
        worst = max(
            worst, max_rel_error(g_cos, numeric_grad(lambda f: kd_loss(f, o).cos_term, f0))
        )
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 10.0
    _report(3, "analytic gradients vs finite differences", ok, elapsed, f"max_rel={worst:.2e}")
    assert worst < 1e-4
    assert elapsed < 10.0


def test_criterion_04_aggregation_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    cfg = FederationConfig(num_clients=30, active_per_round=5, rounds=1, use_cdb=False)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 21))
        updates = [
            ClientUpdate(
                int(cid), ClassifierWeights(rng.standard_normal((4, 3))), int(rng.integers(1, 300))
            )
            for cid in rng.permutation(30)[:n]
        ]
        out = aggregate(updates, cfg, ClassifierWeights(np.zeros((4, 3))))
        num = np.zeros((4, 3))
        den = 0.0
        for u in updates:
            num += u.num_samples * u.weights.weight
            den += u.num_samples
        worst = max(worst, float(np.abs(out.weight - num / den).max()))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and elapsed < 1.0
    _report(4, "weighted-mean aggregation oracle", ok, elapsed, f"max_err={worst:.1e}")
    assert worst <= 1e-12
    assert elapsed < 1.0


def test_criterion_05_realizable_distillation():
    t0 = time.perf_counter()
    kds, coss = [], []
    for seed in SEEDS:
        pre, alignment, _, _ = realizable_run(seed)
        kds.append(pre.history[-1].kd_total)
        coss.append(alignment[0])
    elapsed = time.perf_counter() - t0
    ok = max(kds) < 1e-3 and min(coss) >= 0.999 and elapsed < 30.0
    _report(
        5,
        "realizable distillation convergence",
        ok,
        elapsed,
        f"kd_max={max(kds):.2e} cos_min={min(coss):.6f}",
    )
    assert max(kds) < 1e-3
    assert min(coss) >= 0.999
    assert elapsed < 30.0


def test_criterion_06_protocol_trend_fedpromo_vs_fedavg():
    t0 = time.perf_counter()
    promo = mean_final("server_top1", strategy="fedpromo")
    plain = mean_final("server_top1", strategy="fedavg")
    gap = promo - plain
    elapsed = time.perf_counter() - t0
    ok = gap >= 3.0 and elapsed < 120.0
    _report(
        6,
        "FedPromo vs FedAvg server accuracy",
        ok,
        elapsed,
        f"promo={promo:.1f} fedavg={plain:.1f} gap={gap:+.2f}pts",
    )
    assert gap >= 3.0, f"gap {gap:.2f} < 3 points"
    assert elapsed < 120.0


def test_criterion_07_server_plug_gap():
    t0 = time.perf_counter()
    gaps = []
    for seed in SEEDS:
        _, _, _, metrics = realizable_run(seed)
        last = metrics.final()
        gaps.append(abs(last.server_top1 - last.client_top1) * 100)
    elapsed = time.perf_counter() - t0
    ok = max(gaps) <= 0.5 and elapsed < 120.0
    _report(7, "aligned server-plug accuracy gap", ok, elapsed, f"max_gap={max(gaps):.3f}pts")
    assert max(gaps) <= 0.5
    assert elapsed < 120.0


def test_criterion_08_dp_trend():
    t0 = time.perf_counter()
    accs = [mean_final("server_top1", strategy="fedpromo")]
    for eps in (50, 10, 5, 2.5, 1):
        accs.append(mean_final("server_top1", strategy="fedpromo", eps=eps))
    monotone = all(b <= a + 1.0 for a, b in zip(accs, accs[1:]))

    # clipped norms never exceed the schedule, and the schedule starts at 12.6
    dp = DPConfig(enabled=True)
    rng = np.random.default_rng(4)
    clip_ok = clip_schedule(0, 200, dp) == 12.6
    for _ in range(500):
        r = int(rng.integers(0, 201))
        bound = clip_schedule(r, 200, dp)
        update = rng.standard_normal((20, 32)) * rng.uniform(0.01, 30)
        clip_ok &= float(np.linalg.norm(clip_update(update, bound))) <= bound + 1e-12
    elapsed = time.perf_counter() - t0
    ok = monotone and clip_ok and elapsed < 600.0
    _report(
        8,
        "privacy budget accuracy trend",
        ok,
        elapsed,
        "acc(inf..1)=" + "/".join(f"{a:.1f}" for a in accs),
    )
    assert monotone, f"accuracies not monotone within 1pt band: {accs}"
    assert clip_ok
    assert elapsed < 600.0


def test_criterion_09_dropout_robustness():
    t0 = time.perf_counter()
    base = mean_final("server_top1", strategy="fedpromo")
    degradations = {}
    for d in (0.1, 0.3, 0.5):
        degradations[d] = base - mean_final("server_top1", strategy="fedpromo", dropout=d)
    elapsed = time.perf_counter() - t0
    worst = max(degradations.values())
    ok = worst <= 2.0 and elapsed < 300.0
    _report(
        9,
        "uplink dropout robustness",
        ok,
        elapsed,
        " ".join(f"p={d}: {v:+.2f}" for d, v in degradations.items()),
    )
    assert worst <= 2.0, f"degradations {degradations}"
    assert elapsed < 300.0


def test_criterion_10_alpha_heterogeneity_trend():
    t0 = time.perf_counter()
    acc = {}
    for strategy in ("fedpromo", "fedavg"):
        for alpha in (0.1, 1.0, 10.0):
            acc[strategy, alpha] = mean_final("client_top1", strategy=strategy, alpha=alpha)
    ordering = all(
        acc[s, 0.1] < acc[s, 1.0] < acc[s, 10.0] for s in ("fedpromo", "fedavg")
    )
    promo_drop = (acc["fedpromo", 1.0] - acc["fedpromo", 0.1]) / acc["fedpromo", 1.0]
    avg_drop = (acc["fedavg", 1.0] - acc["fedavg", 0.1]) / acc["fedavg", 1.0]
    elapsed = time.perf_counter() - t0
    ok = ordering and promo_drop < avg_drop and elapsed < 300.0
    _report(
        10,
        "heterogeneity (alpha) ordering",
        ok,
        elapsed,
        f"promo={acc['fedpromo',0.1]:.1f}<{acc['fedpromo',1.0]:.1f}<{acc['fedpromo',10.0]:.1f} "
        f"fedavg={acc['fedavg',0.1]:.1f}<{acc['fedavg',1.0]:.1f}<{acc['fedavg',10.0]:.1f} "
        f"drops={promo_drop:.3f}<{avg_drop:.3f}",
    )
    assert ordering, f"accuracy not ordered in alpha: {acc}"
    assert promo_drop < avg_drop
    assert elapsed < 300.0


def test_criterion_11_multi_domain_concat():
    t0 = time.perf_counter()
    avg_gaps = []
    monotone_ok = True
    for seed in SEEDS:
        cfg, pre, fed = benchmark_run(seed, domains=2, sigma=1.0)
        multi = concat_classifiers(list(fed.decoders))
        gaps = []
        for i, dom in enumerate(pre.domains):
            feats = l2_normalize(teacher_embed(pre.teacher, dom.val))
            specific = topk_accuracy(feats @ fed.decoders[i].weight.T, dom.val.labels, 1)
            start, _ = multi.blocks[i]
            agnostic = topk_accuracy(feats @ multi.weights.weight.T, dom.val.labels + start, 1)
            monotone_ok &= agnostic <= specific + 1e-12
            gaps.append((specific - agnostic) * 100)
        avg_gaps.append(float(np.mean(gaps)))
    elapsed = time.perf_counter() - t0
    worst = max(avg_gaps)
    ok = monotone_ok and worst <= 10.0 and elapsed < 120.0
    _report(
        11,
        "multi-domain concatenation gap",
        ok,
        elapsed,
        f"avg_gaps={['%.2f' % g for g in avg_gaps]}",
    )
    assert monotone_ok
    assert worst <= 10.0, f"avg gaps {avg_gaps}"
    assert elapsed < 120.0


def test_criterion_12_determinism(tmp_path):
    t0 = time.perf_counter()
    args = ["--set", "seed=42"]
    for key, value in BENCHMARK.items():
        args += ["--set", f"{key}={value}"]

    def federate_into(name, *extra):
        out = tmp_path / name
        assert cli_main(["pretrain"] + args + ["--out", str(out)]) == 0
        assert cli_main(["federate"] + args + ["--out", str(out)] + list(extra)) == 0
        return (out / "metrics.csv").read_bytes(), (out / "final.ckpt").read_bytes()

    metrics_a, ckpt_a = federate_into("a")
    metrics_b, ckpt_b = federate_into("b")
    metrics_c, ckpt_c = federate_into("c", "--parallel")
    elapsed = time.perf_counter() - t0
    ok = metrics_a == metrics_b == metrics_c and ckpt_a == ckpt_b == ckpt_c and elapsed < 120.0
    _report(
        12,
        "bitwise run determinism (serial and parallel)",
        ok,
        elapsed,
        f"metrics_bytes={len(metrics_a)} ckpt_bytes={len(ckpt_a)}",
    )
    assert metrics_a == metrics_b
    assert ckpt_a == ckpt_b
    assert metrics_a == metrics_c
    assert ckpt_a == ckpt_c
    assert elapsed < 120.0
