"""Experiment orchestration shared by the CLI, demos, and acceptance suite.

Wires the pieces together for a run described by a RunConfig: synthesize or
load the domains, build the frozen encoders, pretrain per domain, then
partition each domain across its client group and federate its decoder.
Encoders (teacher and raw student) are shared across domains; every domain
gets its own translator, decoder, partition, and federation seed.
"""

from __future__ import annotations

from dataclasses import dataclass

from .config import RunConfig
from .data import (
    dirichlet_partition,
    generate_domain,
    load_feature_file,
    read_feature_header,
)
from .distill import PretrainResult, alignment_report, pretrain
from .evaluation import (
    RunMetrics,
    accuracy_pair,
    confusion_matrix,
    predictions,
    weight_self_similarity,
)
from .federation import build_client_states, server_round_loop
from .model import (
    ClassifierWeights,
    FeatureBatch,
    SyntheticEncoder,
    Translator,
    l2_normalize,
    random_classifier,
    random_encoder,
    random_translator,
    student_embed,
    teacher_embed,
    zero_classifier,
)
from .rng import STREAM_INIT, derive_rng


@dataclass(frozen=True)
class DomainData:
    index: int
    num_classes: int
    train: FeatureBatch
    val: FeatureBatch


@dataclass(frozen=True)
class PretrainArtifacts:
    teacher: SyntheticEncoder
    student: SyntheticEncoder
    domains: tuple[DomainData, ...]
    results: tuple[PretrainResult, ...]
    alignments: tuple[tuple[float, float], ...]
    final_evals: tuple[dict[str, float], ...]


@dataclass(frozen=True)
class FederationArtifacts:
    decoders: tuple[ClassifierWeights, ...]
    metrics: tuple[RunMetrics, ...]


def build_encoders(cfg: RunConfig, input_dim: int) -> tuple[SyntheticEncoder, SyntheticEncoder]:
    """Frozen teacher and raw student encoders derived from the run seed."""
    nonlinearity = str(cfg.get("encoder.nonlinearity"))
    teacher = random_encoder(
        int(cfg.get("encoder.feature_dim")), input_dim, derive_rng(cfg.seed, STREAM_INIT, 0),
        nonlinearity,
    )
    student = random_encoder(
        int(cfg.get("encoder.student_dim")), input_dim, derive_rng(cfg.seed, STREAM_INIT, 1),
        nonlinearity,
    )
    return teacher, student


def load_domains(cfg: RunConfig) -> list[DomainData]:
    if cfg.uses_feature_files:
        train_path = str(cfg.get("domain.train_file"))
        val_path = str(cfg.get("domain.val_file"))
        _, _, c_train = read_feature_header(train_path)
        _, _, c_val = read_feature_header(val_path)
        if c_train != c_val:
            raise ValueError(
                f"train/val feature files disagree on class count: {c_train} vs {c_val}"
            )
        return [DomainData(0, c_train, load_feature_file(train_path), load_feature_file(val_path))]
    domains = []
    for spec in cfg.domain_specs():
        train, val = generate_domain(spec)
        domains.append(DomainData(spec.domain_id, spec.num_classes, train, val))
    return domains


def initial_translator(cfg: RunConfig, domain_idx: int) -> Translator:
    return random_translator(
        int(cfg.get("encoder.feature_dim")),
        int(cfg.get("encoder.student_dim")),
        derive_rng(cfg.seed, STREAM_INIT, 2 + domain_idx),
    )


def run_pretrain(cfg: RunConfig, domains: list[DomainData] | None = None) -> PretrainArtifacts:
    """Pretrain every domain's translator and decoder on its train split."""
    domains = load_domains(cfg) if domains is None else domains
    teacher, student = build_encoders(cfg, domains[0].train.feature_dim)
    pcfg = cfg.pretrain_config()
    results = []
    alignments = []
    final_evals = []
    for dom in domains:
        result = pretrain(
            teacher,
            student,
            initial_translator(cfg, dom.index),
            zero_classifier(dom.num_classes, teacher.out_dim),
            dom.train,
            pcfg,
            seed=cfg.seed,
        )
        results.append(result)
        alignments.append(
            alignment_report(teacher, result.student, result.translator, dom.val)
        )
        final_evals.append(
            evaluate_decoder(teacher, result.student, result.translator, result.classifier, dom.val)
        )
    return PretrainArtifacts(
        teacher, student, tuple(domains), tuple(results), tuple(alignments), tuple(final_evals)
    )


def evaluate_decoder(
    teacher: SyntheticEncoder,
    student: SyntheticEncoder,
    translator: Translator,
    decoder: ClassifierWeights,
    batch: FeatureBatch,
) -> dict[str, float]:
    """Top-1/top-5 on both the proxy (client) and teacher (server) paths."""
    client_logits = l2_normalize(student_embed(student, translator, batch)) @ decoder.weight.T
    server_logits = l2_normalize(teacher_embed(teacher, batch)) @ decoder.weight.T
    c1, c5 = accuracy_pair(client_logits, batch.labels)
    s1, s5 = accuracy_pair(server_logits, batch.labels)
    return {"client_top1": c1, "client_top5": c5, "server_top1": s1, "server_top5": s5}


def make_eval_hook(
    teacher: SyntheticEncoder,
    student: SyntheticEncoder,
    translator: Translator,
    val: FeatureBatch,
):
    """Per-round accuracy recorder with embeddings precomputed once."""
    z_client = l2_normalize(student_embed(student, translator, val))
    z_server = l2_normalize(teacher_embed(teacher, val))
    labels = val.labels

    def hook(_round: int, decoder: ClassifierWeights):
        c1, c5 = accuracy_pair(z_client @ decoder.weight.T, labels)
        s1, s5 = accuracy_pair(z_server @ decoder.weight.T, labels)
        return {
            "client_top1": c1,
            "client_top5": c5,
            "server_top1": s1,
            "server_top5": s5,
        }

    return hook


def federate_domain(
    cfg: RunConfig,
    teacher: SyntheticEncoder,
    student: SyntheticEncoder,
    translator: Translator,
    initial_decoder: ClassifierWeights,
    dom: DomainData,
    record_matrices: bool = True,
) -> tuple[ClassifierWeights, RunMetrics]:
    """Partition one domain across its clients and run the federation."""
    fed_cfg = cfg.federation_config(dom.index)
    part_seed = cfg.seed if cfg.num_domains == 1 else fed_cfg.seed
    partition = dirichlet_partition(
        dom.train.labels, fed_cfg.num_clients, float(cfg.get("partition.alpha")), part_seed
    )
    decoder_inputs = l2_normalize(student_embed(student, translator, dom.train))
    clients = build_client_states(decoder_inputs, dom.train.labels, partition)
    hook = make_eval_hook(teacher, student, translator, dom.val)
    max_workers = 4 if bool(cfg.get("federate.parallel")) else None
    final, metrics = server_round_loop(
        fed_cfg, clients, initial_decoder, eval_hook=hook, max_workers=max_workers
    )
    if record_matrices:
        server_logits = l2_normalize(teacher_embed(teacher, dom.val)) @ final.weight.T
        metrics.confusion = confusion_matrix(
            predictions(server_logits), dom.val.labels, dom.num_classes
        )
        metrics.self_similarity = weight_self_similarity(final)
    return final, metrics


def initial_decoder_for(cfg: RunConfig, pre: PretrainResult | None, dom: DomainData) -> ClassifierWeights:
    """Pretrained decoder by default; seeded random under ``--init random``."""
    if str(cfg.get("federate.init")) == "random" or pre is None:
        rng = derive_rng(cfg.seed, STREAM_INIT, 100 + dom.index)
        return random_classifier(dom.num_classes, int(cfg.get("encoder.feature_dim")), rng)
    return pre.classifier


def run_federate(cfg: RunConfig, artifacts: PretrainArtifacts) -> FederationArtifacts:
    decoders = []
    metrics = []
    for dom, pre in zip(artifacts.domains, artifacts.results):
        final, m = federate_domain(
            cfg,
            artifacts.teacher,
            artifacts.student,
            pre.translator,
            initial_decoder_for(cfg, pre, dom),
            dom,
        )
        decoders.append(final)
        metrics.append(m)
    return FederationArtifacts(tuple(decoders), tuple(metrics))
