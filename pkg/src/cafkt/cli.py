"""Command-line shell: pretrain, federate, eval, partition.

Every command takes ``--config FILE`` plus ``--set key=value`` overrides
(dotted flags like ``--dp.epsilon 10`` are accepted as sugar for --set) and
writes its artifacts under the configured output directory together with a
``run.json`` manifest holding the fully resolved configuration, enough to
replay the run bitwise.

Exit codes: 0 success, 1 configuration or file problems, 2 numeric failure
or a federation where every round was skipped, 3 evaluation dimension
mismatch.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import dirichlet_partition
from .distill import alignment_report
from .errors import (
    AggregationError,
    ConfigError,
    DimensionError,
    FeatureFileError,
    NumericError,
)
from .evaluation import (
    concat_classifiers,
    confusion_matrix,
    predictions,
    weight_self_similarity,
    write_square_matrix,
)
from .model import (
    ClassifierWeights,
    SyntheticEncoder,
    Translator,
    l2_normalize,
    teacher_embed,
)
from . import pipeline

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2
EXIT_DIMENSION = 3


def _suffix(cfg: RunConfig, index: int) -> str:
    return "" if cfg.num_domains == 1 else f"_domain{index}"


def _pretrain_ckpt_path(cfg: RunConfig, index: int) -> str:
    explicit = str(cfg.get("paths.pretrain_checkpoint"))
    if explicit and cfg.num_domains == 1:
        return explicit
    return os.path.join(cfg.output_dir, f"pretrain{_suffix(cfg, index)}.ckpt")


def _write_manifest(cfg: RunConfig, command: str, outputs: list[str]) -> None:
    manifest = {
        "command": command,
        "seed": cfg.seed,
        "config": cfg.manifest_config(),
        "outputs": sorted(outputs),
    }
    path = os.path.join(cfg.output_dir, "run.json")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_manifest(cfg: RunConfig) -> dict:
    with open(os.path.join(cfg.output_dir, "run.json"), "r", encoding="utf-8") as fh:
        return json.load(fh)


def _losses_csv(history) -> str:
    lines = ["epoch,l1,l2,cos,ce,total"]
    for epoch, h in enumerate(history, start=1):
        lines.append(
            f"{epoch},{h.l1_term!r},{h.l2_term!r},{h.cos_term!r},{h.ce_term!r},{h.total!r}"
        )
    return "\n".join(lines) + "\n"


def cmd_pretrain(cfg: RunConfig) -> int:
    os.makedirs(cfg.output_dir, exist_ok=True)
    artifacts = pipeline.run_pretrain(cfg)
    outputs = []
    for dom, result, alignment, final_eval in zip(
        artifacts.domains, artifacts.results, artifacts.alignments, artifacts.final_evals
    ):
        tag = _suffix(cfg, dom.index)
        ckpt = _pretrain_ckpt_path(cfg, dom.index)
        save_checkpoint(
            ckpt,
            {
                "teacher": artifacts.teacher.weight,
                "student": result.student.weight,
                "translator": result.translator.weight,
                "classifier": result.classifier.weight,
            },
        )
        losses_path = os.path.join(cfg.output_dir, f"losses{tag}.csv")
        with open(losses_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(_losses_csv(result.history))
        embed_path = os.path.join(cfg.output_dir, f"embeddings{tag}.txt")
        alignment_report(
            artifacts.teacher, result.student, result.translator, dom.val, dump_path=embed_path
        )
        outputs += [ckpt, losses_path, embed_path]
        cos, dist = alignment
        print(f"domain {dom.index}: alignment cos={cos!r} l2={dist!r}")
        print(
            f"domain {dom.index}: "
            + " ".join(f"{k}={final_eval[k]!r}" for k in sorted(final_eval))
        )
    _write_manifest(cfg, "pretrain", outputs)
    return EXIT_OK


def _load_pretrained(cfg: RunConfig, domains):
    nonlinearity = str(cfg.get("encoder.nonlinearity"))
    teacher = student = None
    translators, decoders = [], []
    for dom in domains:
        blocks = load_checkpoint(_pretrain_ckpt_path(cfg, dom.index))
        for name in ("teacher", "student", "translator", "classifier"):
            if name not in blocks:
                raise CheckpointError(
                    f"{_pretrain_ckpt_path(cfg, dom.index)}: missing block {name!r}"
                )
        if teacher is None:
            teacher = SyntheticEncoder(blocks["teacher"], nonlinearity)
            student = SyntheticEncoder(blocks["student"], nonlinearity)
        translators.append(Translator(blocks["translator"]))
        decoders.append(ClassifierWeights(blocks["classifier"]))
    return teacher, student, translators, decoders


def cmd_federate(cfg: RunConfig) -> int:
    os.makedirs(cfg.output_dir, exist_ok=True)
    domains = pipeline.load_domains(cfg)
    if str(cfg.get("federate.init")) == "random":
        teacher, student = pipeline.build_encoders(cfg, domains[0].train.feature_dim)
        translators = [pipeline.initial_translator(cfg, d.index) for d in domains]
        decoders = [pipeline.initial_decoder_for(cfg, None, d) for d in domains]
    else:
        teacher, student, translators, decoders = _load_pretrained(cfg, domains)
    outputs = []
    for dom, translator, init_decoder in zip(domains, translators, decoders):
        tag = _suffix(cfg, dom.index)
        final, metrics = pipeline.federate_domain(
            cfg, teacher, student, translator, init_decoder, dom
        )
        metrics_path = os.path.join(cfg.output_dir, f"metrics{tag}.csv")
        metrics.write_csv(metrics_path)
        ckpt = os.path.join(cfg.output_dir, f"final{tag}.ckpt")
        save_checkpoint(
            ckpt,
            {
                "teacher": teacher.weight,
                "student": student.weight,
                "translator": translator.weight,
                "classifier": final.weight,
            },
        )
        outputs += [metrics_path, ckpt]
        last = metrics.final()
        print(
            f"domain {dom.index}: rounds={last.round} skipped={metrics.skipped_rounds} "
            f"client_top1={last.client_top1!r} server_top1={last.server_top1!r}"
        )
    _write_manifest(cfg, "federate", outputs)
    return EXIT_OK


def _eval_single(cfg: RunConfig, ckpt_path: str, domain_index: int) -> list[str]:
    domains = pipeline.load_domains(cfg)
    if not 0 <= domain_index < len(domains):
        raise ConfigError(f"--domain {domain_index} outside configured count")
    dom = domains[domain_index]
    nonlinearity = str(cfg.get("encoder.nonlinearity"))
    blocks = load_checkpoint(ckpt_path)
    teacher = SyntheticEncoder(blocks["teacher"], nonlinearity)
    student = SyntheticEncoder(blocks["student"], nonlinearity)
    translator = Translator(blocks["translator"])
    decoder = ClassifierWeights(blocks["classifier"])
    scores = pipeline.evaluate_decoder(teacher, student, translator, decoder, dom.val)
    print(" ".join(f"{k}={scores[k]!r}" for k in sorted(scores)))

    server_logits = l2_normalize(teacher_embed(teacher, dom.val)) @ decoder.weight.T
    confusion = confusion_matrix(predictions(server_logits), dom.val.labels, dom.num_classes)
    confusion_path = os.path.join(cfg.output_dir, "confusion.txt")
    write_square_matrix(confusion_path, confusion)
    sim_path = os.path.join(cfg.output_dir, "self_similarity.txt")
    write_square_matrix(sim_path, weight_self_similarity(decoder))
    return [confusion_path, sim_path]


def _eval_concat(cfg: RunConfig, ckpt_paths: list[str]) -> list[str]:
    domains = pipeline.load_domains(cfg)
    if len(ckpt_paths) != len(domains):
        raise ConfigError(
            f"--concat got {len(ckpt_paths)} checkpoints but domain.count is {len(domains)}"
        )
    nonlinearity = str(cfg.get("encoder.nonlinearity"))
    teacher = None
    decoders = []
    for path in ckpt_paths:
        blocks = load_checkpoint(path)
        if teacher is None:
            teacher = SyntheticEncoder(blocks["teacher"], nonlinearity)
        decoders.append(ClassifierWeights(blocks["classifier"]))
    multi = concat_classifiers(decoders)

    from .evaluation import accuracy_pair

    all_preds, all_labels = [], []
    for dom, decoder, (start, _) in zip(domains, decoders, multi.blocks):
        feats = l2_normalize(teacher_embed(teacher, dom.val))
        spec1, spec5 = accuracy_pair(feats @ decoder.weight.T, dom.val.labels)
        concat_logits = feats @ multi.weights.weight.T
        agn1, agn5 = accuracy_pair(concat_logits, dom.val.labels + start)
        print(
            f"domain {dom.index}: specific_top1={spec1!r} specific_top5={spec5!r} "
            f"agnostic_top1={agn1!r} agnostic_top5={agn5!r}"
        )
        all_preds.append(predictions(concat_logits))
        all_labels.append(dom.val.labels + start)
    total_classes = multi.weights.num_classes
    confusion = confusion_matrix(
        np.concatenate(all_preds), np.concatenate(all_labels), total_classes
    )
    confusion_path = os.path.join(cfg.output_dir, "confusion.txt")
    write_square_matrix(confusion_path, confusion)
    sim_path = os.path.join(cfg.output_dir, "self_similarity.txt")
    write_square_matrix(sim_path, weight_self_similarity(multi.weights))
    return [confusion_path, sim_path]


def cmd_eval(cfg: RunConfig, ckpt: str | None, concat: list[str] | None, domain: int) -> int:
    os.makedirs(cfg.output_dir, exist_ok=True)
    if concat:
        outputs = _eval_concat(cfg, concat)
    else:
        if ckpt is None:
            ckpt = os.path.join(cfg.output_dir, f"final{_suffix(cfg, domain)}.ckpt")
        outputs = _eval_single(cfg, ckpt, domain)
    _write_manifest(cfg, "eval", outputs)
    return EXIT_OK


def cmd_partition(cfg: RunConfig) -> int:
    os.makedirs(cfg.output_dir, exist_ok=True)
    domains = pipeline.load_domains(cfg)
    alpha = float(cfg.get("partition.alpha"))
    outputs = []
    for dom in domains:
        fed = cfg.federation_config(dom.index)
        part_seed = cfg.seed if cfg.num_domains == 1 else fed.seed
        part = dirichlet_partition(dom.train.labels, fed.num_clients, alpha, part_seed)
        counts = part.counts_matrix(dom.train.labels, dom.num_classes)
        path = os.path.join(cfg.output_dir, f"partition{_suffix(cfg, dom.index)}.csv")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            header = ",".join(["class"] + [f"client_{k}" for k in range(fed.num_clients)])
            fh.write(header + "\n")
            for c in range(dom.num_classes):
                fh.write(",".join([str(c)] + [str(v) for v in counts[c]]) + "\n")
        outputs.append(path)
        sizes = part.sizes()
        print(
            f"domain {dom.index}: {len(dom.train)} samples over {fed.num_clients} clients, "
            f"sizes min={sizes.min()} median={int(np.median(sizes))} max={sizes.max()}"
        )
    _write_manifest(cfg, "partition", outputs)
    return EXIT_OK


def _collect_overrides(set_args: list[str], extras: list[str]) -> dict[str, str]:
    overrides: dict[str, str] = {}
    for item in set_args:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    i = 0
    while i < len(extras):
        token = extras[i]
        if not (token.startswith("--") and "." in token):
            raise ConfigError(f"unrecognized argument {token!r}")
        key = token[2:]
        if "=" in key:
            key, value = key.split("=", 1)
        else:
            if i + 1 >= len(extras):
                raise ConfigError(f"flag {token!r} needs a value")
            value = extras[i + 1]
            i += 1
        overrides[key] = value
        i += 1
    return overrides


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cafkt",
        description="Cross-architecture federated knowledge transfer, desk scale.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("pretrain", "distill the proxy encoder and train the decoder server-side"),
        ("federate", "run the federated decoder training"),
        ("eval", "evaluate checkpoints on both paths"),
        ("partition", "dump the per-client class count matrix"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="config file (flat key = value lines)")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override one config key; repeatable",
        )
        p.add_argument("--out", help="output directory (same as --set output_dir=...)")
        if name == "federate":
            p.add_argument(
                "--init",
                choices=("pretrain", "random"),
                help="decoder init: pretrain checkpoint (default) or seeded random",
            )
            p.add_argument(
                "--parallel",
                action="store_true",
                help="run client rounds in a thread pool (bitwise-identical results)",
            )
        if name == "eval":
            p.add_argument("--ckpt", help="checkpoint to evaluate (default: final.ckpt)")
            p.add_argument(
                "--concat",
                nargs="+",
                metavar="CKPT",
                help="per-domain checkpoints for domain-agnostic evaluation",
            )
            p.add_argument("--domain", type=int, default=0, help="domain index to score")
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args, extras = parser.parse_known_args(argv)
        overrides = _collect_overrides(args.set, extras)
        if args.out:
            overrides["output_dir"] = args.out
        if getattr(args, "init", None):
            overrides["federate.init"] = args.init
        if getattr(args, "parallel", False):
            overrides["federate.parallel"] = "true"
        cfg = RunConfig.load(args.config, overrides)
        if args.command == "pretrain":
            return cmd_pretrain(cfg)
        if args.command == "federate":
            return cmd_federate(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.ckpt, args.concat, args.domain)
        return cmd_partition(cfg)
    except (ConfigError, CheckpointError, FeatureFileError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, AggregationError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except DimensionError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DIMENSION


if __name__ == "__main__":
    sys.exit(main())
