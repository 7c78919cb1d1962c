"""Run configuration: flat ``section.key = value`` text with a typed schema.

Files hold one assignment per line; ``#`` starts a comment. Unknown keys are
a hard error so configs cannot drift silently. Every key has a default, so
an absent file means "all defaults". Override precedence, lowest to
highest: defaults, config file, CAFKT_OUTPUT_DIR (output_dir only),
``--set key=value`` flags.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

from .data import DomainSpec
from .distill import PretrainConfig
from .errors import ConfigError
from .federation import FederationConfig
from .privacy import DPConfig
from .rng import derived_seed

ENV_OUTPUT_DIR = "CAFKT_OUTPUT_DIR"
STRATEGIES = ("fedpromo", "fedavg", "fedavg_ema", "fedprox")

# key -> (default value, kind, allowed choices or None)
SCHEMA: dict[str, tuple[object, str, tuple | None]] = {
    "seed": (42, "int", None),
    "output_dir": ("out", "str", None),
    "domain.count": (1, "int", None),
    "domain.num_classes": (20, "int", None),
    "domain.input_dim": (32, "int", None),
    "domain.samples_per_class": (100, "int", None),
    "domain.zipf_exponent": (0.95, "float", None),
    "domain.noise_sigma": (1.45, "float", None),
    "domain.seed": (-1, "int", None),  # -1 derives from the top-level seed
    "domain.train_file": ("", "str", None),
    "domain.val_file": ("", "str", None),
    "encoder.feature_dim": (32, "int", None),
    "encoder.student_dim": (16, "int", None),
    "encoder.nonlinearity": ("none", "str", ("none", "tanh")),
    "pretrain.epochs": (60, "int", None),
    "pretrain.batch_size": (64, "int", None),
    "pretrain.lr_max": (0.005, "float", None),
    "pretrain.lambda": (0.5, "float", None),
    "pretrain.train_student_encoder": (False, "bool", None),
    "partition.alpha": (1.0, "float", None),
    "federate.strategy": ("fedpromo", "str", STRATEGIES),
    "federate.num_clients": (100, "int", None),
    "federate.active_per_round": (10, "int", None),
    "federate.rounds": (500, "int", None),
    "federate.local_epochs": (10, "int", None),
    "federate.eta": (0.05, "float", None),
    "federate.batch_size": (64, "int", None),
    "federate.lr_max": (0.005, "float", None),
    "federate.ema_rate": (0.5, "float", None),
    "federate.fedprox_mu": (0.01, "float", None),
    "federate.dropout_prob": (0.0, "float", None),
    "federate.weighting": ("samples", "str", ("samples", "uniform")),
    "federate.use_icp": ("auto", "tristate", None),
    "federate.use_cdb": ("auto", "tristate", None),
    "federate.active_scope": ("epoch", "str", ("epoch", "last_batch")),
    "federate.parallel": (False, "bool", None),
    "federate.init": ("pretrain", "str", ("pretrain", "random")),
    "dp.enabled": ("auto", "tristate", None),
    "dp.epsilon": (math.inf, "float", None),
    "dp.delta": (1e-5, "float", None),
    "dp.clip_hat": (12.6, "float", None),
    "dp.clip_max": (26.9, "float", None),
    "dp.min_client_size": (130, "int", None),
    "paths.pretrain_checkpoint": ("", "str", None),
}

# Per-domain stream tags for deriving independent federation seeds.
STREAM_FEDERATION = 9


def _parse_value(key: str, raw: str):
    default, kind, choices = SCHEMA[key]
    raw = raw.strip()
    try:
        if kind == "int":
            value = int(raw)
        elif kind == "float":
            value = float(raw)  # accepts inf
        elif kind == "bool":
            if raw.lower() in ("true", "1", "yes", "on"):
                value = True
            elif raw.lower() in ("false", "0", "no", "off"):
                value = False
            else:
                raise ValueError(raw)
        elif kind == "tristate":
            if raw.lower() == "auto":
                value = "auto"
            elif raw.lower() in ("true", "1", "yes", "on"):
                value = True
            elif raw.lower() in ("false", "0", "no", "off"):
                value = False
            else:
                raise ValueError(raw)
        else:
            value = raw
    except ValueError:
        raise ConfigError(f"cannot parse {key} = {raw!r} as {kind}") from None
    if choices is not None and value not in choices:
        raise ConfigError(f"{key} must be one of {choices}, got {value!r}")
    return value


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value) if math.isfinite(value) else ("inf" if value > 0 else "-inf")
    return str(value)


def parse_config_text(text: str, source: str = "<config>") -> dict[str, object]:
    """Parse assignments; unknown keys or bad values raise ConfigError."""
    values: dict[str, object] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw_line!r}")
        key, raw_value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = _parse_value(key, raw_value)
    return values


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved configuration plus the set of explicitly provided keys."""

    values: dict[str, object] = field(default_factory=dict)
    provided: frozenset[str] = frozenset()

    @classmethod
    def load(
        cls,
        path: str | os.PathLike | None = None,
        overrides: dict[str, str] | None = None,
        env: dict[str, str] | None = None,
    ) -> "RunConfig":
        env = os.environ if env is None else env
        values = {key: default for key, (default, _, _) in SCHEMA.items()}
        provided: set[str] = set()
        if path is not None:
            try:
                with open(path, "r", encoding="utf-8") as fh:
                    text = fh.read()
            except OSError as err:
                raise ConfigError(f"cannot read config file {path}: {err}") from None
            file_values = parse_config_text(text, source=str(path))
            values.update(file_values)
            provided.update(file_values)
        if ENV_OUTPUT_DIR in env:
            values["output_dir"] = env[ENV_OUTPUT_DIR]
            provided.add("output_dir")
        for key, raw in (overrides or {}).items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown key {key!r} in override")
            values[key] = _parse_value(key, str(raw))
            provided.add(key)
        cfg = cls(values, frozenset(provided))
        cfg.validate()
        return cfg

    @classmethod
    def from_overrides(cls, **overrides) -> "RunConfig":
        """Programmatic construction; values given in their textual form."""
        return cls.load(path=None, overrides={k: str(v) for k, v in overrides.items()}, env={})

    def get(self, key: str):
        return self.values[key]

    def validate(self) -> None:
        if self.get("seed") < 0:
            raise ConfigError("seed must be non-negative")
        if self.get("domain.count") < 1:
            raise ConfigError("domain.count must be at least 1")
        if self.get("domain.count") > 1 and (
            self.get("domain.train_file") or self.get("domain.val_file")
        ):
            raise ConfigError("feature files are only supported with domain.count = 1")
        if bool(self.get("domain.train_file")) != bool(self.get("domain.val_file")):
            raise ConfigError("domain.train_file and domain.val_file go together")
        for key in ("encoder.feature_dim", "encoder.student_dim"):
            if self.get(key) < 1:
                raise ConfigError(f"{key} must be positive")
        # Sub-config constructors run their own checks.
        try:
            self.pretrain_config()
            self.federation_config(0)
            self.domain_specs()
        except ConfigError:
            raise
        except ValueError as err:
            raise ConfigError(str(err)) from None

    @property
    def seed(self) -> int:
        return int(self.get("seed"))

    @property
    def output_dir(self) -> str:
        return str(self.get("output_dir"))

    @property
    def num_domains(self) -> int:
        return int(self.get("domain.count"))

    @property
    def uses_feature_files(self) -> bool:
        return bool(self.get("domain.train_file"))

    def domain_specs(self) -> list[DomainSpec]:
        base_seed = self.get("domain.seed")
        seed = self.seed if base_seed == -1 else int(base_seed)
        return [
            DomainSpec(
                domain_id=i,
                num_classes=int(self.get("domain.num_classes")),
                input_dim=int(self.get("domain.input_dim")),
                samples_per_class=int(self.get("domain.samples_per_class")),
                zipf_exponent=float(self.get("domain.zipf_exponent")),
                noise_sigma=float(self.get("domain.noise_sigma")),
                seed=seed,
            )
            for i in range(self.num_domains)
        ]

    def pretrain_config(self) -> PretrainConfig:
        return PretrainConfig(
            epochs=int(self.get("pretrain.epochs")),
            batch_size=int(self.get("pretrain.batch_size")),
            lr_max=float(self.get("pretrain.lr_max")),
            lam=float(self.get("pretrain.lambda")),
            train_student_encoder=bool(self.get("pretrain.train_student_encoder")),
        )

    def dp_config(self) -> DPConfig:
        epsilon = float(self.get("dp.epsilon"))
        enabled = self.get("dp.enabled")
        if enabled == "auto":
            enabled = "dp.epsilon" in self.provided and math.isfinite(epsilon)
        return DPConfig(
            enabled=bool(enabled),
            epsilon=epsilon,
            delta=float(self.get("dp.delta")),
            clip_hat=float(self.get("dp.clip_hat")),
            clip_max=float(self.get("dp.clip_max")),
            min_client_size=int(self.get("dp.min_client_size")),
        )

    def strategy(self) -> str:
        return str(self.get("federate.strategy"))

    def federation_config(self, domain_idx: int = 0) -> FederationConfig:
        strategy = self.strategy()
        aggregation = {
            "fedpromo": "fedavg",
            "fedavg": "fedavg",
            "fedavg_ema": "fedavg_ema",
            "fedprox": "fedprox",
        }[strategy]
        use_icp = self.get("federate.use_icp")
        if use_icp == "auto":
            use_icp = strategy == "fedpromo"
        use_cdb = self.get("federate.use_cdb")
        if use_cdb == "auto":
            use_cdb = strategy == "fedpromo"
        seed = self.seed if self.num_domains == 1 else derived_seed(
            self.seed, STREAM_FEDERATION, domain_idx
        )
        return FederationConfig(
            num_clients=int(self.get("federate.num_clients")),
            active_per_round=int(self.get("federate.active_per_round")),
            rounds=int(self.get("federate.rounds")),
            local_epochs=int(self.get("federate.local_epochs")),
            eta=float(self.get("federate.eta")),
            batch_size=int(self.get("federate.batch_size")),
            lr_max=float(self.get("federate.lr_max")),
            aggregation=aggregation,
            weighting=str(self.get("federate.weighting")),
            ema_rate=float(self.get("federate.ema_rate")),
            fedprox_mu=float(self.get("federate.fedprox_mu")),
            use_icp=bool(use_icp),
            use_cdb=bool(use_cdb),
            active_scope=str(self.get("federate.active_scope")),
            dropout_prob=float(self.get("federate.dropout_prob")),
            seed=seed,
            dp=self.dp_config(),
        )

    def manifest_config(self) -> dict[str, str]:
        """Canonical textual form of every resolved value; replayable."""
        return {key: _format_value(self.values[key]) for key in SCHEMA}
