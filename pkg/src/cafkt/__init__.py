"""Cross-architecture federated knowledge transfer, at desk scale.

A deterministic numpy simulator of the two-stage protocol: server-side
distillation pretrains a translator so a lightweight proxy encoder mimics a
large teacher encoder, then non-IID clients federate a single shared linear
decoder with inactive-class preservation, class de-biasing, optional
differential privacy, and multi-domain classifier concatenation.
"""

from .data import (
    DomainSpec,
    PartitionSpec,
    dirichlet_partition,
    generate_domain,
    load_feature_file,
    write_feature_file,
)
from .distill import PretrainConfig, PretrainResult, alignment_report, pretrain
from .errors import (
    AggregationError,
    ConfigError,
    DimensionError,
    FeatureFileError,
    LabelError,
    NumericError,
)
from .evaluation import (
    MultiDomainClassifier,
    RoundRecord,
    RunMetrics,
    client_eval,
    concat_classifiers,
    confusion_matrix,
    server_plug_eval,
    topk_accuracy,
    weight_self_similarity,
)
from .federation import (
    ClientState,
    ClientUpdate,
    FederationConfig,
    aggregate,
    build_client_states,
    cdb_apply,
    client_round,
    fedprox_penalty,
    icp_apply,
    sample_active,
    server_round_loop,
    survives_uplink,
)
from .losses import LossBreakdown, cross_entropy, kd_loss, pretrain_objective
from .model import (
    ClassifierWeights,
    FeatureBatch,
    SyntheticEncoder,
    Translator,
    classifier_forward,
    l2_normalize,
    predict_probs,
    student_embed,
    teacher_embed,
)
from .optim import AdamState, adam_step, cosine_lr
from .privacy import (
    DPConfig,
    clip_schedule,
    clip_update,
    gaussian_mechanism,
    noise_sigma,
    sensitivity,
    suggest_clip_hat,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "AggregationError",
    "ClassifierWeights",
    "ClientState",
    "ClientUpdate",
    "ConfigError",
    "DPConfig",
    "DimensionError",
    "DomainSpec",
    "FeatureBatch",
    "FeatureFileError",
    "FederationConfig",
    "LabelError",
    "LossBreakdown",
    "MultiDomainClassifier",
    "NumericError",
    "PartitionSpec",
    "PretrainConfig",
    "PretrainResult",
    "RoundRecord",
    "RunMetrics",
    "SyntheticEncoder",
    "Translator",
    "adam_step",
    "aggregate",
    "alignment_report",
    "build_client_states",
    "cdb_apply",
    "classifier_forward",
    "client_eval",
    "client_round",
    "concat_classifiers",
    "confusion_matrix",
    "cosine_lr",
    "cross_entropy",
    "dirichlet_partition",
    "fedprox_penalty",
    "gaussian_mechanism",
    "generate_domain",
    "icp_apply",
    "kd_loss",
    "l2_normalize",
    "load_feature_file",
    "predict_probs",
    "pretrain",
    "pretrain_objective",
    "sample_active",
    "sensitivity",
    "server_plug_eval",
    "server_round_loop",
    "student_embed",
    "survives_uplink",
    "teacher_embed",
    "topk_accuracy",
    "weight_self_similarity",
    "write_feature_file",
    "clip_schedule",
    "clip_update",
    "noise_sigma",
    "suggest_clip_hat",
]
