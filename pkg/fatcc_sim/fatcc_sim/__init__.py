"""Federated adversarial training with calibration and feature contrast.

This package simulates non-IID federated learning where every client trains
on adversarial examples:
- A small numpy MLP with hand-written forward and backward passes
- FGSM, BIM and PGD l-infinity attacks
- Batch-frequency calibrated cross-entropy and prototype feature contrast
- FedAvg rounds with per-round clean and robust accuracy reports
"""

from .attacks import (
    ATTACK_PRESETS,
    AdversarialBatch,
    AttackConfig,
    AttackKind,
    bim,
    evaluation_attack,
    fgsm,
    pgd,
    run_attack,
)
from .config import ExperimentConfig, expand_sweep, load_config, load_sweep, parse_overrides
from .data import (
    ClientShard,
    Dataset,
    PartitionConfig,
    dirichlet_partition,
    holdout_split,
    iid_partition,
    label_distribution,
    label_entropy,
    load_idx,
    subsample,
    synth_gaussian,
)
from .evaluation import EvaluationResult, evaluate, predict
from .exceptions import (
    ClientUpdateError,
    ConfigError,
    ConsistencyError,
    DataLoadError,
    DomainError,
    FatccError,
    IdxFormatError,
    IdxTruncatedError,
    MissingSummaryError,
    NumericalError,
    ReportError,
    SchemaMismatchError,
    ShapeError,
)
from .federation import (
    ClientState,
    LocalResult,
    Method,
    RoundConfig,
    ServerState,
    derive_seed,
    fedavg,
    local_update,
    run_training,
)
from .nn import (
    ForwardTrace,
    Gradients,
    Layer,
    ModelParams,
    PlainCrossEntropy,
    TrainConfig,
    backprop,
    cross_entropy,
    forward,
    init_params,
    sgd_step,
    softmax,
)
from .objective import (
    BatchClassStats,
    CalibrationConfig,
    ClassWeights,
    ContrastConfig,
    FatccLoss,
    PrototypeAccumulator,
    PrototypeSet,
    aggregate_global,
    batch_class_stats,
    calibrated_ce,
    contrast_terms,
    contrastive_grad,
    contrastive_loss,
    fatcc_local_loss,
    local_prototypes,
    modulating_weights,
    taylor_ratio_diagnostic,
)
from .report import (
    SUMMARY_LABEL,
    ReportComparison,
    RoundReport,
    compare_report,
    read_report,
    write_report,
)
from .runner import build_data, run_experiment, run_sweep

__all__ = [
    # Model
    "Layer",
    "ModelParams",
    "TrainConfig",
    "ForwardTrace",
    "Gradients",
    "PlainCrossEntropy",
    "init_params",
    "forward",
    "softmax",
    "cross_entropy",
    "backprop",
    "sgd_step",
    # Data
    "Dataset",
    "PartitionConfig",
    "ClientShard",
    "load_idx",
    "synth_gaussian",
    "holdout_split",
    "subsample",
    "dirichlet_partition",
    "iid_partition",
    "label_distribution",
    "label_entropy",
    # Attacks
    "AttackKind",
    "AttackConfig",
    "AdversarialBatch",
    "ATTACK_PRESETS",
    "fgsm",
    "bim",
    "pgd",
    "run_attack",
    "evaluation_attack",
    # Objective
    "CalibrationConfig",
    "ContrastConfig",
    "BatchClassStats",
    "ClassWeights",
    "PrototypeSet",
    "PrototypeAccumulator",
    "FatccLoss",
    "batch_class_stats",
    "modulating_weights",
    "calibrated_ce",
    "local_prototypes",
    "aggregate_global",
    "contrast_terms",
    "contrastive_loss",
    "contrastive_grad",
    "taylor_ratio_diagnostic",
    "fatcc_local_loss",
    # Federation
    "Method",
    "RoundConfig",
    "ClientState",
    "ServerState",
    "LocalResult",
    "derive_seed",
    "local_update",
    "fedavg",
    "run_training",
    # Experiments
    "ExperimentConfig",
    "load_config",
    "load_sweep",
    "expand_sweep",
    "parse_overrides",
    "build_data",
    "run_experiment",
    "run_sweep",
    "EvaluationResult",
    "evaluate",
    "predict",
    "RoundReport",
    "ReportComparison",
    "SUMMARY_LABEL",
    "write_report",
    "read_report",
    "compare_report",
    # Exceptions
    "FatccError",
    "ShapeError",
    "DomainError",
    "NumericalError",
    "ConfigError",
    "DataLoadError",
    "IdxFormatError",
    "IdxTruncatedError",
    "ConsistencyError",
    "ClientUpdateError",
    "ReportError",
    "SchemaMismatchError",
    "MissingSummaryError",
]
