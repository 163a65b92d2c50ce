"""Build data from a config, run the configured methods at every sweep point, write reports."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import DatasetKind, ExperimentConfig, PartitionMode
from .data import (
    ClientShard,
    Dataset,
    dirichlet_partition,
    holdout_split,
    iid_partition,
    load_idx,
    subsample,
    synth_gaussian,
)
from .evaluation import EvaluationResult
from .federation import Method, run_training
from .nn import init_params
from .report import RoundReport, summarize, write_report

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExperimentData:
    """Training set, test set and client partition of one experiment."""

    train: Dataset
    test: Dataset
    shards: list[ClientShard]


def build_data(config: ExperimentConfig) -> ExperimentData:
    """
    Load or synthesize the datasets and partition the training set.

    IDX data is subsampled before partitioning; dataset.subsample applies to
    the training and test sets alike, each with its own draw.

    Raises:
        DataLoadError: If IDX files are missing, malformed or inconsistent
    """
    if config.dataset.kind is DatasetKind.IDX:
        train_images, train_labels, test_images, test_labels = config.dataset.idx_paths()
        train = load_idx(train_images, train_labels)
        test = load_idx(test_images, test_labels, num_classes=train.num_classes)
        train = subsample(train, config.dataset.subsample, seed=config.partition.seed)
        test = subsample(test, config.dataset.subsample, seed=config.partition.seed + 1)
    else:
        synth = config.synthetic
        full = synth_gaussian(
            num_classes=synth.classes,
            dims=synth.dims,
            per_class=synth.train_per_class + synth.test_per_class,
            spread=synth.spread,
            seed=synth.seed,
        )
        train, test = holdout_split(full, synth.test_per_class, seed=synth.seed)

    if config.partition_mode is PartitionMode.IID:
        shards = iid_partition(train, config.partition.num_clients, config.partition.seed)
    else:
        shards = dirichlet_partition(train, config.partition)
    return ExperimentData(train=train, test=test, shards=shards)


def run_method(config: ExperimentConfig, data: ExperimentData, method: Method) -> list[RoundReport]:
    """Train one method from the shared initial model and return its round reports."""
    widths = config.widths(data.train.num_features, data.train.num_classes)
    params = init_params(widths, seed=config.seed)
    _, reports = run_training(
        data.train,
        data.shards,
        config.round_config(method),
        config.federation.rounds,
        initial_params=params,
        test_set=data.test,
        eval_attacks=config.eval_attacks(),
        master_seed=config.seed,
        eval_batch_size=config.evaluation.batch_size,
        progress=config.progress,
    )
    return reports


@dataclass(frozen=True)
class MethodSummary:
    """Where one method's report went and its summary-row accuracies."""

    method: Method
    variant: str
    path: Path
    result: EvaluationResult


def _summary_result(reports: list[RoundReport], attack_names: list[str]) -> EvaluationResult:
    summary = summarize(reports)
    return EvaluationResult(
        clean_accuracy=summary["ca"],
        robust_accuracy={name: summary[f"ra_{name}"] for name in attack_names},
    )


def _run_methods(config: ExperimentConfig) -> list[MethodSummary]:
    data = build_data(config)
    sizes = [shard.size for shard in data.shards]
    logger.info(
        "Data: %s train, %s test, %d features, %d classes",
        f"{len(data.train):,}",
        f"{len(data.test):,}",
        data.train.num_features,
        data.train.num_classes,
    )
    logger.info("Partition (%s): client sizes %s", config.partition_mode.value, sizes)

    attack_names = [a.name for a in config.eval_attacks()]
    outcomes: list[MethodSummary] = []
    for method in config.federation.methods:
        logger.info("")
        logger.info("=" * 60)
        if config.variant:
            logger.info(
                "Method: %s [%s] (%d rounds)",
                method.value,
                config.variant,
                config.federation.rounds,
            )
        else:
            logger.info("Method: %s (%d rounds)", method.value, config.federation.rounds)
        logger.info("=" * 60)

        reports = run_method(config, data, method)
        path = write_report(reports, config.output_for(method))
        result = _summary_result(reports, attack_names)
        logger.info("  Clean accuracy: %.2f%%", 100 * result.clean_accuracy)
        for name, value in result.robust_accuracy.items():
            logger.info("  Robust accuracy (%s): %.2f%%", name, 100 * value)
        if attack_names:
            logger.info(
                "  Mean RA over %s: %.2f%%",
                "/".join(attack_names),
                100 * result.mean_robust_accuracy,
            )
        logger.info("  Report: %s", path)
        outcomes.append(MethodSummary(method, config.variant, path, result))
    return outcomes


def run_experiment(config: ExperimentConfig) -> list[Path]:
    """
    Run every configured method and write one CSV report per method.

    Args:
        config: Validated experiment

    Returns:
        Paths of the written reports, in method order

    Raises:
        FatccError: Any data, training or report failure
    """
    return [outcome.path for outcome in _run_methods(config)]


def run_sweep(configs: Sequence[ExperimentConfig]) -> list[Path]:
    """
    Run every sweep point in order and write their reports.

    With more than one point, the log ends with each method's clean and mean
    robust accuracy averaged over the points.

    Returns:
        Paths of the written reports, grouped by sweep point then method

    Raises:
        FatccError: Any data, training or report failure
    """
    outcomes: list[MethodSummary] = []
    for config in configs:
        outcomes.extend(_run_methods(config))
    if len(configs) > 1:
        logger.info("")
        logger.info("=" * 60)
        logger.info("Sweep summary (%d points)", len(configs))
        logger.info("=" * 60)
        for method in dict.fromkeys(o.method for o in outcomes):
            results = [o.result for o in outcomes if o.method is method]
            logger.info(
                "  %-18s CA %.2f%%  mean RA %.2f%%",
                method.value,
                100 * float(np.mean([r.clean_accuracy for r in results])),
                100 * float(np.mean([r.mean_robust_accuracy for r in results])),
            )
    return [o.path for o in outcomes]
