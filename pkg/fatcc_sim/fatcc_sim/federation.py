"""Federated rounds: client local updates, server aggregation, per-round evaluation."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from tqdm import tqdm

from .attacks import AttackConfig, run_attack
from .data import ClientShard, Dataset
from .evaluation import DEFAULT_EVAL_BATCH_SIZE, evaluate
from .exceptions import ClientUpdateError, DomainError, FatccError, NumericalError, ShapeError
from .nn import Layer, ModelParams, TrainConfig, backprop, forward, sgd_step
from .objective import (
    CalibrationConfig,
    ContrastConfig,
    FatccLoss,
    FeatureSource,
    PrototypeAccumulator,
    PrototypeSet,
    aggregate_global,
    batch_class_stats,
    modulating_weights,
)
from .report import RoundReport

logger = logging.getLogger(__name__)

DEFAULT_ROUNDS = 30


class Method(Enum):
    """Training variants compared by the simulator."""

    FST = "fst"
    FEDPGD = "fedpgd"
    FATCC = "fatcc"
    FATCC_NO_CALIB = "fatcc-no-calib"
    FATCC_NO_CONTRAST = "fatcc-no-contrast"

    @property
    def adversarial(self) -> bool:
        return self is not Method.FST

    @property
    def calibrates(self) -> bool:
        return self in (Method.FATCC, Method.FATCC_NO_CONTRAST)

    @property
    def contrasts(self) -> bool:
        return self in (Method.FATCC, Method.FATCC_NO_CALIB)


@dataclass(frozen=True)
class RoundConfig:
    """Everything a round needs besides data and parameters."""

    method: Method = Method.FATCC
    train: TrainConfig = field(default_factory=TrainConfig)
    attack: AttackConfig = field(
        default_factory=lambda: AttackConfig(
            epsilon=0.1, step_size=0.01, steps=10, random_start=True
        )
    )
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    contrast: ContrastConfig = field(default_factory=ContrastConfig)
    clients_per_round: int | None = None
    workers: int = 1

    def __post_init__(self) -> None:
        if self.clients_per_round is not None and self.clients_per_round < 1:
            raise DomainError(
                message="at least one client must participate",
                name="clients_per_round",
                value=self.clients_per_round,
                valid_range=">= 1",
            )
        if self.workers < 1:
            raise DomainError(
                message="need at least one worker",
                name="workers",
                value=self.workers,
                valid_range=">= 1",
            )

    @property
    def use_calibration(self) -> bool:
        return self.method.calibrates and self.calibration.enabled

    @property
    def use_contrast(self) -> bool:
        return self.method.contrasts and self.contrast.enabled


@dataclass(frozen=True)
class ClientState:
    """A client's view of one round: its shard and its derived seed."""

    client_id: int
    shard: ClientShard
    dataset: Dataset = field(repr=False)
    seed: int = 0

    def data(self) -> Dataset:
        return self.dataset.subset(self.shard.indices)


@dataclass(frozen=True)
class ServerState:
    """Global parameters and prototypes after a round (prototypes are None before round 1 ends)."""

    params: ModelParams
    prototypes: PrototypeSet | None = None
    round_index: int = 0


@dataclass(frozen=True)
class LocalResult:
    """What a client sends back to the server."""

    client_id: int
    params: ModelParams
    prototypes: PrototypeSet
    num_samples: int
    mean_loss: float


def derive_seed(master: int, round_index: int, client_id: int) -> int:
    """Seed for one client in one round, independent of scheduling order."""
    sequence = np.random.SeedSequence(entropy=master, spawn_key=(round_index, client_id))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def _server_seed(master: int, round_index: int) -> int:
    sequence = np.random.SeedSequence(entropy=master, spawn_key=(round_index,))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def local_update(
    client: ClientState,
    params: ModelParams,
    global_prototypes: PrototypeSet | None,
    config: RoundConfig,
) -> LocalResult:
    """
    Run the client's local epochs starting from the global parameters.

    Each batch is perturbed by the training attack (adversarial methods),
    weighted by batch-frequency calibration (when calibrating) and pulled
    towards the global prototypes (when contrasting and prototypes exist).
    Prototypes are accumulated over the final local epoch.

    Args:
        client: Shard, dataset and seed of the client
        params: Global parameters broadcast by the server
        global_prototypes: Prototypes from the previous round, or None
        config: Method and hyperparameters

    Returns:
        LocalResult with updated parameters, local prototypes and sample count

    Raises:
        DomainError: If the shard is empty
        NumericalError: If parameters become non-finite
    """
    data = client.data()
    if len(data) == 0:
        raise DomainError(
            message="client has no data", name="shard size", value=0, valid_range=">= 1"
        )
    train = config.train
    num_classes = params.num_classes
    rng = np.random.default_rng(client.seed)
    accumulator = PrototypeAccumulator(num_classes=num_classes, width=params.feature_width)
    contrast_prototypes = global_prototypes if config.use_contrast else None
    clean_features = (
        config.method.adversarial and config.contrast.feature_source is FeatureSource.CLEAN
    )

    loss_sum = 0.0
    num_batches = 0
    for _ in range(train.local_epochs):
        accumulator.reset()
        order = rng.permutation(len(data))
        for start in range(0, len(data), train.batch_size):
            batch = order[start : start + train.batch_size]
            x, y = data.inputs[batch], data.labels[batch]
            attack_seed = int(rng.integers(2**63))
            x_train = x
            if config.method.adversarial:
                x_train = run_attack(params, x, y, config.attack, seed=attack_seed).perturbed

            weights = (
                modulating_weights(batch_class_stats(y, num_classes), config.calibration)
                if config.use_calibration
                else None
            )
            loss_spec = FatccLoss(
                weights=weights,
                prototypes=contrast_prototypes,
                temperature=config.contrast.temperature,
                contrast_weight=config.contrast.weight,
            )
            grads = backprop(params, x_train, y, loss_spec)
            features = forward(params, x).feature if clean_features else grads.trace.feature
            accumulator.update(features, y)

            params = sgd_step(params, grads.params, train.learning_rate)
            loss_sum += grads.loss
            num_batches += 1

    if not params.is_finite():
        raise NumericalError(
            message="parameters diverged", stage=f"local update of client {client.client_id}"
        )
    mean_loss = loss_sum / num_batches
    logger.debug(
        "  Client %d: %s samples, mean loss %.4f", client.client_id, f"{len(data):,}", mean_loss
    )
    return LocalResult(
        client_id=client.client_id,
        params=params,
        prototypes=accumulator.result(),
        num_samples=len(data),
        mean_loss=mean_loss,
    )


def fedavg(params_list: Sequence[ModelParams], sizes: Sequence[int]) -> ModelParams:
    """
    Average parameters weighted by client sample counts.

    Raises:
        DomainError: If the list is empty or a size is not positive
        ShapeError: If the parameter layouts differ
    """
    if not params_list:
        raise DomainError(
            message="nothing to aggregate", name="client count", value=0, valid_range=">= 1"
        )
    if len(sizes) != len(params_list):
        raise DomainError(
            message="one size per client is required",
            name="size count",
            value=len(sizes),
            valid_range=f"== {len(params_list)}",
        )
    counts = np.asarray(sizes, dtype=np.float64)
    if np.any(counts <= 0):
        raise DomainError(
            message="client sizes must be positive",
            name="size",
            value=float(counts.min()),
            valid_range="> 0",
        )
    reference = params_list[0].widths
    for i, p in enumerate(params_list):
        if p.widths != reference:
            raise ShapeError(
                message="clients disagree on model layout",
                layer=f"client {i}",
                expected=reference,
                actual=p.widths,
            )

    fractions = counts / counts.sum()
    layers = []
    for k in range(len(params_list[0].layers)):
        weight = sum(f * p.layers[k].weight for f, p in zip(fractions, params_list, strict=True))
        bias = sum(f * p.layers[k].bias for f, p in zip(fractions, params_list, strict=True))
        layers.append(Layer(weight=weight, bias=bias))
    return ModelParams(tuple(layers))


def _select_participants(
    shards: Sequence[ClientShard], config: RoundConfig, master: int, round_index: int
) -> list[ClientShard]:
    active = [s for s in shards if s.size > 0]
    if config.clients_per_round is None or config.clients_per_round >= len(active):
        return active
    rng = np.random.default_rng(_server_seed(master, round_index))
    chosen = rng.choice(len(active), size=config.clients_per_round, replace=False)
    return [active[i] for i in sorted(chosen)]


def _client_update(
    client: ClientState,
    params: ModelParams,
    prototypes: PrototypeSet | None,
    config: RoundConfig,
    round_index: int,
) -> LocalResult:
    try:
        return local_update(client, params, prototypes, config)
    except FatccError as e:
        raise ClientUpdateError(
            message=str(e), round_index=round_index, client_id=client.client_id
        ) from e


def run_round(
    state: ServerState,
    dataset: Dataset,
    shards: Sequence[ClientShard],
    config: RoundConfig,
    master_seed: int,
) -> tuple[ServerState, float]:
    """
    One round: broadcast, local updates, aggregation.

    Clients with empty shards are skipped. Results are combined in client-id
    order regardless of how many workers ran them.

    Returns:
        The new server state and the sample-weighted mean training loss
    """
    round_index = state.round_index + 1
    participants = _select_participants(shards, config, master_seed, round_index)
    if not participants:
        raise DomainError(
            message="every client shard is empty", name="participants", value=0, valid_range=">= 1"
        )
    clients = [
        ClientState(
            client_id=shard.client_id,
            shard=shard,
            dataset=dataset,
            seed=derive_seed(master_seed, round_index, shard.client_id),
        )
        for shard in participants
    ]

    def update(client: ClientState) -> LocalResult:
        return _client_update(client, state.params, state.prototypes, config, round_index)

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(update, clients))
    else:
        results = [update(c) for c in clients]

    params = fedavg([r.params for r in results], [r.num_samples for r in results])
    prototypes = aggregate_global([r.prototypes for r in results], config.contrast.averaging)
    total = sum(r.num_samples for r in results)
    train_loss = sum(r.num_samples * r.mean_loss for r in results) / total
    return ServerState(params=params, prototypes=prototypes, round_index=round_index), train_loss


def run_training(
    dataset: Dataset,
    shards: Sequence[ClientShard],
    config: RoundConfig,
    rounds: int,
    *,
    initial_params: ModelParams,
    test_set: Dataset,
    eval_attacks: Sequence[AttackConfig],
    master_seed: int = 0,
    eval_batch_size: int = DEFAULT_EVAL_BATCH_SIZE,
    progress: bool = False,
) -> tuple[ServerState, list[RoundReport]]:
    """
    Run a full federation and evaluate the global model after every round.

    Args:
        dataset: Training data the shards index into
        shards: Client partition
        config: Method and hyperparameters
        rounds: Number of rounds T
        initial_params: Global model before round 1
        test_set: Held-out data for clean and robust accuracy
        eval_attacks: Attacks reported as robust-accuracy columns
        master_seed: Seed all client streams derive from
        eval_batch_size: Test rows per evaluation batch
        progress: Show a tqdm bar over rounds

    Returns:
        Final server state and one RoundReport per round

    Raises:
        ClientUpdateError: If any client fails; the round is aborted
    """
    if rounds < 1:
        raise DomainError(
            message="need at least one round", name="rounds", value=rounds, valid_range=">= 1"
        )
    state = ServerState(params=initial_params)
    reports: list[RoundReport] = []
    for _ in tqdm(range(rounds), desc=config.method.value, unit="round", disable=not progress):
        state, train_loss = run_round(state, dataset, shards, config, master_seed)
        result = evaluate(state.params, test_set, eval_attacks, batch_size=eval_batch_size)
        reports.append(
            RoundReport(
                round_index=state.round_index,
                clean_accuracy=result.clean_accuracy,
                robust_accuracy=result.robust_accuracy,
                train_loss=train_loss,
            )
        )
        robust = "".join(f", {name} {acc:.2%}" for name, acc in result.robust_accuracy.items())
        logger.info(
            "Round %d/%d: loss %.4f, CA %.2f%%%s",
            state.round_index,
            rounds,
            train_loss,
            100 * result.clean_accuracy,
            robust,
        )
    return state, reports
