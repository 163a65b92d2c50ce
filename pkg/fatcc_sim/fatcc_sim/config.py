"""Experiment configuration: flat key-value files plus command-line overrides.

A config file holds one ``key = value`` per line; ``#`` starts a comment line.
Overrides use the same keys as ``key=value`` arguments and win over the file.
A few keys (SWEEP_KEYS) also take comma lists; load_sweep expands them into
one experiment per combination.
"""

from __future__ import annotations

import itertools
import os
from collections.abc import Callable, Iterable, Iterator
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any

from .attacks import ATTACK_PRESETS, AttackConfig, AttackKind, evaluation_attack
from .data import PartitionConfig
from .evaluation import DEFAULT_EVAL_BATCH_SIZE
from .exceptions import ConfigError, DomainError
from .federation import DEFAULT_ROUNDS, Method, RoundConfig
from .nn import TrainConfig
from .objective import (
    CALIBRATION_PRESETS,
    CalibrationConfig,
    ContrastConfig,
    FeatureSource,
    PrototypeAveraging,
)

# Overrides the directory of run.output; the file name is kept
OUTPUT_DIR_ENV = "FATCC_OUTPUT_DIR"

DEFAULT_OUTPUT = Path("results/fatcc.csv")

# (value text, line number); overrides carry no line number
RawConfig = dict[str, tuple[str, int | None]]


class DatasetKind(Enum):
    SYNTHETIC = "synthetic"
    IDX = "idx"


class PartitionMode(Enum):
    DIRICHLET = "dirichlet"
    IID = "iid"


# =============================================================================
# SECTION DATACLASSES
# =============================================================================


@dataclass(frozen=True)
class DatasetSpec:
    """Where the data comes from."""

    kind: DatasetKind = DatasetKind.SYNTHETIC
    train_images: Path | None = None
    train_labels: Path | None = None
    test_images: Path | None = None
    test_labels: Path | None = None
    subsample: float = 1.0
    preset: str | None = None

    def idx_paths(self) -> tuple[Path, ...]:
        """Train images, train labels, test images, test labels.

        Raises:
            ConfigError: If any of the four paths is unset
        """
        paths = {
            "dataset.train_images": self.train_images,
            "dataset.train_labels": self.train_labels,
            "dataset.test_images": self.test_images,
            "dataset.test_labels": self.test_labels,
        }
        for key, path in paths.items():
            if path is None:
                raise ConfigError(message="required when dataset.kind = idx", field_name=key)
        return tuple(path for path in paths.values() if path is not None)


@dataclass(frozen=True)
class SyntheticSpec:
    """Gaussian-blob dataset parameters."""

    classes: int = 10
    dims: int = 32
    train_per_class: int = 200
    test_per_class: int = 50
    spread: float = 0.1
    seed: int = 0


@dataclass(frozen=True)
class EvaluationSpec:
    """Attack suite reported as robust-accuracy columns."""

    attacks: tuple[AttackKind, ...] = (AttackKind.FGSM, AttackKind.BIM, AttackKind.PGD)
    epsilon: float | None = None
    step_size: float | None = None
    steps: int = 40
    batch_size: int = DEFAULT_EVAL_BATCH_SIZE

    def attack_configs(self, default_epsilon: float) -> list[AttackConfig]:
        epsilon = default_epsilon if self.epsilon is None else self.epsilon
        return [
            evaluation_attack(kind, epsilon, self.step_size, self.steps) for kind in self.attacks
        ]


@dataclass(frozen=True)
class FederationSpec:
    """Methods to run and the round schedule."""

    methods: tuple[Method, ...] = (Method.FATCC,)
    rounds: int = DEFAULT_ROUNDS
    clients_per_round: int | None = None
    workers: int = 1

    def __post_init__(self) -> None:
        if not self.methods:
            raise DomainError(
                message="no method to run", name="method", value=0, valid_range="at least one"
            )
        if self.rounds < 1:
            raise DomainError(
                message="need at least one round",
                name="rounds",
                value=self.rounds,
                valid_range=">= 1",
            )


@dataclass(frozen=True)
class ExperimentConfig:
    """A fully validated experiment."""

    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    partition_mode: PartitionMode = PartitionMode.DIRICHLET
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    hidden: tuple[int, ...] = (64, 16)
    train: TrainConfig = field(default_factory=TrainConfig)
    attack: AttackConfig = field(
        default_factory=lambda: AttackConfig(
            epsilon=0.1, step_size=0.01, steps=10, random_start=True
        )
    )
    evaluation: EvaluationSpec = field(default_factory=EvaluationSpec)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    contrast: ContrastConfig = field(default_factory=ContrastConfig)
    federation: FederationSpec = field(default_factory=FederationSpec)
    seed: int = 0
    output: Path = DEFAULT_OUTPUT
    progress: bool = True
    # sweep point label such as "gamma0.1_seed2"; empty outside sweeps
    variant: str = ""

    def widths(self, num_features: int, num_classes: int) -> tuple[int, ...]:
        return (num_features, *self.hidden, num_classes)

    def eval_attacks(self) -> list[AttackConfig]:
        return self.evaluation.attack_configs(self.attack.epsilon)

    def round_config(self, method: Method) -> RoundConfig:
        return RoundConfig(
            method=method,
            train=self.train,
            attack=self.attack,
            calibration=self.calibration,
            contrast=self.contrast,
            clients_per_round=self.federation.clients_per_round,
            workers=self.federation.workers,
        )

    def output_for(self, method: Method) -> Path:
        """Report path for one method; sweep points and method lists suffix the file name."""
        parts = [self.output.stem]
        if self.variant:
            parts.append(self.variant)
        if len(self.federation.methods) > 1:
            parts.append(method.value)
        return self.output.with_name(f"{'_'.join(parts)}{self.output.suffix}")


# =============================================================================
# VALUE PARSERS
# =============================================================================


def _bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected true or false, got {text!r}")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise ValueError(f"must be >= 1, got {value}")
    return value


def _seed(text: str) -> int:
    value = int(text)
    if value < 0:
        raise ValueError(f"seeds are non-negative, got {value}")
    return value


def _nonneg_float(text: str) -> float:
    value = float(text)
    if not value >= 0:
        raise ValueError(f"must be >= 0, got {text}")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise ValueError(f"must be > 0, got {text}")
    return value


def _fraction(text: str) -> float:
    value = float(text)
    if not 0 < value <= 1:
        raise ValueError(f"must be in (0, 1], got {text}")
    return value


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(_positive_int(part.strip()) for part in text.split(",") if part.strip())


def _optional_count(text: str) -> int | None:
    return None if text.lower() == "all" else _positive_int(text)


def _choice[E: Enum](enum_cls: type[E]) -> Callable[[str], E]:
    def parse(text: str) -> E:
        try:
            return enum_cls(text.lower())
        except ValueError:
            choices = ", ".join(str(m.value) for m in enum_cls)
            raise ValueError(f"unknown value {text!r} (choose from {choices})") from None

    return parse


def _choice_list[E: Enum](enum_cls: type[E]) -> Callable[[str], tuple[E, ...]]:
    one = _choice(enum_cls)

    def parse(text: str) -> tuple[E, ...]:
        values = tuple(one(part.strip()) for part in text.split(",") if part.strip())
        if not values:
            raise ValueError("list is empty")
        return values

    return parse


def _preset(text: str) -> str:
    if text not in ATTACK_PRESETS:
        raise ValueError(
            f"unknown preset {text!r} (choose from {', '.join(sorted(ATTACK_PRESETS))})"
        )
    return text


CONFIG_KEYS: dict[str, Callable[[str], object]] = {
    "dataset.kind": _choice(DatasetKind),
    "dataset.train_images": Path,
    "dataset.train_labels": Path,
    "dataset.test_images": Path,
    "dataset.test_labels": Path,
    "dataset.subsample": _fraction,
    "dataset.preset": _preset,
    "synthetic.classes": _positive_int,
    "synthetic.dims": _positive_int,
    "synthetic.train_per_class": _positive_int,
    "synthetic.test_per_class": _positive_int,
    "synthetic.spread": _nonneg_float,
    "synthetic.seed": _seed,
    "partition.mode": _choice(PartitionMode),
    "partition.clients": _positive_int,
    "partition.gamma": _positive_float,
    "partition.seed": _seed,
    "model.hidden": _int_list,
    "train.learning_rate": _nonneg_float,
    "train.batch_size": _positive_int,
    "train.local_epochs": _positive_int,
    "attack.kind": _choice(AttackKind),
    "attack.epsilon": _nonneg_float,
    "attack.step_size": _nonneg_float,
    "attack.steps": _positive_int,
    "attack.random_start": _bool,
    "eval.attacks": _choice_list(AttackKind),
    "eval.epsilon": _nonneg_float,
    "eval.step_size": _nonneg_float,
    "eval.steps": _positive_int,
    "eval.batch_size": _positive_int,
    "calib.alpha": _positive_float,
    "calib.beta": _nonneg_float,
    "calib.enabled": _bool,
    "contrast.tau": _positive_float,
    "contrast.lambda": _nonneg_float,
    "contrast.enabled": _bool,
    "contrast.features": _choice(FeatureSource),
    "contrast.averaging": _choice(PrototypeAveraging),
    "federation.method": _choice_list(Method),
    "federation.rounds": _positive_int,
    "federation.clients_per_round": _optional_count,
    "federation.workers": _positive_int,
    "run.seed": _seed,
    "run.output": Path,
    "run.progress": _bool,
}

# Keys that take comma-separated value lists; each list multiplies the runs.
# The value is the prefix used in the sweep-point label.
SWEEP_KEYS: dict[str, str] = {
    "partition.gamma": "gamma",
    "partition.clients": "clients",
    "calib.alpha": "alpha",
    "calib.beta": "beta",
    "run.seed": "seed",
}


# =============================================================================
# PARSING
# =============================================================================


def parse_config_text(text: str) -> RawConfig:
    """Split a config file into raw values keyed by name, remembering line numbers."""
    raw: RawConfig = {}
    for line_number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, value = stripped.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(
                message="expected 'key = value'", field_name=stripped, line_number=line_number
            )
        if key in raw:
            raise ConfigError(
                message=f"duplicate key (first set on line {raw[key][1]})",
                field_name=key,
                line_number=line_number,
            )
        raw[key] = (value.strip(), line_number)
    return raw


def parse_overrides(overrides: Iterable[str]) -> RawConfig:
    """Parse ``key=value`` command-line overrides."""
    raw: RawConfig = {}
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(message="override must look like key=value", field_name=item)
        raw[key.strip()] = (value.strip(), None)
    return raw


def _convert(raw: RawConfig) -> dict[str, Any]:
    values: dict[str, Any] = {}
    for key, (text, line_number) in raw.items():
        parser = CONFIG_KEYS.get(key)
        if parser is None:
            raise ConfigError(message="unknown key", field_name=key, line_number=line_number)
        if key in SWEEP_KEYS and "," in text:
            raise ConfigError(
                message="value lists are only accepted by sweeps",
                field_name=key,
                line_number=line_number,
            )
        try:
            values[key] = parser(text)
        except ValueError as e:
            raise ConfigError(message=str(e), field_name=key, line_number=line_number) from e
    return values


@contextmanager
def _section(raw: RawConfig, prefix: str) -> Iterator[None]:
    """Report a sub-config's validation failure against the key that caused it."""
    try:
        yield
    except DomainError as e:
        key = f"{prefix}.{e.name}"
        if key not in raw:
            key = next((k for k in raw if k.startswith(f"{prefix}.")), prefix)
        line_number = raw[key][1] if key in raw else None
        raise ConfigError(message=str(e), field_name=key, line_number=line_number) from e


def build_config(raw: RawConfig, variant: str = "") -> ExperimentConfig:
    """
    Validate raw values and assemble an ExperimentConfig.

    Args:
        raw: Values from parse_config_text and parse_overrides
        variant: Sweep-point label carried into report file names

    Raises:
        ConfigError: Naming the offending key and, for file values, its line
    """
    values = _convert(raw)
    defaults = ExperimentConfig()

    def get(key: str, default: Any) -> Any:
        return values.get(key, default)

    preset = values.get("dataset.preset")
    attack_defaults = defaults.attack
    calib_defaults = defaults.calibration
    if isinstance(preset, str):
        attack_defaults = AttackConfig.from_preset(
            preset, steps=attack_defaults.steps, random_start=True
        )
        alpha, beta = CALIBRATION_PRESETS[preset]
        calib_defaults = CalibrationConfig(alpha=alpha, beta=beta)

    with _section(raw, "dataset"):
        dataset = DatasetSpec(
            kind=get("dataset.kind", defaults.dataset.kind),
            train_images=get("dataset.train_images", None),
            train_labels=get("dataset.train_labels", None),
            test_images=get("dataset.test_images", None),
            test_labels=get("dataset.test_labels", None),
            subsample=get("dataset.subsample", 1.0),
            preset=preset,
        )
    if dataset.kind is DatasetKind.IDX:
        dataset.idx_paths()

    synthetic = SyntheticSpec(
        classes=get("synthetic.classes", defaults.synthetic.classes),
        dims=get("synthetic.dims", defaults.synthetic.dims),
        train_per_class=get("synthetic.train_per_class", defaults.synthetic.train_per_class),
        test_per_class=get("synthetic.test_per_class", defaults.synthetic.test_per_class),
        spread=get("synthetic.spread", defaults.synthetic.spread),
        seed=get("synthetic.seed", defaults.synthetic.seed),
    )

    with _section(raw, "partition"):
        partition = PartitionConfig(
            num_clients=get("partition.clients", defaults.partition.num_clients),
            gamma=get("partition.gamma", defaults.partition.gamma),
            seed=get("partition.seed", defaults.partition.seed),
        )

    seed = get("run.seed", defaults.seed)
    with _section(raw, "train"):
        train = TrainConfig(
            learning_rate=get("train.learning_rate", defaults.train.learning_rate),
            batch_size=get("train.batch_size", defaults.train.batch_size),
            local_epochs=get("train.local_epochs", defaults.train.local_epochs),
        )

    with _section(raw, "attack"):
        attack = replace(
            attack_defaults,
            kind=get("attack.kind", attack_defaults.kind),
            epsilon=get("attack.epsilon", attack_defaults.epsilon),
            step_size=get("attack.step_size", attack_defaults.step_size),
            steps=get("attack.steps", attack_defaults.steps),
            random_start=get("attack.random_start", attack_defaults.random_start),
        )

    evaluation = EvaluationSpec(
        attacks=get("eval.attacks", defaults.evaluation.attacks),
        epsilon=get("eval.epsilon", None),
        step_size=get("eval.step_size", None),
        steps=get("eval.steps", defaults.evaluation.steps),
        batch_size=get("eval.batch_size", defaults.evaluation.batch_size),
    )

    with _section(raw, "calib"):
        calibration = CalibrationConfig(
            alpha=get("calib.alpha", calib_defaults.alpha),
            beta=get("calib.beta", calib_defaults.beta),
            enabled=get("calib.enabled", True),
        )

    with _section(raw, "contrast"):
        contrast = ContrastConfig(
            temperature=get("contrast.tau", defaults.contrast.temperature),
            weight=get("contrast.lambda", defaults.contrast.weight),
            enabled=get("contrast.enabled", True),
            feature_source=get("contrast.features", defaults.contrast.feature_source),
            averaging=get("contrast.averaging", defaults.contrast.averaging),
        )

    with _section(raw, "federation"):
        federation = FederationSpec(
            methods=get("federation.method", defaults.federation.methods),
            rounds=get("federation.rounds", defaults.federation.rounds),
            clients_per_round=get("federation.clients_per_round", None),
            workers=get("federation.workers", defaults.federation.workers),
        )

    output = Path(get("run.output", defaults.output))
    output_dir = os.environ.get(OUTPUT_DIR_ENV)
    if output_dir:
        output = Path(output_dir) / output.name

    return ExperimentConfig(
        dataset=dataset,
        synthetic=synthetic,
        partition_mode=get("partition.mode", defaults.partition_mode),
        partition=partition,
        hidden=get("model.hidden", defaults.hidden),
        train=train,
        attack=attack,
        evaluation=evaluation,
        calibration=calibration,
        contrast=contrast,
        federation=federation,
        seed=seed,
        output=output,
        progress=get("run.progress", defaults.progress),
        variant=variant,
    )


def _read_raw(path: Path | str, overrides: Iterable[str]) -> RawConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(message=f"cannot read {path}: {e.strerror}", field_name="--config") from e
    raw = parse_config_text(text)
    raw.update(parse_overrides(overrides))
    return raw


def expand_sweep(raw: RawConfig) -> list[tuple[str, RawConfig]]:
    """
    Expand comma lists under SWEEP_KEYS into one raw config per combination.

    Combinations follow SWEEP_KEYS order with the last key varying fastest.
    Labels join ``<prefix><value>`` for every listed key, e.g. ``gamma0.1_seed2``;
    keys holding a single value do not appear in the label.

    Returns:
        (label, raw config) pairs; a config without lists gives one pair labelled ""

    Raises:
        ConfigError: If a list has an empty entry or repeats a value
    """
    axes: list[tuple[str, list[str], int | None]] = []
    for key in SWEEP_KEYS:
        if key not in raw:
            continue
        text, line_number = raw[key]
        if "," not in text:
            continue
        values = [part.strip() for part in text.split(",")]
        if not all(values):
            raise ConfigError(
                message="empty entry in value list", field_name=key, line_number=line_number
            )
        if len(set(values)) != len(values):
            raise ConfigError(
                message="repeated entry in value list", field_name=key, line_number=line_number
            )
        axes.append((key, values, line_number))

    points: list[tuple[str, RawConfig]] = []
    for combination in itertools.product(*(values for _, values, _ in axes)):
        point = dict(raw)
        labels = []
        for (key, _, line_number), value in zip(axes, combination, strict=True):
            point[key] = (value, line_number)
            labels.append(f"{SWEEP_KEYS[key]}{value}")
        points.append(("_".join(labels), point))
    return points


def load_config(path: Path | str, overrides: Iterable[str] = ()) -> ExperimentConfig:
    """
    Read a config file and apply command-line overrides.

    Args:
        path: Flat key-value config file
        overrides: ``key=value`` strings that replace file values

    Returns:
        Validated ExperimentConfig

    Raises:
        ConfigError: If the file cannot be read, any value is invalid or a
            sweep key holds a value list
    """
    return build_config(_read_raw(path, overrides))


def load_sweep(path: Path | str, overrides: Iterable[str] = ()) -> list[ExperimentConfig]:
    """
    Read a config file whose sweep keys may hold value lists.

    Returns:
        One validated ExperimentConfig per combination, each tagged with its
        variant label so reports land in separate files

    Raises:
        ConfigError: If the file cannot be read or any value is invalid
    """
    raw = _read_raw(path, overrides)
    return [build_config(point, variant=label) for label, point in expand_sweep(raw)]
