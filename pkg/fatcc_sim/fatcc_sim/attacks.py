"""White-box l-infinity attacks: FGSM, BIM and PGD.

Every attack ascends the plain (uncalibrated) cross-entropy of the model
under attack, whatever loss the defender trains with.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Any

import numpy as np
from numpy.typing import NDArray

from .exceptions import DomainError
from .nn import ModelParams, PlainCrossEntropy, Tensor, backprop

EVAL_PGD_STEPS = 40


class AttackKind(Enum):
    """Supported attacks."""

    FGSM = "fgsm"
    BIM = "bim"
    PGD = "pgd"


# (epsilon, step_size) per benchmark
ATTACK_PRESETS: dict[str, tuple[float, float]] = {
    "mnist": (0.3, 0.01),
    "fashion-mnist": (32 / 255, 8 / 255),
    "cifar10": (8 / 255, 2 / 255),
}


@dataclass(frozen=True)
class AttackConfig:
    """Perturbation budget and iteration schedule."""

    epsilon: float
    step_size: float
    steps: int = 1
    random_start: bool = False
    kind: AttackKind = AttackKind.PGD
    clamp_min: float = 0.0
    clamp_max: float = 1.0

    def __post_init__(self) -> None:
        if self.epsilon < 0:
            raise DomainError(
                message="budget cannot be negative",
                name="epsilon",
                value=self.epsilon,
                valid_range=">= 0",
            )
        if self.step_size < 0:
            raise DomainError(
                message="step size cannot be negative",
                name="step_size",
                value=self.step_size,
                valid_range=">= 0",
            )
        if self.steps < 1:
            raise DomainError(
                message="need at least one step", name="steps", value=self.steps, valid_range=">= 1"
            )
        if self.clamp_min > self.clamp_max:
            raise DomainError(
                message="clamp range is empty",
                name="clamp_min",
                value=self.clamp_min,
                valid_range=f"<= {self.clamp_max}",
            )

    @classmethod
    def from_preset(cls, name: str, **overrides: Any) -> AttackConfig:
        """Published budget and step size for mnist, fashion-mnist or cifar10."""
        if name not in ATTACK_PRESETS:
            raise DomainError(
                message="unknown attack preset",
                name="preset",
                value=0,
                valid_range=f"one of {sorted(ATTACK_PRESETS)}",
            )
        epsilon, step_size = ATTACK_PRESETS[name]
        return cls(epsilon=epsilon, step_size=step_size, **overrides)

    @property
    def name(self) -> str:
        """Report label, e.g. 'fgsm', 'bim10', 'pgd40'."""
        if self.kind is AttackKind.FGSM:
            return self.kind.value
        return f"{self.kind.value}{self.steps}"


@dataclass(frozen=True, eq=False)
class AdversarialBatch:
    """Clean inputs with their perturbed counterparts."""

    original: Tensor
    perturbed: Tensor

    @property
    def delta(self) -> Tensor:
        return self.perturbed - self.original


def evaluation_attack(
    kind: AttackKind,
    epsilon: float,
    step_size: float | None = None,
    steps: int = EVAL_PGD_STEPS,
) -> AttackConfig:
    """Deterministic attack for robustness evaluation (no random start).

    step_size defaults to epsilon / 10; FGSM always takes one step.
    """
    return AttackConfig(
        epsilon=epsilon,
        step_size=epsilon / 10 if step_size is None else step_size,
        steps=1 if kind is AttackKind.FGSM else steps,
        random_start=False,
        kind=kind,
    )


def _input_grad(params: ModelParams, x: Tensor, y: NDArray) -> Tensor:
    return backprop(params, x, y, PlainCrossEntropy()).inputs


def fgsm(
    params: ModelParams,
    x: NDArray,
    y: NDArray,
    epsilon: float,
    clamp: tuple[float, float] = (0.0, 1.0),
) -> AdversarialBatch:
    """Single signed-gradient step of size epsilon, clamped to the input range."""
    if epsilon < 0:
        raise DomainError(
            message="budget cannot be negative", name="epsilon", value=epsilon, valid_range=">= 0"
        )
    x = np.asarray(x, dtype=np.float64)
    grad = _input_grad(params, x, y)
    return AdversarialBatch(original=x, perturbed=np.clip(x + epsilon * np.sign(grad), *clamp))


def pgd(
    params: ModelParams, x: NDArray, y: NDArray, config: AttackConfig, seed: int = 0
) -> AdversarialBatch:
    """
    Projected gradient ascent inside the l-infinity ball of radius epsilon around x.

    Each step adds step_size * sign(grad), clips the perturbation to
    [-epsilon, epsilon] and clamps the result to the input range. With
    random_start the perturbation starts uniform in [-epsilon, epsilon].

    Args:
        params: Model under attack
        x: Clean (batch, features) inputs
        y: True labels
        config: Budget and schedule
        seed: Random-start seed; the only source of randomness

    Returns:
        AdversarialBatch with every row inside the budget and clamp range
    """
    x = np.asarray(x, dtype=np.float64)
    lo, hi = config.clamp_min, config.clamp_max
    eps = config.epsilon
    if config.random_start:
        delta = np.random.default_rng(seed).uniform(-eps, eps, size=x.shape)
    else:
        delta = np.zeros_like(x)
    x_adv = np.clip(x + delta, lo, hi)
    delta = x_adv - x
    for _ in range(config.steps):
        grad = _input_grad(params, x_adv, y)
        delta = np.clip(delta + config.step_size * np.sign(grad), -eps, eps)
        x_adv = np.clip(x + delta, lo, hi)
        delta = x_adv - x
    return AdversarialBatch(original=x, perturbed=x_adv)


def bim(params: ModelParams, x: NDArray, y: NDArray, config: AttackConfig) -> AdversarialBatch:
    """Iterative FGSM: PGD without a random start."""
    return pgd(params, x, y, replace(config, random_start=False))


def run_attack(
    params: ModelParams, x: NDArray, y: NDArray, config: AttackConfig, seed: int = 0
) -> AdversarialBatch:
    """Dispatch on config.kind."""
    if config.kind is AttackKind.FGSM:
        return fgsm(params, x, y, config.epsilon, (config.clamp_min, config.clamp_max))
    if config.kind is AttackKind.BIM:
        return bim(params, x, y, config)
    return pgd(params, x, y, config, seed=seed)
