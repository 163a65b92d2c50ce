"""Clean and robust accuracy of a model on a held-out test set."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import NDArray

from .attacks import AttackConfig, run_attack
from .data import Dataset
from .exceptions import DomainError
from .nn import ModelParams, forward

DEFAULT_EVAL_BATCH_SIZE = 500


@dataclass(frozen=True)
class EvaluationResult:
    """Clean accuracy and robust accuracy per named attack, as fractions."""

    clean_accuracy: float
    robust_accuracy: dict[str, float] = field(default_factory=dict)

    @property
    def mean_robust_accuracy(self) -> float:
        if not self.robust_accuracy:
            return 0.0
        return float(np.mean(list(self.robust_accuracy.values())))


def predict(params: ModelParams, inputs: NDArray) -> NDArray[np.int64]:
    """Argmax class per row; ties go to the lowest class index."""
    return np.argmax(forward(params, inputs).logits, axis=1)


def evaluate(
    params: ModelParams,
    test_set: Dataset,
    attacks: Sequence[AttackConfig],
    batch_size: int = DEFAULT_EVAL_BATCH_SIZE,
) -> EvaluationResult:
    """
    Accuracy on clean inputs and under each attack.

    Attacks always run without a random start, so evaluation is deterministic.

    Raises:
        DomainError: If the test set is empty or two attacks share a name
    """
    if len(test_set) == 0:
        raise DomainError(
            message="test set is empty", name="test set size", value=0, valid_range=">= 1"
        )
    names = [a.name for a in attacks]
    if len(set(names)) != len(names):
        raise DomainError(
            message=f"attack names must be unique, got {names}",
            name="attack list",
            value=len(names),
            valid_range="distinct names",
        )
    deterministic = [replace(a, random_start=False) for a in attacks]

    clean_correct = 0
    robust_correct = dict.fromkeys(names, 0)
    for start in range(0, len(test_set), batch_size):
        x = test_set.inputs[start : start + batch_size]
        y = test_set.labels[start : start + batch_size]
        clean_correct += int((predict(params, x) == y).sum())
        for name, attack in zip(names, deterministic, strict=True):
            x_adv = run_attack(params, x, y, attack).perturbed
            robust_correct[name] += int((predict(params, x_adv) == y).sum())

    total = len(test_set)
    return EvaluationResult(
        clean_accuracy=clean_correct / total,
        robust_accuracy={name: count / total for name, count in robust_correct.items()},
    )
