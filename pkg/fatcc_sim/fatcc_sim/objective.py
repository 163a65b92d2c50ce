"""Local objective: class-frequency logit calibration plus global prototype contrast.

Calibration scales each logit column by w_j = alpha * (1 - p_j)^beta, where
p_j is the class's frequency in the current mini-batch, so frequent classes
are down-weighted. The contrast term pulls a sample's feature toward the
global prototype of its class and pushes it away from the other classes'
global prototypes, with psi(H, G) = exp(cos(H, G) / tau).
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from numpy.typing import NDArray

from .exceptions import DomainError, ShapeError
from .nn import (
    ForwardTrace,
    Labels,
    LossGrad,
    Tensor,
    check_labels,
    cross_entropy,
    cross_entropy_grad,
)

DEFAULT_ALPHA = 10.0
DEFAULT_BETA = 5.0
DEFAULT_TEMPERATURE = 0.07
DEFAULT_CONTRAST_WEIGHT = 1.0

# added to feature and prototype norms so a dead feature has cosine 0
NORM_EPS = 1e-12

# (alpha, beta) per benchmark
CALIBRATION_PRESETS: dict[str, tuple[float, float]] = {
    "mnist": (10.0, 5.0),
    "fashion-mnist": (10.0, 2.0),
    "cifar10": (10.0, 5.0),
}


class FeatureSource(Enum):
    """Which features feed local prototypes."""

    ADVERSARIAL = "adversarial"
    CLEAN = "clean"


class PrototypeAveraging(Enum):
    """Divisor for the global prototype of a class."""

    CONTRIBUTORS = "contributors"
    ALL = "all"


@dataclass(frozen=True)
class CalibrationConfig:
    """Modulating-factor parameters."""

    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    enabled: bool = True

    def __post_init__(self) -> None:
        if not self.alpha > 0:
            raise DomainError(
                message="scale must be positive", name="alpha", value=self.alpha, valid_range="> 0"
            )
        if self.beta < 0:
            raise DomainError(
                message="exponent cannot be negative",
                name="beta",
                value=self.beta,
                valid_range=">= 0",
            )


@dataclass(frozen=True)
class ContrastConfig:
    """Feature-contrast parameters."""

    temperature: float = DEFAULT_TEMPERATURE
    weight: float = DEFAULT_CONTRAST_WEIGHT
    enabled: bool = True
    feature_source: FeatureSource = FeatureSource.ADVERSARIAL
    averaging: PrototypeAveraging = PrototypeAveraging.CONTRIBUTORS

    def __post_init__(self) -> None:
        if not self.temperature > 0:
            raise DomainError(
                message="temperature must be positive",
                name="tau",
                value=self.temperature,
                valid_range="> 0",
            )
        if self.weight < 0:
            raise DomainError(
                message="weight cannot be negative",
                name="lambda",
                value=self.weight,
                valid_range=">= 0",
            )


@dataclass(frozen=True, eq=False)
class BatchClassStats:
    """Per-class counts within one mini-batch."""

    counts: NDArray[np.int64]

    @property
    def batch_size(self) -> int:
        return int(self.counts.sum())

    @property
    def frequencies(self) -> Tensor:
        return self.counts / self.batch_size


@dataclass(frozen=True, eq=False)
class ClassWeights:
    """One calibration weight per class."""

    values: Tensor


def batch_class_stats(labels: NDArray, num_classes: int) -> BatchClassStats:
    labels = check_labels(labels, num_classes)
    if labels.size == 0:
        raise DomainError(message="batch is empty", name="batch size", value=0, valid_range=">= 1")
    return BatchClassStats(counts=np.bincount(labels, minlength=num_classes))


def modulating_weights(stats: BatchClassStats, config: CalibrationConfig) -> ClassWeights:
    """w_j = alpha * (1 - p_j)^beta; a class filling the whole batch gets 0 when beta > 0."""
    return ClassWeights(values=config.alpha * (1.0 - stats.frequencies) ** config.beta)


def _check_weights(weights: ClassWeights, num_classes: int) -> Tensor:
    values = np.asarray(weights.values, dtype=np.float64)
    if values.shape != (num_classes,):
        raise ShapeError(
            message="one weight per class",
            layer="class weights",
            expected=num_classes,
            actual=values.shape[0] if values.ndim == 1 else tuple(values.shape),
        )
    return values


def calibrated_ce(logits: Tensor, weights: ClassWeights, labels: NDArray) -> float:
    """Cross-entropy on elementwise-scaled logits z'_j = w_j * z_j."""
    logits = np.asarray(logits, dtype=np.float64)
    return cross_entropy(logits * _check_weights(weights, logits.shape[1]), labels)


# =============================================================================
# PROTOTYPES
# =============================================================================


@dataclass(frozen=True, eq=False)
class PrototypeSet:
    """Per-class mean feature vectors; classes without contributors are absent."""

    num_classes: int
    width: int
    vectors: Mapping[int, Tensor] = field(default_factory=dict)

    def __post_init__(self) -> None:
        vectors: dict[int, Tensor] = {}
        for c, vector in sorted(self.vectors.items()):
            if not 0 <= c < self.num_classes:
                raise DomainError(
                    message="prototype for unknown class",
                    name="class index",
                    value=c,
                    valid_range=f"in [0, {self.num_classes})",
                )
            array = np.array(vector, dtype=np.float64)
            if array.shape != (self.width,):
                raise ShapeError(
                    message="prototype width mismatch",
                    layer=f"prototype {c}",
                    expected=self.width,
                    actual=tuple(array.shape),
                )
            array.setflags(write=False)
            vectors[int(c)] = array
        object.__setattr__(self, "vectors", vectors)

    def __contains__(self, class_index: object) -> bool:
        return class_index in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)

    @property
    def classes(self) -> list[int]:
        return list(self.vectors)

    def matrix(self) -> tuple[NDArray[np.int64], Tensor]:
        """Present class indices and their prototypes stacked as rows."""
        classes = np.array(self.classes, dtype=np.int64)
        if not classes.size:
            return classes, np.empty((0, self.width))
        return classes, np.stack([self.vectors[c] for c in self.classes])


@dataclass
class PrototypeAccumulator:
    """Count-weighted running class means over successive batches.

    Owned by a single client's local update.
    """

    num_classes: int
    width: int
    sums: Tensor = field(init=False)
    counts: NDArray[np.int64] = field(init=False)

    def __post_init__(self) -> None:
        self.reset()

    def reset(self) -> None:
        self.sums = np.zeros((self.num_classes, self.width))
        self.counts = np.zeros(self.num_classes, dtype=np.int64)

    def update(self, features: Tensor, labels: NDArray) -> None:
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] != self.width:
            raise ShapeError(
                message="feature width mismatch",
                layer="prototype accumulator",
                expected=self.width,
                actual=tuple(features.shape),
            )
        labels = check_labels(labels, self.num_classes, features.shape[0])
        np.add.at(self.sums, labels, features)
        self.counts += np.bincount(labels, minlength=self.num_classes)

    def result(self) -> PrototypeSet:
        present = np.flatnonzero(self.counts)
        return PrototypeSet(
            num_classes=self.num_classes,
            width=self.width,
            vectors={int(c): self.sums[c] / self.counts[c] for c in present},
        )


def local_prototypes(features: Tensor, labels: NDArray, num_classes: int) -> PrototypeSet:
    """Per-class mean of a batch of features."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ShapeError(
            message="features must be (batch, width)",
            layer="features",
            expected=2,
            actual=features.ndim,
        )
    accumulator = PrototypeAccumulator(num_classes=num_classes, width=features.shape[1])
    accumulator.update(features, labels)
    return accumulator.result()


def aggregate_global(
    prototype_sets: Sequence[PrototypeSet],
    averaging: PrototypeAveraging = PrototypeAveraging.CONTRIBUTORS,
) -> PrototypeSet:
    """
    Average client prototypes class by class.

    With CONTRIBUTORS (default) each class is averaged over the clients that
    have it; with ALL every class sum is divided by the number of sets.
    Classes no client has stay absent.
    """
    if not prototype_sets:
        raise DomainError(
            message="nothing to aggregate", name="prototype sets", value=0, valid_range=">= 1"
        )
    first = prototype_sets[0]
    for i, s in enumerate(prototype_sets):
        if s.width != first.width or s.num_classes != first.num_classes:
            raise ShapeError(
                message="prototype sets disagree on layout",
                layer=f"client set {i}",
                expected=(first.num_classes, first.width),
                actual=(s.num_classes, s.width),
            )
    vectors: dict[int, Tensor] = {}
    for c in range(first.num_classes):
        contributions = [s.vectors[c] for s in prototype_sets if c in s]
        if not contributions:
            continue
        if averaging is PrototypeAveraging.CONTRIBUTORS:
            divisor = len(contributions)
        else:
            divisor = len(prototype_sets)
        vectors[c] = np.sum(contributions, axis=0) / divisor
    return PrototypeSet(num_classes=first.num_classes, width=first.width, vectors=vectors)


# =============================================================================
# FEATURE CONTRAST
# =============================================================================


@dataclass(frozen=True, eq=False)
class ContrastTerms:
    """Per-sample pieces of the contrast loss.

    losses[i] = -log(psi_pos / (psi_pos + sum psi_neg)) and
    ratios[i] = sum psi_neg / psi_pos for samples whose class has a global
    prototype (valid[i]); both are 0 elsewhere.
    """

    losses: Tensor
    ratios: Tensor
    valid: NDArray[np.bool_]
    cosines: Tensor
    softmax: Tensor
    positive_columns: NDArray[np.int64]


def contrast_terms(
    features: Tensor, labels: NDArray, prototypes: PrototypeSet, tau: float
) -> ContrastTerms:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != prototypes.width:
        raise ShapeError(
            message="feature width differs from prototypes",
            layer="contrast",
            expected=prototypes.width,
            actual=tuple(features.shape),
        )
    if not tau > 0:
        raise DomainError(
            message="temperature must be positive", name="tau", value=tau, valid_range="> 0"
        )
    labels = check_labels(labels, prototypes.num_classes, features.shape[0])
    batch = features.shape[0]
    classes, protos = prototypes.matrix()

    column_of = np.full(prototypes.num_classes, -1, dtype=np.int64)
    column_of[classes] = np.arange(classes.size)
    positive = column_of[labels]
    valid = positive >= 0

    h_norm = np.linalg.norm(features, axis=1) + NORM_EPS
    g_norm = np.linalg.norm(protos, axis=1) + NORM_EPS
    cosines = (features @ protos.T) / (h_norm[:, None] * g_norm[None, :])
    scores = cosines / tau

    losses = np.zeros(batch)
    ratios = np.zeros(batch)
    soft = np.zeros_like(scores)
    if valid.any():
        rows = np.flatnonzero(valid)
        s = scores[rows]
        s_pos = s[np.arange(rows.size), positive[rows]]
        top = s.max(axis=1, keepdims=True)
        exp = np.exp(s - top)
        total = exp.sum(axis=1)
        losses[rows] = np.log(total) + top[:, 0] - s_pos
        soft[rows] = exp / total[:, None]
        relative = np.exp(s - s_pos[:, None])
        relative[np.arange(rows.size), positive[rows]] = 0.0
        ratios[rows] = relative.sum(axis=1)
    return ContrastTerms(
        losses=losses,
        ratios=ratios,
        valid=valid,
        cosines=cosines,
        softmax=soft,
        positive_columns=positive,
    )


def contrastive_loss(
    features: Tensor, labels: NDArray, prototypes: PrototypeSet, tau: float
) -> float:
    """Batch mean of the per-sample contrast loss; 0 when no global prototypes exist."""
    if not len(prototypes):
        return 0.0
    return float(contrast_terms(features, labels, prototypes, tau).losses.mean())


def contrastive_grad(
    features: Tensor, labels: NDArray, prototypes: PrototypeSet, tau: float
) -> tuple[float, Tensor]:
    """Contrast loss and its gradient with respect to the features."""
    features = np.asarray(features, dtype=np.float64)
    if not len(prototypes):
        return 0.0, np.zeros_like(features)
    terms = contrast_terms(features, labels, prototypes, tau)
    batch = features.shape[0]
    _, protos = prototypes.matrix()

    coeff = terms.softmax.copy()
    rows = np.flatnonzero(terms.valid)
    coeff[rows, terms.positive_columns[rows]] -= 1.0
    coeff /= batch

    raw_norm = np.linalg.norm(features, axis=1)
    h_norm = raw_norm + NORM_EPS
    unit = np.divide(
        features, raw_norm[:, None], out=np.zeros_like(features), where=raw_norm[:, None] > 0
    )
    g_unit = protos / (np.linalg.norm(protos, axis=1) + NORM_EPS)[:, None]

    # d cos_j / dH = (G_j / |G_j| - cos_j * H / |H|) / |H|
    radial = (coeff * terms.cosines).sum(axis=1)
    grad = (coeff @ g_unit - radial[:, None] * unit) / (h_norm[:, None] * tau)
    return float(terms.losses.mean()), grad


def taylor_ratio_diagnostic(
    features: Tensor, labels: NDArray, prototypes: PrototypeSet, tau: float
) -> float:
    """Batch mean of sum(psi_neg) / psi_pos, the first-order stand-in for the contrast loss.

    Samples whose class has no global prototype count as 0, as in contrastive_loss,
    so the result never falls below the contrast loss of the same batch.
    """
    if not len(prototypes):
        return 0.0
    return float(contrast_terms(features, labels, prototypes, tau).ratios.mean())


# =============================================================================
# COMBINED OBJECTIVE
# =============================================================================


@dataclass(frozen=True, eq=False)
class FatccLoss:
    """Calibrated cross-entropy plus weighted prototype contrast.

    weights=None disables calibration; prototypes=None (or an empty set)
    disables the contrast term.
    """

    weights: ClassWeights | None = None
    prototypes: PrototypeSet | None = None
    temperature: float = DEFAULT_TEMPERATURE
    contrast_weight: float = DEFAULT_CONTRAST_WEIGHT

    @property
    def contrast_active(self) -> bool:
        if self.prototypes is None or self.contrast_weight == 0:
            return False
        return len(self.prototypes) > 0

    def value_and_grad(self, trace: ForwardTrace, labels: Labels) -> LossGrad:
        logits = trace.logits
        if self.weights is None:
            loss, logit_grad = cross_entropy_grad(logits, labels)
        else:
            w = _check_weights(self.weights, logits.shape[1])
            loss, scaled_grad = cross_entropy_grad(logits * w, labels)
            logit_grad = scaled_grad * w

        feature_grad = None
        prototypes = self.prototypes
        if prototypes is not None and self.contrast_active:
            contrast, contrast_grad = contrastive_grad(
                trace.feature, labels, prototypes, self.temperature
            )
            loss += self.contrast_weight * contrast
            feature_grad = self.contrast_weight * contrast_grad
        return LossGrad(loss=loss, logits=logit_grad, feature=feature_grad)


def fatcc_local_loss(
    trace: ForwardTrace,
    labels: NDArray,
    weights: ClassWeights | None,
    global_prototypes: PrototypeSet | None,
    config: ContrastConfig,
) -> float:
    """Value of the local objective for one traced batch."""
    spec = FatccLoss(
        weights=weights,
        prototypes=global_prototypes if config.enabled else None,
        temperature=config.temperature,
        contrast_weight=config.weight,
    )
    return spec.value_and_grad(trace, check_labels(labels, trace.logits.shape[1])).loss
