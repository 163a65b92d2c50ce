"""Dense rectifier network with exact analytic gradients.

The network is a multilayer perceptron: every hidden layer applies a
rectifier, the output layer is affine and produces the logits. The
activation feeding the output layer is the feature vector consumed by the
prototype contrast loss, so a loss may send gradient into both the logits
and the features.

All values are float64 numpy arrays. Parameters are immutable: every update
returns a new ModelParams.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from numpy.typing import NDArray

from .exceptions import DomainError, NumericalError, ShapeError

Tensor = NDArray[np.float64]
Labels = NDArray[np.int64]

DEFAULT_LEARNING_RATE = 0.01
DEFAULT_BATCH_SIZE = 128
DEFAULT_LOCAL_EPOCHS = 1


def _frozen_copy(values: NDArray, ndim: int, name: str) -> Tensor:
    array = np.array(values, dtype=np.float64, copy=True)
    if array.ndim != ndim:
        raise ShapeError(
            message=f"{name} must be {ndim}-dimensional",
            layer=name,
            expected=ndim,
            actual=array.ndim,
        )
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Layer:
    """One affine layer: weight matrix (out x in) and bias vector (out)."""

    weight: Tensor
    bias: Tensor

    def __post_init__(self) -> None:
        weight = _frozen_copy(self.weight, 2, "weight")
        bias = _frozen_copy(self.bias, 1, "bias")
        if bias.shape[0] != weight.shape[0]:
            raise ShapeError(
                message="bias length must equal weight rows",
                layer="bias",
                expected=weight.shape[0],
                actual=bias.shape[0],
            )
        object.__setattr__(self, "weight", weight)
        object.__setattr__(self, "bias", bias)

    @property
    def in_dim(self) -> int:
        return int(self.weight.shape[1])

    @property
    def out_dim(self) -> int:
        return int(self.weight.shape[0])


@dataclass(frozen=True, eq=False)
class ModelParams:
    """The shared weights of a feedforward classifier."""

    layers: tuple[Layer, ...]

    def __post_init__(self) -> None:
        layers = tuple(self.layers)
        if not layers:
            raise ShapeError(
                message="model needs at least one layer", layer="model", expected=1, actual=0
            )
        for k in range(1, len(layers)):
            if layers[k].in_dim != layers[k - 1].out_dim:
                raise ShapeError(
                    message="consecutive layer dimensions do not chain",
                    layer=f"layer {k}",
                    expected=layers[k - 1].out_dim,
                    actual=layers[k].in_dim,
                )
        object.__setattr__(self, "layers", layers)

    @classmethod
    def from_arrays(cls, arrays: Sequence[tuple[NDArray, NDArray]]) -> ModelParams:
        """Build parameters from (weight, bias) pairs."""
        return cls(tuple(Layer(weight=w, bias=b) for w, b in arrays))

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.layers[0].in_dim, *(layer.out_dim for layer in self.layers))

    @property
    def num_classes(self) -> int:
        return self.layers[-1].out_dim

    @property
    def feature_width(self) -> int:
        return self.layers[-1].in_dim

    def is_finite(self) -> bool:
        return all(
            np.isfinite(layer.weight).all() and np.isfinite(layer.bias).all()
            for layer in self.layers
        )


@dataclass(frozen=True)
class TrainConfig:
    """Local SGD settings."""

    learning_rate: float = DEFAULT_LEARNING_RATE
    batch_size: int = DEFAULT_BATCH_SIZE
    local_epochs: int = DEFAULT_LOCAL_EPOCHS

    def __post_init__(self) -> None:
        if self.learning_rate < 0:
            raise DomainError(
                message="learning rate cannot be negative",
                name="learning_rate",
                value=self.learning_rate,
                valid_range=">= 0",
            )
        if self.batch_size < 1:
            raise DomainError(
                message="batch size must be positive",
                name="batch_size",
                value=self.batch_size,
                valid_range=">= 1",
            )
        if self.local_epochs < 1:
            raise DomainError(
                message="local epochs must be positive",
                name="local_epochs",
                value=self.local_epochs,
                valid_range=">= 1",
            )


@dataclass(frozen=True, eq=False)
class ForwardTrace:
    """Per-layer intermediates of one forward pass over a batch.

    activations[k] is the input to layer k, so activations[0] is the batch
    itself and activations[-1] is the penultimate feature map.
    """

    pre_activations: tuple[Tensor, ...]
    activations: tuple[Tensor, ...]

    @property
    def feature(self) -> Tensor:
        return self.activations[-1]

    @property
    def logits(self) -> Tensor:
        return self.pre_activations[-1]


def init_params(widths: Sequence[int], seed: int) -> ModelParams:
    """Glorot-uniform weights and zero biases for the given layer widths.

    widths lists the input width, every hidden width, then the class count,
    e.g. (784, 256, 80, 10).
    """
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise DomainError(
            message="need an input width and an output width, all positive",
            name="widths",
            value=len(widths),
            valid_range="at least 2 positive entries",
        )
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:], strict=True):
        scale = np.sqrt(6.0 / (fan_in + fan_out))
        weight = rng.uniform(-scale, scale, size=(fan_out, fan_in))
        layers.append(Layer(weight=weight, bias=np.zeros(fan_out)))
    return ModelParams(tuple(layers))


def _as_batch(params: ModelParams, inputs: NDArray) -> Tensor:
    batch = np.asarray(inputs, dtype=np.float64)
    expected = params.layers[0].in_dim
    if batch.ndim != 2 or batch.shape[1] != expected:
        raise ShapeError(
            message="input batch does not match the first layer",
            layer="layer 0",
            expected=(batch.shape[0] if batch.ndim else 0, expected),
            actual=tuple(batch.shape),
        )
    return batch


def forward(params: ModelParams, inputs: NDArray) -> ForwardTrace:
    """Run the network over a (batch, features) array."""
    activation = _as_batch(params, inputs)
    pre_activations: list[Tensor] = []
    activations: list[Tensor] = [activation]
    last = len(params.layers) - 1
    for k, layer in enumerate(params.layers):
        pre = activation @ layer.weight.T + layer.bias
        pre_activations.append(pre)
        if k < last:
            activation = np.maximum(pre, 0.0)
            activations.append(activation)
    return ForwardTrace(tuple(pre_activations), tuple(activations))


def check_labels(labels: NDArray, num_classes: int, batch_size: int | None = None) -> Labels:
    """Validate class indices and return them as an int64 array."""
    array = np.asarray(labels)
    if array.ndim != 1:
        raise ShapeError(
            message="labels must be a vector", layer="labels", expected=1, actual=array.ndim
        )
    if batch_size is not None and array.shape[0] != batch_size:
        raise ShapeError(
            message="one label per batch row",
            layer="labels",
            expected=batch_size,
            actual=array.shape[0],
        )
    if array.size and not np.issubdtype(array.dtype, np.integer):
        raise DomainError(
            message="labels must be integer class indices",
            name="label dtype",
            value=0,
            valid_range="integer",
        )
    array = array.astype(np.int64, copy=False)
    bad = array[(array < 0) | (array >= num_classes)]
    if bad.size:
        raise DomainError(
            message="label outside the class range",
            name="label",
            value=int(bad[0]),
            valid_range=f"in [0, {num_classes})",
        )
    return array


def softmax(logits: Tensor) -> Tensor:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def _log_softmax(logits: Tensor) -> Tensor:
    if not np.isfinite(logits).all():
        raise NumericalError(message="logits contain NaN or Inf", stage="cross-entropy")
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy(logits: Tensor, labels: NDArray) -> float:
    """Mean softmax cross-entropy over the batch."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = check_labels(labels, logits.shape[1], logits.shape[0])
    log_probs = _log_softmax(logits)
    return float(-np.mean(log_probs[np.arange(labels.shape[0]), labels]))


def cross_entropy_grad(logits: Tensor, labels: NDArray) -> tuple[float, Tensor]:
    """Cross-entropy value and its gradient with respect to the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = check_labels(labels, logits.shape[1], logits.shape[0])
    rows = np.arange(labels.shape[0])
    log_probs = _log_softmax(logits)
    grad = np.exp(log_probs)
    grad[rows, labels] -= 1.0
    return float(-np.mean(log_probs[rows, labels])), grad / labels.shape[0]


@dataclass(frozen=True, eq=False)
class LossGrad:
    """A loss value with its gradients at the logits and (optionally) the features."""

    loss: float
    logits: Tensor
    feature: Tensor | None = None


class LossSpec(Protocol):
    """A differentiable batch loss over a forward trace."""

    def value_and_grad(self, trace: ForwardTrace, labels: Labels) -> LossGrad: ...


@dataclass(frozen=True)
class PlainCrossEntropy:
    """Uncalibrated softmax cross-entropy on the logits."""

    def value_and_grad(self, trace: ForwardTrace, labels: Labels) -> LossGrad:
        loss, grad = cross_entropy_grad(trace.logits, labels)
        return LossGrad(loss=loss, logits=grad)


@dataclass(frozen=True, eq=False)
class Gradients:
    """Result of backprop: parameter and input gradients plus the loss they belong to."""

    params: ModelParams
    inputs: Tensor
    loss: float
    trace: ForwardTrace = field(repr=False)


def backprop(
    params: ModelParams,
    inputs: NDArray,
    labels: NDArray,
    loss_spec: LossSpec | None = None,
) -> Gradients:
    """Reverse-mode gradients of a loss with respect to every parameter and input.

    Args:
        params: Network weights
        inputs: (batch, features) input array
        labels: Class index per row
        loss_spec: Loss to differentiate (plain cross-entropy when None)

    Returns:
        Gradients with the same layout as params and as inputs

    Raises:
        ShapeError: If the input width does not match the first layer
        DomainError: If a label is outside [0, C)
        NumericalError: If the loss is not finite
    """
    spec = loss_spec if loss_spec is not None else PlainCrossEntropy()
    trace = forward(params, inputs)
    labels = check_labels(labels, params.num_classes, trace.logits.shape[0])
    out = spec.value_and_grad(trace, labels)
    if not np.isfinite(out.loss):
        raise NumericalError(message=f"loss evaluated to {out.loss}", stage="backprop")

    delta = out.logits
    last = len(params.layers) - 1
    layer_grads: list[Layer] = []
    input_grad = delta
    for k in range(last, -1, -1):
        layer = params.layers[k]
        layer_grads.append(Layer(weight=delta.T @ trace.activations[k], bias=delta.sum(axis=0)))
        upstream = delta @ layer.weight
        if k == last and out.feature is not None:
            upstream = upstream + out.feature
        if k > 0:
            # rectifier subgradient at 0 is 0
            delta = upstream * (trace.pre_activations[k - 1] > 0.0)
        else:
            input_grad = upstream
    return Gradients(
        params=ModelParams(tuple(reversed(layer_grads))),
        inputs=input_grad,
        loss=out.loss,
        trace=trace,
    )


def sgd_step(params: ModelParams, grads: ModelParams, learning_rate: float) -> ModelParams:
    """One plain SGD update, returning new parameters."""
    if learning_rate < 0:
        raise DomainError(
            message="learning rate cannot be negative",
            name="learning_rate",
            value=learning_rate,
            valid_range=">= 0",
        )
    if grads.widths != params.widths:
        raise ShapeError(
            message="gradient layout differs from parameters",
            layer="model",
            expected=params.widths,
            actual=grads.widths,
        )
    return ModelParams(
        tuple(
            Layer(
                weight=p.weight - learning_rate * g.weight,
                bias=p.bias - learning_rate * g.bias,
            )
            for p, g in zip(params.layers, grads.layers, strict=True)
        )
    )
