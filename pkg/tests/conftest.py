"""Shared pytest fixtures for the federated adversarial-training simulator tests."""

import struct
from collections.abc import Callable
from pathlib import Path

import numpy as np
import pytest

from fatcc_sim.data import Dataset, synth_gaussian
from fatcc_sim.nn import Layer, ModelParams, init_params

FINITE_DIFF_STEP = 1e-5


def _with_entry(params: ModelParams, k: int, name: str, index: tuple[int, ...], delta: float) -> ModelParams:
    layer = params.layers[k]
    weight, bias = layer.weight.copy(), layer.bias.copy()
    (weight if name == "weight" else bias)[index] += delta
    layers = list(params.layers)
    layers[k] = Layer(weight=weight, bias=bias)
    return ModelParams(tuple(layers))


def _numeric_param_grads(loss_fn: Callable[[ModelParams], float], params: ModelParams) -> list[tuple[np.ndarray, np.ndarray]]:
    """Central differences of loss_fn for every weight and bias entry."""
    h = FINITE_DIFF_STEP
    grads = []
    for k, layer in enumerate(params.layers):
        pair = []
        for name in ("weight", "bias"):
            base = getattr(layer, name)
            grad = np.zeros_like(base)
            for index in np.ndindex(base.shape):
                up = loss_fn(_with_entry(params, k, name, index, h))
                down = loss_fn(_with_entry(params, k, name, index, -h))
                grad[index] = (up - down) / (2 * h)
            pair.append(grad)
        grads.append((pair[0], pair[1]))
    return grads


def _numeric_array_grad(loss_fn: Callable[[np.ndarray], float], values: np.ndarray) -> np.ndarray:
    """Central differences of loss_fn with respect to every entry of an array."""
    h = FINITE_DIFF_STEP
    grad = np.zeros_like(values)
    for index in np.ndindex(values.shape):
        up, down = values.copy(), values.copy()
        up[index] += h
        down[index] -= h
        grad[index] = (loss_fn(up) - loss_fn(down)) / (2 * h)
    return grad


def _write_idx(path: Path, magic: int, dims: tuple[int, ...], payload: bytes) -> Path:
    path.write_bytes(struct.pack(f">I{len(dims)}I", magic, *dims) + payload)
    return path


@pytest.fixture
def numeric_param_grads():
    """Finite-difference gradients of a loss over every parameter."""
    return _numeric_param_grads


@pytest.fixture
def numeric_array_grad():
    """Finite-difference gradient of a loss over an array."""
    return _numeric_array_grad


@pytest.fixture
def write_idx():
    """Writer for raw IDX files: write_idx(path, magic, dims, payload)."""
    return _write_idx


@pytest.fixture
def small_params() -> ModelParams:
    """A 4 -> 5 -> 3 -> 3 MLP with Glorot weights."""
    return init_params((4, 5, 3, 3), seed=7)


@pytest.fixture
def small_batch() -> tuple[np.ndarray, np.ndarray]:
    """Six inputs in [0, 1] with labels covering every class."""
    rng = np.random.default_rng(11)
    x = rng.uniform(0.05, 0.95, size=(6, 4))
    y = np.array([0, 1, 2, 0, 1, 2])
    return x, y


@pytest.fixture
def blobs() -> Dataset:
    """Three well separated Gaussian blobs in eight dimensions."""
    return synth_gaussian(num_classes=3, dims=8, per_class=40, spread=0.05, seed=3)


@pytest.fixture
def tiny_config(tmp_path: Path) -> Path:
    """A desk-scale experiment small enough to run in a test."""
    path = tmp_path / "tiny.conf"
    path.write_text(
        "\n".join(
            [
                "# tiny synthetic run",
                "synthetic.classes = 3",
                "synthetic.dims = 6",
                "synthetic.train_per_class = 20",
                "synthetic.test_per_class = 5",
                "synthetic.spread = 0.08",
                "",
                "partition.clients = 3",
                "partition.gamma = 0.5",
                "model.hidden = 8,4",
                "train.batch_size = 16",
                "attack.steps = 2",
                "eval.steps = 3",
                "federation.rounds = 2",
                "run.progress = false",
                f"run.output = {tmp_path / 'out' / 'report.csv'}",
            ]
        )
        + "\n"
    )
    return path
