"""Datasets and client partitioning.

Supports:
- IDX image/label pairs (MNIST and Fashion-MNIST distribution format, optionally gzipped)
- Synthetic per-class Gaussian blobs for desk-scale runs
- Label non-IID partitioning via per-class Dirichlet proportions, and an IID split
"""

from __future__ import annotations

import gzip
import logging
import struct
import zlib
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .exceptions import (
    ConsistencyError,
    DataLoadError,
    DomainError,
    IdxFormatError,
    IdxTruncatedError,
    ShapeError,
)
from .nn import Labels, Tensor, check_labels

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

DEFAULT_GAMMA = 0.5
DEFAULT_NUM_CLIENTS = 5


@dataclass(frozen=True, eq=False)
class Dataset:
    """Flat feature vectors in [0, 1] with integer class labels."""

    inputs: Tensor
    labels: Labels
    num_classes: int

    def __post_init__(self) -> None:
        inputs = np.asarray(self.inputs, dtype=np.float64)
        if inputs.ndim != 2:
            raise ShapeError(
                message="inputs must be (examples, features)",
                layer="dataset inputs",
                expected=2,
                actual=inputs.ndim,
            )
        labels = check_labels(self.labels, self.num_classes, inputs.shape[0])
        if inputs.size and (inputs.min() < 0.0 or inputs.max() > 1.0):
            raise DomainError(
                message="features must be scaled to [0, 1]",
                name="feature value",
                value=float(inputs.min() if inputs.min() < 0.0 else inputs.max()),
                valid_range="in [0, 1]",
            )
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def num_features(self) -> int:
        return int(self.inputs.shape[1])

    def subset(self, indices: NDArray[np.int64] | Sequence[int]) -> Dataset:
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.inputs[idx], self.labels[idx], self.num_classes)

    def class_counts(self) -> NDArray[np.int64]:
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass(frozen=True)
class PartitionConfig:
    """How to split a dataset across clients."""

    num_clients: int = DEFAULT_NUM_CLIENTS
    gamma: float = DEFAULT_GAMMA
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_clients < 1:
            raise DomainError(
                message="need at least one client",
                name="num_clients",
                value=self.num_clients,
                valid_range=">= 1",
            )
        if not self.gamma > 0:
            raise DomainError(
                message="Dirichlet concentration must be positive",
                name="gamma",
                value=self.gamma,
                valid_range="> 0",
            )


@dataclass(frozen=True, eq=False)
class ClientShard:
    """One client's private slice of the parent dataset, as sorted indices."""

    client_id: int
    indices: NDArray[np.int64]

    def __post_init__(self) -> None:
        indices = np.array(self.indices, dtype=np.int64)
        indices.setflags(write=False)
        object.__setattr__(self, "indices", indices)

    @property
    def size(self) -> int:
        return int(self.indices.shape[0])


# =============================================================================
# IDX LOADING
# =============================================================================


def _read_bytes(path: Path) -> bytes:
    try:
        if path.suffix == ".gz":
            with gzip.open(path, "rb") as f:
                return f.read()
        return path.read_bytes()
    except EOFError as e:
        # gzip stream cut before its end-of-stream marker
        raise IdxTruncatedError(message=f"cannot read file: {e}", path=path) from e
    except (OSError, zlib.error) as e:
        reason = e.strerror if isinstance(e, OSError) and e.strerror else str(e)
        raise DataLoadError(message=f"cannot read file: {reason}", path=path) from e


def _parse_idx(path: Path, expected_magic: int, num_dims: int) -> tuple[tuple[int, ...], bytes]:
    """Return the declared dimensions and raw payload of an unsigned-byte IDX file."""
    raw = _read_bytes(path)
    header_size = 4 * (1 + num_dims)
    if len(raw) < 4:
        raise IdxTruncatedError(
            message="missing magic number",
            path=path,
            expected_bytes=header_size,
            actual_bytes=len(raw),
        )
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise IdxFormatError(
            message="unexpected magic number",
            path=path,
            expected_magic=expected_magic,
            observed_magic=magic,
        )
    if len(raw) < header_size:
        raise IdxTruncatedError(
            message="header ends early",
            path=path,
            expected_bytes=header_size,
            actual_bytes=len(raw),
        )
    dims = struct.unpack(f">{num_dims}I", raw[4:header_size])
    payload_size = int(np.prod(dims))
    if len(raw) < header_size + payload_size:
        raise IdxTruncatedError(
            message="payload ends early",
            path=path,
            expected_bytes=header_size + payload_size,
            actual_bytes=len(raw),
        )
    return dims, raw[header_size : header_size + payload_size]


def load_idx(
    images_path: Path | str,
    labels_path: Path | str,
    num_classes: int | None = None,
) -> Dataset:
    """
    Load an IDX image/label pair into a Dataset.

    Image files start with magic 0x00000803, then count, rows and columns as
    big-endian 32-bit integers, then one unsigned byte per pixel. Label files
    start with magic 0x00000801 and a count, then one byte per label.

    Args:
        images_path: Path to the images file (plain or .gz)
        labels_path: Path to the labels file (plain or .gz)
        num_classes: Class count (max label + 1 when None)

    Returns:
        Dataset with pixels scaled by 1/255 and flattened per image

    Raises:
        IdxFormatError: If a magic number is wrong
        DataLoadError: If a file is missing, unreadable or not valid gzip
        IdxTruncatedError: If a file is shorter than its header declares
        ConsistencyError: If image and label counts differ
    """
    images_path = Path(images_path)
    labels_path = Path(labels_path)

    (count, rows, cols), pixels = _parse_idx(images_path, IDX_IMAGES_MAGIC, 3)
    (label_count,), label_bytes = _parse_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if count != label_count:
        raise ConsistencyError(
            message="files describe different example counts",
            path=labels_path,
            image_count=count,
            label_count=label_count,
        )

    inputs = np.frombuffer(pixels, dtype=np.uint8).reshape(count, rows * cols) / 255.0
    labels = np.frombuffer(label_bytes, dtype=np.uint8).astype(np.int64)
    classes = num_classes if num_classes is not None else int(labels.max(initial=-1)) + 1
    logger.info("Loaded %s images (%dx%d) from %s", f"{count:,}", rows, cols, images_path.name)
    return Dataset(inputs, labels, max(classes, 1))


# =============================================================================
# SYNTHETIC DATA
# =============================================================================


def synth_gaussian(
    num_classes: int,
    dims: int,
    per_class: int,
    spread: float,
    seed: int,
) -> Dataset:
    """Isotropic Gaussian blobs around distinct per-class means, clamped to [0, 1].

    Rows are class-major: the first per_class rows are class 0, and so on.
    """
    for name, value in (("num_classes", num_classes), ("dims", dims), ("per_class", per_class)):
        if value < 1:
            raise DomainError(
                message="count must be positive", name=name, value=value, valid_range=">= 1"
            )
    if spread < 0:
        raise DomainError(
            message="spread cannot be negative", name="spread", value=spread, valid_range=">= 0"
        )

    rng = np.random.default_rng(seed)
    means = rng.uniform(0.1, 0.9, size=(num_classes, dims))
    noise = rng.standard_normal(size=(num_classes, per_class, dims))
    inputs = np.clip(means[:, None, :] + spread * noise, 0.0, 1.0).reshape(-1, dims)
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), per_class)
    return Dataset(inputs, labels, num_classes)


def holdout_split(dataset: Dataset, test_per_class: int, seed: int) -> tuple[Dataset, Dataset]:
    """Hold out test_per_class random examples of every class as a test set."""
    rng = np.random.default_rng(seed)
    test_idx: list[NDArray[np.int64]] = []
    for c in range(dataset.num_classes):
        members = np.flatnonzero(dataset.labels == c)
        if members.size <= test_per_class:
            raise DomainError(
                message=f"class {c} has too few examples to hold out",
                name="test_per_class",
                value=test_per_class,
                valid_range=f"< {members.size}",
            )
        test_idx.append(rng.choice(members, size=test_per_class, replace=False))
    test = np.sort(np.concatenate(test_idx)) if test_idx else np.empty(0, dtype=np.int64)
    train = np.setdiff1d(np.arange(len(dataset)), test)
    return dataset.subset(train), dataset.subset(test)


def subsample(dataset: Dataset, fraction: float, seed: int) -> Dataset:
    """Keep a uniformly random fraction of the examples (original order preserved)."""
    if not 0 < fraction <= 1:
        raise DomainError(
            message="fraction out of range",
            name="fraction",
            value=fraction,
            valid_range="in (0, 1]",
        )
    if fraction == 1:
        return dataset
    keep = max(1, round(fraction * len(dataset)))
    rng = np.random.default_rng(seed)
    return dataset.subset(np.sort(rng.choice(len(dataset), size=keep, replace=False)))


# =============================================================================
# PARTITIONING
# =============================================================================


def _dirichlet(rng: np.random.Generator, gamma: float, size: int) -> NDArray[np.float64]:
    """Dirichlet(gamma * 1) draw via normalized Gamma(gamma, 1) variates."""
    draws = rng.gamma(shape=gamma, scale=1.0, size=size)
    total = draws.sum()
    if total == 0.0:
        # every variate underflowed (tiny gamma): all mass on one client
        draws = np.zeros(size)
        draws[rng.integers(size)] = 1.0
        return draws
    return draws / total


def _largest_remainder(proportions: NDArray[np.float64], total: int) -> NDArray[np.int64]:
    """Integer counts summing exactly to total, closest to proportions * total."""
    exact = proportions * total
    counts = np.floor(exact).astype(np.int64)
    shortfall = total - int(counts.sum())
    if shortfall > 0:
        order = np.argsort(-(exact - counts), kind="stable")
        counts[order[:shortfall]] += 1
    return counts


def dirichlet_partition(dataset: Dataset, config: PartitionConfig) -> list[ClientShard]:
    """
    Split a dataset across clients with per-class Dirichlet proportions.

    For each class, proportions q ~ Dir(gamma * 1_N) are drawn and the class's
    (shuffled) indices are dealt out in largest-remainder rounded counts. Smaller
    gamma gives heavier label skew. Shards may be empty.
    """
    if len(dataset) == 0:
        raise DomainError(
            message="cannot partition an empty dataset",
            name="dataset size",
            value=0,
            valid_range=">= 1",
        )
    n = config.num_clients
    rng = np.random.default_rng(config.seed)
    assigned: list[list[NDArray[np.int64]]] = [[] for _ in range(n)]
    for c in range(dataset.num_classes):
        members = rng.permutation(np.flatnonzero(dataset.labels == c))
        proportions = _dirichlet(rng, config.gamma, n)
        counts = _largest_remainder(proportions, members.size)
        bounds = np.concatenate(([0], np.cumsum(counts)))
        for client in range(n):
            assigned[client].append(members[bounds[client] : bounds[client + 1]])
    return [
        ClientShard(client_id=i, indices=np.sort(np.concatenate(parts)))
        for i, parts in enumerate(assigned)
    ]


def iid_partition(dataset: Dataset, num_clients: int, seed: int) -> list[ClientShard]:
    """Uniformly random split into num_clients shards of near-equal size."""
    if num_clients < 1:
        raise DomainError(
            message="need at least one client",
            name="num_clients",
            value=num_clients,
            valid_range=">= 1",
        )
    order = np.random.default_rng(seed).permutation(len(dataset))
    return [
        ClientShard(client_id=i, indices=np.sort(part))
        for i, part in enumerate(np.array_split(order, num_clients))
    ]


def label_distribution(dataset: Dataset, shards: Sequence[ClientShard]) -> NDArray[np.int64]:
    """Per-client class counts as a (clients, classes) matrix."""
    return np.stack(
        [np.bincount(dataset.labels[s.indices], minlength=dataset.num_classes) for s in shards]
    )


def label_entropy(counts: NDArray[np.int64]) -> float:
    """Shannon entropy (nats) of a class-count vector; 0 for an empty shard."""
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(-(p * np.log(p)).sum())
