"""Tests for dataset loading, synthesis and client partitioning."""

import gzip

import numpy as np
import pytest

from fatcc_sim.data import (
    IDX_IMAGES_MAGIC,
    IDX_LABELS_MAGIC,
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
from fatcc_sim.exceptions import (
    ConsistencyError,
    DataLoadError,
    DomainError,
    IdxFormatError,
    IdxTruncatedError,
)


@pytest.fixture
def idx_pair(tmp_path, write_idx):
    """Two 2x3 images with labels 1 and 0."""
    pixels = bytes([0, 51, 102, 153, 204, 255, 255, 255, 255, 0, 0, 0])
    images = write_idx(tmp_path / "images-idx3-ubyte", IDX_IMAGES_MAGIC, (2, 2, 3), pixels)
    labels = write_idx(tmp_path / "labels-idx1-ubyte", IDX_LABELS_MAGIC, (2,), bytes([1, 0]))
    return images, labels


class TestLoadIdx:
    """Tests for IDX file loading."""

    def test_pixels_scaled_and_flattened(self, idx_pair):
        """Images become rows of pixels divided by 255."""
        dataset = load_idx(*idx_pair)
        assert dataset.inputs.shape == (2, 6)
        np.testing.assert_allclose(dataset.inputs[0], [0.0, 0.2, 0.4, 0.6, 0.8, 1.0])
        np.testing.assert_array_equal(dataset.labels, [1, 0])
        assert dataset.num_classes == 2

    def test_explicit_class_count(self, idx_pair):
        """num_classes overrides the inferred count."""
        assert load_idx(*idx_pair, num_classes=10).num_classes == 10

    def test_gzip_files(self, tmp_path, idx_pair):
        """Gzipped IDX files load like plain ones."""
        images, labels = idx_pair
        gz_images = tmp_path / "images.gz"
        gz_labels = tmp_path / "labels.gz"
        gz_images.write_bytes(gzip.compress(images.read_bytes()))
        gz_labels.write_bytes(gzip.compress(labels.read_bytes()))
        np.testing.assert_array_equal(load_idx(gz_images, gz_labels).inputs, load_idx(images, labels).inputs)

    def test_wrong_magic(self, tmp_path, write_idx, idx_pair):
        """A label file passed as images reports the observed magic."""
        _, labels = idx_pair
        with pytest.raises(IdxFormatError) as exc_info:
            load_idx(labels, labels)
        assert exc_info.value.expected_magic == IDX_IMAGES_MAGIC
        assert exc_info.value.observed_magic == IDX_LABELS_MAGIC

    def test_truncated_payload(self, tmp_path, write_idx, idx_pair):
        """A payload shorter than the header declares is a truncation error."""
        images = write_idx(tmp_path / "short", IDX_IMAGES_MAGIC, (2, 2, 3), bytes(7))
        with pytest.raises(IdxTruncatedError) as exc_info:
            load_idx(images, idx_pair[1])
        assert exc_info.value.expected_bytes == 16 + 12
        assert exc_info.value.actual_bytes == 16 + 7
        assert isinstance(exc_info.value, DataLoadError)

    def test_missing_file(self, tmp_path, idx_pair):
        """A path that does not exist is a load error naming the file."""
        with pytest.raises(DataLoadError) as exc_info:
            load_idx(tmp_path / "nope-images", idx_pair[1])
        assert exc_info.value.path == tmp_path / "nope-images"
        assert "nope-images" in str(exc_info.value)

    def test_truncated_gzip_stream(self, tmp_path, idx_pair):
        """A gzip file cut before its trailer is a truncation error."""
        images, labels = idx_pair
        gz_images = tmp_path / "images.gz"
        gz_images.write_bytes(gzip.compress(images.read_bytes())[:-6])
        with pytest.raises(IdxTruncatedError) as exc_info:
            load_idx(gz_images, labels)
        assert exc_info.value.path == gz_images
        assert "Truncated IDX file" in str(exc_info.value)

    def test_corrupt_gzip(self, tmp_path, idx_pair):
        """A .gz file that is not gzip data is a load error."""
        bogus = tmp_path / "images.gz"
        bogus.write_bytes(b"definitely not gzip data")
        with pytest.raises(DataLoadError):
            load_idx(bogus, idx_pair[1])

    def test_truncated_header(self, tmp_path, idx_pair):
        """A file too short for its header is a truncation error."""
        short = tmp_path / "header"
        short.write_bytes(bytes([0, 0, 8, 3, 0]))
        with pytest.raises(IdxTruncatedError):
            load_idx(short, idx_pair[1])

    def test_count_mismatch(self, tmp_path, write_idx, idx_pair):
        """Image and label counts must agree."""
        labels = write_idx(tmp_path / "three-labels", IDX_LABELS_MAGIC, (3,), bytes([0, 1, 2]))
        with pytest.raises(ConsistencyError) as exc_info:
            load_idx(idx_pair[0], labels)
        assert exc_info.value.image_count == 2
        assert exc_info.value.label_count == 3


class TestDataset:
    """Tests for Dataset validation."""

    def test_features_outside_unit_range(self):
        """Features must lie in [0, 1]."""
        with pytest.raises(DomainError):
            Dataset(np.array([[1.5]]), np.array([0]), 1)

    def test_labels_outside_class_range(self):
        """Labels must be valid class indices."""
        with pytest.raises(DomainError):
            Dataset(np.array([[0.5]]), np.array([2]), 2)

    def test_class_counts(self, blobs):
        """Class counts cover every class."""
        np.testing.assert_array_equal(blobs.class_counts(), [40, 40, 40])


class TestSynthGaussian:
    """Tests for synthetic blob data."""

    def test_deterministic(self):
        """Same seed, same data."""
        a = synth_gaussian(4, 5, 10, 0.1, seed=2)
        b = synth_gaussian(4, 5, 10, 0.1, seed=2)
        np.testing.assert_array_equal(a.inputs, b.inputs)

    def test_layout(self, blobs):
        """Rows are class-major and clamped to [0, 1]."""
        assert blobs.inputs.shape == (120, 8)
        np.testing.assert_array_equal(blobs.labels[:40], 0)
        np.testing.assert_array_equal(blobs.labels[-40:], 2)
        assert blobs.inputs.min() >= 0.0
        assert blobs.inputs.max() <= 1.0

    def test_negative_spread(self):
        """Spread cannot be negative."""
        with pytest.raises(DomainError):
            synth_gaussian(2, 2, 2, -0.1, seed=0)


class TestHoldoutAndSubsample:
    """Tests for held-out splits and subsampling."""

    def test_holdout_per_class(self, blobs):
        """Every class contributes exactly test_per_class test examples."""
        train, test = holdout_split(blobs, 10, seed=0)
        np.testing.assert_array_equal(test.class_counts(), [10, 10, 10])
        np.testing.assert_array_equal(train.class_counts(), [30, 30, 30])

    def test_holdout_needs_training_examples(self, blobs):
        """Holding out a whole class is rejected."""
        with pytest.raises(DomainError):
            holdout_split(blobs, 40, seed=0)

    def test_subsample_size(self, blobs):
        """A fraction keeps the rounded share of examples."""
        assert len(subsample(blobs, 0.1, seed=0)) == 12

    def test_subsample_full(self, blobs):
        """Fraction 1 keeps the dataset as is."""
        assert subsample(blobs, 1.0, seed=0) is blobs

    @pytest.mark.parametrize("fraction", [0.0, 1.5])
    def test_subsample_range(self, blobs, fraction):
        """Fractions outside (0, 1] are rejected."""
        with pytest.raises(DomainError):
            subsample(blobs, fraction, seed=0)


class TestDirichletPartition:
    """Tests for the label-skewed client partition."""

    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    @pytest.mark.parametrize("num_clients", [1, 3, 7])
    @pytest.mark.parametrize("gamma", [0.05, 0.5, 10.0])
    def test_disjoint_and_exhaustive(self, blobs, seed, num_clients, gamma):
        """Every example lands on exactly one client."""
        shards = dirichlet_partition(blobs, PartitionConfig(num_clients=num_clients, gamma=gamma, seed=seed))
        assert [s.client_id for s in shards] == list(range(num_clients))
        merged = np.concatenate([s.indices for s in shards])
        assert merged.size == len(blobs)
        np.testing.assert_array_equal(np.sort(merged), np.arange(len(blobs)))

    def test_deterministic(self, blobs):
        """Same dataset and config give identical shards."""
        config = PartitionConfig(num_clients=4, gamma=0.3, seed=9)
        a = dirichlet_partition(blobs, config)
        b = dirichlet_partition(blobs, config)
        for sa, sb in zip(a, b, strict=True):
            np.testing.assert_array_equal(sa.indices, sb.indices)

    def test_single_client_gets_everything(self, blobs):
        """With one client the shard is the whole dataset."""
        (shard,) = dirichlet_partition(blobs, PartitionConfig(num_clients=1))
        np.testing.assert_array_equal(shard.indices, np.arange(len(blobs)))

    def test_small_gamma_skews_labels(self):
        """Smaller gamma gives lower per-client label entropy."""
        data = synth_gaussian(10, 2, 200, 0.1, seed=0)

        def mean_entropy(gamma):
            entropies = []
            for seed in range(5):
                shards = dirichlet_partition(data, PartitionConfig(num_clients=5, gamma=gamma, seed=seed))
                counts = label_distribution(data, shards)
                entropies.extend(label_entropy(row) for row in counts if row.sum())
            return np.mean(entropies)

        assert mean_entropy(0.1) < mean_entropy(100.0)
        assert mean_entropy(100.0) > 0.9 * np.log(10)

    def test_skew_monotone_over_seeds(self):
        """Averaged over 20 seeds, gamma 0.1 gives lower client label entropy than gamma 5."""
        data = synth_gaussian(10, 2, 100, 0.1, seed=1)

        def mean_entropy(gamma):
            entropies = []
            for seed in range(20):
                shards = dirichlet_partition(data, PartitionConfig(num_clients=5, gamma=gamma, seed=seed))
                counts = label_distribution(data, shards)
                entropies.extend(label_entropy(row) for row in counts if row.sum())
            return np.mean(entropies)

        assert mean_entropy(0.1) < mean_entropy(5.0)

    def test_empty_dataset(self):
        """An empty dataset cannot be partitioned."""
        empty = Dataset(np.zeros((0, 2)), np.zeros(0, dtype=np.int64), 2)
        with pytest.raises(DomainError):
            dirichlet_partition(empty, PartitionConfig())

    def test_invalid_gamma(self):
        """Gamma must be positive."""
        with pytest.raises(DomainError):
            PartitionConfig(gamma=0.0)


class TestIidPartition:
    """Tests for the uniform split."""

    def test_near_equal_sizes(self, blobs):
        """Shard sizes differ by at most one."""
        sizes = [s.size for s in iid_partition(blobs, 7, seed=0)]
        assert sum(sizes) == len(blobs)
        assert max(sizes) - min(sizes) <= 1


class TestLabelEntropy:
    """Tests for the skew summary."""

    def test_empty_shard(self):
        """An empty shard has zero entropy."""
        assert label_entropy(np.zeros(3, dtype=np.int64)) == 0.0

    def test_uniform(self):
        """Uniform counts give log C."""
        assert label_entropy(np.array([5, 5, 5, 5])) == pytest.approx(np.log(4))
