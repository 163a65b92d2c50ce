"""Tests for the MLP forward pass, losses, backprop and SGD."""

import numpy as np
import pytest

from fatcc_sim.exceptions import DomainError, NumericalError, ShapeError
from fatcc_sim.nn import (
    Layer,
    ModelParams,
    TrainConfig,
    backprop,
    cross_entropy,
    forward,
    init_params,
    sgd_step,
    softmax,
)


class TestModelParams:
    """Tests for parameter construction and validation."""

    def test_widths_and_roles(self, small_params):
        """Widths list input, hidden and class dimensions."""
        assert small_params.widths == (4, 5, 3, 3)
        assert small_params.num_classes == 3
        assert small_params.feature_width == 3

    def test_non_chaining_layers_rejected(self):
        """A layer whose input does not match the previous output names that layer."""
        with pytest.raises(ShapeError) as exc_info:
            ModelParams.from_arrays([(np.zeros((5, 4)), np.zeros(5)), (np.zeros((3, 6)), np.zeros(3))])
        assert exc_info.value.layer == "layer 1"
        assert exc_info.value.expected == 5
        assert exc_info.value.actual == 6

    def test_bias_length_checked(self):
        """Bias length must equal the weight's row count."""
        with pytest.raises(ShapeError):
            Layer(weight=np.zeros((3, 2)), bias=np.zeros(2))

    def test_arrays_are_read_only_copies(self):
        """Layers copy their inputs and refuse in-place writes."""
        weight = np.ones((2, 2))
        layer = Layer(weight=weight, bias=np.zeros(2))
        weight[0, 0] = 5.0
        assert layer.weight[0, 0] == 1.0
        with pytest.raises(ValueError):
            layer.weight[0, 0] = 2.0

    def test_init_is_deterministic(self):
        """Same widths and seed give identical weights."""
        a = init_params((6, 4, 2), seed=1)
        b = init_params((6, 4, 2), seed=1)
        for la, lb in zip(a.layers, b.layers, strict=True):
            np.testing.assert_array_equal(la.weight, lb.weight)
            np.testing.assert_array_equal(la.bias, lb.bias)

    def test_init_rejects_single_width(self):
        """At least an input and an output width are required."""
        with pytest.raises(DomainError):
            init_params((4,), seed=0)

    def test_is_finite(self):
        """NaN anywhere makes the parameters non-finite."""
        params = ModelParams.from_arrays([(np.array([[np.nan]]), np.zeros(1))])
        assert not params.is_finite()


class TestTrainConfig:
    """Tests for local training settings."""

    def test_zero_learning_rate_allowed(self):
        """A zero learning rate is valid."""
        assert TrainConfig(learning_rate=0.0).learning_rate == 0.0

    def test_negative_learning_rate_rejected(self):
        """Negative learning rates are a domain error."""
        with pytest.raises(DomainError):
            TrainConfig(learning_rate=-0.1)

    @pytest.mark.parametrize("field", ["batch_size", "local_epochs"])
    def test_counts_must_be_positive(self, field):
        """Batch size and local epochs must be at least one."""
        with pytest.raises(DomainError):
            TrainConfig(**{field: 0})


class TestForward:
    """Tests for the forward pass."""

    def test_shapes(self, small_params, small_batch):
        """Trace holds one pre-activation per layer and the penultimate feature."""
        x, _ = small_batch
        trace = forward(small_params, x)
        assert len(trace.pre_activations) == 3
        assert trace.logits.shape == (6, 3)
        assert trace.feature.shape == (6, 3)
        np.testing.assert_array_equal(trace.activations[0], x)

    def test_hidden_activations_are_rectified(self, small_params, small_batch):
        """Hidden activations are non-negative."""
        trace = forward(small_params, small_batch[0])
        for activation in trace.activations[1:]:
            assert (activation >= 0).all()

    def test_wrong_input_width(self, small_params):
        """An input batch of the wrong width names the first layer."""
        with pytest.raises(ShapeError) as exc_info:
            forward(small_params, np.zeros((2, 5)))
        assert exc_info.value.layer == "layer 0"

    @pytest.mark.parametrize("seed", range(5))
    def test_deterministic(self, seed):
        """Two passes over the same inputs give bitwise-identical traces."""
        params = init_params((7, 9, 5, 4), seed=seed)
        x = np.random.default_rng(seed).uniform(0.0, 1.0, size=(11, 7))
        a, b = forward(params, x), forward(params, x)
        for left, right in zip(a.pre_activations + a.activations, b.pre_activations + b.activations, strict=True):
            np.testing.assert_array_equal(left, right)


class TestCrossEntropy:
    """Tests for softmax and cross-entropy."""

    def test_uniform_logits(self):
        """Equal logits give a loss of log C."""
        assert cross_entropy(np.zeros((3, 4)), np.array([0, 1, 2])) == pytest.approx(np.log(4))

    def test_large_logits_are_stable(self):
        """Max shifting keeps huge logits finite."""
        logits = np.array([[1000.0, 0.0], [0.0, 1000.0]])
        assert cross_entropy(logits, np.array([0, 1])) == pytest.approx(0.0, abs=1e-12)
        assert np.isfinite(softmax(logits)).all()

    def test_softmax_rows_sum_to_one(self, small_params, small_batch):
        """Softmax rows are probability vectors."""
        probs = softmax(forward(small_params, small_batch[0]).logits)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0)

    @pytest.mark.parametrize("seed", range(10))
    def test_shift_invariance(self, seed):
        """Adding a constant to every logit of a row leaves the loss unchanged."""
        rng = np.random.default_rng(seed)
        logits = rng.normal(scale=3.0, size=(6, 5))
        labels = rng.integers(0, 5, size=6)
        shifts = rng.uniform(-50.0, 50.0, size=(6, 1))
        assert abs(cross_entropy(logits + shifts, labels) - cross_entropy(logits, labels)) < 1e-12
        np.testing.assert_allclose(softmax(logits + shifts), softmax(logits), rtol=0, atol=1e-12)

    @pytest.mark.parametrize("label", [-1, 3])
    def test_label_out_of_range(self, label):
        """Labels outside [0, C) are a domain error."""
        with pytest.raises(DomainError):
            cross_entropy(np.zeros((1, 3)), np.array([label]))

    def test_non_finite_logits(self):
        """NaN logits raise a numerical error."""
        with pytest.raises(NumericalError):
            cross_entropy(np.array([[np.nan, 0.0]]), np.array([0]))


class TestBackprop:
    """Tests for reverse-mode gradients."""

    def test_parameter_gradients_match_finite_differences(self, small_params, small_batch, numeric_param_grads):
        """Analytic parameter gradients agree with central differences."""
        x, y = small_batch
        grads = backprop(small_params, x, y)
        numeric = numeric_param_grads(lambda p: cross_entropy(forward(p, x).logits, y), small_params)
        for layer, (weight, bias) in zip(grads.params.layers, numeric, strict=True):
            np.testing.assert_allclose(layer.weight, weight, rtol=1e-4, atol=1e-7)
            np.testing.assert_allclose(layer.bias, bias, rtol=1e-4, atol=1e-7)

    def test_input_gradients_match_finite_differences(self, small_params, small_batch, numeric_array_grad):
        """Analytic input gradients agree with central differences."""
        x, y = small_batch
        grads = backprop(small_params, x, y)
        numeric = numeric_array_grad(lambda v: cross_entropy(forward(small_params, v).logits, y), x)
        np.testing.assert_allclose(grads.inputs, numeric, rtol=1e-4, atol=1e-7)

    def test_single_example_batch(self, small_params, small_batch, numeric_param_grads):
        """A batch of one is differentiated like any other."""
        x, y = small_batch[0][:1], small_batch[1][:1]
        grads = backprop(small_params, x, y)
        numeric = numeric_param_grads(lambda p: cross_entropy(forward(p, x).logits, y), small_params)
        np.testing.assert_allclose(grads.params.layers[0].weight, numeric[0][0], rtol=1e-4, atol=1e-7)

    def test_loss_matches_cross_entropy(self, small_params, small_batch):
        """The returned loss is the plain cross-entropy."""
        x, y = small_batch
        assert backprop(small_params, x, y).loss == pytest.approx(cross_entropy(forward(small_params, x).logits, y))

    def test_label_count_must_match_batch(self, small_params, small_batch):
        """One label per row is required."""
        with pytest.raises(ShapeError):
            backprop(small_params, small_batch[0], small_batch[1][:3])


class TestSgdStep:
    """Tests for the SGD update."""

    def test_zero_rate_is_identity(self, small_params, small_batch):
        """A zero learning rate leaves parameters unchanged."""
        grads = backprop(small_params, *small_batch)
        updated = sgd_step(small_params, grads.params, 0.0)
        for a, b in zip(updated.layers, small_params.layers, strict=True):
            np.testing.assert_array_equal(a.weight, b.weight)

    def test_update_rule(self):
        """Parameters move against the gradient by the learning rate."""
        params = ModelParams.from_arrays([(np.ones((1, 2)), np.ones(1))])
        grads = ModelParams.from_arrays([(np.array([[2.0, -2.0]]), np.array([4.0]))])
        updated = sgd_step(params, grads, 0.5)
        np.testing.assert_array_equal(updated.layers[0].weight, [[0.0, 2.0]])
        np.testing.assert_array_equal(updated.layers[0].bias, [-1.0])

    def test_step_is_pure(self, small_params, small_batch):
        """The input parameters are not modified."""
        before = small_params.layers[0].weight.copy()
        sgd_step(small_params, backprop(small_params, *small_batch).params, 0.1)
        np.testing.assert_array_equal(small_params.layers[0].weight, before)

    def test_layout_mismatch(self, small_params):
        """Gradients with another layout are rejected."""
        with pytest.raises(ShapeError):
            sgd_step(small_params, init_params((4, 2), seed=0), 0.1)

    def test_negative_rate(self, small_params):
        """Negative learning rates are a domain error."""
        with pytest.raises(DomainError):
            sgd_step(small_params, small_params, -1.0)
