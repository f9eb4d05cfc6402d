# Copyright 2019 Xanadu Quantum Technologies Inc.

# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at

#     http://www.apache.org/licenses/LICENSE-2.0

# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
r"""
Unit tests for :mod:`cflbench.nn`
"""
# pylint: disable=no-self-use
from types import SimpleNamespace

import numpy as np
import pytest

from cflbench import nn
from cflbench.exceptions import ConfigurationError, DataError
from cflbench.nn import ModelParams, TrainConfig

pytestmark = pytest.mark.nn

DIMS = (5, 4, 3)


@pytest.fixture
def model():
    """Small two layer network."""
    return nn.init_model(DIMS, seed=3)


@pytest.fixture
def shard(rng):
    """Twelve random samples over three labels."""
    return SimpleNamespace(
        train_features=rng.normal(size=(12, DIMS[0])), train_labels=np.arange(12) % DIMS[-1]
    )


def numeric_gradient(model, batch, labels, anchor=None, prox_mu=0.0, eps=1e-6):
    """Central finite differences of the loss over the flat parameter vector."""
    flat = model.flatten()
    out = np.zeros_like(flat)
    for i in range(flat.size):
        plus, minus = flat.copy(), flat.copy()
        plus[i] += eps
        minus[i] -= eps
        f_plus = nn.loss_and_grad(ModelParams.from_flat(model.dims, plus), batch, labels, anchor, prox_mu)[0]
        f_minus = nn.loss_and_grad(ModelParams.from_flat(model.dims, minus), batch, labels, anchor, prox_mu)[0]
        out[i] = (f_plus - f_minus) / (2 * eps)
    return out


class TestModelParams:
    """Tests for the parameter container."""

    def test_dims_and_size(self, model):
        """Layer widths and parameter count follow the weight shapes"""
        assert model.dims == DIMS
        assert model.size == 5 * 4 + 4 + 4 * 3 + 3

    def test_flatten_layout(self):
        """Each layer contributes its row-major weights followed by its bias"""
        w1 = np.arange(6.0).reshape(2, 3)
        b1 = np.array([10.0, 11.0])
        w2 = np.array([[20.0, 21.0]])
        b2 = np.array([30.0])
        flat = ModelParams((w1, w2), (b1, b2)).flatten()
        assert np.array_equal(flat, [0, 1, 2, 3, 4, 5, 10, 11, 20, 21, 30])

    def test_from_flat_inverts_flatten(self, model):
        """Unflattening recovers every array exactly"""
        restored = ModelParams.from_flat(model.dims, model.flatten())
        assert restored.allclose(model)
        for a, b in zip(restored.weights, model.weights):
            assert a.shape == b.shape

    def test_from_flat_wrong_length(self):
        """A vector of the wrong length is rejected"""
        with pytest.raises(ConfigurationError, match="does not match dims"):
            ModelParams.from_flat((2, 2), np.zeros(5))

    def test_inconsistent_shapes(self):
        """Biases must match the output width of their layer"""
        with pytest.raises(ConfigurationError, match="inconsistent shapes"):
            ModelParams((np.zeros((2, 3)),), (np.zeros(3),))

    def test_layers_must_chain(self):
        """The input width of a layer is the output width of the previous one"""
        with pytest.raises(ConfigurationError, match="does not chain"):
            ModelParams((np.zeros((2, 3)), np.zeros((1, 4))), (np.zeros(2), np.zeros(1)))

    def test_step(self, model):
        """A step subtracts the scaled gradient"""
        grad = ModelParams.from_flat(model.dims, np.ones(model.size))
        assert np.allclose(model.step(grad, 0.5).flatten(), model.flatten() - 0.5)

    def test_is_finite(self, model):
        """Non-finite entries are detected"""
        assert model.is_finite()
        flat = model.flatten()
        flat[2] = np.nan
        assert not ModelParams.from_flat(model.dims, flat).is_finite()


class TestInit:
    """Tests for Glorot initialization."""

    def test_deterministic(self):
        """The same seed gives the same model"""
        assert nn.init_model(DIMS, 7).allclose(nn.init_model(DIMS, 7))
        assert not nn.init_model(DIMS, 7).allclose(nn.init_model(DIMS, 8))

    def test_bounds_and_biases(self):
        """Weights lie within the Glorot limit and biases are zero"""
        m = nn.init_model((30, 20, 10), 0)
        for w, b in zip(m.weights, m.biases):
            limit = np.sqrt(6.0 / (w.shape[0] + w.shape[1]))
            assert np.all(np.abs(w) <= limit)
            assert np.all(b == 0)

    @pytest.mark.parametrize("dims", [(5,), (5, 0, 3)])
    def test_invalid_dims(self, dims):
        """At least two layers of positive width are required"""
        with pytest.raises(ConfigurationError):
            nn.init_model(dims, 0)


class TestLoss:
    """Tests for the forward pass, the loss and its gradient."""

    def test_uniform_prediction(self, shard, tol):
        """A model with zero parameters predicts uniformly, giving loss log(C)"""
        zero = ModelParams.from_flat(DIMS, np.zeros(nn.init_model(DIMS, 0).size))
        value = nn.loss(zero, shard.train_features, shard.train_labels)
        assert np.allclose(value, np.log(DIMS[-1]), atol=tol, rtol=0)

    def test_logits_shape(self, model, shard):
        """Logits have one column per class"""
        assert nn.forward(model, shard.train_features).shape == (12, 3)

    def test_loss_matches_loss_and_grad(self, model, shard):
        """Both entry points report the same loss"""
        value, _ = nn.loss_and_grad(model, shard.train_features, shard.train_labels)
        assert value == nn.loss(model, shard.train_features, shard.train_labels)

    def test_gradient(self, model, shard):
        """Backpropagation agrees with finite differences"""
        _, grad = nn.loss_and_grad(model, shard.train_features, shard.train_labels)
        numeric = numeric_gradient(model, shard.train_features, shard.train_labels)
        assert np.allclose(grad.flatten(), numeric, atol=1e-6)

    def test_proximal_gradient(self, model, shard):
        """The proximal term adds mu times the distance to the anchor"""
        anchor = nn.init_model(DIMS, 11)
        plain_value, plain = nn.loss_and_grad(model, shard.train_features, shard.train_labels)
        value, grad = nn.loss_and_grad(model, shard.train_features, shard.train_labels, anchor, 0.3)

        diff = model.flatten() - anchor.flatten()
        assert np.allclose(grad.flatten(), plain.flatten() + 0.3 * diff)
        assert np.allclose(value, plain_value + 0.15 * diff @ diff)

        numeric = numeric_gradient(model, shard.train_features, shard.train_labels, anchor, 0.3)
        assert np.allclose(grad.flatten(), numeric, atol=1e-6)

    def test_proximal_needs_anchor(self, model, shard):
        """A positive coefficient without an anchor is an error"""
        with pytest.raises(ConfigurationError, match="anchor"):
            nn.loss_and_grad(model, shard.train_features, shard.train_labels, None, 0.1)

    def test_anchor_ignored_without_coefficient(self, model, shard):
        """With mu = 0 the anchor has no effect"""
        a = nn.loss_and_grad(model, shard.train_features, shard.train_labels)
        b = nn.loss_and_grad(model, shard.train_features, shard.train_labels, nn.init_model(DIMS, 1), 0.0)
        assert a[0] == b[0]
        assert a[1].allclose(b[1])

    def test_labels_out_of_range(self, model, shard):
        """Labels must be valid class indices"""
        with pytest.raises(DataError, match="Labels must lie"):
            nn.loss(model, shard.train_features, np.full(12, 3))

    def test_empty_batch(self, model):
        """An empty batch has no loss"""
        with pytest.raises(DataError, match="empty batch"):
            nn.loss(model, np.zeros((0, DIMS[0])), np.zeros(0, dtype=int))

    def test_wrong_width(self, model):
        """Inputs must match the model's input width"""
        with pytest.raises(ConfigurationError, match="input width"):
            nn.forward(model, np.zeros((2, 4)))


class TestForward:
    """Tests for the forward pass."""

    def test_matches_matrix_products(self, rng):
        """Logits equal the layer-by-layer products with ReLU between hidden layers"""
        dims = (7, 5, 4, 3)
        model = ModelParams.from_flat(dims, rng.normal(size=nn.init_model(dims, 0).size))
        batch = rng.normal(size=(6, dims[0]))

        expected = []
        for x in batch:
            v = x
            for l, (w, b) in enumerate(zip(model.weights, model.biases)):
                v = np.dot(w, v) + b
                if l < len(model.weights) - 1:
                    v = np.where(v > 0, v, 0.0)
            expected.append(v)
        assert np.allclose(nn.forward(model, batch), expected)

    def test_linear_model(self, rng):
        """Without hidden layers the network is affine"""
        model = ModelParams.from_flat((4, 2), rng.normal(size=10))
        batch = rng.normal(size=(3, 4))
        assert np.allclose(nn.forward(model, batch), batch @ model.weights[0].T + model.biases[0])

    def test_activations_per_layer(self, model, rng):
        """Pre-activations of every layer and activations including the input come back as a pair"""
        batch = rng.normal(size=(4, DIMS[0]))
        pre, acts = nn._activations(model, batch)
        assert [p.shape for p in pre] == [(4, 4), (4, 3)]
        assert [a.shape for a in acts] == [(4, 5), (4, 4), (4, 3)]
        assert np.array_equal(acts[1], np.maximum(pre[0], 0.0))
        assert np.array_equal(acts[-1], pre[-1])


class TestTraining:
    """Tests for local training."""

    def test_full_batch_step(self, model, shard):
        """One full-batch epoch is exactly one gradient step"""
        cfg = TrainConfig(epochs=1, lr=0.2, batch_size=100, rng_seed=5)
        _, grad = nn.loss_and_grad(model, shard.train_features, shard.train_labels)
        trained = nn.train_local(model, shard, cfg)
        assert trained.allclose(model.step(grad, 0.2))

    def test_full_batch_ignores_seed(self, model, shard):
        """Full-batch training does not depend on the shuffle"""
        a = nn.train_local(model, shard, TrainConfig(epochs=3, lr=0.1, batch_size=12, rng_seed=0))
        b = nn.train_local(model, shard, TrainConfig(epochs=3, lr=0.1, batch_size=12, rng_seed=9))
        assert a.allclose(b)

    def test_deterministic(self, model, shard):
        """The same seed gives bit-identical models; another seed changes the minibatches"""
        cfg = TrainConfig(epochs=2, lr=0.1, batch_size=4, rng_seed=1)
        a = nn.train_local(model, shard, cfg)
        assert a.allclose(nn.train_local(model, shard, cfg))
        assert not a.allclose(nn.train_local(model, shard, cfg.with_seed(2)))

    def test_input_untouched(self, model, shard):
        """Training returns a new model"""
        before = model.flatten().copy()
        nn.train_local(model, shard, TrainConfig(epochs=1, lr=0.1))
        assert np.array_equal(model.flatten(), before)

    def test_training_reduces_loss(self, model, shard):
        """A few epochs lower the training loss"""
        trained = nn.train_local(model, shard, TrainConfig(epochs=20, lr=0.1, batch_size=4))
        assert nn.loss(trained, shard.train_features, shard.train_labels) < nn.loss(
            model, shard.train_features, shard.train_labels
        )

    def test_training_reduces_loss_across_trials(self):
        """Full-batch descent with a small step lowers the loss for many models and datasets"""
        cfg = TrainConfig(epochs=5, lr=0.05, batch_size=100)
        for trial in range(30):
            rng = np.random.default_rng(trial)
            data = SimpleNamespace(
                train_features=rng.normal(size=(20, DIMS[0])), train_labels=rng.integers(0, DIMS[-1], 20)
            )
            start = nn.init_model(DIMS, trial)
            trained = nn.train_local(start, data, cfg)
            before = nn.loss(start, data.train_features, data.train_labels)
            assert nn.loss(trained, data.train_features, data.train_labels) < before

    def test_proximal_term_limits_drift(self, model, shard):
        """A strong proximal term keeps the model near its starting point"""
        cfg = TrainConfig(epochs=5, lr=0.05, batch_size=4)
        free = nn.train_local(model, shard, cfg)
        held = nn.train_local(model, shard, TrainConfig(epochs=5, lr=0.05, batch_size=4, prox_mu=10.0))
        start = model.flatten()
        assert np.linalg.norm(held.flatten() - start) < np.linalg.norm(free.flatten() - start)

    def test_divergence(self, model, shard):
        """Non-finite parameters after training are reported"""
        cfg = TrainConfig(epochs=3, lr=1e200, batch_size=1)
        with np.errstate(all="ignore"):
            with pytest.raises(ConfigurationError, match="non-finite"):
                nn.train_local(model, shard, cfg)

    def test_empty_shard(self, model):
        """There is nothing to train on an empty shard"""
        empty = SimpleNamespace(train_features=np.zeros((0, DIMS[0])), train_labels=np.zeros(0, dtype=int))
        with pytest.raises(DataError, match="empty shard"):
            nn.train_local(model, empty, TrainConfig())

    @pytest.mark.parametrize(
        "kwargs", [{"epochs": 0}, {"lr": -1.0}, {"batch_size": 0}, {"prox_mu": -0.1}]
    )
    def test_invalid_config(self, kwargs):
        """Training settings are validated"""
        with pytest.raises(ConfigurationError):
            TrainConfig(**kwargs)


class TestEvaluate:
    """Tests for accuracy."""

    def test_ties_pick_lowest_class(self, shard):
        """With equal logits every sample is predicted as class 0"""
        zero = ModelParams.from_flat(DIMS, np.zeros(nn.init_model(DIMS, 0).size))
        acc = nn.evaluate(zero, shard.train_features, shard.train_labels)
        assert acc == np.mean(shard.train_labels == 0)

    def test_biased_output(self, shard):
        """A bias on one class predicts that class everywhere"""
        model = nn.init_model(DIMS, 0)
        biases = (model.biases[0], np.array([0.0, 0.0, 1e6]))
        biased = ModelParams(model.weights, biases)
        assert nn.evaluate(biased, shard.train_features, np.full(12, 2)) == 1.0

    def test_empty(self, model):
        """Accuracy of an empty set is undefined"""
        with pytest.raises(DataError):
            nn.evaluate(model, np.zeros((0, DIMS[0])), np.zeros(0, dtype=int))
