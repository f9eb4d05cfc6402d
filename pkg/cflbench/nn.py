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
Neural network core
===================

**Module name:** :mod:`cflbench.nn`

.. currentmodule:: cflbench.nn

A fully connected classifier written directly in NumPy, together with the local training
loop every client runs. All arithmetic is in 64-bit floating point.

The default architecture is a single hidden layer with ReLU activation and a linear output
layer followed by softmax:

.. math::

    \text{logits} = W_2\,\mathrm{relu}(W_1 x + b_1) + b_2.

Any number of hidden layers is supported; ReLU follows every layer except the last.

Models
------

.. autosummary::
    ModelParams
    init_model

Training and evaluation
-----------------------

.. autosummary::
    TrainConfig
    forward
    loss
    loss_and_grad
    train_local
    evaluate

Local training draws its minibatch order from ``TrainConfig.rng_seed`` only, so the same
model, shard and configuration always produce the same result. Within a minibatch the
samples are visited in index order; a full-batch step is therefore independent of the
shuffle.

When ``prox_mu > 0`` the loss gains the proximal term
:math:`\frac{\mu}{2}\lVert w - w_{\text{anchor}}\rVert^2` over every weight and bias, with the
anchor set to the model the client started from.

Code details
^^^^^^^^^^^^
"""
import dataclasses
from typing import List, Optional, Sequence, Tuple

import numpy as np

from cflbench.exceptions import ConfigurationError, DataError

_LOG_FLOOR = 1e-12


@dataclasses.dataclass(frozen=True)
class ModelParams:
    """Weights and biases of a fully connected network.

    ``weights[l]`` has shape ``(dims[l + 1], dims[l])`` and ``biases[l]`` has shape
    ``(dims[l + 1],)``. Instances are treated as immutable; every operation returns new arrays.

    Args:
        weights (tuple[array]): weight matrix per layer
        biases (tuple[array]): bias vector per layer
    """

    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ConfigurationError("Model needs one bias per weight matrix")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ConfigurationError("Layer {} has inconsistent shapes".format(l))
            if l and w.shape[1] != self.weights[l - 1].shape[0]:
                raise ConfigurationError("Layer {} does not chain to layer {}".format(l, l - 1))

    @property
    def dims(self) -> Tuple[int, ...]:
        """tuple[int]: layer widths, input first and output last"""
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @property
    def size(self) -> int:
        """int: total number of parameters"""
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def flatten(self) -> np.ndarray:
        """Concatenate every parameter into one vector.

        Layers appear in order, each as its row-major weight matrix followed by its bias.

        Returns:
            array: vector of length :attr:`size`
        """
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    @classmethod
    def from_flat(cls, dims: Sequence[int], vector: np.ndarray) -> "ModelParams":
        """Inverse of :meth:`flatten`.

        Args:
            dims (Sequence[int]): layer widths
            vector (array): flat parameter vector

        Returns:
            ModelParams: the unflattened model
        """
        vector = np.asarray(vector, dtype=np.float64)
        expected = sum(o * i + o for i, o in zip(dims[:-1], dims[1:]))
        if vector.shape != (expected,):
            raise ConfigurationError(
                "Vector of shape {} does not match dims {}".format(vector.shape, tuple(dims))
            )

        weights, biases = [], []
        pos = 0
        for i, o in zip(dims[:-1], dims[1:]):
            weights.append(vector[pos : pos + o * i].reshape(o, i).copy())
            pos += o * i
            biases.append(vector[pos : pos + o].copy())
            pos += o
        return cls(tuple(weights), tuple(biases))

    def step(self, grad: "ModelParams", lr: float) -> "ModelParams":
        """Gradient descent update ``self - lr * grad``."""
        return ModelParams(
            tuple(w - lr * g for w, g in zip(self.weights, grad.weights)),
            tuple(b - lr * g for b, g in zip(self.biases, grad.biases)),
        )

    def is_finite(self) -> bool:
        """bool: whether every parameter is finite"""
        return all(np.all(np.isfinite(w)) and np.all(np.isfinite(b)) for w, b in zip(self.weights, self.biases))

    def allclose(self, other: "ModelParams", atol: float = 0.0) -> bool:
        """Elementwise comparison with another model of the same architecture.

        With the default ``atol=0`` this is exact equality.
        """
        if self.dims != other.dims:
            return False
        return bool(np.all(np.abs(self.flatten() - other.flatten()) <= atol))


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    """Settings for :func:`train_local`.

    Args:
        epochs (int): passes over the shard
        lr (float): SGD step size, non-negative
        batch_size (int): minibatch size; a value at least the shard size gives full-batch steps
        rng_seed (int): seed for the minibatch order
        prox_mu (float): proximal coefficient, ``0`` disables the proximal term
    """

    epochs: int = 10
    lr: float = 0.05
    batch_size: int = 32
    rng_seed: int = 0
    prox_mu: float = 0.0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError("Local training needs at least one epoch")
        if self.lr < 0:
            raise ConfigurationError("Learning rate must be non-negative")
        if self.batch_size < 1:
            raise ConfigurationError("Batch size must be positive")
        if self.prox_mu < 0:
            raise ConfigurationError("Proximal coefficient must be non-negative")

    def with_seed(self, rng_seed: int) -> "TrainConfig":
        """Copy of this configuration with a different minibatch seed."""
        return dataclasses.replace(self, rng_seed=int(rng_seed))


def init_model(dims: Sequence[int], seed: int) -> ModelParams:
    r"""Glorot-uniform initialization.

    Weights of a layer with fan-in :math:`m` and fan-out :math:`n` are drawn from
    :math:`U(-\sqrt{6/(m+n)}, \sqrt{6/(m+n)})`; biases start at zero.

    **Example usage:**

    >>> model = init_model((784, 200, 10), seed=0)
    >>> model.dims
    (784, 200, 10)

    Args:
        dims (Sequence[int]): layer widths, input first
        seed (int): seed of the draw

    Returns:
        ModelParams: initialized model
    """
    if len(dims) < 2 or min(dims) < 1:
        raise ConfigurationError("Need at least an input and an output layer of positive width")

    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return ModelParams(tuple(weights), tuple(biases))


def _check_batch(model: ModelParams, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != model.dims[0]:
        raise ConfigurationError(
            "Batch of shape {} does not match model input width {}".format(batch.shape, model.dims[0])
        )
    return batch


def _check_labels(model: ModelParams, labels: np.ndarray, n: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise DataError("Expected {} labels, got shape {}".format(n, labels.shape))
    if n and (labels.min() < 0 or labels.max() >= model.dims[-1]):
        raise DataError("Labels must lie in [0, {})".format(model.dims[-1]))
    return labels.astype(np.int64)


def _activations(model: ModelParams, batch: np.ndarray) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Pre-activations and activations of every layer; the last entry holds the logits."""
    acts = [batch]
    pre = []
    h = batch
    last = len(model.weights) - 1
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w.T + b
        pre.append(z)
        h = z if l == last else np.maximum(z, 0.0)
        acts.append(h)
    return pre, acts


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def forward(model: ModelParams, batch: np.ndarray) -> np.ndarray:
    """Class logits for a batch of flattened inputs.

    Args:
        model (ModelParams): network
        batch (array): inputs of shape ``(n, input_dim)``

    Returns:
        array: logits of shape ``(n, output_dim)``
    """
    batch = _check_batch(model, batch)
    return _activations(model, batch)[1][-1]


def _proximal(model: ModelParams, anchor: Optional[ModelParams], prox_mu: float):
    if prox_mu == 0:
        return 0.0, None
    if anchor is None:
        raise ConfigurationError("A proximal coefficient needs an anchor model")
    if anchor.dims != model.dims:
        raise ConfigurationError("Anchor and model architectures differ")

    diffs_w = [w - a for w, a in zip(model.weights, anchor.weights)]
    diffs_b = [b - a for b, a in zip(model.biases, anchor.biases)]
    penalty = 0.5 * prox_mu * (sum(np.sum(d * d) for d in diffs_w) + sum(np.sum(d * d) for d in diffs_b))
    return float(penalty), (diffs_w, diffs_b)


def loss(model: ModelParams, batch: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy of the model on a labelled batch.

    Probabilities are floored at ``1e-12`` before the logarithm.

    Args:
        model (ModelParams): network
        batch (array): inputs of shape ``(n, input_dim)``
        labels (array[int]): class indices of length ``n``

    Returns:
        float: mean loss
    """
    batch = _check_batch(model, batch)
    labels = _check_labels(model, labels, batch.shape[0])
    if not labels.size:
        raise DataError("Cannot compute the loss of an empty batch")

    probs = _softmax(forward(model, batch))
    picked = probs[np.arange(labels.size), labels]
    return float(-np.mean(np.log(np.maximum(picked, _LOG_FLOOR))))


def loss_and_grad(
    model: ModelParams,
    batch: np.ndarray,
    labels: np.ndarray,
    anchor: Optional[ModelParams] = None,
    prox_mu: float = 0.0,
) -> Tuple[float, ModelParams]:
    """Mean cross-entropy and its gradient by backpropagation.

    The anchor is required when ``prox_mu > 0`` and ignored otherwise.

    Args:
        model (ModelParams): network
        batch (array): inputs of shape ``(n, input_dim)``
        labels (array[int]): class indices of length ``n``
        anchor (ModelParams): centre of the proximal term
        prox_mu (float): proximal coefficient

    Returns:
        tuple[float, ModelParams]: loss and gradient with the model's shapes
    """
    batch = _check_batch(model, batch)
    labels = _check_labels(model, labels, batch.shape[0])
    n = labels.size
    if not n:
        raise DataError("Cannot compute the loss of an empty batch")
    if prox_mu < 0:
        raise ConfigurationError("Proximal coefficient must be non-negative")

    pre, acts = _activations(model, batch)
    probs = _softmax(acts[-1])
    picked = probs[np.arange(n), labels]
    value = float(-np.mean(np.log(np.maximum(picked, _LOG_FLOOR))))

    delta = probs
    delta[np.arange(n), labels] -= 1.0
    delta /= n

    grad_w = [None] * len(model.weights)
    grad_b = [None] * len(model.biases)
    for l in range(len(model.weights) - 1, -1, -1):
        grad_w[l] = delta.T @ acts[l]
        grad_b[l] = delta.sum(axis=0)
        if l:
            delta = (delta @ model.weights[l]) * (pre[l - 1] > 0)

    penalty, diffs = _proximal(model, anchor, prox_mu)
    if diffs is not None:
        value += penalty
        grad_w = [g + prox_mu * d for g, d in zip(grad_w, diffs[0])]
        grad_b = [g + prox_mu * d for g, d in zip(grad_b, diffs[1])]

    return value, ModelParams(tuple(grad_w), tuple(grad_b))


def train_local(model: ModelParams, shard, cfg: TrainConfig) -> ModelParams:
    """Minibatch SGD on one client's training data.

    ``shard`` is any object exposing ``train_features`` (shape ``(n, input_dim)``) and
    ``train_labels``, such as :class:`~.fl.partition.ClientShard`. The incoming model is the
    proximal anchor when ``cfg.prox_mu > 0``.

    Args:
        model (ModelParams): starting point, left untouched
        shard (ClientShard): the client's data
        cfg (TrainConfig): training settings

    Returns:
        ModelParams: the locally trained model
    """
    features = _check_batch(model, shard.train_features)
    labels = _check_labels(model, shard.train_labels, features.shape[0])
    n = labels.size
    if not n:
        raise DataError("Cannot train on an empty shard")

    anchor = model if cfg.prox_mu > 0 else None
    rng = np.random.default_rng(cfg.rng_seed)
    params = model

    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = np.sort(order[start : start + cfg.batch_size])
            _, grad = loss_and_grad(params, features[idx], labels[idx], anchor, cfg.prox_mu)
            params = params.step(grad, cfg.lr)

    if not params.is_finite():
        raise ConfigurationError(
            "Local training diverged to non-finite parameters; reduce the learning rate"
        )
    return params


def evaluate(model: ModelParams, features: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of samples whose arg-max logit equals the label.

    Ties resolve to the lowest class index.

    Args:
        model (ModelParams): network
        features (array): inputs of shape ``(n, input_dim)``
        labels (array[int]): class indices of length ``n``

    Returns:
        float: accuracy in ``[0, 1]``
    """
    features = _check_batch(model, features)
    labels = _check_labels(model, labels, features.shape[0])
    if not labels.size:
        raise DataError("Cannot evaluate on an empty set")

    predictions = np.argmax(forward(model, features), axis=1)
    return float(np.mean(predictions == labels))
