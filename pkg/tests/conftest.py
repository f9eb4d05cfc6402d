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
"""
Default parameters, environment variables, fixtures, and common routines for the unit tests.
"""
# pylint: disable=redefined-outer-name
import gzip
import os
import struct

import numpy as np
import pytest

from cflbench.fl.data import Dataset
from cflbench.fl.partition import HeterogeneitySpec, QSSpec, partition
from cflbench.fl.algorithms import AlgoConfig
from cflbench.nn import TrainConfig


# defaults
TOL = 1e-12
SIDE = 6
NUM_LABELS = 10


def make_dataset(per_label, seed, name="toy", noise=0.1):
    """Toy image dataset: one random binary prototype per label plus pixel noise.

    Prototypes depend only on the label, so train and test sets drawn with different
    seeds share them.
    """
    protos = np.random.default_rng(1234).random((NUM_LABELS, SIDE, SIDE)) > 0.5
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(NUM_LABELS), per_label)
    images = np.clip(protos[labels] + noise * rng.normal(size=(labels.size, SIDE, SIDE)), 0.0, 1.0)
    return Dataset(images, labels, NUM_LABELS, name)


@pytest.fixture(scope="session")
def tol():
    """Numerical tolerance for equality tests."""
    return float(os.environ.get("TOL", TOL))


@pytest.fixture
def rng():
    """Seeded random generator."""
    return np.random.default_rng(42)


@pytest.fixture(scope="session")
def toy_train():
    """Training pool with 30 samples per label."""
    return make_dataset(30, seed=0)


@pytest.fixture(scope="session")
def toy_test():
    """Test pool with 8 samples per label."""
    return make_dataset(8, seed=1)


@pytest.fixture(scope="session")
def toy_shards(toy_train, toy_test):
    """Eight clients in four rotation classes, 4 samples per label each."""
    het = HeterogeneitySpec.for_kind("ConceptShiftFeatures", NUM_LABELS)
    qs = QSSpec("NonQS", samples_per_label_nonqs=4)
    return partition(toy_train, toy_test, het, qs, num_clients=8, seed=0)


@pytest.fixture(scope="session")
def toy_qs_shards(toy_train, toy_test):
    """Eight clients in four rotation classes with QS1 sizes 2 and 6."""
    het = HeterogeneitySpec.for_kind("ConceptShiftFeatures", NUM_LABELS)
    qs = QSSpec("QS1", groups=(2, 6))
    return partition(toy_train, toy_test, het, qs, num_clients=8, seed=0)


@pytest.fixture
def small_config():
    """Algorithm settings small enough for unit tests."""
    return AlgoConfig(
        K=4,
        rounds=4,
        train=TrainConfig(epochs=1, lr=0.1, batch_size=16),
        hidden_dims=(8,),
        ifca_restarts=2,
        srfca_grid_size=2,
    )


def _write_idx(path, magic, dims, payload):
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(str(path), "wb") as f:
        f.write(struct.pack(">I", magic))
        f.write(struct.pack(">{}I".format(len(dims)), *dims))
        f.write(payload)


@pytest.fixture
def write_idx():
    """Factory writing an IDX image and label file pair.

    Returns a function ``(directory, images, labels, prefix)`` that writes ``images``
    (``uint8`` array of shape ``(n, h, w)``) and ``labels`` under MNIST file names and
    returns their paths.
    """

    def _write(directory, images, labels, prefix="train", gz=False):
        images = np.asarray(images, dtype=np.uint8)
        labels = np.asarray(labels, dtype=np.uint8)
        stem = "t10k" if prefix == "test" else prefix
        suffix = ".gz" if gz else ""
        img_path = os.path.join(str(directory), "{}-images-idx3-ubyte{}".format(stem, suffix))
        lbl_path = os.path.join(str(directory), "{}-labels-idx1-ubyte{}".format(stem, suffix))
        _write_idx(img_path, 2051, images.shape, images.tobytes())
        _write_idx(lbl_path, 2049, labels.shape, labels.tobytes())
        return img_path, lbl_path

    return _write


@pytest.fixture
def toy_data_root(tmpdir, write_idx, toy_train, toy_test):
    """Data root holding the toy dataset as ``toy/`` in IDX format."""
    directory = tmpdir.mkdir("toy")
    write_idx(directory, np.round(toy_train.images * 255), toy_train.labels, "train")
    write_idx(directory, np.round(toy_test.images * 255), toy_test.labels, "test")
    return str(tmpdir)
