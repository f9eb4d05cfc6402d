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
Unit tests for :mod:`cflbench.fl.partition`
"""
# pylint: disable=no-self-use
import numpy as np
import pytest

from cflbench.exceptions import ConfigurationError, DataError
from cflbench.fl.data import apply_transform_batch
from cflbench.fl.partition import (
    HeterogeneityKind,
    HeterogeneitySpec,
    QSKind,
    QSSpec,
    partition,
)
from cflbench.utils import substream

pytestmark = pytest.mark.data


class TestHeterogeneitySpec:
    """Tests for the heterogeneity types."""

    @pytest.mark.parametrize(
        "kind,transforms",
        [
            ("ConceptShiftFeatures", ("identity", "rot90", "rot180", "rot270")),
            ("ConceptShiftFeaturesMedical", ("identity", "invert", "zoom", "invert_zoom")),
            ("FeatureDistributionSkew", ("identity", "dilate", "erode", "dilate2")),
            ("ConceptShiftLabels", ("identity",) * 4),
        ],
    )
    def test_feature_transforms(self, kind, transforms):
        """Every type has its four image transforms"""
        spec = HeterogeneitySpec.for_kind(kind, 10)
        assert spec.kind is HeterogeneityKind(kind)
        assert spec.feature_transforms == transforms
        assert spec.num_classes_het == 4

    def test_label_tables(self):
        """Label concept shift swaps two label pairs per class"""
        spec = HeterogeneitySpec.for_kind("ConceptShiftLabels", 10)
        assert spec.label_tables[0] == tuple(range(10))
        assert spec.label_tables[1] == (1, 0, 3, 2, 4, 5, 6, 7, 8, 9)
        assert spec.label_tables[2] == (0, 1, 2, 3, 5, 4, 7, 6, 8, 9)
        assert spec.label_tables[3] == (2, 1, 0, 3, 4, 5, 6, 7, 9, 8)

    def test_feature_kinds_keep_labels(self):
        """Feature types leave the labels unchanged"""
        spec = HeterogeneitySpec.for_kind("ConceptShiftFeatures", 10)
        assert all(t == tuple(range(10)) for t in spec.label_tables)

    def test_medical(self):
        """The medical constructor selects inversion and zoom"""
        assert HeterogeneitySpec.medical(2).kind is HeterogeneityKind.CONCEPT_SHIFT_FEATURES_MEDICAL

    def test_fewer_classes(self):
        """Fewer heterogeneity classes keep the leading transforms"""
        spec = HeterogeneitySpec.for_kind("ConceptShiftFeatures", 10, num_classes_het=2)
        assert spec.feature_transforms == ("identity", "rot90")

    @pytest.mark.parametrize("count", [0, 5])
    def test_class_count_range(self, count):
        """Built-in types define one to four classes"""
        with pytest.raises(ConfigurationError, match="1 to 4 classes"):
            HeterogeneitySpec.for_kind("ConceptShiftFeatures", 10, num_classes_het=count)

    def test_label_swaps_need_ten_labels(self):
        """The label swaps reach label 9"""
        with pytest.raises(ConfigurationError, match="at least 10 labels"):
            HeterogeneitySpec.for_kind("ConceptShiftLabels", 5)

    def test_class_zero_identity(self):
        """The reference class cannot be transformed"""
        with pytest.raises(ConfigurationError, match="class 0"):
            HeterogeneitySpec(HeterogeneityKind.CONCEPT_SHIFT_FEATURES, ("rot90",), ((0, 1),))

    def test_unknown_kind(self):
        """Unknown types are rejected"""
        with pytest.raises(ValueError):
            HeterogeneitySpec.for_kind("Rotations", 10)

    def test_apply(self, rng):
        """Images and labels are transformed together"""
        spec = HeterogeneitySpec.for_kind("ConceptShiftLabels", 10)
        images = rng.random((3, 4, 4))
        out_images, out_labels = spec.apply(1, images, np.array([0, 2, 5]))
        assert np.array_equal(out_images, images)
        assert out_labels.tolist() == [1, 3, 5]


class TestQSSpec:
    """Tests for quantity skew sample counts."""

    def test_nonqs(self):
        """Without skew every client gets the same count"""
        assert QSSpec().samples_per_label(20, 4, seed=0) == (50,) * 20

    def test_qs1(self):
        """QS1 cycles the group sizes within every class"""
        counts = QSSpec("QS1").samples_per_label(20, 4, seed=0)
        assert counts == (5, 20, 100, 200, 5) * 4

    def test_qs1_divisible(self):
        """With a multiple of the group count, every class holds each size equally often"""
        counts = QSSpec("QS1", groups=(5, 20)).samples_per_label(8, 4, seed=0)
        assert counts == (5, 20) * 4

    def test_qs2(self):
        """QS2 gives every class its own size, ascending by class"""
        counts = QSSpec("QS2").samples_per_label(20, 4, seed=0)
        assert counts == (5,) * 5 + (20,) * 5 + (100,) * 5 + (200,) * 5

    def test_qs2_sorts_groups(self):
        """Group sizes are sorted before being assigned"""
        counts = QSSpec("QS2", groups=(200, 5, 100, 20)).samples_per_label(4, 4, seed=0)
        assert counts == (5, 20, 100, 200)

    def test_qs2_permuted(self):
        """Permuted QS2 assigns the sizes to classes in a seeded order"""
        spec = QSSpec("QS2", permute_groups=True)
        counts = spec.samples_per_label(20, 4, seed=3)
        assert counts == spec.samples_per_label(20, 4, seed=3)
        per_class = [counts[5 * c] for c in range(4)]
        assert sorted(per_class) == [5, 20, 100, 200]
        assert all(len(set(counts[5 * c : 5 * c + 5])) == 1 for c in range(4))

    def test_qs2_group_count(self):
        """QS2 needs one size per class"""
        with pytest.raises(ConfigurationError, match="one group per heterogeneity class"):
            QSSpec("QS2", groups=(5, 20)).samples_per_label(20, 4, seed=0)

    def test_kind_from_string(self):
        """Kinds are accepted by value"""
        assert QSSpec("QS1").kind is QSKind.QS1

    def test_positive_groups(self):
        """Group sizes must be positive"""
        with pytest.raises(ConfigurationError):
            QSSpec("QS1", groups=(0, 5))


class TestPartition:
    """Tests for splitting a dataset into client shards."""

    def test_classes_and_sizes(self, toy_shards, toy_qs_shards):
        """Clients are assigned to classes in blocks and get their per-label count"""
        assert [s.het_class for s in toy_shards] == [0, 0, 1, 1, 2, 2, 3, 3]
        assert [s.client_id for s in toy_shards] == list(range(8))
        for s in toy_shards:
            assert s.num_samples == 40
            assert s.input_dim == 36
            assert np.array_equal(np.bincount(s.train_labels, minlength=10), np.full(10, 4))
        assert [s.samples_per_label for s in toy_qs_shards] == [2, 6] * 4
        assert [s.num_samples for s in toy_qs_shards] == [20, 60] * 4

    def test_rotated_features(self, toy_shards, toy_train):
        """Class 1 clients hold images rotated by 90 degrees"""
        shard = toy_shards[2]
        images = shard.train_features.reshape(-1, 6, 6)
        restored = apply_transform_batch("rot270", images)
        pool = toy_train.images.reshape(len(toy_train), -1)
        for image in restored.reshape(len(restored), -1):
            assert np.any(np.all(pool == image, axis=1))

    def test_label_shift(self, toy_train, toy_test):
        """Label concept shift relabels the samples of every class but the first"""
        het = HeterogeneitySpec.for_kind("ConceptShiftLabels", 10)
        shards = partition(toy_train, toy_test, het, QSSpec(samples_per_label_nonqs=3), 4, seed=0)
        pool = toy_train.images.reshape(len(toy_train), -1)
        for shard in shards:
            table = het.label_tables[shard.het_class]
            for feature, label in zip(shard.train_features, shard.train_labels):
                original = toy_train.labels[np.flatnonzero(np.all(pool == feature, axis=1))[0]]
                assert label == table[original]

    def test_test_sets(self, toy_train, toy_test):
        """Clients of a class share one test slice; slices of different classes are disjoint"""
        het = HeterogeneitySpec.for_kind("ConceptShiftLabels", 10)
        shards = partition(toy_train, toy_test, het, QSSpec(samples_per_label_nonqs=3), 8, seed=1)
        assert np.array_equal(shards[0].test_features, shards[1].test_features)
        assert len(shards[0].test_labels) == len(toy_test) // 4

        a, b = shards[0].test_features, shards[2].test_features
        assert not np.any(np.all(a[:, None, :] == b[None, :, :], axis=2))

    def test_test_slices_follow_seeded_permutation(self, toy_train, toy_test):
        """Each class takes the next block of one seeded shuffle of the pool, with no per-label balancing"""
        het = HeterogeneitySpec.for_kind("ConceptShiftLabels", 10)
        shards = partition(toy_train, toy_test, het, QSSpec(samples_per_label_nonqs=3), 8, seed=5)
        order = substream(5, "test").permutation(len(toy_test))
        pool = len(toy_test) // 4
        flat = toy_test.images.reshape(len(toy_test), -1)
        for shard in shards:
            idx = np.sort(order[shard.het_class * pool : (shard.het_class + 1) * pool])
            assert np.array_equal(shard.test_features, flat[idx])

    def test_test_per_class(self, toy_train, toy_test):
        """The test slice size can be fixed"""
        het = HeterogeneitySpec.for_kind("ConceptShiftFeatures", 10)
        shards = partition(toy_train, toy_test, het, QSSpec(samples_per_label_nonqs=2), 4, seed=0, test_per_class=7)
        assert all(len(s.test_labels) == 7 for s in shards)

        with pytest.raises(DataError, match="Test pool"):
            partition(toy_train, toy_test, het, QSSpec(samples_per_label_nonqs=2), 4, seed=0, test_per_class=21)

    def test_deterministic(self, toy_train, toy_test):
        """The seed fixes every draw"""
        het = HeterogeneitySpec.for_kind("ConceptShiftFeatures", 10)
        qs = QSSpec(samples_per_label_nonqs=3)
        a = partition(toy_train, toy_test, het, qs, 4, seed=5)
        b = partition(toy_train, toy_test, het, qs, 4, seed=5)
        c = partition(toy_train, toy_test, het, qs, 4, seed=6)
        assert all(np.array_equal(x.train_features, y.train_features) for x, y in zip(a, b))
        assert not np.array_equal(a[0].train_features, c[0].train_features)

    def test_client_streams_independent(self, toy_train, toy_test):
        """A client's draw does not depend on the number of clients"""
        het = HeterogeneitySpec.for_kind("ConceptShiftFeatures", 10)
        qs = QSSpec(samples_per_label_nonqs=3)
        small = partition(toy_train, toy_test, het, qs, 4, seed=2)
        large = partition(toy_train, toy_test, het, qs, 8, seed=2)
        assert np.array_equal(small[0].train_features, large[0].train_features)

    def test_no_repeats_within_client(self, toy_qs_shards):
        """Samples are drawn without replacement"""
        for s in toy_qs_shards:
            assert len(np.unique(s.train_features, axis=0)) == s.num_samples

    def test_shortfall(self, toy_train, toy_test):
        """Asking for more samples than a label holds names the shortfall"""
        het = HeterogeneitySpec.for_kind("ConceptShiftFeatures", 10)
        with pytest.raises(DataError, match="shortfall 10"):
            partition(toy_train, toy_test, het, QSSpec("QS1", groups=(40, 2)), 8, seed=0)

    def test_uneven_clients(self, toy_train, toy_test):
        """Clients must split evenly over the classes"""
        het = HeterogeneitySpec.for_kind("ConceptShiftFeatures", 10)
        with pytest.raises(ConfigurationError, match="evenly"):
            partition(toy_train, toy_test, het, QSSpec(samples_per_label_nonqs=2), 6, seed=0)
