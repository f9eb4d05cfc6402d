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
Federated partitions
====================

**Module name:** :mod:`cflbench.fl.partition`

.. currentmodule:: cflbench.fl.partition

This module turns a centralized dataset into client shards. Two independent
choices shape a partition:

* A **heterogeneity** type divides the clients evenly into ``num_classes_het`` classes. Each
  class has its own image transform or label permutation, which is applied to all of that
  class's training and test data. Class ``0`` always keeps the data unchanged.

* A **quantity skew** type sets how many samples of each label every client receives. Every
  client draws the same number of samples of every label, so each shard is balanced across
  labels and holds ``samples_per_label * num_classes`` samples.

Heterogeneity types
-------------------

+-----------------------------------+-----------------------------------------------+
| ``ConceptShiftFeatures``          | rotation by 0, 90, 180 and 270 degrees        |
+-----------------------------------+-----------------------------------------------+
| ``ConceptShiftFeaturesMedical``   | identity, inversion, zoom, inversion and zoom |
+-----------------------------------+-----------------------------------------------+
| ``ConceptShiftLabels``            | identity, then pairwise label swaps           |
|                                   | ``(0,1)(2,3)``, ``(4,5)(6,7)``, ``(8,9)(0,2)``|
+-----------------------------------+-----------------------------------------------+
| ``FeatureDistributionSkew``       | identity, dilation, erosion, double dilation  |
+-----------------------------------+-----------------------------------------------+

Quantity skew types
-------------------

+------------+--------------------------------------------------------------------+
| ``NonQS``  | every client gets ``samples_per_label_nonqs`` samples per label    |
+------------+--------------------------------------------------------------------+
| ``QS1``    | within each heterogeneity class, clients cycle through the group   |
|            | sizes, so every class mixes small and large clients                |
+------------+--------------------------------------------------------------------+
| ``QS2``    | each heterogeneity class gets one group size, so quantity aligns   |
|            | with the class                                                     |
+------------+--------------------------------------------------------------------+

.. autosummary::
    HeterogeneityKind
    HeterogeneitySpec
    QSKind
    QSSpec
    ClientShard
    partition

Sampling is without replacement within a client, independently for each client. The draws of
client ``i`` come from a random stream keyed by the seed and ``i``, so a shard does not depend
on how many other clients exist. Test data is split into one disjoint slice per heterogeneity
class; the slice layout is fixed, the seed only chooses which samples fall in each slice.

Code details
^^^^^^^^^^^^
"""
import dataclasses
import enum
import logging
from typing import Optional, Sequence, Tuple

import numpy as np

from cflbench.exceptions import ConfigurationError, DataError
from cflbench.fl.data import Dataset, apply_label_swap, apply_transform_batch, swap_table
from cflbench.utils import substream

log = logging.getLogger(__name__)


class HeterogeneityKind(enum.Enum):
    """Kinds of client heterogeneity."""

    CONCEPT_SHIFT_FEATURES = "ConceptShiftFeatures"
    CONCEPT_SHIFT_FEATURES_MEDICAL = "ConceptShiftFeaturesMedical"
    CONCEPT_SHIFT_LABELS = "ConceptShiftLabels"
    FEATURE_DISTRIBUTION_SKEW = "FeatureDistributionSkew"


class QSKind(enum.Enum):
    """Kinds of quantity skew."""

    NON_QS = "NonQS"
    QS1 = "QS1"
    QS2 = "QS2"


_FEATURE_TRANSFORMS = {
    HeterogeneityKind.CONCEPT_SHIFT_FEATURES: ("identity", "rot90", "rot180", "rot270"),
    HeterogeneityKind.CONCEPT_SHIFT_FEATURES_MEDICAL: ("identity", "invert", "zoom", "invert_zoom"),
    HeterogeneityKind.FEATURE_DISTRIBUTION_SKEW: ("identity", "dilate", "erode", "dilate2"),
}

_LABEL_SWAPS = ((), ((0, 1), (2, 3)), ((4, 5), (6, 7)), ((8, 9), (0, 2)))


@dataclasses.dataclass(frozen=True)
class HeterogeneitySpec:
    """Per-class transforms of a heterogeneity type.

    Exactly one of the two transform families is non-trivial for the built-in kinds, but both
    may be set. Entry ``0`` of each must be the identity.

    Args:
        kind (HeterogeneityKind): heterogeneity type
        feature_transforms (tuple[str]): image transform descriptor per class
        label_tables (tuple[tuple[int]]): label permutation per class
    """

    kind: HeterogeneityKind
    feature_transforms: Tuple[str, ...]
    label_tables: Tuple[Tuple[int, ...], ...]

    def __post_init__(self):
        if len(self.feature_transforms) != len(self.label_tables):
            raise ConfigurationError("Need one image transform and one label table per class")
        if not self.feature_transforms:
            raise ConfigurationError("Need at least one heterogeneity class")
        if self.feature_transforms[0] != "identity":
            raise ConfigurationError("Heterogeneity class 0 must keep images unchanged")
        if tuple(self.label_tables[0]) != tuple(range(len(self.label_tables[0]))):
            raise ConfigurationError("Heterogeneity class 0 must keep labels unchanged")

    @property
    def num_classes_het(self) -> int:
        """int: number of heterogeneity classes"""
        return len(self.feature_transforms)

    @classmethod
    def for_kind(cls, kind, num_classes: int, num_classes_het: int = 4) -> "HeterogeneitySpec":
        """Built-in transforms of a heterogeneity type.

        **Example usage:**

        >>> spec = HeterogeneitySpec.for_kind("ConceptShiftFeatures", num_classes=10)
        >>> spec.feature_transforms
        ('identity', 'rot90', 'rot180', 'rot270')

        Args:
            kind (HeterogeneityKind or str): heterogeneity type
            num_classes (int): number of labels in the dataset
            num_classes_het (int): number of heterogeneity classes, at most 4

        Returns:
            HeterogeneitySpec: the heterogeneity type
        """
        kind = HeterogeneityKind(kind)
        if not 1 <= num_classes_het <= 4:
            raise ConfigurationError(
                "Built-in heterogeneity types define 1 to 4 classes, not {}".format(num_classes_het)
            )

        identity = tuple(range(num_classes))
        if kind is HeterogeneityKind.CONCEPT_SHIFT_LABELS:
            needed = max((max(p) for swaps in _LABEL_SWAPS[:num_classes_het] for p in swaps), default=-1)
            if needed >= num_classes:
                raise ConfigurationError(
                    "Label swaps need at least {} labels, dataset has {}".format(needed + 1, num_classes)
                )
            tables = tuple(swap_table(swaps, num_classes) for swaps in _LABEL_SWAPS[:num_classes_het])
            return cls(kind, ("identity",) * num_classes_het, tables)

        transforms = _FEATURE_TRANSFORMS[kind][:num_classes_het]
        return cls(kind, transforms, (identity,) * num_classes_het)

    @classmethod
    def medical(cls, num_classes: int, num_classes_het: int = 4) -> "HeterogeneitySpec":
        """Concept shift through intensity inversion and zoom, suited to scans."""
        return cls.for_kind(HeterogeneityKind.CONCEPT_SHIFT_FEATURES_MEDICAL, num_classes, num_classes_het)

    def apply(self, het_class: int, images: np.ndarray, labels: np.ndarray):
        """Transform one class's images and labels.

        Args:
            het_class (int): heterogeneity class
            images (array): images of shape ``(n, side, side)``
            labels (array[int]): labels

        Returns:
            tuple[array, array]: transformed images and labels
        """
        return (
            apply_transform_batch(self.feature_transforms[het_class], images),
            apply_label_swap(self.label_tables[het_class], labels),
        )


@dataclasses.dataclass(frozen=True)
class QSSpec:
    """Quantity skew settings.

    Args:
        kind (QSKind): quantity skew type
        samples_per_label_nonqs (int): per-label count for ``NonQS``
        groups (tuple[int]): per-label counts used by ``QS1`` and ``QS2``
        permute_groups (bool): for ``QS2``, assign group sizes to classes in a seeded random
            order instead of ascending order
    """

    kind: QSKind = QSKind.NON_QS
    samples_per_label_nonqs: int = 50
    groups: Tuple[int, ...] = (5, 20, 100, 200)
    permute_groups: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", QSKind(self.kind))
        object.__setattr__(self, "groups", tuple(int(g) for g in self.groups))
        if self.samples_per_label_nonqs < 1:
            raise ConfigurationError("samples_per_label_nonqs must be positive")
        if self.kind is not QSKind.NON_QS and (not self.groups or min(self.groups) < 1):
            raise ConfigurationError("Quantity skew groups must be positive")

    def samples_per_label(self, num_clients: int, num_classes_het: int, seed: int) -> Tuple[int, ...]:
        """Per-label sample count for every client.

        Client ``i`` belongs to heterogeneity class ``i // (num_clients // num_classes_het)``.

        Returns:
            tuple[int]: count per client
        """
        per_class = num_clients // num_classes_het

        if self.kind is QSKind.NON_QS:
            return (self.samples_per_label_nonqs,) * num_clients

        if self.kind is QSKind.QS1:
            if per_class % len(self.groups):
                log.debug(
                    "%d clients per class do not divide evenly into %d groups; cycling",
                    per_class,
                    len(self.groups),
                )
            return tuple(self.groups[(i % per_class) % len(self.groups)] for i in range(num_clients))

        if len(self.groups) != num_classes_het:
            raise ConfigurationError(
                "QS2 needs one group per heterogeneity class: {} groups, {} classes".format(
                    len(self.groups), num_classes_het
                )
            )
        order = np.arange(num_classes_het)
        if self.permute_groups:
            order = substream(seed, "qs2-order").permutation(num_classes_het)
        sizes = sorted(self.groups)
        return tuple(sizes[order[i // per_class]] for i in range(num_clients))


@dataclasses.dataclass(frozen=True)
class ClientShard:
    """One client's private data.

    Features are flattened images; labels already carry the class's label permutation.

    Args:
        client_id (int): client index
        het_class (int): heterogeneity class, the ground truth cluster
        samples_per_label (int): training samples per label
        num_classes (int): number of labels
        train_features (array): shape ``(n_train, input_dim)``
        train_labels (array[int]): shape ``(n_train,)``
        test_features (array): shape ``(n_test, input_dim)``
        test_labels (array[int]): shape ``(n_test,)``
    """

    client_id: int
    het_class: int
    samples_per_label: int
    num_classes: int
    train_features: np.ndarray
    train_labels: np.ndarray
    test_features: np.ndarray
    test_labels: np.ndarray

    @property
    def num_samples(self) -> int:
        """int: number of training samples, the aggregation weight"""
        return int(self.train_labels.shape[0])

    @property
    def input_dim(self) -> int:
        """int: flattened feature width"""
        return int(self.train_features.shape[1])


def _test_slices(test: Dataset, num_classes_het: int, seed: int, per_class: Optional[int]):
    pool = len(test) // num_classes_het
    if per_class is None or per_class <= 0:
        per_class = pool
    if per_class > pool:
        raise DataError(
            "Test pool of {} samples cannot give {} classes {} samples each".format(
                len(test), num_classes_het, per_class
            )
        )
    order = substream(seed, "test").permutation(len(test))
    return [np.sort(order[c * pool : c * pool + per_class]) for c in range(num_classes_het)]


def partition(
    dataset: Dataset,
    test_dataset: Dataset,
    het: HeterogeneitySpec,
    qs: QSSpec,
    num_clients: int,
    seed: int,
    test_per_class: Optional[int] = None,
) -> Sequence[ClientShard]:
    """Split a dataset into client shards.

    **Example usage:**

    >>> het = HeterogeneitySpec.for_kind("ConceptShiftLabels", num_classes=10)
    >>> shards = partition(train, test, het, QSSpec(), num_clients=20, seed=0)
    >>> [s.het_class for s in shards[:6]]
    [0, 0, 0, 0, 0, 1]

    Args:
        dataset (Dataset): training pool
        test_dataset (Dataset): test pool
        het (HeterogeneitySpec): heterogeneity type
        qs (QSSpec): quantity skew type
        num_clients (int): number of clients, a multiple of the number of heterogeneity classes
        seed (int): seed of every draw
        test_per_class (int): test samples given to each heterogeneity class; by default the
            test pool is divided evenly between the classes

    Returns:
        list[ClientShard]: shards ordered by client id
    """
    c_het = het.num_classes_het
    if num_clients < 1 or num_clients % c_het:
        raise ConfigurationError(
            "{} clients cannot be split evenly across {} heterogeneity classes".format(num_clients, c_het)
        )
    if dataset.num_classes != test_dataset.num_classes:
        raise DataError("Training and test pools disagree on the number of labels")
    if dataset.image_shape != test_dataset.image_shape:
        raise DataError("Training and test images differ in shape")

    per_class = num_clients // c_het
    counts = qs.samples_per_label(num_clients, c_het, seed)

    pools = dataset.indices_by_label()
    largest = max(counts)
    for label, pool in enumerate(pools):
        if pool.size < largest:
            raise DataError(
                "Label {} has {} samples but a client needs {} (shortfall {})".format(
                    label, pool.size, largest, largest - pool.size
                )
            )

    test_parts = []
    for c, idx in enumerate(_test_slices(test_dataset, c_het, seed, test_per_class)):
        images, labels = het.apply(c, test_dataset.images[idx], test_dataset.labels[idx])
        test_parts.append((images.reshape(len(idx), -1), labels))

    shards = []
    for i in range(num_clients):
        c = i // per_class
        rng = substream(seed, "client", i)
        idx = np.concatenate([pool[rng.choice(pool.size, counts[i], replace=False)] for pool in pools])

        images, labels = het.apply(c, dataset.images[idx], dataset.labels[idx])
        test_features, test_labels = test_parts[c]
        shards.append(
            ClientShard(
                client_id=i,
                het_class=c,
                samples_per_label=counts[i],
                num_classes=dataset.num_classes,
                train_features=images.reshape(len(idx), -1),
                train_labels=labels,
                test_features=test_features,
                test_labels=test_labels,
            )
        )

    log.debug(
        "Partitioned %s into %d clients (%s, %s, seed %d)",
        dataset.name,
        num_clients,
        het.kind.value,
        qs.kind.value,
        seed,
    )
    return shards
