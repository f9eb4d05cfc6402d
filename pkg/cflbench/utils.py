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
Utilities
=========

**Module name:**  :mod:`cflbench.utils`

.. currentmodule:: cflbench.utils

Helper functions shared by the simulator.

Random streams
--------------

Every random draw is taken from a generator keyed by the run seed and a tuple describing
its purpose, e.g. ``("train", restart, step, client_id)``. Keys are independent of worker
count and of the order in which jobs execute, so a run is reproducible bit-for-bit.

.. autosummary::
   substream
   seed_int

Labels
------

.. autosummary::
   canonical_labels

Code details
------------
"""
import zlib
from typing import Sequence, Union

import numpy as np

Key = Union[int, str]


def _entropy(seed: int, keys: Sequence[Key]) -> list:
    entropy = [int(seed)]
    for k in keys:
        if isinstance(k, str):
            entropy.append(zlib.crc32(k.encode("utf-8")))
        else:
            if k < 0:
                raise ValueError("Stream keys must be non-negative")
            entropy.append(int(k))
    return entropy


def substream(seed: int, *keys: Key) -> np.random.Generator:
    """Independent random generator for the stream identified by ``keys``.

    **Example usage:**

    >>> a = substream(7, "train", 0, 3, 12).random()
    >>> b = substream(7, "train", 0, 3, 12).random()
    >>> a == b
    True

    Args:
        seed (int): run seed
        *keys (int or str): stream identifiers; strings are hashed with CRC-32

    Returns:
        numpy.random.Generator: seeded generator
    """
    if seed < 0:
        raise ValueError("Seed must be non-negative")
    return np.random.default_rng(np.random.SeedSequence(_entropy(seed, keys)))


def seed_int(seed: int, *keys: Key) -> int:
    """Integer seed in ``[0, 2**32)`` for the stream identified by ``keys``.

    Used for libraries that expect an integer ``random_state``.

    Args:
        seed (int): run seed
        *keys (int or str): stream identifiers

    Returns:
        int: derived seed
    """
    if seed < 0:
        raise ValueError("Seed must be non-negative")
    return int(np.random.SeedSequence(_entropy(seed, keys)).generate_state(1)[0])


def canonical_labels(labels: Sequence[int]) -> tuple:
    """Relabel a partition so that labels appear in order of first occurrence.

    Two labelings describe the same partition exactly when their canonical forms agree.

    **Example usage:**

    >>> canonical_labels([2, 2, 0, 1, 0])
    (0, 0, 1, 2, 1)

    Args:
        labels (Sequence[int]): cluster label per item

    Returns:
        tuple[int]: relabeled partition
    """
    mapping = {}
    out = []
    for label in labels:
        if label not in mapping:
            mapping[label] = len(mapping)
        out.append(mapping[label])
    return tuple(out)
