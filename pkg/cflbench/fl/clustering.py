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
Clustering
==========

**Module name:** :mod:`cflbench.fl.clustering`

.. currentmodule:: cflbench.fl.clustering

Clustering of clients from their model parameters or updates, and the adjusted Rand index
used to score a clustering against the ground truth heterogeneity classes.

Every routine takes a matrix with one row per client, usually the flattened parameters
(:func:`flatten_models`) or their differences from a broadcast model.

.. autosummary::
    flatten_models
    kmeans
    inertia
    ward_linkage
    cut
    hierarchical
    edc_features
    edc_kmeans
    adjusted_rand_index

K-means uses k-means++ seeding followed by Lloyd iterations, from scikit-learn. The Ward
dendrogram comes from SciPy; merge heights between singletons are plain Euclidean distances
and ties follow SciPy's deterministic nearest-neighbour chain. Cutting always yields exactly
``K`` clusters.

Code details
^^^^^^^^^^^^
"""
import dataclasses
import logging
import warnings
from typing import Sequence, Optional

import numpy as np
from scipy.cluster import hierarchy
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning
from sklearn.metrics import adjusted_rand_score

from cflbench.exceptions import ConfigurationError, DataError
from cflbench.fl.runtime import ClusterAssignment
from cflbench.nn import ModelParams

log = logging.getLogger(__name__)


def flatten_models(models: Sequence[ModelParams]) -> np.ndarray:
    """Stack flattened models into a matrix with one row per model."""
    if not models:
        raise ConfigurationError("No models to flatten")
    return np.stack([m.flatten() for m in models])


def _as_matrix(vectors) -> np.ndarray:
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or not vectors.shape[0]:
        raise ConfigurationError("Expected a non-empty matrix with one row per client")
    return vectors


def kmeans(vectors: np.ndarray, K: int, seed: int, max_iter: int = 300) -> ClusterAssignment:
    """K-means with k-means++ seeding and Lloyd iterations.

    Args:
        vectors (array): one row per client
        K (int): number of clusters, at most the number of rows
        seed (int): seed of the k-means++ draw, in ``[0, 2**32)``
        max_iter (int): maximum number of Lloyd iterations

    Returns:
        ClusterAssignment: cluster of every row
    """
    vectors = _as_matrix(vectors)
    n = vectors.shape[0]
    if not 1 <= K <= n:
        raise ConfigurationError("Cannot form {} clusters from {} points".format(K, n))

    model = KMeans(
        n_clusters=K,
        init="k-means++",
        n_init=1,
        max_iter=max_iter,
        random_state=seed,
        algorithm="lloyd",
    )
    with warnings.catch_warnings():
        # duplicate points leave fewer distinct clusters than requested
        warnings.simplefilter("ignore", ConvergenceWarning)
        labels = model.fit_predict(vectors)

    return ClusterAssignment(tuple(labels), K)


def inertia(vectors: np.ndarray, assignment: ClusterAssignment) -> float:
    """Sum of squared distances of every row to the mean of its cluster."""
    vectors = _as_matrix(vectors)
    labels = np.asarray(assignment.membership)
    total = 0.0
    for k in range(assignment.num_clusters):
        rows = vectors[labels == k]
        if rows.size:
            total += float(np.sum((rows - rows.mean(axis=0)) ** 2))
    return total


@dataclasses.dataclass(frozen=True)
class Dendrogram:
    """Ward merge history in SciPy linkage form.

    Row ``j`` of :attr:`linkage` merges nodes ``linkage[j, 0]`` and ``linkage[j, 1]`` at height
    ``linkage[j, 2]`` into node ``n + j`` of size ``linkage[j, 3]``; nodes below ``n`` are the
    input rows.

    Args:
        linkage (array): the ``(n - 1, 4)`` linkage matrix
        num_points (int): number of clustered rows
    """

    linkage: np.ndarray
    num_points: int

    @property
    def merges(self) -> list:
        """list[tuple[int, int, float]]: merged node ids and merge height, in order"""
        return [(int(a), int(b), float(h)) for a, b, h, _ in self.linkage]

    @property
    def heights(self) -> np.ndarray:
        """array: merge heights, non-decreasing"""
        return self.linkage[:, 2].copy()


def ward_linkage(vectors: np.ndarray) -> Dendrogram:
    """Agglomerative clustering with Ward's minimum variance criterion.

    **Example usage:**

    >>> [(a, b, round(h, 4)) for a, b, h in ward_linkage([[0.0], [1.0], [10.0]]).merges]
    [(0, 1, 1.0), (2, 3, 10.9697)]

    Args:
        vectors (array): one row per client, at least two rows

    Returns:
        Dendrogram: merge history
    """
    vectors = _as_matrix(vectors)
    if vectors.shape[0] < 2:
        raise ConfigurationError("Ward linkage needs at least two points")
    return Dendrogram(hierarchy.linkage(vectors, method="ward", metric="euclidean"), vectors.shape[0])


def cut(dendrogram: Dendrogram, K: int) -> ClusterAssignment:
    """Cut a dendrogram into exactly ``K`` clusters.

    Args:
        dendrogram (Dendrogram): merge history
        K (int): number of clusters, at most the number of points

    Returns:
        ClusterAssignment: cluster of every point
    """
    n = dendrogram.num_points
    if not 1 <= K <= n:
        raise ConfigurationError("Cannot cut {} points into {} clusters".format(n, K))
    labels = hierarchy.cut_tree(dendrogram.linkage, n_clusters=K).ravel()
    return ClusterAssignment(tuple(labels), K)


def hierarchical(vectors: np.ndarray, K: int) -> ClusterAssignment:
    """Ward clustering of the rows into ``K`` clusters; a single row forms one cluster."""
    vectors = _as_matrix(vectors)
    if vectors.shape[0] == 1:
        if K != 1:
            raise ConfigurationError("Cannot form {} clusters from 1 point".format(K))
        return ClusterAssignment((0,), 1)
    return cut(ward_linkage(vectors), K)


def edc_features(update_vectors: np.ndarray, m: Optional[int] = None) -> np.ndarray:
    r"""Decomposed cosine features of client updates.

    The top ``m`` right singular vectors of the update matrix span the dominant update
    directions. Each client is described by :math:`1 - \cos` of the angle between its update
    and every direction. A zero update has no direction and gets the neutral value ``1``.

    Args:
        update_vectors (array): one update per row
        m (int): number of directions, ``1 <= m <= n``; defaults to the number of rows

    Returns:
        array: features of shape ``(n, m)`` with values in ``[0, 2]``
    """
    updates = _as_matrix(update_vectors)
    n = updates.shape[0]
    if m is None:
        m = n
    if not 1 <= m <= n:
        raise ConfigurationError("Need between 1 and {} directions, got {}".format(n, m))

    _, _, vt = np.linalg.svd(updates, full_matrices=False)
    directions = vt[:m]

    norms = np.linalg.norm(updates, axis=1)
    zero = norms == 0
    if np.any(zero):
        log.warning("%d clients sent a zero update; using neutral features", int(zero.sum()))

    cos = np.zeros((n, m))
    safe = ~zero
    cos[safe] = (updates[safe] @ directions.T) / norms[safe, np.newaxis]
    return 1.0 - np.clip(cos, -1.0, 1.0)


def edc_kmeans(update_vectors: np.ndarray, K: int, seed: int, m: Optional[int] = None) -> ClusterAssignment:
    """K-means on :func:`edc_features`; ``m`` defaults to ``K``."""
    return kmeans(edc_features(update_vectors, K if m is None else m), K, seed)


def adjusted_rand_index(truth: Sequence[int], predicted: Sequence[int]) -> float:
    """Adjusted Rand index between two labelings of the same clients.

    Equals ``1`` for identical partitions, including the cases where both put everything in
    one cluster or everything apart, and is ``0`` in expectation for random labelings.

    **Example usage:**

    >>> adjusted_rand_index([0, 0, 1, 1], [1, 1, 0, 0])
    1.0

    Args:
        truth (Sequence[int]): reference labels
        predicted (Sequence[int]): labels to score

    Returns:
        float: index in ``[-1, 1]``
    """
    truth = np.asarray(truth)
    predicted = np.asarray(predicted)
    if truth.shape != predicted.shape or truth.ndim != 1:
        raise DataError(
            "Labelings have different lengths: {} and {}".format(truth.shape, predicted.shape)
        )
    if truth.size < 2:
        raise DataError("The adjusted Rand index needs at least two items")
    return float(adjusted_rand_score(truth, predicted))
