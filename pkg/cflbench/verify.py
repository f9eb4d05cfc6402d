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
Oracle checks
=============

**Module name:** :mod:`cflbench.verify`

.. currentmodule:: cflbench.verify

Randomized comparisons of the numerical building blocks against slow, obviously correct
reference computations. ``cflbench verify`` runs the whole suite and exits non-zero when a
check fails.

.. autosummary::
    OracleResult
    check_ari
    check_ward
    check_trimmed
    check_duplication
    check_gradients
    gradient_error
    run_suite

Code details
~~~~~~~~~~~~
"""
import dataclasses
import itertools
import logging
from typing import Sequence

import numpy as np
from scipy.special import comb

from cflbench import nn
from cflbench.fl import clustering, runtime
from cflbench.nn import ModelParams
from cflbench.utils import substream

log = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class OracleResult:
    """Outcome of one randomized check.

    Args:
        name (str): check name
        trials (int): number of random instances
        failures (int): instances outside tolerance
        worst_error (float): largest error observed
        tolerance (float): accepted error
    """

    name: str
    trials: int
    failures: int
    worst_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def __str__(self):
        status = "ok" if self.passed else "FAILED"
        return "{:<12} {:>5} trials  worst error {:.3e} (tol {:.0e})  {}".format(
            self.name, self.trials, self.worst_error, self.tolerance, status
        )


def _ari_oracle(a, b) -> float:
    n = len(a)
    table = np.zeros((max(a) + 1, max(b) + 1), dtype=np.int64)
    for x, y in zip(a, b):
        table[x, y] += 1
    index = comb(table, 2).sum()
    rows = comb(table.sum(axis=1), 2).sum()
    cols = comb(table.sum(axis=0), 2).sum()
    expected = rows * cols / comb(n, 2)
    maximum = 0.5 * (rows + cols)
    if maximum == expected:
        return 1.0
    return (index - expected) / (maximum - expected)


def check_ari(trials: int = 1000, seed: int = 0, tol: float = 1e-12) -> OracleResult:
    """Adjusted Rand index against the contingency table formula."""
    rng = substream(seed, "verify", "ari")
    worst, failures = 0.0, 0
    for _ in range(trials):
        n = int(rng.integers(2, 40))
        a = rng.integers(0, int(rng.integers(1, 7)), size=n).tolist()
        b = rng.integers(0, int(rng.integers(1, 7)), size=n).tolist()
        err = abs(clustering.adjusted_rand_index(a, b) - _ari_oracle(a, b))
        worst = max(worst, err)
        failures += err > tol
    return OracleResult("ari", trials, failures, worst, tol)


def _ward_oracle(points: np.ndarray):
    """Greedy agglomeration minimizing the increase of the within-cluster sum of squares.

    Returns the merge heights and the partition left after each merge.
    """
    clusters = [[i] for i in range(len(points))]
    heights, partitions = [], []
    while len(clusters) > 1:
        best = None
        for i, j in itertools.combinations(range(len(clusters)), 2):
            a, b = points[clusters[i]], points[clusters[j]]
            gap = a.mean(axis=0) - b.mean(axis=0)
            cost = len(a) * len(b) / (len(a) + len(b)) * float(gap @ gap)
            if best is None or cost < best[0]:
                best = (cost, i, j)
        cost, i, j = best
        clusters[i] = clusters[i] + clusters[j]
        del clusters[j]
        heights.append(np.sqrt(2 * cost))
        partitions.append({frozenset(c) for c in clusters})
    return np.array(heights), partitions


def check_ward(trials: int = 100, seed: int = 0, tol: float = 1e-9) -> OracleResult:
    """Ward linkage and cuts against brute-force agglomeration."""
    rng = substream(seed, "verify", "ward")
    worst, failures = 0.0, 0
    for _ in range(trials):
        n = int(rng.integers(2, 10))
        points = rng.normal(size=(n, int(rng.integers(1, 5))))
        heights, partitions = _ward_oracle(points)
        dendrogram = clustering.ward_linkage(points)

        err = float(np.max(np.abs(dendrogram.heights - heights) / np.maximum(1.0, heights)))
        for level, expected in enumerate(partitions):
            labels = clustering.cut(dendrogram, n - level - 1).membership
            got = {frozenset(i for i, l in enumerate(labels) if l == k) for k in set(labels)}
            if got != expected:
                err = np.inf
        worst = max(worst, err)
        failures += err > tol
    return OracleResult("ward", trials, failures, worst, tol)


def check_trimmed(trials: int = 100, seed: int = 0, tol: float = 1e-12) -> OracleResult:
    """Coordinate-wise trimmed mean against per-coordinate sorting."""
    rng = substream(seed, "verify", "trimmed")
    worst, failures = 0.0, 0
    for _ in range(trials):
        n = int(rng.integers(3, 15))
        beta = float(rng.uniform(0.0, 0.45))
        t = runtime.trim_count(n, beta)
        if 2 * t >= n:
            beta, t = 0.0, 0
        models = [ModelParams.from_flat((2, 3), rng.normal(size=9)) for _ in range(n)]
        got = runtime.aggregate_trimmed(models, beta).flatten()

        columns = zip(*[m.flatten().tolist() for m in models])
        expected = np.array([sum(sorted(c)[t : n - t]) / (n - 2 * t) for c in columns])
        err = float(np.max(np.abs(got - expected)))
        worst = max(worst, err)
        failures += err > tol
    return OracleResult("trimmed", trials, failures, worst, tol)


def check_duplication(trials: int = 100, seed: int = 0, tol: float = 1e-12) -> OracleResult:
    """Weighted averaging equals uniform averaging over duplicated models."""
    rng = substream(seed, "verify", "duplication")
    worst, failures = 0.0, 0
    for _ in range(trials):
        n = int(rng.integers(1, 8))
        sizes = rng.integers(1, 5, size=n).tolist()
        models = [ModelParams.from_flat((2, 2), rng.normal(size=6)) for _ in range(n)]
        weighted = runtime.aggregate_weighted(models, sizes).flatten()
        repeated = [m for m, s in zip(models, sizes) for _ in range(s)]
        err = float(np.max(np.abs(weighted - runtime.aggregate_uniform(repeated).flatten())))
        worst = max(worst, err)
        failures += err > tol
    return OracleResult("duplication", trials, failures, worst, tol)


def gradient_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    r"""Worst per-entry relative error :math:`\max_i |a_i - n_i| / \max(|a_i| + |n_i|, f)`.

    A single wrong entry shows up even when the gradient has many correct ones.

    Args:
        analytic (array): gradient from backpropagation
        numeric (array): finite difference estimate of the same gradient
        floor (float): lower bound on the denominator, for entries near zero

    Returns:
        float: the largest relative error over all entries
    """
    analytic, numeric = np.ravel(analytic), np.ravel(numeric)
    scale = np.maximum(np.abs(analytic) + np.abs(numeric), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))


def check_gradients(trials: int = 100, seed: int = 0, tol: float = 1e-4, eps: float = 1e-5) -> OracleResult:
    """Backpropagation against central finite differences, with and without the proximal term."""
    rng = substream(seed, "verify", "gradients")
    worst, failures = 0.0, 0
    for trial in range(trials):
        dims = (int(rng.integers(2, 6)), int(rng.integers(2, 6)), int(rng.integers(2, 5)))
        model = nn.init_model(dims, int(rng.integers(2 ** 31)))
        batch = rng.normal(size=(int(rng.integers(1, 6)), dims[0]))
        labels = rng.integers(0, dims[-1], size=batch.shape[0])
        anchor, mu = None, 0.0
        if trial % 2:
            anchor = nn.init_model(dims, int(rng.integers(2 ** 31)))
            mu = float(rng.uniform(0.0, 1.0))

        _, grad = nn.loss_and_grad(model, batch, labels, anchor, mu)
        flat = model.flatten()
        numeric = np.zeros_like(flat)
        for i in range(flat.size):
            plus, minus = flat.copy(), flat.copy()
            plus[i] += eps
            minus[i] -= eps
            f_plus = nn.loss_and_grad(ModelParams.from_flat(dims, plus), batch, labels, anchor, mu)[0]
            f_minus = nn.loss_and_grad(ModelParams.from_flat(dims, minus), batch, labels, anchor, mu)[0]
            numeric[i] = (f_plus - f_minus) / (2 * eps)

        analytic = grad.flatten()
        err = gradient_error(analytic, numeric)
        worst = max(worst, err)
        failures += err > tol
    return OracleResult("gradients", trials, failures, worst, tol)


def run_suite(seed: int = 0) -> Sequence[OracleResult]:
    """Run every check with its default number of trials.

    Returns:
        list[OracleResult]: one result per check
    """
    results = [
        check_ari(seed=seed),
        check_ward(seed=seed),
        check_trimmed(seed=seed),
        check_duplication(seed=seed),
        check_gradients(seed=seed),
    ]
    for r in results:
        (log.info if r.passed else log.error)("%s", r)
    return results
