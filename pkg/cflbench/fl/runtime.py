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
Federated runtime
=================

**Module name:** :mod:`cflbench.fl.runtime`

.. currentmodule:: cflbench.fl.runtime

Shared round machinery for every algorithm: aggregation rules, cluster assignments and the
broadcast, train, aggregate cycle.

Aggregation
-----------

.. autosummary::
    aggregate_weighted
    aggregate_uniform
    aggregate_trimmed

Rounds
------

.. autosummary::
    ClusterAssignment
    RoundState
    train_clients
    aggregate_clusters
    run_round

Within a round, clients are processed and summed in ascending client id order. When a cluster
ends up with no members, its previous model is carried over unchanged and a warning is
logged.

Code details
^^^^^^^^^^^^
"""
import dataclasses
import logging
import math
from concurrent.futures import Executor
from typing import Optional, Sequence, Tuple

import numpy as np

from cflbench import nn
from cflbench.exceptions import ConfigurationError, DataError, EmptyClusterError
from cflbench.nn import ModelParams, TrainConfig
from cflbench.utils import canonical_labels, seed_int

log = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class ClusterAssignment:
    """Cluster label of every client.

    Args:
        membership (tuple[int]): label of client ``i`` at position ``i``
        num_clusters (int): number of cluster models, labels lie in ``[0, num_clusters)``
    """

    membership: Tuple[int, ...]
    num_clusters: int

    def __post_init__(self):
        object.__setattr__(self, "membership", tuple(int(m) for m in self.membership))
        if self.num_clusters < 1:
            raise ConfigurationError("Need at least one cluster")
        if any(m < 0 or m >= self.num_clusters for m in self.membership):
            raise ConfigurationError(
                "Cluster labels must lie in [0, {})".format(self.num_clusters)
            )

    def __len__(self):
        return len(self.membership)

    @classmethod
    def single(cls, num_clients: int) -> "ClusterAssignment":
        """Every client in cluster ``0``."""
        return cls((0,) * num_clients, 1)

    def members(self, k: int) -> Tuple[int, ...]:
        """Client ids in cluster ``k``, ascending."""
        return tuple(i for i, m in enumerate(self.membership) if m == k)

    def same_partition(self, other: "ClusterAssignment") -> bool:
        """Whether both assignments group the clients identically, up to relabeling.

        Equivalent to an adjusted Rand index of exactly 1.
        """
        return canonical_labels(self.membership) == canonical_labels(other.membership)


@dataclasses.dataclass(frozen=True)
class RoundState:
    """Snapshot of a federation after a round.

    Args:
        round (int): completed round, ``0`` before the first
        cluster_models (tuple[ModelParams]): one model per cluster
        client_models (tuple[ModelParams]): latest local model per client
        assignment (ClusterAssignment): cluster of every client
        mean_loss (float): mean training loss of the client models, ``nan`` if not measured
    """

    round: int
    cluster_models: Tuple[ModelParams, ...]
    client_models: Tuple[ModelParams, ...]
    assignment: ClusterAssignment
    mean_loss: float = float("nan")


def _check_compatible(models: Sequence[ModelParams]):
    dims = models[0].dims
    for m in models[1:]:
        if m.dims != dims:
            raise ConfigurationError("Cannot aggregate models of dims {} and {}".format(dims, m.dims))
    return dims


def aggregate_weighted(
    models: Sequence[ModelParams], sizes: Sequence[float], ids: Optional[Sequence[int]] = None
) -> ModelParams:
    r"""Sample-size weighted average :math:`\sum_i \frac{s_i}{\sum_j s_j} w_i`.

    The sum runs in the order of ``ids`` when given. Without ids it runs in a canonical order,
    by weight and then by parameter values, so permuting the inputs gives the same bits.

    **Example usage:**

    >>> a, b = ModelParams.from_flat((1, 1), [0.0, 0.0]), ModelParams.from_flat((1, 1), [4.0, 4.0])
    >>> aggregate_weighted([a, b], [1, 3]).flatten()
    array([3., 3.])

    Args:
        models (Sequence[ModelParams]): models of one cluster
        sizes (Sequence[float]): positive weights, usually training sample counts
        ids (Sequence[int]): client ids fixing the summation order

    Returns:
        ModelParams: the average
    """
    if not models:
        raise EmptyClusterError("Cannot aggregate an empty set of models")
    if len(sizes) != len(models):
        raise ConfigurationError("Need one size per model")
    sizes = np.asarray(sizes, dtype=np.float64)
    if np.any(sizes <= 0):
        raise DataError("Aggregation weights must be positive")
    dims = _check_compatible(models)

    if ids is None:
        stacked = np.stack([m.flatten() for m in models])
        order = np.lexsort(np.vstack([stacked.T[::-1], sizes[None, :]]))
    else:
        order = np.argsort(np.asarray(ids), kind="stable")
    total = sizes[order].sum()

    acc = np.zeros(models[0].size)
    for i in order:
        acc += (sizes[i] / total) * models[i].flatten()
    return ModelParams.from_flat(dims, acc)


def aggregate_uniform(models: Sequence[ModelParams], ids: Optional[Sequence[int]] = None) -> ModelParams:
    """Unweighted average; identical to :func:`aggregate_weighted` with equal sizes."""
    return aggregate_weighted(models, [1.0] * len(models), ids)


def trim_count(n: int, beta: float) -> int:
    """Number of values removed from each end by :func:`aggregate_trimmed`: ``ceil(beta * n)``."""
    if not 0 <= beta < 0.5:
        raise ConfigurationError("Trim fraction must lie in [0, 0.5)")
    return int(math.ceil(beta * n - 1e-9))


def aggregate_trimmed(models: Sequence[ModelParams], beta: float) -> ModelParams:
    """Coordinate-wise trimmed mean.

    For every coordinate the ``ceil(beta * n)`` smallest and largest values are dropped and
    the rest averaged. With ``beta = 0`` this is :func:`aggregate_uniform`.

    **Example usage:**

    >>> values = [0.0, 1.0, 2.0, 3.0, 100.0]
    >>> models = [ModelParams.from_flat((1, 1), [v, v]) for v in values]
    >>> aggregate_trimmed(models, 0.2).flatten()
    array([2., 2.])

    Args:
        models (Sequence[ModelParams]): models of one cluster
        beta (float): fraction trimmed from each end, in ``[0, 0.5)``

    Returns:
        ModelParams: the trimmed mean
    """
    if not models:
        raise EmptyClusterError("Cannot aggregate an empty set of models")
    n = len(models)
    t = trim_count(n, beta)
    if 2 * t >= n:
        raise ConfigurationError(
            "Trimming {} of {} models from each end leaves nothing to average".format(t, n)
        )
    if t == 0:
        return aggregate_uniform(models)

    dims = _check_compatible(models)
    stacked = np.sort(np.stack([m.flatten() for m in models]), axis=0)
    return ModelParams.from_flat(dims, stacked[t : n - t].mean(axis=0))


def _train_job(job):
    model, shard, cfg = job
    return nn.train_local(model, shard, cfg)


def train_clients(
    starts: Sequence[ModelParams],
    shards: Sequence,
    cfg: TrainConfig,
    seed: int,
    step: int,
    restart: int = 0,
    executor: Optional[Executor] = None,
) -> Tuple[ModelParams, ...]:
    """Local training of every client from its own starting model.

    Client ``i`` shuffles with the stream ``(seed, "train", restart, step, i)``, so results
    do not depend on the executor.

    Args:
        starts (Sequence[ModelParams]): starting model per client
        shards (Sequence[ClientShard]): client data, ordered by client id
        cfg (TrainConfig): training settings; ``rng_seed`` is replaced per client
        seed (int): run seed
        step (int): communication step, counted from 1 across every phase of the run
        restart (int): restart index for algorithms that restart
        executor (Executor): optional pool for client-level parallelism

    Returns:
        tuple[ModelParams]: trained model per client
    """
    jobs = [
        (start, shard, cfg.with_seed(seed_int(seed, "train", restart, step, shard.client_id)))
        for start, shard in zip(starts, shards)
    ]
    mapper = executor.map if executor is not None else map
    return tuple(mapper(_train_job, jobs))


def aggregate_clusters(
    client_models: Sequence[ModelParams],
    shards: Sequence,
    assignment: ClusterAssignment,
    previous: Sequence[ModelParams],
    rule: str = "weighted",
    trim_fraction: float = 0.0,
) -> Tuple[ModelParams, ...]:
    """One model per cluster from its members' local models.

    Args:
        client_models (Sequence[ModelParams]): model per client
        shards (Sequence[ClientShard]): client data, for the sample weights
        assignment (ClusterAssignment): cluster per client
        previous (Sequence[ModelParams]): models carried over by empty clusters
        rule (str): ``"weighted"`` (sample-size weighted), ``"uniform"`` or ``"trimmed"``;
            ``"trimmed"`` falls back to the uniform mean when nothing is trimmed or the
            cluster is too small to trim
        trim_fraction (float): fraction trimmed from each end for ``"trimmed"``

    Returns:
        tuple[ModelParams]: cluster models
    """
    if len(previous) != assignment.num_clusters:
        raise ConfigurationError("Need one previous model per cluster")

    out = []
    for k in range(assignment.num_clusters):
        ids = assignment.members(k)
        members = [client_models[i] for i in ids]
        try:
            if rule == "weighted":
                model = aggregate_weighted(members, [shards[i].num_samples for i in ids], ids)
            elif rule == "uniform":
                model = aggregate_uniform(members, ids)
            elif rule == "trimmed":
                t = trim_count(len(members), trim_fraction)
                if members and (t == 0 or 2 * t >= len(members)):
                    model = aggregate_uniform(members, ids)
                else:
                    model = aggregate_trimmed(members, trim_fraction)
            else:
                raise ConfigurationError("Unknown aggregation rule '{}'".format(rule))
        except EmptyClusterError:
            log.warning("Cluster %d has no members; keeping its previous model", k)
            model = previous[k]
        out.append(model)
    return tuple(out)


def mean_train_loss(client_models: Sequence[ModelParams], shards: Sequence) -> float:
    """Average over clients of each model's loss on its own training data."""
    return float(
        np.mean([nn.loss(m, s.train_features, s.train_labels) for m, s in zip(client_models, shards)])
    )


def run_round(
    state: RoundState,
    shards: Sequence,
    cfg: TrainConfig,
    seed: int,
    rule: str = "weighted",
    trim_fraction: float = 0.0,
    restart: int = 0,
    executor: Optional[Executor] = None,
) -> RoundState:
    """One communication round with a fixed assignment.

    Every client trains from the model of its cluster, then each cluster's model is replaced
    by the aggregate of its members.

    Args:
        state (RoundState): state after the previous round
        shards (Sequence[ClientShard]): client data, ordered by client id
        cfg (TrainConfig): training settings
        seed (int): run seed
        rule (str): aggregation rule, see :func:`aggregate_clusters`
        trim_fraction (float): fraction trimmed from each end for ``"trimmed"``
        restart (int): restart index used in the training streams
        executor (Executor): optional pool for client-level parallelism

    Returns:
        RoundState: state after this round
    """
    if len(shards) != len(state.assignment):
        raise ConfigurationError("Assignment covers {} clients, got {} shards".format(len(state.assignment), len(shards)))

    step = state.round + 1
    starts = [state.cluster_models[k] for k in state.assignment.membership]
    client_models = train_clients(starts, shards, cfg, seed, step, restart, executor)
    cluster_models = aggregate_clusters(
        client_models, shards, state.assignment, state.cluster_models, rule, trim_fraction
    )
    return RoundState(
        step, cluster_models, client_models, state.assignment, mean_train_loss(client_models, shards)
    )
