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
Federated algorithms
====================

**Module name:** :mod:`cflbench.fl.algorithms`

.. currentmodule:: cflbench.fl.algorithms

Drivers for the global baselines, six clustered federated learning algorithms and
CORNFLQS. Every driver takes the client shards, an :class:`AlgoConfig` and a seed, and
returns an :class:`AlgoResult` with the final cluster models, the final assignment and a
round-by-round :class:`AlgoTrace`.

.. autosummary::
    run_fedavg
    run_fedprox
    run_cfl_oneshot
    run_flhc
    run_fedgroup
    run_ifca
    run_srfca
    run_cornflqs
    run

Summary of the algorithms
-------------------------

* **FedAvg** trains one global model with sample-weighted averaging.
* **FedProx** is FedAvg with a proximal term pulling local models towards the broadcast model.
* **CFL** runs FedAvg until the clustering round, then splits the clients once by k-means on
  their updates and continues FedAvg inside each cluster.
* **FL+HC** is CFL with Ward hierarchical clustering in place of k-means.
* **FedGroup** clusters the updates of a cold start pass by k-means on decomposed cosine
  features and continues FedAvg inside each cluster.
* **IFCA** keeps ``K`` models; every round each client trains the model with the lowest loss
  on its data. The best of several random restarts is kept.
* **SRFCA** thresholds the symmetric cross-loss between local models, refines the clusters
  with trimmed-mean aggregation, merges clusters whose models are close, and refines again.
  The threshold is picked from a grid of cross-loss quantiles.
* **CORNFLQS** clusters by Ward on the model weights and lets clients pick the lowest-loss
  cluster model, alternating until both agree (the CORN phase). It then continues with
  loss-based selection alone until the assignment is stable, and finishes with FedAvg inside
  the fixed clusters.

Determinism
-----------

All draws come from random streams keyed by the run seed (see :func:`~.utils.substream`).
Local training of client ``i`` at communication step ``t`` uses the stream
``("train", restart, t, i)``, where steps count every broadcast of the run from ``1``. The
first global model is drawn from the stream ``("init", 0, 0)``. With ``K = 1`` the clustered
algorithms therefore reproduce FedAvg bit-for-bit; CORNFLQS matches FedAvg run for two extra
rounds when all clients hold the same number of samples.

Round budget
------------

Every algorithm uses ``N`` communication rounds, except CORNFLQS, which adds its two
initialization rounds. IFCA and SRFCA repeat the ``N`` rounds for each restart or threshold
candidate. FedGroup's cold start is the local training of round ``1``.

Code details
^^^^^^^^^^^^
"""
import dataclasses
import hashlib
import json
import logging
import math
from concurrent.futures import Executor
from typing import Dict, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from cflbench import nn
from cflbench.exceptions import ConfigurationError, DataError
from cflbench.fl import clustering
from cflbench.fl.runtime import (
    ClusterAssignment,
    RoundState,
    aggregate_clusters,
    aggregate_uniform,
    mean_train_loss,
    run_round,
    train_clients,
)
from cflbench.nn import ModelParams, TrainConfig
from cflbench.utils import seed_int

log = logging.getLogger(__name__)

ALGORITHMS = ("fedavg", "fedprox", "cfl", "flhc", "fedgroup", "ifca", "srfca", "cornflqs")
"""tuple[str]: names accepted by :func:`run`"""

CLUSTERED = ALGORITHMS[2:]
"""tuple[str]: algorithms that form more than one model"""


@dataclasses.dataclass(frozen=True)
class AlgoConfig:
    """Hyperparameters shared by the algorithm drivers.

    Args:
        K (int): number of clusters
        rounds (int): communication rounds ``N``
        train (TrainConfig): local training settings
        hidden_dims (tuple[int]): hidden layer widths of the model
        clustering_round (int): round at which CFL and FL+HC split the clients; ``0`` selects
            ``N // 2``
        ifca_restarts (int): random restarts of IFCA
        ifca_selection (str): IFCA restart criterion, ``"accuracy"`` (highest mean training
            accuracy) or ``"loss"`` (lowest mean training loss)
        srfca_quantiles (tuple[float, float]): quantile range of the SRFCA threshold grid
        srfca_grid_size (int): number of SRFCA thresholds tried
        prox_mu (float): FedProx proximal coefficient
        trim_fraction (float): fraction trimmed from each end by SRFCA's aggregation
        edc_directions (int): FedGroup decomposition directions; ``0`` selects ``K``
    """

    K: int = 4
    rounds: int = 20
    train: TrainConfig = TrainConfig()
    hidden_dims: Tuple[int, ...] = (200,)
    clustering_round: int = 0
    ifca_restarts: int = 5
    ifca_selection: str = "accuracy"
    srfca_quantiles: Tuple[float, float] = (0.1, 0.25)
    srfca_grid_size: int = 3
    prox_mu: float = 0.01
    trim_fraction: float = 0.1
    edc_directions: int = 0

    def __post_init__(self):
        if self.K < 1:
            raise ConfigurationError("K must be at least 1")
        if self.rounds < 1:
            raise ConfigurationError("Need at least one round")
        if self.clustering_round < 0 or (self.clustering_round and self.clustering_round >= self.rounds):
            raise ConfigurationError("The clustering round must come before the last round")
        if self.ifca_restarts < 1:
            raise ConfigurationError("IFCA needs at least one restart")
        if self.ifca_selection not in ("accuracy", "loss"):
            raise ConfigurationError("IFCA selection must be 'accuracy' or 'loss'")
        lo, hi = self.srfca_quantiles
        if not 0 <= lo <= hi <= 1:
            raise ConfigurationError("SRFCA quantiles must satisfy 0 <= low <= high <= 1")
        if self.srfca_grid_size < 1:
            raise ConfigurationError("SRFCA needs at least one threshold")
        if self.prox_mu < 0:
            raise ConfigurationError("The proximal coefficient must be non-negative")
        if not 0 <= self.trim_fraction < 0.5:
            raise ConfigurationError("The trim fraction must lie in [0, 0.5)")
        if self.edc_directions < 0:
            raise ConfigurationError("The number of EDC directions must be non-negative")

    @property
    def split_round(self) -> int:
        """int: clustering round of CFL and FL+HC"""
        return self.clustering_round or max(1, self.rounds // 2)


@dataclasses.dataclass(frozen=True)
class TraceEntry:
    """What happened in one round.

    Args:
        round (int): round index; CORNFLQS initialization rounds are ``-1`` and ``0``
        phase (str): phase tag, e.g. ``"FedAvg"`` or ``"CORN"``
        membership (tuple[int]): assignment in force after the round
        mean_loss (float): mean training loss of the local models
        cluster_norms (tuple[float]): Euclidean norm of every cluster model
    """

    round: int
    phase: str
    membership: Tuple[int, ...]
    mean_loss: float
    cluster_norms: Tuple[float, ...]

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


class AlgoTrace:
    """Round-by-round history of a run, plus free-form flags."""

    def __init__(self):
        self.entries = []
        self.flags = []

    def __len__(self):
        return len(self.entries)

    def record(self, round_, phase, assignment, mean_loss, cluster_models):
        self.entries.append(
            TraceEntry(
                int(round_),
                phase,
                tuple(assignment.membership),
                float(mean_loss),
                tuple(float(np.linalg.norm(m.flatten())) for m in cluster_models),
            )
        )

    def flag(self, message: str):
        self.flags.append(message)

    @property
    def phases(self) -> Tuple[str, ...]:
        """tuple[str]: phase tag of every entry"""
        return tuple(e.phase for e in self.entries)

    def to_list(self) -> list:
        return [e.as_dict() for e in self.entries]

    def digest(self) -> str:
        """SHA-256 of the entries and flags in canonical JSON."""
        payload = json.dumps({"entries": self.to_list(), "flags": self.flags}, sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclasses.dataclass
class AlgoResult:
    """Outcome of an algorithm run.

    Args:
        models (tuple[ModelParams]): final model per cluster; a single model for the global
            baselines
        assignment (ClusterAssignment): final cluster of every client
        trace (AlgoTrace): round-by-round history
        details (dict): algorithm specific choices, e.g. the aggregation rule or the selected
            restart
    """

    models: Tuple[ModelParams, ...]
    assignment: ClusterAssignment
    trace: AlgoTrace
    details: Dict = dataclasses.field(default_factory=dict)

    def model_of(self, client_id: int) -> ModelParams:
        """Model used by a client at test time."""
        return self.models[self.assignment.membership[client_id]]


class _Federation:
    """Shards, settings and stream bookkeeping of one run."""

    def __init__(self, shards, cfg: AlgoConfig, seed: int, executor: Optional[Executor], prox_mu=0.0):
        if not shards:
            raise DataError("Cannot run an algorithm without clients")
        num_classes = shards[0].num_classes
        input_dim = shards[0].input_dim
        for s in shards:
            if s.num_classes != num_classes or s.input_dim != input_dim:
                raise DataError("Client {} disagrees on the data layout".format(s.client_id))
        if [s.client_id for s in shards] != list(range(len(shards))):
            raise DataError("Shards must be ordered by client id starting at 0")

        self.shards = shards
        self.cfg = cfg
        self.seed = seed
        self.executor = executor
        self.train_cfg = dataclasses.replace(cfg.train, prox_mu=prox_mu)
        self.dims = (input_dim,) + tuple(cfg.hidden_dims) + (num_classes,)
        self._kmeans_calls = 0

    @property
    def n(self) -> int:
        return len(self.shards)

    def initial(self, restart: int = 0, k: int = 0) -> ModelParams:
        return nn.init_model(self.dims, seed_int(self.seed, "init", restart, k))

    def train(self, starts, step, restart=0):
        return train_clients(starts, self.shards, self.train_cfg, self.seed, step, restart, self.executor)

    def kmeans_seed(self) -> int:
        self._kmeans_calls += 1
        return seed_int(self.seed, "kmeans", self._kmeans_calls)

    def loss_matrix(self, models) -> np.ndarray:
        """Entry ``(i, k)`` is the loss of model ``k`` on client ``i``'s training data."""
        return np.array(
            [[nn.loss(m, s.train_features, s.train_labels) for m in models] for s in self.shards]
        )

    def select(self, models) -> ClusterAssignment:
        """Each client picks the model with the lowest training loss; ties go to the lowest index."""
        return ClusterAssignment(tuple(select_clusters(self.loss_matrix(models))), len(models))

    def train_accuracy(self, models, assignment) -> float:
        return float(
            np.mean(
                [
                    nn.evaluate(models[k], s.train_features, s.train_labels)
                    for k, s in zip(assignment.membership, self.shards)
                ]
            )
        )


def select_clusters(losses: np.ndarray) -> np.ndarray:
    """Row-wise arg-min of a client by model loss matrix, lowest index on ties."""
    losses = np.asarray(losses)
    if losses.ndim != 2 or not losses.shape[1]:
        raise ConfigurationError("Expected a loss matrix with at least one model")
    return np.argmin(losses, axis=1)


def _global(shards, cfg, seed, executor, prox_mu, phase):
    fed = _Federation(shards, cfg, seed, executor, prox_mu)
    assignment = ClusterAssignment.single(fed.n)
    state = RoundState(0, (fed.initial(),), (), assignment)
    trace = AlgoTrace()

    for r in range(1, cfg.rounds + 1):
        state = run_round(state, shards, fed.train_cfg, seed, executor=executor)
        trace.record(r, phase, assignment, state.mean_loss, state.cluster_models)

    return AlgoResult(state.cluster_models, assignment, trace, {"aggregation": "sample-weighted"})


def run_fedavg(shards, cfg: AlgoConfig, seed: int, executor: Optional[Executor] = None) -> AlgoResult:
    """Federated averaging of a single global model.

    **Example usage:**

    >>> result = run_fedavg(shards, AlgoConfig(rounds=5), seed=0)
    >>> len(result.models), result.trace.phases
    (1, ('FedAvg', 'FedAvg', 'FedAvg', 'FedAvg', 'FedAvg'))

    Args:
        shards (Sequence[ClientShard]): client data ordered by client id
        cfg (AlgoConfig): hyperparameters
        seed (int): run seed
        executor (Executor): optional pool for client-level parallelism

    Returns:
        AlgoResult: one global model, every client in cluster ``0``
    """
    return _global(shards, cfg, seed, executor, 0.0, "FedAvg")


def run_fedprox(shards, cfg: AlgoConfig, seed: int, executor: Optional[Executor] = None) -> AlgoResult:
    """FedAvg with the proximal coefficient ``cfg.prox_mu``.

    With ``prox_mu = 0`` this is exactly :func:`run_fedavg`.
    """
    result = _global(shards, cfg, seed, executor, cfg.prox_mu, "FedProx")
    result.details["prox_mu"] = cfg.prox_mu
    return result


def _one_shot(shards, cfg, seed, executor, cluster_fn, phase):
    fed = _Federation(shards, cfg, seed, executor)
    split = cfg.split_round
    assignment = ClusterAssignment.single(fed.n)
    state = RoundState(0, (fed.initial(),), (), assignment)
    trace = AlgoTrace()

    for r in range(1, cfg.rounds + 1):
        if r != split:
            state = run_round(state, shards, fed.train_cfg, seed, executor=executor)
            trace.record(r, "FedAvg" if r < split else phase, state.assignment, state.mean_loss, state.cluster_models)
            continue

        broadcast = state.cluster_models[0]
        client_models = fed.train([broadcast] * fed.n, r)
        updates = clustering.flatten_models(client_models) - broadcast.flatten()
        assignment = cluster_fn(fed, updates)
        cluster_models = aggregate_clusters(
            client_models, shards, assignment, (broadcast,) * assignment.num_clusters
        )
        state = RoundState(r, cluster_models, client_models, assignment, mean_train_loss(client_models, shards))
        log.debug("%s split %d clients into %d clusters at round %d", phase, fed.n, assignment.num_clusters, r)
        trace.record(r, phase, assignment, state.mean_loss, cluster_models)

    details = {"aggregation": "sample-weighted", "clustering_round": split, "features": "weight updates"}
    return AlgoResult(state.cluster_models, state.assignment, trace, details)


def run_cfl_oneshot(shards, cfg: AlgoConfig, seed: int, executor: Optional[Executor] = None) -> AlgoResult:
    """One-shot clustered FL with k-means.

    FedAvg runs until ``cfg.split_round``; in that round the clients' updates relative to the
    global model are clustered by k-means into ``K`` groups, and FedAvg continues within each
    group. The assignment is never revised.

    Args:
        shards (Sequence[ClientShard]): client data ordered by client id
        cfg (AlgoConfig): hyperparameters
        seed (int): run seed
        executor (Executor): optional pool for client-level parallelism

    Returns:
        AlgoResult: ``K`` cluster models
    """
    result = _one_shot(
        shards, cfg, seed, executor, lambda fed, u: clustering.kmeans(u, cfg.K, fed.kmeans_seed()), "CFL"
    )
    result.details["clustering"] = "kmeans"
    return result


def run_flhc(shards, cfg: AlgoConfig, seed: int, executor: Optional[Executor] = None) -> AlgoResult:
    """One-shot clustered FL with Ward hierarchical clustering cut at ``K`` clusters.

    Identical to :func:`run_cfl_oneshot` apart from the clustering method.
    """
    result = _one_shot(shards, cfg, seed, executor, lambda fed, u: clustering.hierarchical(u, cfg.K), "FLHC")
    result.details["clustering"] = "ward"
    return result


def run_fedgroup(shards, cfg: AlgoConfig, seed: int, executor: Optional[Executor] = None) -> AlgoResult:
    """FedGroup: cold start clustering of update directions.

    Every client trains once from the uniform initial model. The updates are mapped to
    decomposed cosine features (:func:`~.clustering.edc_features`) and grouped by k-means.
    The remaining rounds run FedAvg within each group.

    Args:
        shards (Sequence[ClientShard]): client data ordered by client id
        cfg (AlgoConfig): hyperparameters
        seed (int): run seed
        executor (Executor): optional pool for client-level parallelism

    Returns:
        AlgoResult: ``K`` cluster models
    """
    fed = _Federation(shards, cfg, seed, executor)
    m = cfg.edc_directions or min(cfg.K, fed.n)
    initial = fed.initial()
    trace = AlgoTrace()

    client_models = fed.train([initial] * fed.n, 1)
    updates = clustering.flatten_models(client_models) - initial.flatten()
    zero = [int(i) for i in np.flatnonzero(np.linalg.norm(updates, axis=1) == 0)]
    if zero:
        trace.flag("zero update from clients {}".format(zero))
    assignment = clustering.edc_kmeans(updates, cfg.K, fed.kmeans_seed(), m)
    cluster_models = aggregate_clusters(client_models, shards, assignment, (initial,) * cfg.K)
    state = RoundState(1, cluster_models, client_models, assignment, mean_train_loss(client_models, shards))
    trace.record(1, "ColdStart", assignment, state.mean_loss, cluster_models)

    for r in range(2, cfg.rounds + 1):
        state = run_round(state, shards, fed.train_cfg, seed, executor=executor)
        trace.record(r, "FedGroup", assignment, state.mean_loss, state.cluster_models)

    details = {"aggregation": "sample-weighted", "clustering": "edc+kmeans", "directions": m, "zero_updates": zero}
    return AlgoResult(state.cluster_models, assignment, trace, details)


def _ifca_restart(fed, models, restart):
    cfg = fed.cfg
    trace = AlgoTrace()
    assignment = None
    for r in range(1, cfg.rounds + 1):
        assignment = fed.select(models)
        client_models = fed.train([models[k] for k in assignment.membership], r, restart)
        models = aggregate_clusters(client_models, fed.shards, assignment, models)
        trace.record(r, "IFCA", assignment, mean_train_loss(client_models, fed.shards), models)
    return models, assignment, trace


def run_ifca(
    shards,
    cfg: AlgoConfig,
    seed: int,
    executor: Optional[Executor] = None,
    initial_models: Optional[Sequence[ModelParams]] = None,
) -> AlgoResult:
    """Iterative federated clustering.

    Each round, every client evaluates the ``K`` cluster models on its training data, trains
    the one with the lowest loss and the server averages each model over the clients that
    chose it. Clusters nobody chose keep their model. The whole run is repeated from
    ``cfg.ifca_restarts`` random initializations and the restart with the best mean training
    accuracy (or loss, per ``cfg.ifca_selection``) is returned; ties go to the earliest
    restart. With ``K = 1`` a single restart is run.

    Args:
        shards (Sequence[ClientShard]): client data ordered by client id
        cfg (AlgoConfig): hyperparameters
        seed (int): run seed
        executor (Executor): optional pool for client-level parallelism
        initial_models (Sequence[ModelParams]): ``K`` starting models; disables restarts

    Returns:
        AlgoResult: ``K`` cluster models
    """
    fed = _Federation(shards, cfg, seed, executor)

    if initial_models is not None:
        if len(initial_models) != cfg.K:
            raise ConfigurationError("Need {} initial models, got {}".format(cfg.K, len(initial_models)))
        starts = [tuple(initial_models)]
    else:
        restarts = cfg.ifca_restarts if cfg.K > 1 else 1
        starts = [tuple(fed.initial(rs, k) for k in range(cfg.K)) for rs in range(restarts)]

    best, best_score, scores = None, None, []
    for rs, models in enumerate(starts):
        models, assignment, trace = _ifca_restart(fed, models, rs)
        if cfg.ifca_selection == "accuracy":
            score = fed.train_accuracy(models, assignment)
        else:
            losses = fed.loss_matrix(models)
            score = -float(np.mean(losses[np.arange(fed.n), assignment.membership]))
        scores.append(score)
        log.debug("IFCA restart %d scored %.6f", rs, score)
        if best_score is None or score > best_score:
            best, best_score = (models, assignment, trace, rs), score

    models, assignment, trace, chosen = best
    trace.flag("restart {} of {} selected".format(chosen, len(starts)))
    details = {
        "aggregation": "sample-weighted",
        "restarts": len(starts),
        "selection": cfg.ifca_selection,
        "chosen_restart": chosen,
        "restart_scores": scores,
    }
    return AlgoResult(tuple(models), assignment, trace, details)


def threshold_clusters(distances: np.ndarray, threshold: float) -> ClusterAssignment:
    """Connected components of the graph joining pairs at distance at most ``threshold``.

    A client left alone is attached to its nearest neighbour. Clusters are labelled in order
    of their smallest member.

    Args:
        distances (array): symmetric distance matrix
        threshold (float): edge threshold

    Returns:
        ClusterAssignment: the components
    """
    distances = np.asarray(distances, dtype=np.float64)
    n = distances.shape[0]
    graph = nx.Graph()
    graph.add_nodes_from(range(n))
    rows, cols = np.nonzero(np.triu(distances <= threshold, k=1))
    graph.add_edges_from(zip(rows.tolist(), cols.tolist()))

    if n > 1:
        masked = distances + np.diag(np.full(n, np.inf))
        for node in [v for v in graph.nodes if graph.degree(v) == 0]:
            graph.add_edge(node, int(np.argmin(masked[node])))

    components = sorted((sorted(c) for c in nx.connected_components(graph)), key=lambda c: c[0])
    labels = [0] * n
    for k, component in enumerate(components):
        for v in component:
            labels[v] = k
    return ClusterAssignment(tuple(labels), len(components))


def _cross_loss(fed, client_models) -> np.ndarray:
    losses = fed.loss_matrix(client_models)
    return 0.5 * (losses + losses.T)


def _merge_clusters(fed, models, assignment, threshold):
    """Merge clusters whose models have symmetric cross-loss at most ``threshold``."""
    losses = fed.loss_matrix(models)
    k = assignment.num_clusters
    between = np.zeros((k, k))
    for a in range(k):
        members_a = list(assignment.members(a))
        for b in range(k):
            between[a, b] = losses[members_a, b].mean()
    distances = 0.5 * (between + between.T)

    graph = nx.Graph()
    graph.add_nodes_from(range(k))
    rows, cols = np.nonzero(np.triu(distances <= threshold, k=1))
    graph.add_edges_from(zip(rows.tolist(), cols.tolist()))
    components = sorted((min(c), c) for c in nx.connected_components(graph))
    relabel = {}
    for new, (_, component) in enumerate(components):
        for old in component:
            relabel[old] = new
    return ClusterAssignment(tuple(relabel[m] for m in assignment.membership), len(components))


def _srfca_candidate(fed, local_models, assignment, threshold, index, initial):
    cfg = fed.cfg
    trace = AlgoTrace()
    first_stage = max(1, math.ceil(cfg.rounds / 3))

    def aggregate(client_models, assignment, previous):
        return aggregate_clusters(client_models, fed.shards, assignment, previous, "trimmed", cfg.trim_fraction)

    models = aggregate(local_models, assignment, (initial,) * assignment.num_clusters)
    trace.record(1, "OneShot", assignment, mean_train_loss(local_models, fed.shards), models)

    for r in range(2, cfg.rounds + 1):
        client_models = fed.train([models[k] for k in assignment.membership], r, index)
        models = aggregate(client_models, assignment, models)
        phase = "Refine" if r <= first_stage else "RefineMerged"
        trace.record(r, phase, assignment, mean_train_loss(client_models, fed.shards), models)

        if r == first_stage and assignment.num_clusters > 1:
            merged = _merge_clusters(fed, models, assignment, threshold)
            if merged.num_clusters < assignment.num_clusters:
                log.debug("SRFCA merged %d clusters into %d", assignment.num_clusters, merged.num_clusters)
                models = aggregate(client_models, merged, (initial,) * merged.num_clusters)
                assignment = merged

    return models, assignment, trace


def run_srfca(shards, cfg: AlgoConfig, seed: int, executor: Optional[Executor] = None) -> AlgoResult:
    """Successive refine federated clustering.

    Round ``1`` trains every client from the initial model. Clients whose local models have a
    symmetric cross-loss at most ``lambda`` are linked, and the connected components (with
    isolated clients attached to their nearest neighbour) form the clusters. The clusters are
    refined with coordinate-wise trimmed-mean aggregation until round ``ceil(N / 3)``, then
    clusters whose models are within ``lambda`` of each other are merged, and refinement
    continues to round ``N``. The number of clusters is discovered, ``cfg.K`` is unused.

    ``lambda`` is chosen from ``cfg.srfca_grid_size`` evenly spaced quantiles in
    ``cfg.srfca_quantiles`` of the pairwise cross-losses, by the highest mean training
    accuracy. Clusters too small to trim use the plain mean.

    Args:
        shards (Sequence[ClientShard]): client data ordered by client id
        cfg (AlgoConfig): hyperparameters
        seed (int): run seed
        executor (Executor): optional pool for client-level parallelism

    Returns:
        AlgoResult: one model per discovered cluster
    """
    fed = _Federation(shards, cfg, seed, executor)
    initial = fed.initial()
    local_models = fed.train([initial] * fed.n, 1)

    if fed.n > 1:
        distances = _cross_loss(fed, local_models)
        pairs = distances[np.triu_indices(fed.n, k=1)]
        lo, hi = cfg.srfca_quantiles
        thresholds = [float(t) for t in np.quantile(pairs, np.linspace(lo, hi, cfg.srfca_grid_size))]
    else:
        distances = np.zeros((1, 1))
        thresholds = [0.0]

    best, best_score, scores, effective = None, None, [], []
    for index, threshold in enumerate(thresholds):
        assignment = threshold_clusters(distances, threshold)
        models, assignment, trace = _srfca_candidate(fed, local_models, assignment, threshold, index, initial)
        score = fed.train_accuracy(models, assignment)
        scores.append(score)
        effective.append(assignment.num_clusters)
        if best_score is None or score > best_score:
            best, best_score = (models, assignment, trace, index), score

    models, assignment, trace, chosen = best
    if assignment.num_clusters == 1:
        if all(k == 1 for k in effective):
            log.warning("SRFCA found a single cluster at every threshold; continuing with one cluster")
        trace.flag("single cluster")

    details = {
        "aggregation": "trimmed",
        "trim_fraction": cfg.trim_fraction,
        "thresholds": thresholds,
        "threshold_scores": scores,
        "chosen_threshold": thresholds[chosen],
        "effective_clusters": assignment.num_clusters,
    }
    return AlgoResult(tuple(models), assignment, trace, details)


def run_cornflqs(shards, cfg: AlgoConfig, seed: int, executor: Optional[Executor] = None) -> AlgoResult:
    r"""CORNFLQS: clustering by consensus of weights and losses.

    Two initialization rounds come first: every client trains from the initial model, the
    server broadcasts the unweighted mean of the results, and every client trains again.
    Rounds ``1`` to ``N`` then run in three phases:

    1. **CORN**, while both clusterings disagree and ``r < ceil(N / 2)``. Ward clustering of the
       local weights into ``K`` groups gives the weight-based assignment, whose sample-weighted
       aggregates are broadcast. Each client trains the cluster model with the lowest loss on
       its data, giving the loss-based assignment. The phase ends as soon as the two
       assignments describe the same partition.
    2. **LossCFL**, at least one round and while the loss-based assignment keeps changing.
       Cluster models are aggregated over the current assignment and clients reselect by loss.
    3. **FedAvgCFL**, for the remaining rounds, with the assignment fixed.

    Empty clusters keep their previous model.

    Args:
        shards (Sequence[ClientShard]): client data ordered by client id
        cfg (AlgoConfig): hyperparameters
        seed (int): run seed
        executor (Executor): optional pool for client-level parallelism

    Returns:
        AlgoResult: ``K`` cluster models
    """
    fed = _Federation(shards, cfg, seed, executor)
    K, N = cfg.K, cfg.rounds
    if K > fed.n:
        raise ConfigurationError("Cannot form {} clusters from {} clients".format(K, fed.n))
    trace = AlgoTrace()

    # initialization, communication steps 1 and 2
    initial = fed.initial()
    single = ClusterAssignment.single(fed.n)
    client_models = fed.train([initial] * fed.n, 1)
    trace.record(-1, "Init", single, mean_train_loss(client_models, shards), (initial,))
    warm = aggregate_uniform(client_models, range(fed.n))
    client_models = fed.train([warm] * fed.n, 2)
    trace.record(0, "Init", single, mean_train_loss(client_models, shards), (warm,))

    def step(r, assignment, previous):
        """Aggregate over ``assignment``, reselect by loss and train; returns the new state."""
        models = aggregate_clusters(client_models, shards, assignment, previous)
        chosen = fed.select(models)
        trained = fed.train([models[k] for k in chosen.membership], r + 2)
        return models, chosen, trained

    corn_bound = math.ceil(N / 2)
    models = (warm,) * K
    r = 0
    phases = {}

    log.info("CORNFLQS entering CORN phase")
    while True:
        r += 1
        by_weight = clustering.hierarchical(clustering.flatten_models(client_models), K)
        models, by_loss, client_models = step(r, by_weight, models)
        trace.record(r, "CORN", by_loss, mean_train_loss(client_models, shards), models)
        agreed = by_weight.same_partition(by_loss)
        if agreed or r >= corn_bound:
            break
    phases["CORN"] = r
    trace.flag("CORN {} after round {}".format("agreed" if agreed else "stopped", r))

    assignment = by_loss
    if r < N:
        log.info("CORNFLQS entering LossCFL phase at round %d", r + 1)
        while True:
            r += 1
            models, chosen, client_models = step(r, assignment, models)
            trace.record(r, "LossCFL", chosen, mean_train_loss(client_models, shards), models)
            changed = not chosen.same_partition(assignment)
            assignment = chosen
            if not changed or r >= N:
                break
        phases["LossCFL"] = r - phases["CORN"]

    models = aggregate_clusters(client_models, shards, assignment, models)
    if r < N:
        log.info("CORNFLQS entering FedAvgCFL phase at round %d", r + 1)
        phases["FedAvgCFL"] = N - r
        while r < N:
            r += 1
            client_models = fed.train([models[k] for k in assignment.membership], r + 2)
            models = aggregate_clusters(client_models, shards, assignment, models)
            trace.record(r, "FedAvgCFL", assignment, mean_train_loss(client_models, shards), models)

    details = {
        "aggregation": "sample-weighted",
        "clustering": "ward+loss",
        "phase_rounds": phases,
        "corn_agreed": bool(agreed),
    }
    return AlgoResult(tuple(models), assignment, trace, details)


RUNNERS = {
    "fedavg": run_fedavg,
    "fedprox": run_fedprox,
    "cfl": run_cfl_oneshot,
    "flhc": run_flhc,
    "fedgroup": run_fedgroup,
    "ifca": run_ifca,
    "srfca": run_srfca,
    "cornflqs": run_cornflqs,
}
"""dict[str, callable]: driver of each algorithm"""


def run(name: str, shards, cfg: AlgoConfig, seed: int, executor: Optional[Executor] = None) -> AlgoResult:
    """Run the algorithm called ``name``, one of :data:`ALGORITHMS`."""
    try:
        runner = RUNNERS[name.lower()]
    except KeyError:
        raise ConfigurationError(
            "Unknown algorithm '{}'; choose from {}".format(name, ", ".join(ALGORITHMS))
        ) from None
    return runner(shards, cfg, seed, executor)
