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
Evaluation
==========

**Module name:** :mod:`cflbench.fl.evaluation`

.. currentmodule:: cflbench.fl.evaluation

Metrics computed from :class:`RunRecord` objects, each describing one finished run of one
algorithm on one scenario and seed.

Per run
-------

.. autosummary::
    RunRecord
    global_accuracy
    client_acc_std
    group_accuracy

Across runs
-----------

.. autosummary::
    delta_metric
    delta_ari
    delta_summary
    average_rank
    rank_table
    winrate_matrix
    aggregate_cell

Two runs describe the same *scenario* when they agree on dataset, heterogeneity type, quantity
skew type, seed and cluster count; rankings and win rates compare algorithms within a
scenario. Quantity skew deltas pair a ``NonQS`` run with a skewed run of the same algorithm,
dataset, heterogeneity type, seed and cluster count.

Code details
^^^^^^^^^^^^
"""
import dataclasses
from collections import defaultdict
from typing import Callable, Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata

from cflbench.exceptions import DataError


@dataclasses.dataclass(frozen=True)
class RunRecord:
    """Result of one run.

    Args:
        scenario (dict): scenario description with at least the keys ``dataset``,
            ``heterogeneity``, ``qs``, ``K`` and ``tag``
        algorithm (str): algorithm name
        seed (int): run seed
        per_client_accuracy (tuple[float]): test accuracy of every client on its own test data
            with its final model
        final_assignment (tuple[int]): final cluster of every client
        het_classes (tuple[int]): ground truth heterogeneity class of every client
        samples_per_label (tuple[int]): training samples per label of every client
        ari (float): adjusted Rand index of the final assignment against ``het_classes``
        trace_digest (str): SHA-256 of the round-by-round trace
        trace (tuple[dict]): the round-by-round trace
        details (dict): algorithm specific choices
        wall_clock (float): seconds taken by the run; not part of the serialized record
    """

    scenario: Mapping
    algorithm: str
    seed: int
    per_client_accuracy: Tuple[float, ...]
    final_assignment: Tuple[int, ...]
    het_classes: Tuple[int, ...]
    samples_per_label: Tuple[int, ...]
    ari: float
    trace_digest: str = ""
    trace: Tuple[dict, ...] = ()
    details: Mapping = dataclasses.field(default_factory=dict)
    wall_clock: float = float("nan")

    def __post_init__(self):
        n = len(self.per_client_accuracy)
        if not n:
            raise DataError("A run record needs at least one client")
        if not (len(self.final_assignment) == len(self.het_classes) == len(self.samples_per_label) == n):
            raise DataError("Per-client fields of a run record differ in length")
        if any(not 0.0 <= a <= 1.0 for a in self.per_client_accuracy):
            raise DataError("Accuracies must lie in [0, 1]")
        if not -1.0 <= self.ari <= 1.0:
            raise DataError("The adjusted Rand index must lie in [-1, 1]")

    @property
    def dataset(self) -> str:
        return self.scenario["dataset"]

    @property
    def qs(self) -> str:
        return self.scenario["qs"]

    @property
    def heterogeneity(self) -> str:
        return self.scenario["heterogeneity"]

    @property
    def tag(self) -> str:
        return self.scenario.get("tag", "main")

    def scenario_key(self) -> tuple:
        """Runs sharing this key are directly comparable across algorithms."""
        s = self.scenario
        return (s["dataset"], s["heterogeneity"], s["qs"], self.seed, s["K"], self.tag)

    def pairing_key(self) -> tuple:
        """Runs sharing this key differ only in their quantity skew type."""
        s = self.scenario
        return (self.algorithm, s["dataset"], s["heterogeneity"], self.seed, s["K"], self.tag)

    def to_dict(self) -> dict:
        """JSON compatible form, without the wall clock time."""
        out = dataclasses.asdict(self)
        out.pop("wall_clock")
        out["scenario"] = dict(self.scenario)
        out["details"] = dict(self.details)
        for key in ("per_client_accuracy", "final_assignment", "het_classes", "samples_per_label", "trace"):
            out[key] = list(out[key])
        return out

    @classmethod
    def from_dict(cls, data: Mapping, wall_clock: float = float("nan")) -> "RunRecord":
        """Inverse of :meth:`to_dict`."""
        return cls(
            scenario=dict(data["scenario"]),
            algorithm=data["algorithm"],
            seed=int(data["seed"]),
            per_client_accuracy=tuple(float(a) for a in data["per_client_accuracy"]),
            final_assignment=tuple(int(a) for a in data["final_assignment"]),
            het_classes=tuple(int(c) for c in data["het_classes"]),
            samples_per_label=tuple(int(c) for c in data["samples_per_label"]),
            ari=float(data["ari"]),
            trace_digest=data.get("trace_digest", ""),
            trace=tuple(data.get("trace", ())),
            details=dict(data.get("details", {})),
            wall_clock=wall_clock,
        )


def global_accuracy(record: RunRecord) -> float:
    """Mean of the per-client test accuracies."""
    return float(np.mean(record.per_client_accuracy))


def client_acc_std(record: RunRecord) -> float:
    """Population standard deviation of the per-client test accuracies."""
    return float(np.std(record.per_client_accuracy))


def ari(record: RunRecord) -> float:
    """Adjusted Rand index stored in the record."""
    return record.ari


def group_accuracy(record: RunRecord) -> Dict[int, float]:
    """Mean test accuracy of the clients with each training size.

    Under quantity skew this separates the accuracy of small and large clients.

    **Example usage:**

    >>> group_accuracy(record)
    {5: 0.61, 20: 0.74, 100: 0.85, 200: 0.88}

    Returns:
        dict[int, float]: mean accuracy keyed by samples per label, ascending
    """
    groups = defaultdict(list)
    for size, acc in zip(record.samples_per_label, record.per_client_accuracy):
        groups[size].append(acc)
    return {size: float(np.mean(groups[size])) for size in sorted(groups)}


def delta_metric(
    records_nonqs: Iterable[RunRecord],
    records_qs: Iterable[RunRecord],
    metric: Callable[[RunRecord], float],
) -> float:
    """Mean change of a metric caused by quantity skew.

    Runs are paired by :meth:`RunRecord.pairing_key`; unpaired runs are ignored. The result is
    the mean over pairs of ``metric(nonqs) - metric(qs)``, so a positive value means the skewed
    runs scored lower.

    Args:
        records_nonqs (Iterable[RunRecord]): runs without quantity skew
        records_qs (Iterable[RunRecord]): runs with quantity skew
        metric (callable): per-run metric such as :func:`ari`

    Returns:
        float: mean paired difference
    """
    left = {r.pairing_key(): r for r in records_nonqs}
    right = {r.pairing_key(): r for r in records_qs}
    keys = sorted(set(left) & set(right), key=repr)
    if not keys:
        raise DataError("No run pairs share algorithm, dataset, heterogeneity type and seed")
    return float(np.mean([metric(left[k]) - metric(right[k]) for k in keys]))


def delta_ari(records_nonqs: Iterable[RunRecord], records_qs: Iterable[RunRecord]) -> float:
    """:func:`delta_metric` of the adjusted Rand index."""
    return delta_metric(records_nonqs, records_qs, ari)


def delta_summary(
    records_nonqs: Sequence[RunRecord], records_qs: Sequence[RunRecord], metric: Callable = ari
) -> Dict[str, float]:
    """Per-dataset :func:`delta_metric`, plus the mean absolute delta over datasets under
    the key ``"all"``.

    Datasets without pairs are left out.
    """
    out = {}
    for dataset in sorted({r.dataset for r in records_nonqs}):
        subset_a = [r for r in records_nonqs if r.dataset == dataset]
        subset_b = [r for r in records_qs if r.dataset == dataset]
        try:
            out[dataset] = delta_metric(subset_a, subset_b, metric)
        except DataError:
            continue
    if not out:
        raise DataError("No run pairs found for any dataset")
    out["all"] = float(np.mean([abs(v) for v in out.values()]))
    return out


def _by_scenario(records: Iterable[RunRecord]) -> Dict[tuple, Dict[str, RunRecord]]:
    scenarios = defaultdict(dict)
    for r in records:
        scenarios[r.scenario_key()][r.algorithm] = r
    return scenarios


def average_rank(records: Iterable[RunRecord]) -> Dict[str, float]:
    """Mean rank of each algorithm by global accuracy.

    Within every scenario, algorithms are ranked from ``1`` (most accurate); tied algorithms
    share the mean of the ranks they span.

    **Example usage:**

    >>> average_rank(records)
    {'cornflqs': 1.6, 'fedavg': 6.2, 'ifca': 3.1, ...}

    Args:
        records (Iterable[RunRecord]): runs of several algorithms

    Returns:
        dict[str, float]: mean rank per algorithm
    """
    ranks = defaultdict(list)
    for runs in _by_scenario(records).values():
        names = sorted(runs)
        accs = np.array([global_accuracy(runs[a]) for a in names])
        for name, rank in zip(names, rankdata(-accs, method="average")):
            ranks[name].append(float(rank))
    if not ranks:
        raise DataError("No runs to rank")
    return {name: float(np.mean(values)) for name, values in sorted(ranks.items())}


def rank_table(
    records: Iterable[RunRecord], group: Optional[Callable[[RunRecord], object]] = None
) -> Dict[object, Dict[str, float]]:
    """:func:`average_rank` within groups of runs.

    Args:
        records (Iterable[RunRecord]): runs of several algorithms
        group (callable): maps a run to its group, e.g. ``lambda r: r.qs``; ``None`` puts
            every run in the group ``"all"``

    Returns:
        dict: mean ranks per algorithm for each group
    """
    groups = defaultdict(list)
    for r in records:
        groups["all" if group is None else group(r)].append(r)
    return {key: average_rank(groups[key]) for key in sorted(groups, key=repr)}


def winrate_matrix(records: Iterable[RunRecord]) -> Tuple[Tuple[str, ...], np.ndarray]:
    """Pairwise win rates by global accuracy.

    Entry ``(i, j)`` is the fraction of shared scenarios in which algorithm ``i`` beats
    algorithm ``j``, with ties counted as half a win. The diagonal is ``nan``. Entries of pairs
    that never meet are ``nan`` too.

    Returns:
        tuple[tuple[str], array]: algorithm names and the square matrix
    """
    scenarios = _by_scenario(records)
    names = tuple(sorted({a for runs in scenarios.values() for a in runs}))
    if not names:
        raise DataError("No runs to compare")
    index = {a: i for i, a in enumerate(names)}

    wins = np.zeros((len(names), len(names)))
    games = np.zeros((len(names), len(names)))
    for runs in scenarios.values():
        accs = {a: global_accuracy(r) for a, r in runs.items()}
        for a in accs:
            for b in accs:
                if a == b:
                    continue
                i, j = index[a], index[b]
                games[i, j] += 1
                wins[i, j] += 1.0 if accs[a] > accs[b] else 0.5 if accs[a] == accs[b] else 0.0

    with np.errstate(invalid="ignore", divide="ignore"):
        matrix = np.where(games > 0, wins / np.maximum(games, 1), np.nan)
    np.fill_diagonal(matrix, np.nan)
    return names, matrix


@dataclasses.dataclass(frozen=True)
class AggregateCell:
    """Summary of repeated runs of one algorithm.

    Args:
        n_runs (int): number of runs
        acc_mean (float): mean global accuracy
        acc_std (float): standard deviation of the global accuracy across runs
        client_acc_std_mean (float): mean of the per-run client accuracy spread
        client_acc_std_std (float): its standard deviation across runs
        ari_mean (float): mean adjusted Rand index
        ari_std (float): its standard deviation across runs
        mean_rank (float): average rank of the algorithm among those compared, ``nan`` when
            no ranking was supplied
    """

    n_runs: int
    acc_mean: float
    acc_std: float
    client_acc_std_mean: float
    client_acc_std_std: float
    ari_mean: float
    ari_std: float
    mean_rank: float = float("nan")

    def display(self, field: str = "acc") -> str:
        """Percentages with two decimals, e.g. ``"73.06±14.88"``; ARI is shown unscaled."""
        if field == "acc":
            return "{:.2f}±{:.2f}".format(100 * self.acc_mean, 100 * self.acc_std)
        if field == "client_acc_std":
            return "{:.2f}±{:.2f}".format(100 * self.client_acc_std_mean, 100 * self.client_acc_std_std)
        if field == "ari":
            return "{:.2f}±{:.2f}".format(self.ari_mean, self.ari_std)
        if field == "rank":
            return "{:.2f}".format(self.mean_rank)
        raise ValueError("Unknown field '{}'".format(field))


def aggregate_cell(records: Sequence[RunRecord], rank: Optional[float] = None) -> AggregateCell:
    """Mean and standard deviation of the headline metrics over repeated runs.

    Args:
        records (Sequence[RunRecord]): runs of one algorithm
        rank (float): mean rank of the algorithm, from :func:`average_rank` or :func:`rank_table`

    Returns:
        AggregateCell: the summary
    """
    if not records:
        raise DataError("No runs to aggregate")
    accs = np.array([global_accuracy(r) for r in records])
    stds = np.array([client_acc_std(r) for r in records])
    aris = np.array([r.ari for r in records])
    return AggregateCell(
        len(records),
        float(accs.mean()),
        float(accs.std()),
        float(stds.mean()),
        float(stds.std()),
        float(aris.mean()),
        float(aris.std()),
        float("nan") if rank is None else float(rank),
    )
