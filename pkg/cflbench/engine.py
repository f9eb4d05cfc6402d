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
Experiment engine
=================

**Module name:** :mod:`cflbench.engine`

.. currentmodule:: cflbench.engine

This module expands a configuration into experiment cells, runs them and stores one
:class:`~.RunRecord` per cell. A cell is one algorithm run with one seed on one scenario.

A typical use looks like

.. code-block:: python

    from cflbench._dev.configuration import Configuration
    from cflbench.engine import LocalEngine, ResultsStore, DataSource, expand_grid

    config = Configuration()
    cells = expand_grid(config)
    engine = LocalEngine(ResultsStore("results"), DataSource.from_config(config), workers=4)
    result = engine.run(cells)

Cells are independent and execute in parallel across worker processes. A cell whose record
already exists is skipped unless ``force`` is set, so an interrupted sweep resumes where it
stopped. A failing cell is logged and recorded under ``failures/`` without stopping the
others. Every draw of a cell is derived from its seed, so records do not depend on the
number of workers.

.. autosummary::
    ScenarioSpec
    Cell
    expand_grid
    DataSource
    run_cell
    ResultsStore
    LocalEngine
    SweepResult
    run_all

Code details
~~~~~~~~~~~~
"""
import dataclasses
import functools
import itertools
import json
import logging
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor, as_completed
from typing import Iterable, Mapping, Optional, Sequence, Tuple

from cflbench import io
from cflbench.exceptions import ConfigurationError, DataError
from cflbench.fl import algorithms
from cflbench.fl.clustering import adjusted_rand_index
from cflbench.fl.data import load_split
from cflbench.fl.evaluation import RunRecord
from cflbench.fl.partition import HeterogeneitySpec, QSSpec, partition
from cflbench.nn import TrainConfig, evaluate

log = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class ScenarioSpec:
    """Everything that determines a run apart from the algorithm and the seed.

    Args:
        dataset (str): dataset name, a directory under the data root
        heterogeneity (str): heterogeneity type, see :class:`~.HeterogeneityKind`
        qs (str): quantity skew type, see :class:`~.QSKind`
        num_clients (int): number of clients
        K (int): number of clusters
        rounds (int): communication rounds
        local_epochs (int): local epochs per round
        tag (str): ``"main"`` for the scenario grid, ``"sensitivity"`` for cluster count sweeps

    The remaining fields mirror the ``[scenario]``, ``[training]`` and ``[algorithms]``
    configuration options of the same name.
    """

    dataset: str
    heterogeneity: str
    qs: str
    num_clients: int = 20
    K: int = 4
    rounds: int = 20
    local_epochs: int = 10
    num_classes_het: int = 4
    samples_per_label_nonqs: int = 50
    qs_group_sizes: Tuple[int, ...] = (5, 20, 100, 200)
    permute_qs2_groups: bool = False
    test_per_class: int = 0
    learning_rate: float = 0.05
    batch_size: int = 32
    hidden_dim: int = 200
    prox_mu: float = 0.01
    clustering_round: int = 0
    ifca_restarts: int = 5
    ifca_selection: str = "accuracy"
    srfca_quantiles: Tuple[float, float] = (0.1, 0.25)
    srfca_grid_size: int = 3
    trim_fraction: float = 0.1
    edc_directions: int = 0
    tag: str = "main"

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["qs_group_sizes"] = list(self.qs_group_sizes)
        out["srfca_quantiles"] = list(self.srfca_quantiles)
        return out

    @property
    def label(self) -> str:
        """str: short identifier used in file names"""
        return "{}__{}__{}__K{}".format(self.dataset, self.heterogeneity, self.qs, self.K)

    def het_spec(self, num_classes: int) -> HeterogeneitySpec:
        return HeterogeneitySpec.for_kind(self.heterogeneity, num_classes, self.num_classes_het)

    def qs_spec(self) -> QSSpec:
        return QSSpec(self.qs, self.samples_per_label_nonqs, tuple(self.qs_group_sizes), self.permute_qs2_groups)

    def algo_config(self) -> algorithms.AlgoConfig:
        return algorithms.AlgoConfig(
            K=self.K,
            rounds=self.rounds,
            train=TrainConfig(epochs=self.local_epochs, lr=self.learning_rate, batch_size=self.batch_size),
            hidden_dims=(self.hidden_dim,),
            clustering_round=self.clustering_round,
            ifca_restarts=self.ifca_restarts,
            ifca_selection=self.ifca_selection,
            srfca_quantiles=tuple(self.srfca_quantiles),
            srfca_grid_size=self.srfca_grid_size,
            prox_mu=self.prox_mu,
            trim_fraction=self.trim_fraction,
            edc_directions=self.edc_directions,
        )


@dataclasses.dataclass(frozen=True)
class Cell:
    """One run: a scenario, an algorithm and a seed."""

    scenario: ScenarioSpec
    algorithm: str
    seed: int

    @property
    def cell_id(self) -> str:
        """str: unique, file system safe identifier"""
        prefix = "" if self.scenario.tag == "main" else self.scenario.tag + "__"
        return "{}{}__{}__seed{}".format(prefix, self.scenario.label, self.algorithm, self.seed)


def _sections(config) -> Mapping:
    if hasattr(config, "as_dict"):
        return config.as_dict()
    return config


def expand_grid(config) -> Sequence[Cell]:
    """All cells described by a configuration.

    The main grid is the product of datasets, heterogeneity types, quantity skew types,
    algorithms and seeds, in that lexicographic order. When
    ``[sensitivity] cluster_counts`` is non-empty, CORNFLQS cells for every listed cluster
    count follow, tagged ``"sensitivity"``.

    **Example usage:**

    >>> cells = expand_grid(Configuration())
    >>> cells[0].cell_id
    'mnist__ConceptShiftFeatures__NonQS__K4__fedavg__seed0'

    Args:
        config (Configuration or dict): resolved options

    Returns:
        list[Cell]: the cells
    """
    sections = _sections(config)
    try:
        data, scen, train, algos, run_opts = (
            sections["data"],
            sections["scenario"],
            sections["training"],
            sections["algorithms"],
            sections["run"],
        )
    except KeyError as e:
        raise ConfigurationError("Missing configuration section {}".format(e)) from None
    sensitivity = sections.get("sensitivity", {}).get("cluster_counts", [])

    names = [a.lower() for a in algos["names"]]
    unknown = sorted(set(names) - set(algorithms.ALGORITHMS))
    if unknown:
        raise ConfigurationError("Unknown algorithms: {}".format(", ".join(unknown)))

    seeds = [int(s) + int(run_opts.get("seed_offset", 0)) for s in run_opts["seeds"]]
    if any(s < 0 for s in seeds):
        raise ConfigurationError("Seeds must be non-negative")

    def scenario(dataset, het, qs, K, tag):
        return ScenarioSpec(
            dataset=dataset,
            heterogeneity=het,
            qs=qs,
            num_clients=int(scen["num_clients"]),
            K=int(K),
            rounds=int(algos["rounds"]),
            local_epochs=int(train["local_epochs"]),
            num_classes_het=int(scen["num_classes_het"]),
            samples_per_label_nonqs=int(scen["samples_per_label_nonqs"]),
            qs_group_sizes=tuple(int(g) for g in scen["qs_group_sizes"]),
            permute_qs2_groups=bool(scen["permute_qs2_groups"]),
            test_per_class=int(scen["test_per_class"]),
            learning_rate=float(train["learning_rate"]),
            batch_size=int(train["batch_size"]),
            hidden_dim=int(train["hidden_dim"]),
            prox_mu=float(train["prox_mu"]),
            clustering_round=int(algos["clustering_round"]),
            ifca_restarts=int(algos["ifca_restarts"]),
            ifca_selection=str(algos["ifca_selection"]),
            srfca_quantiles=tuple(float(q) for q in algos["srfca_quantiles"]),
            srfca_grid_size=int(algos["srfca_grid_size"]),
            trim_fraction=float(algos["trim_fraction"]),
            edc_directions=int(algos["edc_directions"]),
            tag=tag,
        )

    # validate the algorithm settings once, before any cell runs
    scenario("probe", "ConceptShiftFeatures", "NonQS", algos["K"], "main").algo_config()

    cells = []
    grid = itertools.product(data["datasets"], scen["heterogeneity"], scen["qs"], names, seeds)
    for dataset, het, qs, name, seed in grid:
        cells.append(Cell(scenario(dataset, het, qs, algos["K"], "main"), name, seed))

    grid = itertools.product(data["datasets"], scen["heterogeneity"], scen["qs"], sensitivity, seeds)
    for dataset, het, qs, K, seed in grid:
        cells.append(Cell(scenario(dataset, het, qs, K, "sensitivity"), "cornflqs", seed))

    return cells


@dataclasses.dataclass(frozen=True)
class DataSource:
    """Where the datasets live.

    Dataset ``name`` is read from the directory ``root/name``.
    """

    root: str
    train_images: str = "train-images-idx3-ubyte"
    train_labels: str = "train-labels-idx1-ubyte"
    test_images: str = "t10k-images-idx3-ubyte"
    test_labels: str = "t10k-labels-idx1-ubyte"

    @classmethod
    def from_config(cls, config) -> "DataSource":
        data = _sections(config)["data"]
        return cls(
            os.path.expanduser(data["root"]),
            data["train_images"],
            data["train_labels"],
            data["test_images"],
            data["test_labels"],
        )

    def directory(self, dataset: str) -> str:
        return os.path.join(self.root, dataset)

    def check(self, dataset: str):
        """Raise :class:`~.DataError` unless every file of ``dataset`` is present."""
        missing = []
        for filename in (self.train_images, self.train_labels, self.test_images, self.test_labels):
            path = os.path.join(self.directory(dataset), filename)
            if not (os.path.exists(path) or os.path.exists(path + ".gz")):
                missing.append(path)
        if missing:
            raise DataError("Dataset '{}' is incomplete, missing {}".format(dataset, ", ".join(missing)))

    def load(self, dataset: str):
        """Training and test splits of a dataset, cached per process."""
        return _load_pair(self, dataset)


@functools.lru_cache(maxsize=4)
def _load_pair(source: DataSource, dataset: str):
    directory = source.directory(dataset)
    train = load_split(directory, source.train_images, source.train_labels, dataset)
    test = load_split(directory, source.test_images, source.test_labels, dataset)
    return train, test


@functools.lru_cache(maxsize=8)
def _partition(source: DataSource, scenario: ScenarioSpec, seed: int):
    train, test = source.load(scenario.dataset)
    return partition(
        train,
        test,
        scenario.het_spec(train.num_classes),
        scenario.qs_spec(),
        scenario.num_clients,
        seed,
        scenario.test_per_class or None,
    )


def shards_for(source: DataSource, scenario: ScenarioSpec, seed: int):
    """Client shards of a scenario and seed; independent of the cluster count."""
    return _partition(source, dataclasses.replace(scenario, K=1, tag="main"), seed)


def run_cell(cell: Cell, source: DataSource, checkpoint_dir: Optional[str] = None) -> RunRecord:
    """Run one cell.

    Args:
        cell (Cell): what to run
        source (DataSource): dataset location
        checkpoint_dir (str): if given, the final cluster models are saved there

    Returns:
        RunRecord: the result
    """
    start = time.perf_counter()
    shards = shards_for(source, cell.scenario, cell.seed)
    result = algorithms.run(cell.algorithm, shards, cell.scenario.algo_config(), cell.seed)

    accuracy = tuple(
        evaluate(result.model_of(s.client_id), s.test_features, s.test_labels) for s in shards
    )
    het_classes = tuple(s.het_class for s in shards)
    details = dict(result.details)
    details["flags"] = list(result.trace.flags)

    if checkpoint_dir is not None:
        os.makedirs(checkpoint_dir, exist_ok=True)
        for k, model in enumerate(result.models):
            io.save_model(os.path.join(checkpoint_dir, "{}__cluster{}.cflm".format(cell.cell_id, k)), model)

    return RunRecord(
        scenario=cell.scenario.to_dict(),
        algorithm=cell.algorithm,
        seed=cell.seed,
        per_client_accuracy=accuracy,
        final_assignment=result.assignment.membership,
        het_classes=het_classes,
        samples_per_label=tuple(s.samples_per_label for s in shards),
        ari=adjusted_rand_index(het_classes, result.assignment.membership) if len(shards) > 1 else 1.0,
        trace_digest=result.trace.digest(),
        trace=tuple(result.trace.to_list()),
        details=details,
        wall_clock=time.perf_counter() - start,
    )


class ResultsStore:
    """Directory of run records.

    Layout: ``records/<cell_id>.json`` (with a ``.time`` file beside each),
    ``failures/<cell_id>.txt``, ``checkpoints/`` and ``manifest.json``.

    Args:
        root (str): output directory, created on demand
    """

    def __init__(self, root: str):
        self.root = os.fspath(root)
        self.records_dir = os.path.join(self.root, "records")
        self.failures_dir = os.path.join(self.root, "failures")
        self.checkpoints_dir = os.path.join(self.root, "checkpoints")
        self.manifest_path = os.path.join(self.root, "manifest.json")

    def __repr__(self):
        return "ResultsStore <{}>".format(self.root)

    def path(self, cell: Cell) -> str:
        return os.path.join(self.records_dir, cell.cell_id + ".json")

    def has(self, cell: Cell) -> bool:
        return os.path.exists(self.path(cell))

    def write(self, cell: Cell, record: RunRecord):
        os.makedirs(self.records_dir, exist_ok=True)
        io.save_record(self.path(cell), record)
        failure = os.path.join(self.failures_dir, cell.cell_id + ".txt")
        if os.path.exists(failure):
            os.remove(failure)

    def write_failure(self, cell: Cell, message: str):
        os.makedirs(self.failures_dir, exist_ok=True)
        with open(os.path.join(self.failures_dir, cell.cell_id + ".txt"), "w", encoding="utf-8") as f:
            f.write(message)

    def failures(self) -> Sequence[str]:
        """Identifiers of failed cells."""
        if not os.path.isdir(self.failures_dir):
            return []
        return sorted(os.path.splitext(f)[0] for f in os.listdir(self.failures_dir) if f.endswith(".txt"))

    def records(self, tag: Optional[str] = None) -> Sequence[RunRecord]:
        """Every stored record, optionally only those with the given scenario tag."""
        if not os.path.isdir(self.records_dir):
            return []
        out = []
        for filename in sorted(os.listdir(self.records_dir)):
            if filename.endswith(".json"):
                record = io.load_record(os.path.join(self.records_dir, filename))
                if tag is None or record.tag == tag:
                    out.append(record)
        return out

    def check_manifest(self, fingerprint: str, force: bool = False):
        """Refuse to mix records produced under different configurations.

        Raises:
            ConfigurationError: if the store holds records of another configuration and
                ``force`` is not set
        """
        if force or not os.path.exists(self.manifest_path):
            return
        with open(self.manifest_path, "r", encoding="utf-8") as f:
            stored = json.load(f).get("config_hash")
        if stored != fingerprint:
            raise ConfigurationError(
                "{} holds results of a different configuration; use --force or another "
                "output directory".format(self.root)
            )

    def write_manifest(self, fingerprint: str, options: Mapping, result: "SweepResult"):
        os.makedirs(self.root, exist_ok=True)
        manifest = {
            "config_hash": fingerprint,
            "config": options,
            "cells": {
                "executed": len(result.executed),
                "skipped": len(result.skipped),
                "failed": len(result.failed),
            },
            "failed": list(result.failed),
        }
        with open(self.manifest_path, "w", encoding="utf-8") as f:
            json.dump(manifest, f, sort_keys=True, indent=2)
            f.write("\n")


@dataclasses.dataclass
class SweepResult:
    """Outcome of :meth:`LocalEngine.run`: cell identifiers by status."""

    executed: list = dataclasses.field(default_factory=list)
    skipped: list = dataclasses.field(default_factory=list)
    failed: list = dataclasses.field(default_factory=list)

    def __str__(self):
        return "SweepResult: {} executed, {} skipped, {} failed".format(
            len(self.executed), len(self.skipped), len(self.failed)
        )

    @property
    def exit_code(self) -> int:
        """int: ``4`` when any cell failed, ``0`` otherwise"""
        return 4 if self.failed else 0


def _execute(cell: Cell, source: DataSource, checkpoint_dir: Optional[str]):
    try:
        return cell, run_cell(cell, source, checkpoint_dir), None
    except Exception:  # pylint: disable=broad-except
        return cell, None, traceback.format_exc()


class LocalEngine:
    """Runs cells on the local machine.

    Args:
        store (ResultsStore): where records go
        source (DataSource): dataset location
        workers (int): worker processes; ``1`` runs in the calling process
        force (bool): rerun cells that already have a record
        checkpoints (bool): save the final cluster models of every cell
    """

    def __init__(self, store: ResultsStore, source: DataSource, workers: int = 1, force: bool = False, checkpoints: bool = False):
        if workers < 1:
            raise ConfigurationError("Need at least one worker")
        self.store = store
        self.source = source
        self.workers = workers
        self.force = force
        self.checkpoints = checkpoints

    def __str__(self):
        return self.__class__.__name__ + "({}, workers={})".format(self.store.root, self.workers)

    def _finish(self, result, cell, record, error):
        if error is None:
            self.store.write(cell, record)
            result.executed.append(cell.cell_id)
            log.info("Finished %s in %.1fs (ARI %.3f)", cell.cell_id, record.wall_clock, record.ari)
        else:
            self.store.write_failure(cell, error)
            result.failed.append(cell.cell_id)
            log.error("Cell %s failed:\n%s", cell.cell_id, error)

    def run(self, cells: Iterable[Cell]) -> SweepResult:
        """Run every cell without a stored record.

        Args:
            cells (Iterable[Cell]): cells to run

        Returns:
            SweepResult: identifiers of executed, skipped and failed cells
        """
        cells = list(cells)
        for dataset in sorted({c.scenario.dataset for c in cells}):
            self.source.check(dataset)

        result = SweepResult()
        pending = []
        for cell in cells:
            if not self.force and self.store.has(cell):
                log.info("Skipping %s, record exists", cell.cell_id)
                result.skipped.append(cell.cell_id)
            else:
                pending.append(cell)

        checkpoint_dir = self.store.checkpoints_dir if self.checkpoints else None

        if self.workers == 1 or len(pending) <= 1:
            for cell in pending:
                log.info("Starting %s", cell.cell_id)
                self._finish(result, *_execute(cell, self.source, checkpoint_dir))
            return result

        with ProcessPoolExecutor(max_workers=self.workers) as pool:
            futures = []
            for cell in pending:
                log.info("Starting %s", cell.cell_id)
                futures.append(pool.submit(_execute, cell, self.source, checkpoint_dir))
            for future in as_completed(futures):
                self._finish(result, *future.result())

        result.executed.sort()
        result.failed.sort()
        return result


def run_all(config, workers: Optional[int] = None, force: Optional[bool] = None, out_dir: Optional[str] = None, checkpoints: bool = False) -> SweepResult:
    """Expand and run a whole sweep, then write the manifest.

    Arguments left as ``None`` fall back to the ``[run]`` section of the configuration.

    Args:
        config (Configuration): resolved options
        workers (int): worker processes
        force (bool): rerun cells that already have a record
        out_dir (str): output directory
        checkpoints (bool): save the final cluster models of every cell

    Returns:
        SweepResult: identifiers of executed, skipped and failed cells
    """
    run_opts = _sections(config)["run"]
    workers = int(run_opts["workers"] if workers is None else workers)
    force = bool(run_opts["force"] if force is None else force)
    store = ResultsStore(out_dir or run_opts["out_dir"])

    fingerprint = config.fingerprint()
    store.check_manifest(fingerprint, force)

    cells = expand_grid(config)
    log.info("Sweep of %d cells into %s with %d workers", len(cells), store.root, workers)
    result = LocalEngine(store, DataSource.from_config(config), workers, force, checkpoints).run(cells)
    store.write_manifest(fingerprint, config.as_dict(), result)
    log.info("%s", result)
    return result
