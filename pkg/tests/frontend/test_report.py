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
r"""Unit tests for the report module"""
import csv
import logging
import os

import pytest

from cflbench import io
from cflbench.engine import ResultsStore
from cflbench.exceptions import ConfigurationError, DataError
from cflbench.fl.evaluation import RunRecord
from cflbench.report import REPORT_KINDS, report

pytestmark = pytest.mark.frontend


ACCURACY = {"fedavg": (0.5, 0.6, 0.5, 0.6), "cornflqs": (0.8, 0.9, 0.8, 0.9)}
ARI = {"fedavg": 0.0, "cornflqs": 1.0}
SIZES = {"NonQS": (50, 50, 50, 50), "QS1": (5, 20, 5, 20)}


def make_record(algorithm, qs, seed, K=4, tag="main"):
    return RunRecord(
        scenario={"dataset": "mnist", "heterogeneity": "ConceptShiftLabels", "qs": qs, "K": K, "tag": tag},
        algorithm=algorithm,
        seed=seed,
        per_client_accuracy=ACCURACY[algorithm],
        final_assignment=(0, 0, 1, 1),
        het_classes=(0, 0, 1, 1),
        samples_per_label=SIZES[qs],
        ari=ARI[algorithm],
        wall_clock=1.0,
    )


def fill(store, records):
    os.makedirs(store.records_dir, exist_ok=True)
    for r in records:
        name = "{}__{}__{}__K{}__{}__seed{}.json".format(r.tag, r.dataset, r.qs, r.scenario["K"], r.algorithm, r.seed)
        io.save_record(os.path.join(store.records_dir, name), r)
    return store


def read(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


@pytest.fixture
def store(tmpdir):
    """Store with a main grid of two algorithms, two skew types and two seeds, plus
    two sensitivity runs."""
    records = [
        make_record(a, qs, seed) for a in ACCURACY for qs in ("NonQS", "QS1") for seed in (0, 1)
    ]
    records += [make_record("cornflqs", "QS1", 0, K=K, tag="sensitivity") for K in (2, 6)]
    return fill(ResultsStore(str(tmpdir.join("results"))), records)


class TestReports:
    """Tests for every report kind."""

    def test_tables(self, store, tmpdir):
        """One row per scope and algorithm, with the pooled block last"""
        (path,) = report(store, "tables", str(tmpdir.join("reports")))
        rows = read(path)
        assert [(r["scope"], r["algorithm"]) for r in rows] == [
            ("NonQS", "cornflqs"),
            ("NonQS", "fedavg"),
            ("QS1", "cornflqs"),
            ("QS1", "fedavg"),
            ("all", "cornflqs"),
            ("all", "fedavg"),
        ]
        pooled = rows[4]
        assert pooled["n_runs"] == "4"
        assert float(pooled["acc_mean"]) == pytest.approx(0.85)
        assert float(pooled["rank"]) == 1.0
        assert pooled["rank_display"] == "1.00"
        assert float(rows[5]["rank"]) == 2.0
        assert pooled["acc_display"].startswith("85.00")

    def test_rank(self, store, tmpdir):
        """Algorithms are listed from best to worst rank"""
        paths = report(store, "rank", str(tmpdir))
        assert [os.path.basename(p) for p in paths] == ["rank.csv", "rank_by_group.csv"]

        rows = read(paths[0])
        assert [r["algorithm"] for r in rows] == ["cornflqs", "fedavg"]
        assert [float(r["rank"]) for r in rows] == [1.0, 2.0]
        assert rows[0]["display"] == "1.00"

        grouped = read(paths[1])
        assert {r["scope"] for r in grouped} == {"qs", "heterogeneity_qs"}
        assert len(grouped) == 8

    def test_delta_heatmap(self, store, tmpdir):
        """Changes from NonQS to QS1 per metric and algorithm"""
        (path,) = report(store, "delta_heatmap", str(tmpdir))
        assert os.path.basename(path) == "delta_heatmap.csv"
        rows = read(path)
        assert len(rows) == 8
        assert {r["comparison"] for r in rows} == {"NonQS-QS1"}
        assert {r["dataset"] for r in rows} == {"mnist", "all"}
        assert all(float(r["delta"]) == 0.0 for r in rows)

    def test_delta_heatmap_needs_nonqs(self, tmpdir):
        """Deltas are undefined without NonQS runs"""
        store = fill(ResultsStore(str(tmpdir)), [make_record("fedavg", "QS1", 0)])
        with pytest.raises(DataError, match="NonQS"):
            report(store, "delta_heatmap", str(tmpdir.join("reports")))

    def test_winrate(self, store, tmpdir):
        """The dominating algorithm wins every pairing"""
        rows = read(report(store, "winrate", str(tmpdir))[0])
        by_pair = {(r["row"], r["column"]): r for r in rows}
        assert float(by_pair[("cornflqs", "fedavg")]["winrate"]) == 1.0
        assert by_pair[("cornflqs", "fedavg")]["sign"] == "positive"
        assert by_pair[("fedavg", "cornflqs")]["sign"] == "negative"

    def test_sensitivity(self, store, tmpdir):
        """Only sensitivity runs enter the sweep over cluster counts"""
        rows = read(report(store, "sensitivity", str(tmpdir))[0])
        assert [(r["qs"], r["K"]) for r in rows] == [("QS1", "2"), ("QS1", "6")]

    def test_groups(self, store, tmpdir):
        """Accuracy is split by client training size"""
        rows = read(report(store, "groups", str(tmpdir))[0])
        keys = [(r["qs"], r["algorithm"], r["samples_per_label"]) for r in rows]
        assert keys == [
            ("NonQS", "cornflqs", "50"),
            ("NonQS", "fedavg", "50"),
            ("QS1", "cornflqs", "5"),
            ("QS1", "cornflqs", "20"),
            ("QS1", "fedavg", "5"),
            ("QS1", "fedavg", "20"),
        ]
        assert float(rows[2]["acc_mean"]) == pytest.approx(0.8)


class TestReportDispatch:
    """Tests for selecting reports."""

    def test_all(self, store, tmpdir):
        """Every report kind is written"""
        out = str(tmpdir.join("reports"))
        paths = report(store, "all", out)
        assert sorted(os.listdir(out)) == sorted(os.path.basename(p) for p in paths)
        assert len(paths) == len(REPORT_KINDS) + 1

    def test_all_skips_unavailable(self, tmpdir, caplog):
        """Reports without enough data are skipped with a warning"""
        store = fill(ResultsStore(str(tmpdir)), [make_record("fedavg", "QS1", 0)])
        with caplog.at_level(logging.WARNING):
            paths = report(store, "all", str(tmpdir.join("reports")))
        names = {os.path.basename(p) for p in paths}
        assert "tables.csv" in names
        assert "delta_heatmap.csv" not in names
        assert "Skipping delta_heatmap report" in caplog.text

    def test_unknown(self, store, tmpdir):
        """Unknown kinds are rejected"""
        with pytest.raises(ConfigurationError, match="Unknown report 'histogram'"):
            report(store, "histogram", str(tmpdir))

    def test_empty_store(self, tmpdir):
        """An empty store has nothing to report"""
        with pytest.raises(DataError, match="No run records"):
            report(ResultsStore(str(tmpdir)), "tables", str(tmpdir))
