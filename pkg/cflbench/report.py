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
Reports
=======

**Module name:** :mod:`cflbench.report`

.. currentmodule:: cflbench.report

CSV reports computed from a results store. Numbers are written with full precision; every
table also carries a two-decimal ``display`` column for publication tables.

+-------------------+---------------------------------------------------------------------+
| ``tables``        | accuracy, client accuracy spread, ARI and mean rank per quantity    |
|                   | skew type and algorithm, with an ``all`` block                      |
+-------------------+---------------------------------------------------------------------+
| ``rank``          | average rank per algorithm, globally and per heterogeneity and      |
|                   | quantity skew type                                                  |
+-------------------+---------------------------------------------------------------------+
| ``delta_heatmap`` | change of ARI and client accuracy spread from ``NonQS`` to each     |
|                   | skewed type, per algorithm and dataset; the data behind a heatmap   |
+-------------------+---------------------------------------------------------------------+
| ``winrate``       | pairwise win rates with the sign of the advantage                   |
+-------------------+---------------------------------------------------------------------+
| ``sensitivity``   | CORNFLQS accuracy against the cluster count, per quantity skew type |
+-------------------+---------------------------------------------------------------------+
| ``groups``        | accuracy of clients grouped by training size                        |
+-------------------+---------------------------------------------------------------------+

.. autosummary::
    REPORT_KINDS
    report

Code details
~~~~~~~~~~~~
"""
import csv
import logging
import math
import os
from collections import defaultdict
from typing import Sequence

import numpy as np

from cflbench.exceptions import ConfigurationError, DataError
from cflbench.fl import evaluation
from cflbench.fl.evaluation import aggregate_cell, average_rank, rank_table

log = logging.getLogger(__name__)


def _fmt(value: float) -> str:
    return "-" if value is None or (isinstance(value, float) and math.isnan(value)) else "{:.2f}".format(value)


def _write(path: str, columns: Sequence[str], rows: Sequence[dict]) -> str:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(columns))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    log.info("Wrote %s (%d rows)", path, len(rows))
    return path


def _tables(records, out_dir):
    by_scope = defaultdict(lambda: defaultdict(list))
    for r in records:
        by_scope[r.qs][r.algorithm].append(r)
        by_scope["all"][r.algorithm].append(r)

    ranks = rank_table(records, lambda r: r.qs)
    ranks["all"] = average_rank(records)

    rows = []
    for scope in sorted(by_scope, key=lambda s: (s == "all", s)):
        for algorithm in sorted(by_scope[scope]):
            cell = aggregate_cell(by_scope[scope][algorithm], ranks[scope][algorithm])
            rows.append(
                {
                    "scope": scope,
                    "algorithm": algorithm,
                    "n_runs": cell.n_runs,
                    "acc_mean": cell.acc_mean,
                    "acc_std": cell.acc_std,
                    "client_acc_std_mean": cell.client_acc_std_mean,
                    "client_acc_std_std": cell.client_acc_std_std,
                    "ari_mean": cell.ari_mean,
                    "ari_std": cell.ari_std,
                    "rank": cell.mean_rank,
                    "acc_display": cell.display("acc"),
                    "client_acc_std_display": cell.display("client_acc_std"),
                    "ari_display": cell.display("ari"),
                    "rank_display": cell.display("rank"),
                }
            )
    return [_write(os.path.join(out_dir, "tables.csv"), rows[0].keys(), rows)]


def _rank(records, out_dir):
    ranks = average_rank(records)
    by_algorithm = defaultdict(list)
    for r in records:
        by_algorithm[r.algorithm].append(r)

    rows = []
    for algorithm in sorted(ranks, key=lambda a: (ranks[a], a)):
        cell = aggregate_cell(by_algorithm[algorithm], ranks[algorithm])
        rows.append(
            {
                "algorithm": algorithm,
                "rank": cell.mean_rank,
                "acc_mean": cell.acc_mean,
                "acc_std": cell.acc_std,
                "ari": cell.ari_mean,
                "display": cell.display("rank"),
            }
        )
    paths = [_write(os.path.join(out_dir, "rank.csv"), rows[0].keys(), rows)]

    grouped = []
    for scope, group in (("qs", lambda r: ("*", r.qs)), ("heterogeneity_qs", lambda r: (r.heterogeneity, r.qs))):
        for (het, qs), table in rank_table(records, group).items():
            for algorithm, rank in sorted(table.items()):
                grouped.append(
                    {"scope": scope, "heterogeneity": het, "qs": qs, "algorithm": algorithm, "rank": rank, "display": _fmt(rank)}
                )
    paths.append(_write(os.path.join(out_dir, "rank_by_group.csv"), grouped[0].keys(), grouped))
    return paths


def _delta_heatmap(records, out_dir):
    nonqs = [r for r in records if r.qs == "NonQS"]
    if not nonqs:
        raise DataError("Quantity skew deltas need NonQS runs")

    rows = []
    metrics = (("ari", evaluation.ari), ("client_acc_std", evaluation.client_acc_std))
    for qs in sorted({r.qs for r in records} - {"NonQS"}):
        skewed = [r for r in records if r.qs == qs]
        for metric_name, metric in metrics:
            for algorithm in sorted({r.algorithm for r in skewed}):
                left = [r for r in nonqs if r.algorithm == algorithm]
                right = [r for r in skewed if r.algorithm == algorithm]
                try:
                    summary = evaluation.delta_summary(left, right, metric)
                except DataError:
                    continue
                for dataset, delta in summary.items():
                    rows.append(
                        {
                            "comparison": "NonQS-{}".format(qs),
                            "metric": metric_name,
                            "algorithm": algorithm,
                            "dataset": dataset,
                            "delta": delta,
                            "display": _fmt(delta if metric_name == "ari" else 100 * delta),
                        }
                    )
    if not rows:
        raise DataError("No NonQS runs pair with skewed runs")
    return [_write(os.path.join(out_dir, "delta_heatmap.csv"), rows[0].keys(), rows)]


def _winrate(records, out_dir):
    names, matrix = evaluation.winrate_matrix(records)
    rows = []
    for i, a in enumerate(names):
        for j, b in enumerate(names):
            if i == j or np.isnan(matrix[i, j]):
                continue
            rate = float(matrix[i, j])
            sign = "positive" if rate > 0.5 else "negative" if rate < 0.5 else "even"
            rows.append({"row": a, "column": b, "winrate": rate, "display": _fmt(rate), "sign": sign})
    if not rows:
        raise DataError("Win rates need at least two algorithms on a shared scenario")
    return [_write(os.path.join(out_dir, "winrate.csv"), rows[0].keys(), rows)]


def _sensitivity(records, out_dir):
    runs = [r for r in records if r.tag == "sensitivity"]
    if not runs:
        runs = [r for r in records if r.algorithm == "cornflqs"]
    if not runs:
        raise DataError("No CORNFLQS runs for the sensitivity report")

    groups = defaultdict(list)
    for r in runs:
        groups[(r.qs, int(r.scenario["K"]))].append(r)

    rows = []
    for (qs, K) in sorted(groups):
        cell = aggregate_cell(groups[(qs, K)])
        rows.append(
            {
                "qs": qs,
                "K": K,
                "n_runs": cell.n_runs,
                "acc_mean": cell.acc_mean,
                "acc_std": cell.acc_std,
                "ari_mean": cell.ari_mean,
                "display": cell.display("acc"),
            }
        )
    return [_write(os.path.join(out_dir, "sensitivity.csv"), rows[0].keys(), rows)]


def _groups(records, out_dir):
    accs = defaultdict(list)
    for r in records:
        for size, acc in evaluation.group_accuracy(r).items():
            accs[(r.qs, r.algorithm, size)].append(acc)

    rows = [
        {
            "qs": qs,
            "algorithm": algorithm,
            "samples_per_label": size,
            "acc_mean": float(np.mean(values)),
            "display": _fmt(100 * float(np.mean(values))),
        }
        for (qs, algorithm, size), values in sorted(accs.items())
    ]
    return [_write(os.path.join(out_dir, "groups.csv"), rows[0].keys(), rows)]


REPORT_KINDS = {
    "tables": _tables,
    "rank": _rank,
    "delta_heatmap": _delta_heatmap,
    "winrate": _winrate,
    "sensitivity": _sensitivity,
    "groups": _groups,
}
"""dict[str, callable]: report writers by name"""


def report(store, kind: str, out_dir: str) -> Sequence[str]:
    """Write a report from the records of a store.

    Sensitivity sweep records only enter the ``sensitivity`` report.

    **Example usage:**

    >>> report(ResultsStore("results"), "rank", "reports")
    ['reports/rank.csv', 'reports/rank_by_group.csv']

    Args:
        store (ResultsStore): source of the records
        kind (str): a key of :data:`REPORT_KINDS`, or ``"all"``
        out_dir (str): output directory, created on demand

    Returns:
        list[str]: paths of the written files
    """
    if kind != "all" and kind not in REPORT_KINDS:
        raise ConfigurationError(
            "Unknown report '{}'; choose from {} or all".format(kind, ", ".join(REPORT_KINDS))
        )

    records = list(store.records())
    if not records:
        raise DataError("No run records found in {}".format(store.root))
    main = [r for r in records if r.tag == "main"]

    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for name in REPORT_KINDS if kind == "all" else [kind]:
        source = records if name == "sensitivity" else main
        try:
            if not source:
                raise DataError("No main grid records found in {}".format(store.root))
            paths.extend(REPORT_KINDS[name](source, out_dir))
        except DataError as e:
            if kind != "all":
                raise
            log.warning("Skipping %s report: %s", name, e)
    return paths
