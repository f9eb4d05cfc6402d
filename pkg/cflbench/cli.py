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
Command line interface
======================

**Module name:** :mod:`cflbench.cli`

.. currentmodule:: cflbench.cli

Entry point of the ``cflbench`` command.

.. code-block:: console

    $ cflbench partition --out-dir results
    $ cflbench run --workers 8 --out-dir results
    $ cflbench report --kind all --out-dir results
    $ cflbench verify

Options given on the command line override the configuration file and the environment.

Exit codes: ``0`` success, ``1`` oracle mismatch, ``2`` configuration error, ``3`` data error,
``4`` some cells failed.

Code details
~~~~~~~~~~~~
"""
import argparse
import logging
import os
import sys

from cflbench import io
from cflbench._dev.configuration import Configuration
from cflbench.engine import DataSource, ResultsStore, expand_grid, run_all, shards_for
from cflbench.exceptions import ConfigurationError, DataError
from cflbench.report import REPORT_KINDS, report
from cflbench.verify import run_suite

log = logging.getLogger(__name__)

EXIT_OK, EXIT_MISMATCH, EXIT_CONFIG, EXIT_DATA = 0, 1, 2, 3


def create_parser() -> argparse.ArgumentParser:
    """Argument parser with one sub-command per stage."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="path to a TOML configuration file")
    common.add_argument("--seed-offset", type=int, help="added to every configured seed")
    common.add_argument("--workers", type=int, help="worker processes")
    common.add_argument("--force", action="store_true", default=None, help="recompute existing results")
    common.add_argument("--out-dir", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="cflbench", description="Clustered federated learning benchmark")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("partition", parents=[common], help="write the client shards of every scenario")

    run_parser = sub.add_parser("run", parents=[common], help="run every experiment cell")
    run_parser.add_argument("--checkpoints", action="store_true", help="save final cluster models")

    report_parser = sub.add_parser("report", parents=[common], help="write CSV reports")
    report_parser.add_argument("--kind", default="all", choices=sorted(REPORT_KINDS) + ["all"])
    report_parser.add_argument("--report-dir", help="defaults to <out-dir>/reports")

    verify_parser = sub.add_parser("verify", parents=[common], help="run the oracle checks")
    verify_parser.add_argument("--seed", type=int, default=0)
    return parser


def load_config(args) -> Configuration:
    """Resolve the configuration and apply the command line overrides."""
    if args.config is not None:
        if not os.path.isfile(args.config):
            raise ConfigurationError("Configuration file {} does not exist".format(args.config))
        config = Configuration(os.path.abspath(args.config))
    else:
        config = Configuration()

    config.override("run", "seed_offset", args.seed_offset)
    config.override("run", "workers", args.workers)
    config.override("run", "force", args.force)
    config.override("run", "out_dir", args.out_dir)
    return config


def _partition(config) -> int:
    source = DataSource.from_config(config)
    out = os.path.join(config.run["out_dir"], "shards")
    os.makedirs(out, exist_ok=True)

    seen = set()
    for cell in expand_grid(config):
        scenario = cell.scenario
        key = (scenario.dataset, scenario.heterogeneity, scenario.qs, cell.seed)
        if key in seen:
            continue
        seen.add(key)
        source.check(scenario.dataset)
        path = os.path.join(out, "{}__{}__{}__seed{}.shards".format(*key))
        if os.path.exists(path) and not config.run["force"]:
            log.info("Skipping %s, cache exists", path)
            continue
        io.save_shards(path, shards_for(source, scenario, cell.seed))
        log.info("Wrote %s", path)
    return EXIT_OK


def _report(config, args) -> int:
    store = ResultsStore(config.run["out_dir"])
    out = args.report_dir or os.path.join(store.root, "reports")
    for path in report(store, args.kind, out):
        print(path)
    return EXIT_OK


def _verify(args) -> int:
    results = run_suite(args.seed)
    for r in results:
        print(r)
    return EXIT_OK if all(r.passed for r in results) else EXIT_MISMATCH


def main(argv=None) -> int:
    """Run the command line interface.

    Args:
        argv (list[str]): arguments, defaults to ``sys.argv[1:]``

    Returns:
        int: process exit code
    """
    args = create_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        if args.command == "verify":
            return _verify(args)

        config = load_config(args)
        if args.command == "partition":
            return _partition(config)
        if args.command == "run":
            result = run_all(config, checkpoints=args.checkpoints)
            print(result)
            return result.exit_code
        return _report(config, args)
    except ConfigurationError as e:
        log.error("%s", e)
        return EXIT_CONFIG
    except DataError as e:
        log.error("%s", e)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
