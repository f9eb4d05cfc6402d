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
Configuration
=============

**Module name:** :mod:`cflbench._dev.configuration`

.. currentmodule:: cflbench._dev.configuration

This module contains the :class:`Configuration` class, which is used to
load, store, save, and modify the options of an experiment sweep.

Behaviour
---------

On construction, cflbench attempts to load the configuration file ``config.toml``, by
scanning the following three directories in order of preference:

1. The current directory
2. The path stored in the environment variable ``CFLBENCH_CONF``
3. The default user configuration directory:

   * On Linux: ``~/.config/cflbench``
   * On Windows: ``~C:\Users\USERNAME\AppData\Local\cflbench\cflbench``
   * On MacOS: ``~/Library/Preferences/cflbench``

If no configuration file is found, a message is logged and the built-in defaults
(:data:`DEFAULT_CONFIG`) are used.

Precedence, from lowest to highest: built-in defaults, configuration file, environment
variables named ``CFLBENCH_<SECTION>_<KEY>`` and finally command line flags, which are
applied with :meth:`Configuration.override`. Environment values are strings and are coerced
to the type of the default they replace; lists are comma separated.

Configuration files
-------------------

The configuration file ``config.toml`` uses the `TOML standard <https://github.com/toml-lang/toml>`_,
and has the following format:

.. code-block:: toml

    [data]
    root = "~/data"
    datasets = ["mnist", "fashion-mnist"]

    [scenario]
    heterogeneity = ["ConceptShiftFeatures", "ConceptShiftLabels", "FeatureDistributionSkew"]
    qs = ["NonQS", "QS1", "QS2"]
    num_clients = 20

    [algorithms]
    names = ["fedavg", "cornflqs"]
    K = 4
    rounds = 20

    [run]
    seeds = [0, 1, 2, 3, 4]
    workers = 4

Summary of methods
------------------

.. currentmodule:: cflbench._dev.configuration.Configuration

.. autosummary::
    path
    load
    save
    override
    fingerprint

Code details
~~~~~~~~~~~~

.. currentmodule:: cflbench._dev.configuration

"""
import copy
import hashlib
import json
import logging
import os

import toml
from appdirs import user_config_dir

from cflbench.exceptions import ConfigurationError

log = logging.getLogger(__name__)


DEFAULT_CONFIG = {
    "data": {
        "root": "data",
        "datasets": ["mnist"],
        "train_images": "train-images-idx3-ubyte",
        "train_labels": "train-labels-idx1-ubyte",
        "test_images": "t10k-images-idx3-ubyte",
        "test_labels": "t10k-labels-idx1-ubyte",
    },
    "scenario": {
        "heterogeneity": [
            "ConceptShiftFeatures",
            "ConceptShiftLabels",
            "FeatureDistributionSkew",
        ],
        "qs": ["NonQS", "QS1", "QS2"],
        "num_clients": 20,
        "num_classes_het": 4,
        "samples_per_label_nonqs": 50,
        "qs_group_sizes": [5, 20, 100, 200],
        "permute_qs2_groups": False,
        "test_per_class": 0,
    },
    "training": {
        "local_epochs": 10,
        "learning_rate": 0.05,
        "batch_size": 32,
        "hidden_dim": 200,
        "prox_mu": 0.01,
    },
    "algorithms": {
        "names": [
            "fedavg",
            "fedprox",
            "cfl",
            "flhc",
            "fedgroup",
            "ifca",
            "srfca",
            "cornflqs",
        ],
        "K": 4,
        "rounds": 20,
        "clustering_round": 0,
        "ifca_restarts": 5,
        "ifca_selection": "accuracy",
        "srfca_quantiles": [0.1, 0.25],
        "srfca_grid_size": 3,
        "trim_fraction": 0.1,
        "edc_directions": 0,
    },
    "run": {
        "seeds": [0, 1, 2, 3, 4],
        "seed_offset": 0,
        "workers": 1,
        "out_dir": "results",
        "force": False,
    },
    "sensitivity": {"cluster_counts": []},
}
"""dict[str, dict[str, Any]]: built-in defaults. A value of ``0`` for ``test_per_class``,
``clustering_round`` or ``edc_directions`` selects the automatic choice."""

# keys that do not change the content of any run record
_VOLATILE_KEYS = {("run", "workers"), ("run", "out_dir"), ("run", "force"), ("data", "root")}


def _coerce(raw, default, name):
    """Converts the string ``raw`` read from the environment to the type of ``default``."""
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, list):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            if default and not isinstance(default[0], str):
                return [_coerce(s, default[0], name) for s in items]
            if not default:
                # untyped empty default: accept integers
                return [int(s) for s in items]
            return items
    except ValueError:
        raise ConfigurationError(
            "Environment variable {} has an invalid value {!r}.".format(name, raw)
        ) from None
    return raw


class Configuration:
    """Configuration class.

    This class is responsible for loading, saving, and storing the options of an
    experiment sweep.

    Args:
        name (str): filename of the configuration file.
            This should be a valid TOML file. You may also pass an absolute
            or a relative file path to the configuration file.
    """

    def __str__(self):
        return "{}".format(self._config)

    def __repr__(self):
        return "cflbench Configuration <{}>".format(self._filepath)

    def __init__(self, name="config.toml"):
        self._config = copy.deepcopy(DEFAULT_CONFIG)
        self._config_file = {}
        self._filepath = None
        self._name = name
        self._user_config_dir = user_config_dir("cflbench", "cflbench")
        self._env_config_dir = os.environ.get("CFLBENCH_CONF", "")

        # Search the current directory, the directory under environment
        # variable CFLBENCH_CONF, and default user config directory, in that order.
        directories = [os.getcwd(), self._env_config_dir, self._user_config_dir]
        config = False
        for directory in directories:
            self._filepath = os.path.join(directory, self._name)
            try:
                config = self.load(self._filepath)
                break
            except FileNotFoundError:
                config = False

        if not config:
            self._filepath = None
            log.info("No cflbench configuration file found.")

        self.update_config()

    def update_config(self):
        """Updates the configuration from either a loaded configuration
        file, or from an environment variable.

        The environment variable takes precedence."""
        for section in self._config_file:
            if section not in self._config:
                raise ConfigurationError(
                    "Unknown cflbench configuration section '{}'.".format(section)
                )

        for section, section_config in self._config.items():
            env_prefix = "CFLBENCH_{}_".format(section.upper())
            file_section = self._config_file.get(section, {})

            for key in section_config:
                env = env_prefix + key.upper()

                if env in os.environ:
                    section_config[key] = _coerce(os.environ[env], DEFAULT_CONFIG[section][key], env)
                elif key in file_section:
                    section_config[key] = file_section[key]

    def __getattr__(self, section):
        if section.startswith("_"):
            raise AttributeError(section)

        if section in self._config:
            return self._config[section]

        raise ConfigurationError("Unknown cflbench configuration section.")

    def override(self, section, key, value):
        """Sets a single option, taking precedence over files and the environment.

        ``None`` values are ignored, so unset command line flags can be passed straight through.

        Args:
            section (str): configuration section
            key (str): option name within the section
            value (Any): new value
        """
        if value is None:
            return

        if section not in self._config or key not in self._config[section]:
            raise ConfigurationError("Unknown cflbench option {}.{}.".format(section, key))

        self._config[section][key] = value

    def as_dict(self):
        """Return a deep copy of the resolved options.

        Returns:
            dict[str, dict[str, Any]]
        """
        return copy.deepcopy(self._config)

    def fingerprint(self):
        """SHA-256 of the options that determine run record contents.

        Worker count, output location, data location and the force flag are excluded.

        Returns:
            str: hexadecimal digest
        """
        relevant = {
            section: {
                key: value
                for key, value in options.items()
                if (section, key) not in _VOLATILE_KEYS
            }
            for section, options in self._config.items()
        }
        canonical = json.dumps(relevant, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    @property
    def path(self):
        """Return the path of the loaded configuration file.

        Returns:
            str: If no configuration is loaded, this returns ``None``."""
        return self._filepath

    def load(self, filepath):
        """Load a configuration file.

        Args:
            filepath (str): path to the configuration file
        """
        with open(filepath, "r") as f:
            self._config_file = toml.load(f)

        return self._config_file

    def save(self, filepath):
        """Save a configuration file.

        Args:
            filepath (str): path to the configuration file
        """
        with open(filepath, "w") as f:
            toml.dump(self._config, f)
