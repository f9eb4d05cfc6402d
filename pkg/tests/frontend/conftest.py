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
Fixtures for the configuration, engine, report and command line tests.
"""
# pylint: disable=redefined-outer-name
import pytest
import toml

from cflbench._dev.configuration import Configuration

TOY_OPTIONS = {
    "data": {"datasets": ["toy"]},
    "scenario": {
        "heterogeneity": ["ConceptShiftFeatures"],
        "qs": ["NonQS", "QS1"],
        "num_clients": 8,
        "samples_per_label_nonqs": 4,
        "qs_group_sizes": [2, 6],
    },
    "training": {"local_epochs": 1, "learning_rate": 0.1, "batch_size": 16, "hidden_dim": 8},
    "algorithms": {"names": ["fedavg", "cornflqs"], "K": 2, "rounds": 2},
    "run": {"seeds": [0, 1]},
}
"""dict: a sweep over the toy dataset small enough for unit tests"""


@pytest.fixture
def toy_options(toy_data_root, tmpdir):
    """Options of the toy sweep, with data and output under temporary directories.

    Returns:
        dict[str, dict]: sections of options
    """
    options = {section: dict(values) for section, values in TOY_OPTIONS.items()}
    options["data"]["root"] = toy_data_root
    options["run"]["out_dir"] = str(tmpdir.join("results"))
    return options


@pytest.fixture
def toy_config(toy_options):
    """Resolved configuration of the toy sweep.

    Returns:
        Configuration: defaults overridden by :data:`TOY_OPTIONS`
    """
    config = Configuration(name="noconfig")
    for section, values in toy_options.items():
        for key, value in values.items():
            config.override(section, key, value)
    return config


@pytest.fixture
def toy_config_file(toy_options, tmpdir):
    """The toy sweep written as a TOML file.

    Returns:
        str: path of the file
    """
    filename = str(tmpdir.join("toy.toml"))
    with open(filename, "w") as f:
        toml.dump(toy_options, f)
    return filename
