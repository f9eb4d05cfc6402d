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
Exceptions
==========

**Module name:** :mod:`cflbench.exceptions`

.. currentmodule:: cflbench.exceptions

Exception classes raised across the package. The command line interface maps them onto
process exit codes: :class:`ConfigurationError` exits with 2, :class:`DataError` (and its
subclass :class:`IngestionError`) with 3.

.. autosummary::
    ConfigurationError
    DataError
    IngestionError
    EmptyClusterError

Code details
~~~~~~~~~~~~
"""


class ConfigurationError(ValueError):
    """Exception raised for invalid settings or inconsistent arguments.

    E.g., a batch whose width does not match the model input, an unknown image transform,
    or more clusters requested than there are points to cluster.
    """


class DataError(ValueError):
    """Exception raised when the data cannot support the requested operation.

    E.g., a label outside the model's output range, an empty client shard, or a dataset
    with too few samples of some label to fill the requested partition.
    """


class IngestionError(DataError):
    """Exception raised while reading a dataset file from disk.

    The message always names the offending file.
    """


class EmptyClusterError(RuntimeError):
    """Exception raised by :func:`~.fl.runtime.aggregate_weighted` when asked to average
    zero models.

    The round engine catches it and carries the previous cluster model over.
    """
