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
.. currentmodule:: cflbench

This is the top level module from which the configuration, the neural network core and the
federated learning applications layer are accessible.
"""
from ._version import __version__
from ._dev.configuration import Configuration
from .exceptions import ConfigurationError, DataError, EmptyClusterError, IngestionError
from . import fl, nn


__all__ = [
    "Configuration",
    "ConfigurationError",
    "DataError",
    "EmptyClusterError",
    "IngestionError",
    "fl",
    "nn",
    "version",
    "about",
]


def version():
    r"""
    Version number of cflbench.

    Returns:
      str: package version number
    """
    return __version__


def about():
    """Prints the versions of cflbench and its numerical dependencies."""
    import platform

    import networkx
    import numpy
    import scipy
    import sklearn

    print("cflbench version:  {}".format(__version__))
    print("Python version:    {}".format(platform.python_version()))
    print("Platform info:     {}".format(platform.platform()))
    print("Numpy version:     {}".format(numpy.__version__))
    print("Scipy version:     {}".format(scipy.__version__))
    print("scikit-learn:      {}".format(sklearn.__version__))
    print("NetworkX version:  {}".format(networkx.__version__))
