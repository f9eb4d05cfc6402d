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
from setuptools import setup


with open("cflbench/_version.py") as f:
    version = f.readlines()[-1].split()[-1].strip("\"'")


requirements = [
    "numpy>=1.17",
    "scipy>=1.6.0",
    "networkx>=2.0",
    "scikit-learn>=0.24",
    "toml",
    "appdirs",
]

info = {
    "name": "cflbench",
    "version": version,
    "license": "Apache License 2.0",
    "packages": ["cflbench", "cflbench._dev", "cflbench.fl"],
    "include_package_data": True,
    "description": "Simulator and benchmark for clustered federated learning under quantity skew",
    "long_description": open("README.rst", encoding="utf-8").read(),
    "provides": ["cflbench"],
    "install_requires": requirements,
    "extras_require": {"test": ["pytest", "pytest-cov"]},
    "entry_points": {"console_scripts": ["cflbench=cflbench.cli:main"]},
}

classifiers = [
    "Development Status :: 3 - Alpha",
    "Environment :: Console",
    "Intended Audience :: Science/Research",
    "License :: OSI Approved :: Apache Software License",
    "Natural Language :: English",
    "Operating System :: POSIX",
    "Operating System :: MacOS :: MacOS X",
    "Operating System :: POSIX :: Linux",
    "Operating System :: Microsoft :: Windows",
    "Programming Language :: Python",
    "Programming Language :: Python :: 3",
    "Programming Language :: Python :: 3.7",
    "Programming Language :: Python :: 3.8",
    "Programming Language :: Python :: 3 :: Only",
    "Topic :: Scientific/Engineering :: Artificial Intelligence",
]

setup(classifiers=classifiers, **(info))
