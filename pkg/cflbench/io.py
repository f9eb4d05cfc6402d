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
This module contains functions for saving and loading models, client shards and run
records.

Models and shards use compact binary files holding little-endian 64-bit arrays behind a
small header; run records are JSON.

.. autosummary::
    save_model
    load_model
    save_shards
    load_shards
    dumps_record
    save_record
    load_record

Run records are written with sorted keys, so identical runs produce byte-identical files. The
wall clock time of a run is kept apart in a ``.time`` file next to the record.
"""
import json
import os
import struct
from typing import Sequence

import numpy as np

from cflbench.exceptions import IngestionError
from cflbench.fl.evaluation import RunRecord
from cflbench.fl.partition import ClientShard
from cflbench.nn import ModelParams

MODEL_MAGIC = b"CFLM"
SHARD_MAGIC = b"CFLS"


def _open(f, mode, extension):
    """Returns the file object and whether this function owns it."""
    if hasattr(f, "read") or hasattr(f, "write"):
        return f, False

    try:
        filename = os.fspath(f)
    except TypeError:
        raise ValueError("file must be a string, pathlib.Path, or file-like object") from None

    if "w" in mode and not filename.endswith(extension):
        filename = filename + extension
    return open(filename, mode), True


def save_model(f, model: ModelParams):
    """Saves a model to a binary ``.cflm`` file.

    The file holds the magic bytes ``CFLM``, the number of layer widths and the widths as
    little-endian unsigned 32-bit integers, followed by :meth:`.ModelParams.flatten` as
    little-endian 64-bit floats.

    Args:
        f (Union[file, str, pathlib.Path]): File or filename to which
            the data is saved. If file is a string or Path, a .cflm extension will
            be appended to the file name if it does not already have one.
        model (ModelParams): model to save
    """
    dims = model.dims
    payload = MODEL_MAGIC + struct.pack("<I", len(dims)) + struct.pack("<{}I".format(len(dims)), *dims)
    payload += model.flatten().astype("<f8").tobytes()

    fid, own_file = _open(f, "wb", ".cflm")
    try:
        fid.write(payload)
    finally:
        if own_file:
            fid.close()


def load_model(f) -> ModelParams:
    """Load a model saved by :func:`save_model`.

    Args:
        f (Union[file, str, pathlib.Path]): file or filename

    Returns:
        ModelParams: the model
    """
    fid, own_file = _open(f, "rb", ".cflm")
    try:
        raw = fid.read()
    finally:
        if own_file:
            fid.close()

    name = getattr(fid, "name", "<stream>")
    if raw[:4] != MODEL_MAGIC or len(raw) < 8:
        raise IngestionError("{} is not a model file".format(name))
    (count,) = struct.unpack("<I", raw[4:8])
    end = 8 + 4 * count
    if len(raw) < end:
        raise IngestionError("{} is truncated".format(name))
    dims = struct.unpack("<{}I".format(count), raw[8:end])

    expected = sum(o * i + o for i, o in zip(dims[:-1], dims[1:]))
    if len(raw) - end != 8 * expected:
        raise IngestionError("{} holds {} bytes of parameters, expected {}".format(name, len(raw) - end, 8 * expected))
    return ModelParams.from_flat(dims, np.frombuffer(raw, dtype="<f8", offset=end).astype(np.float64))


def save_shards(f, shards: Sequence[ClientShard]):
    """Saves client shards to a binary ``.shards`` cache.

    Layout: magic ``CFLS``, the length of a JSON header as a little-endian unsigned 32-bit
    integer, the header itself, then for every shard its training features, training labels,
    test features and test labels. Features are little-endian 64-bit floats and labels
    little-endian 64-bit integers.

    Args:
        f (Union[file, str, pathlib.Path]): file or filename
        shards (Sequence[ClientShard]): shards to store
    """
    header = {
        "shards": [
            {
                "client_id": s.client_id,
                "het_class": s.het_class,
                "samples_per_label": s.samples_per_label,
                "num_classes": s.num_classes,
                "input_dim": s.input_dim,
                "n_train": s.num_samples,
                "n_test": int(s.test_labels.shape[0]),
            }
            for s in shards
        ]
    }
    encoded = json.dumps(header, sort_keys=True).encode("utf-8")

    fid, own_file = _open(f, "wb", ".shards")
    try:
        fid.write(SHARD_MAGIC + struct.pack("<I", len(encoded)) + encoded)
        for s in shards:
            fid.write(np.ascontiguousarray(s.train_features, dtype="<f8").tobytes())
            fid.write(np.ascontiguousarray(s.train_labels, dtype="<i8").tobytes())
            fid.write(np.ascontiguousarray(s.test_features, dtype="<f8").tobytes())
            fid.write(np.ascontiguousarray(s.test_labels, dtype="<i8").tobytes())
    finally:
        if own_file:
            fid.close()


def load_shards(f) -> list:
    """Load shards saved by :func:`save_shards`.

    Args:
        f (Union[file, str, pathlib.Path]): file or filename

    Returns:
        list[ClientShard]: the shards
    """
    fid, own_file = _open(f, "rb", ".shards")
    try:
        raw = fid.read()
    finally:
        if own_file:
            fid.close()

    name = getattr(fid, "name", "<stream>")
    if raw[:4] != SHARD_MAGIC or len(raw) < 8:
        raise IngestionError("{} is not a shard cache".format(name))
    (length,) = struct.unpack("<I", raw[4:8])
    try:
        header = json.loads(raw[8 : 8 + length].decode("utf-8"))
    except ValueError:
        raise IngestionError("{} has a corrupt header".format(name)) from None

    pos = 8 + length

    def take(count, dtype):
        nonlocal pos
        nbytes = 8 * count
        if pos + nbytes > len(raw):
            raise IngestionError("{} is truncated".format(name))
        out = np.frombuffer(raw, dtype=dtype, count=count, offset=pos).copy()
        pos += nbytes
        return out

    shards = []
    for meta in header["shards"]:
        d, n_train, n_test = meta["input_dim"], meta["n_train"], meta["n_test"]
        shards.append(
            ClientShard(
                client_id=meta["client_id"],
                het_class=meta["het_class"],
                samples_per_label=meta["samples_per_label"],
                num_classes=meta["num_classes"],
                train_features=take(n_train * d, "<f8").astype(np.float64).reshape(n_train, d),
                train_labels=take(n_train, "<i8").astype(np.int64),
                test_features=take(n_test * d, "<f8").astype(np.float64).reshape(n_test, d),
                test_labels=take(n_test, "<i8").astype(np.int64),
            )
        )
    if pos != len(raw):
        raise IngestionError("{} has {} trailing bytes".format(name, len(raw) - pos))
    return shards


def dumps_record(record: RunRecord) -> str:
    """Canonical JSON text of a run record."""
    return json.dumps(record.to_dict(), sort_keys=True, indent=2) + "\n"


def save_record(path, record: RunRecord):
    """Write a run record as JSON, and its wall clock time next to it.

    The record is written to a temporary file first and moved into place, so an interrupted
    run never leaves a partial record behind.

    Args:
        path (Union[str, pathlib.Path]): destination of the JSON record
        record (RunRecord): record to save
    """
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        f.write(dumps_record(record))
    os.replace(tmp, path)

    with open(os.path.splitext(path)[0] + ".time", "w", encoding="utf-8") as f:
        f.write("{!r}\n".format(record.wall_clock))


def load_record(path) -> RunRecord:
    """Load a run record saved by :func:`save_record`.

    Args:
        path (Union[str, pathlib.Path]): path of the JSON record

    Returns:
        RunRecord: the record, with its wall clock time when available
    """
    path = os.fspath(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise IngestionError("Run record {} does not exist".format(path)) from None
    except ValueError as e:
        raise IngestionError("Run record {} is not valid JSON: {}".format(path, e)) from None

    wall_clock = float("nan")
    timing = os.path.splitext(path)[0] + ".time"
    if os.path.exists(timing):
        with open(timing, "r", encoding="utf-8") as f:
            try:
                wall_clock = float(f.read().strip())
            except ValueError:
                pass

    try:
        return RunRecord.from_dict(data, wall_clock)
    except (KeyError, TypeError) as e:
        raise IngestionError("Run record {} is missing field {}".format(path, e)) from None
