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
r"""Unit tests for the IO module"""
import dataclasses
import io as pyio
import json
import os

import numpy as np
import pytest

from cflbench import io, nn
from cflbench.exceptions import IngestionError
from cflbench.fl.evaluation import RunRecord

pytestmark = pytest.mark.frontend


@pytest.fixture
def model():
    return nn.init_model((6, 5, 3), 2)


@pytest.fixture
def record():
    return RunRecord(
        scenario={"dataset": "mnist", "heterogeneity": "ConceptShiftLabels", "qs": "QS2", "K": 4, "tag": "main"},
        algorithm="cornflqs",
        seed=1,
        per_client_accuracy=(0.875, 0.5, 0.625, 0.75),
        final_assignment=(0, 0, 1, 1),
        het_classes=(1, 1, 0, 0),
        samples_per_label=(5, 5, 200, 200),
        ari=1.0,
        trace_digest="ab" * 32,
        trace=({"round": 1, "phase": "CORN", "membership": [0, 0, 1, 1], "mean_loss": 0.5, "cluster_norms": [1.0, 2.0]},),
        details={"phase_rounds": {"CORN": 1}},
        wall_clock=12.5,
    )


class TestModelFiles:
    """Tests for the binary model format."""

    def test_save_appends_extension(self, tmpdir, model):
        """A missing extension is added"""
        filename = str(tmpdir.join("cluster0"))
        io.save_model(filename, model)
        assert os.path.exists(filename + ".cflm")
        assert io.load_model(filename + ".cflm").allclose(model)

    def test_file_object(self, model):
        """Open file objects are accepted and left open"""
        buffer = pyio.BytesIO()
        io.save_model(buffer, model)
        assert not buffer.closed
        buffer.seek(0)
        loaded = io.load_model(buffer)
        assert loaded.dims == (6, 5, 3)
        assert loaded.allclose(model)

    def test_layout(self, model):
        """Magic bytes, widths, then little-endian doubles"""
        buffer = pyio.BytesIO()
        io.save_model(buffer, model)
        raw = buffer.getvalue()
        assert raw[:4] == b"CFLM"
        assert raw[4:8] == (3).to_bytes(4, "little")
        assert len(raw) == 8 + 3 * 4 + 8 * model.size

    def test_not_a_model(self):
        """Foreign files are rejected"""
        with pytest.raises(IngestionError, match="not a model file"):
            io.load_model(pyio.BytesIO(b"PK\x03\x04 not a model"))

    def test_truncated(self, model):
        """Missing parameters are detected"""
        buffer = pyio.BytesIO()
        io.save_model(buffer, model)
        with pytest.raises(IngestionError, match="expected"):
            io.load_model(pyio.BytesIO(buffer.getvalue()[:-8]))

    def test_invalid_target(self, model):
        """Only paths and file objects can be written"""
        with pytest.raises(ValueError, match="file must be"):
            io.save_model(3.5, model)


class TestShardFiles:
    """Tests for the shard cache."""

    def test_round_trip(self, tmpdir, toy_qs_shards):
        """Every field of every shard is restored"""
        filename = str(tmpdir.join("toy.shards"))
        io.save_shards(filename, toy_qs_shards)
        loaded = io.load_shards(filename)
        assert len(loaded) == len(toy_qs_shards)
        for a, b in zip(loaded, toy_qs_shards):
            assert (a.client_id, a.het_class, a.samples_per_label, a.num_classes) == (
                b.client_id,
                b.het_class,
                b.samples_per_label,
                b.num_classes,
            )
            assert np.array_equal(a.train_features, b.train_features)
            assert np.array_equal(a.train_labels, b.train_labels)
            assert np.array_equal(a.test_features, b.test_features)
            assert np.array_equal(a.test_labels, b.test_labels)

    def test_truncated(self, toy_shards):
        """A cut off cache is detected"""
        buffer = pyio.BytesIO()
        io.save_shards(buffer, toy_shards[:2])
        with pytest.raises(IngestionError, match="truncated"):
            io.load_shards(pyio.BytesIO(buffer.getvalue()[:-100]))

    def test_trailing_bytes(self, toy_shards):
        """Extra data after the last shard is detected"""
        buffer = pyio.BytesIO()
        io.save_shards(buffer, toy_shards[:1])
        with pytest.raises(IngestionError, match="trailing"):
            io.load_shards(pyio.BytesIO(buffer.getvalue() + b"\x00" * 8))

    def test_not_a_cache(self):
        """Foreign files are rejected"""
        with pytest.raises(IngestionError, match="not a shard cache"):
            io.load_shards(pyio.BytesIO(b"CFLM\x00\x00\x00\x00"))


class TestRecords:
    """Tests for run record files."""

    def test_round_trip(self, tmpdir, record):
        """Records and their wall clock time are restored"""
        path = str(tmpdir.join("run.json"))
        io.save_record(path, record)
        loaded = io.load_record(path)
        assert loaded.to_dict() == record.to_dict()
        assert loaded.wall_clock == 12.5
        assert os.path.exists(str(tmpdir.join("run.time")))
        assert not os.path.exists(path + ".tmp")

    def test_byte_identical(self, tmpdir, record):
        """The JSON file does not depend on the wall clock time"""
        a, b = str(tmpdir.join("a.json")), str(tmpdir.join("b.json"))
        io.save_record(a, record)
        io.save_record(b, dataclasses.replace(record, wall_clock=99.0))
        with open(a, "rb") as fa, open(b, "rb") as fb:
            assert fa.read() == fb.read()

    def test_canonical_json(self, record):
        """Keys are sorted"""
        text = io.dumps_record(record)
        data = json.loads(text)
        assert list(data) == sorted(data)
        assert text.endswith("\n")

    def test_missing_time(self, tmpdir, record):
        """Without its timing file a record has an unknown wall clock time"""
        path = str(tmpdir.join("run.json"))
        io.save_record(path, record)
        os.remove(str(tmpdir.join("run.time")))
        assert np.isnan(io.load_record(path).wall_clock)

    def test_missing(self, tmpdir):
        """Missing records are reported"""
        with pytest.raises(IngestionError, match="does not exist"):
            io.load_record(str(tmpdir.join("none.json")))

    def test_invalid_json(self, tmpdir):
        """Corrupt records are reported"""
        path = tmpdir.join("bad.json")
        path.write("{not json")
        with pytest.raises(IngestionError, match="not valid JSON"):
            io.load_record(str(path))

    def test_missing_field(self, tmpdir):
        """Records lacking a field are reported"""
        path = tmpdir.join("partial.json")
        path.write(json.dumps({"algorithm": "fedavg"}))
        with pytest.raises(IngestionError, match="missing field"):
            io.load_record(str(path))
