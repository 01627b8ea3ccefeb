import os
import struct
import tempfile

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qclnet.config import Config
from qclnet.errors import ValidationError
from qclnet.model import init_model
from qclnet.weights import (MAGIC, VERSION, BadMagicError,
                            DuplicateTensorError, TruncatedFileError,
                            VersionMismatchError, WeightShapeError,
                            check_shapes, load_weights, save_weights)

TOY = dict(levels=(4, 2), layers=(2, 2), feat_channels=(4, 4),
           skip_channels=(4, 4), decoder_width=8, skip_width=8)


def sample_tensors(rng):
    return {
        "a.w": rng.standard_normal((2, 3, 3, 3)),
        "a.b": rng.standard_normal(2),
        "scalar": np.asarray(rng.standard_normal()),
    }


class TestRoundTrip:
    def test_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        tensors = sample_tensors(rng)
        path = str(tmp_path / "w.qclw")
        save_weights(tensors, path)
        loaded = load_weights(path)
        assert list(loaded) == list(tensors)
        for k, v in tensors.items():
            got = loaded[k]
            assert got.shape == np.asarray(v).shape
            assert np.array_equal(got, v)

    def test_accepts_pair_iterable(self, tmp_path):
        path = str(tmp_path / "w.qclw")
        save_weights([("x", np.arange(3.0))], path)
        assert np.array_equal(load_weights(path)["x"], np.arange(3.0))

    @given(st.lists(st.tuples(st.integers(1, 4), st.integers(1, 4)),
                    min_size=0, max_size=3),
           st.integers(0, 2**31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_random_shapes_round_trip(self, shapes, seed):
        rng = np.random.default_rng(seed)
        tensors = {f"t{i}": rng.standard_normal(s)
                   for i, s in enumerate(shapes)}
        with tempfile.TemporaryDirectory() as d:
            path = os.path.join(d, "w.qclw")
            save_weights(tensors, path)
            loaded = load_weights(path)
        assert list(loaded) == list(tensors)
        for k in tensors:
            assert np.array_equal(loaded[k], tensors[k])

    def test_full_model_round_trip(self, tmp_path):
        params = init_model(Config(**TOY), 7)
        path = str(tmp_path / "model.qclw")
        save_weights(params.named_tensors(), path)
        loaded = load_weights(path)
        fresh = init_model(Config(**TOY), 99)
        fresh.load_values(loaded)
        assert all(np.array_equal(fresh.tensors[k], params.tensors[k])
                   for k in params.tensors)


class TestFileValidation:
    def test_bad_magic(self, tmp_path):
        path = str(tmp_path / "w.qclw")
        with open(path, "wb") as f:
            f.write(b"NOPE" + struct.pack("<II", VERSION, 0))
        with pytest.raises(BadMagicError):
            load_weights(path)

    def test_version_mismatch(self, tmp_path):
        path = str(tmp_path / "w.qclw")
        with open(path, "wb") as f:
            f.write(MAGIC + struct.pack("<II", VERSION + 1, 0))
        with pytest.raises(VersionMismatchError):
            load_weights(path)

    def test_truncated_payload(self, tmp_path):
        path = str(tmp_path / "w.qclw")
        save_weights({"x": np.arange(16.0)}, path)
        with open(path, "rb") as f:
            data = f.read()
        with open(path, "wb") as f:
            f.write(data[:-8])
        with pytest.raises(TruncatedFileError, match="payload"):
            load_weights(path)

    def test_truncated_header(self, tmp_path):
        path = str(tmp_path / "w.qclw")
        with open(path, "wb") as f:
            f.write(MAGIC + struct.pack("<I", VERSION))
        with pytest.raises(TruncatedFileError):
            load_weights(path)

    def test_duplicate_names(self, tmp_path):
        path = str(tmp_path / "w.qclw")
        with pytest.raises(DuplicateTensorError):
            save_weights([("x", np.zeros(1)), ("x", np.zeros(1))], path)
        # a crafted file with two tensors sharing a name is rejected on load
        save_weights({"x": np.zeros(1)}, path)
        with open(path, "rb") as f:
            data = bytearray(f.read())
        record = data[12:]
        data[8:12] = struct.pack("<I", 2)
        with open(path, "wb") as f:
            f.write(bytes(data) + bytes(record))
        with pytest.raises(DuplicateTensorError):
            load_weights(path)

    def test_trailing_bytes(self, tmp_path):
        path = str(tmp_path / "w.qclw")
        save_weights({"x": np.zeros(2)}, path)
        with open(path, "ab") as f:
            f.write(b"\x00")
        with pytest.raises(ValidationError, match="trailing"):
            load_weights(path)


class TestCheckShapes:
    def test_passes_on_match(self, tmp_path):
        path = str(tmp_path / "w.qclw")
        save_weights({"x": np.zeros((2, 3))}, path)
        check_shapes(load_weights(path), [("x", (2, 3))])

    def test_names_first_mismatch(self, tmp_path):
        # weights written for a wide model, read under a narrow config
        wide = init_model(Config(**{**TOY, "d": 64}), 0)
        path = str(tmp_path / "w.qclw")
        save_weights(wide.named_tensors(), path)
        narrow = init_model(Config(**{**TOY, "d": 32}), 0)
        expected = [(k, v.shape) for k, v in narrow.named_tensors()]
        first = next(k for k, v in narrow.named_tensors()
                     if wide.tensors[k].shape != v.shape)
        with pytest.raises(WeightShapeError, match=first.replace(".", r"\.")):
            check_shapes(load_weights(path), expected)

    def test_missing_tensor(self):
        with pytest.raises(WeightShapeError, match="missing"):
            check_shapes({}, [("x", (1,))])
