import struct

import numpy as np
import pytest

from deepmot import checkpoint
from deepmot.checkpoint import CheckpointError, dumps, loads
from deepmot.dhn import VARIANTS, DhnConfig, DhnModel, init_params


class TestNtf1:
    def test_layout_of_a_single_tensor(self):
        buf = dumps({"w": np.array([[1.0, 2.0]], dtype=np.float32)})
        expected = (b"NTF1" + struct.pack("<I", 1) + struct.pack("<H", 1) + b"w"
                    + struct.pack("<B", 2) + struct.pack("<2I", 1, 2) + struct.pack("<2f", 1.0, 2.0))
        assert buf == expected

    def test_round_trip_is_bit_exact(self, rng):
        tensors = {"a": rng.normal(size=(3, 4)).astype(np.float32), "scalar": np.float32(2.5),
                   "vec": rng.normal(size=7).astype(np.float32), "ünï": np.zeros((2, 0, 3), np.float32)}
        meta = {"variant": "seq_gru", "head": [4, 1]}
        back, m = loads(dumps(tensors, meta))
        assert m == meta
        assert list(back) == list(tensors)
        for k in tensors:
            assert back[k].shape == np.shape(tensors[k])
            assert back[k].tobytes() == np.asarray(tensors[k]).tobytes()
        assert dumps(back, m) == dumps(tensors, meta)

    def test_special_values_survive(self):
        arr = np.array([np.inf, -0.0, 1e-45, np.finfo(np.float32).max], dtype=np.float32)
        back, _ = loads(dumps({"x": arr}))
        assert back["x"].tobytes() == arr.tobytes()

    def test_meta_is_first_tensor(self):
        buf = dumps({"w": np.ones(1, np.float32)}, {"k": 1})
        (nlen,) = struct.unpack("<H", buf[8:10])
        assert buf[10:10 + nlen] == b"__meta__"

    @pytest.mark.parametrize("buf", [b"NTF2\x00\x00\x00\x00", b"NTF1\x01\x00\x00\x00\x01\x00"])
    def test_bad_input(self, buf):
        with pytest.raises(CheckpointError):
            loads(buf)

    def test_trailing_bytes(self):
        with pytest.raises(CheckpointError):
            loads(dumps({"w": np.ones(2, np.float32)}) + b"\x00")

    def test_truncated(self):
        buf = dumps({"w": np.ones(5, np.float32)})
        with pytest.raises(CheckpointError):
            loads(buf[:-3])


class TestDhnCheckpoint:
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_model_round_trip(self, tmp_path, variant):
        cfg = DhnConfig(variant, hidden=3, head=(5, 2, 1))
        model = DhnModel(cfg, init_params(cfg, seed=1))
        model.save(tmp_path / "m.ntf")
        back = DhnModel.load(tmp_path / "m.ntf")
        assert back.cfg == cfg
        assert back.checksum() == model.checksum()
        assert (tmp_path / "m.ntf").read_bytes() == checkpoint.dumps(back.params, cfg.to_meta())
        D = np.random.default_rng(0).random((3, 4))
        assert np.array_equal(back.predict(D), model.predict(D))

    def test_missing_meta(self, tmp_path):
        checkpoint.save(tmp_path / "x.ntf", {"w": np.ones(1)})
        with pytest.raises(CheckpointError):
            DhnModel.load(tmp_path / "x.ntf")
