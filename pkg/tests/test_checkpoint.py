import numpy as np
import pytest

from crispedge.checkpoint import MAGIC, CheckpointError, load_arrays, save_arrays
from crispedge.network import LUSNet, NetConfig


def test_round_trip_preserves_order_and_bits(tmp_path, rng):
    arrays = {"b": rng.normal(size=(2, 3)), "a": np.array(3.5), "c.ä": rng.normal(size=(1, 2, 3, 4))}
    path = tmp_path / "x.ckpt"
    save_arrays(path, arrays)
    loaded = load_arrays(path)
    assert list(loaded) == list(arrays)
    for k in arrays:
        assert loaded[k].shape == np.shape(arrays[k])
        np.testing.assert_array_equal(loaded[k], arrays[k])
    raw = path.read_bytes()
    assert raw[:4] == MAGIC and raw[4] == 1


@pytest.mark.parametrize("blob", [b"", b"XXXX\x01\x00\x00\x00\x00", MAGIC + b"\x09\x00\x00\x00\x00", MAGIC + b"\x01\x02\x00\x00\x00"])
def test_corrupt_files_raise(tmp_path, blob):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(blob)
    with pytest.raises(CheckpointError):
        load_arrays(path)


def test_model_round_trip(tmp_path, rng):
    cfg = NetConfig(stage_widths=(8, 16), decoder_width=4)
    a, b = LUSNet(cfg, seed=1), LUSNet(cfg, seed=2)
    a.save(tmp_path / "m.ckpt")
    b.load(tmp_path / "m.ckpt")
    x = rng.random((1, 3, 16, 16))
    np.testing.assert_array_equal(a.predict(x), b.predict(x))


def test_model_mismatch_raises(tmp_path):
    LUSNet(NetConfig(stage_widths=(8, 16), decoder_width=4)).save(tmp_path / "m.ckpt")
    with pytest.raises(CheckpointError):
        LUSNet(NetConfig(stage_widths=(8, 16), decoder_width=8)).load(tmp_path / "m.ckpt")
