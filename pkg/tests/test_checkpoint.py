import struct

import numpy as np
import pytest

from gated_streams import checkpoint as ckpt
from gated_streams.config import GatingMode, ModelConfig
from gated_streams.model import GatedStreamTransformer

CFG = ModelConfig(H=8, W=8, Q=4, K=8, A=2, L=1, n_st=2, n_lt=2, s=2, num_classes=3)


@pytest.mark.parametrize("mode", list(GatingMode))
def test_round_trip_is_bitwise(mode, tmp_path):
    model = GatedStreamTransformer(CFG.replace(gating_mode=mode), seed=4)
    first = ckpt.save(tmp_path / "a.glsc", model).read_bytes()
    loaded = ckpt.load(tmp_path / "a.glsc")
    assert loaded.config == model.config
    assert ckpt.save(tmp_path / "b.glsc", loaded).read_bytes() == first
    for name, p in model.params.items():
        assert p.data.tobytes() == loaded.params[name].data.tobytes()


def test_loaded_model_predicts_identically():
    model = GatedStreamTransformer(CFG, seed=1)
    frames = np.random.default_rng(0).random((2, 2, 8, 8, 3))
    again = ckpt.loads(ckpt.dumps(model.config, model.params))
    assert again(frames, frames).data.tobytes() == model(frames, frames).data.tobytes()


def test_bad_magic_at_offset_zero():
    buf = bytearray(ckpt.dumps(CFG, GatedStreamTransformer(CFG).params))
    buf[0] = ord("X")
    with pytest.raises(ckpt.CheckpointError) as err:
        ckpt.loads(bytes(buf))
    assert err.value.offset == 0 and "byte 0" in str(err.value)


def test_bad_version_at_offset_four():
    buf = bytearray(ckpt.dumps(CFG, GatedStreamTransformer(CFG).params))
    buf[4:8] = struct.pack("<I", 99)
    with pytest.raises(ckpt.CheckpointError) as err:
        ckpt.loads(bytes(buf))
    assert err.value.offset == 4


def test_truncation_reports_position():
    buf = ckpt.dumps(CFG, GatedStreamTransformer(CFG).params)
    with pytest.raises(ckpt.CheckpointError, match="truncated") as err:
        ckpt.loads(buf[:-5])
    assert 0 < err.value.offset < len(buf)


def test_trailing_bytes_rejected():
    buf = ckpt.dumps(CFG, GatedStreamTransformer(CFG).params)
    with pytest.raises(ckpt.CheckpointError, match="trailing"):
        ckpt.loads(buf + b"\0")


def test_shape_mismatch_names_the_tensor():
    params = GatedStreamTransformer(CFG).params
    other = CFG.replace(K=16)
    # a config that disagrees with the stored tensors
    buf = ckpt.dumps(other, params)
    with pytest.raises(ckpt.CheckpointError, match="shape"):
        ckpt.loads(buf)
