import struct

import numpy as np
import pytest

from ddxt.checkpoint import Checkpoint, dumps, load_checkpoint, loads, save_checkpoint
from ddxt.errors import CheckpointError, UnsupportedVersionError
from ddxt.model import forward
from ddxt.optim import Adam
from ddxt.tensor import backward
from ddxt.training import TrainState


@pytest.fixture
def ckpt(tiny_cfg, tiny_params, vocabs, tokenized):
    b = tokenized.subset(slice(0, 4))
    out = forward(tiny_params, tiny_cfg, b.enc_ids, b.dec_input)
    backward(out.cls_logits.sum())
    opt = Adam()
    opt.step(tiny_params, 1e-3)
    rng = np.random.default_rng(3)
    return Checkpoint(tiny_cfg, *vocabs, tiny_params.arrays(), opt, 4, rng.bit_generator.state, {"note": "x"})


def test_round_trip_is_exact(tmp_path, ckpt, tokenized):
    save_checkpoint(tmp_path / "a.ckpt", ckpt)
    back = load_checkpoint(tmp_path / "a.ckpt")
    assert back.config == ckpt.config and back.enc_vocab == ckpt.enc_vocab and back.dec_vocab == ckpt.dec_vocab
    assert back.epoch == 4 and back.meta == {"note": "x"} and back.rng_state == ckpt.rng_state
    for n, a in ckpt.params.items():
        assert back.params[n].dtype == a.dtype and np.array_equal(back.params[n], a)
    for n, s in ckpt.optimizer.states.items():
        t = back.optimizer.states[n]
        assert t.t == s.t and np.array_equal(t.m, s.m) and np.array_equal(t.v, s.v)
    b = tokenized.subset(slice(0, 4))
    x = forward(ckpt.model_params(), ckpt.config, b.enc_ids, b.dec_input)
    y = forward(back.model_params(), back.config, b.enc_ids, b.dec_input)
    assert np.array_equal(x.seq_logits.data, y.seq_logits.data)
    assert np.array_equal(x.cls_logits.data, y.cls_logits.data)


def test_header_layout(ckpt):
    buf = dumps(ckpt)
    assert buf[:4] == b"DDXT"
    assert struct.unpack("<I", buf[4:8]) == (1,)


def test_serialization_is_deterministic(ckpt):
    assert dumps(ckpt) == dumps(ckpt)


@pytest.mark.parametrize("cut", [3, 10, 200, -1])
def test_truncated_file_fails(ckpt, cut):
    buf = dumps(ckpt)
    with pytest.raises(CheckpointError):
        loads(buf[:cut])


def test_trailing_bytes_fail(ckpt):
    with pytest.raises(CheckpointError, match="trailing"):
        loads(dumps(ckpt) + b"\0")


def test_version_bump_is_unsupported(ckpt):
    buf = bytearray(dumps(ckpt))
    buf[4:8] = struct.pack("<I", 2)
    with pytest.raises(UnsupportedVersionError):
        loads(bytes(buf))


def test_bad_magic(ckpt):
    with pytest.raises(CheckpointError, match="magic"):
        loads(b"NOPE" + dumps(ckpt)[4:])


def test_shape_mismatch_is_rejected(ckpt):
    params = dict(ckpt.params)
    params["head.b"] = np.zeros(3, dtype=np.float32)
    bad = Checkpoint(ckpt.config, ckpt.enc_vocab, ckpt.dec_vocab, params)
    with pytest.raises(CheckpointError, match="head.b"):
        loads(dumps(bad))


def test_failed_save_keeps_previous_file(tmp_path, ckpt):
    path = tmp_path / "a.ckpt"
    save_checkpoint(path, ckpt)
    good = path.read_bytes()
    broken = Checkpoint(ckpt.config, ckpt.enc_vocab, ckpt.dec_vocab, {"x": np.array(["s"])})
    with pytest.raises(CheckpointError):
        save_checkpoint(path, broken)
    assert path.read_bytes() == good
    assert [p.name for p in tmp_path.iterdir()] == ["a.ckpt"]


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nope.ckpt")


def test_train_state_restores_generator(ckpt):
    state = TrainState.from_checkpoint(ckpt)
    expected = np.random.default_rng(3).random(3)
    assert np.array_equal(state.rng.random(3), expected)
