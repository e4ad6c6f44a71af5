import struct

import numpy as np
import pytest

from dcen import checkpoint
from dcen.checkpoint import CheckpointFormatError
from dcen.trainer import train

from conftest import tiny_cfg


@pytest.fixture(scope="module")
def trained(tiny_ds):
    cfg = tiny_cfg(steps=4)
    return train(tiny_ds, cfg), cfg


def test_round_trip_is_lossless_and_byte_stable(trained):
    res, cfg = trained
    state, cfg_back = checkpoint.loads(res.checkpoint)
    assert cfg_back == cfg
    assert state.step == 4 and state.encoders.arch == res.state.encoders.arch
    for name, coll in res.state.encoders.collections().items():
        back = state.encoders.collections()[name]
        assert set(back) == set(coll)
        assert all(np.array_equal(back[k], coll[k]) for k in coll)
    assert state.queue.length == res.state.queue.length
    assert state.queue.cursor == res.state.queue.cursor
    assert np.array_equal(state.queue.buffer, res.state.queue.buffer)
    assert checkpoint.dumps(state, cfg_back) == res.checkpoint


def test_file_helpers(trained, tmp_path):
    res, cfg = trained
    checkpoint.save(tmp_path / "a.ckpt", res.state, cfg)
    assert (tmp_path / "a.ckpt").read_bytes() == res.checkpoint
    state, _ = checkpoint.load(tmp_path / "a.ckpt")
    assert state.step == res.state.step


def test_flipped_payload_byte_is_detected(trained):
    blob = bytearray(trained[0].checkpoint)
    blob[len(blob) // 2] ^= 0x01
    with pytest.raises(CheckpointFormatError, match="digest"):
        checkpoint.loads(bytes(blob))


def test_tampered_header_is_detected(trained):
    blob = trained[0].checkpoint
    tampered = blob.replace(b'"step":4', b'"step":9', 1)
    assert tampered != blob
    with pytest.raises(CheckpointFormatError):
        checkpoint.loads(tampered)


def test_bad_magic_and_version(trained):
    blob = trained[0].checkpoint
    with pytest.raises(CheckpointFormatError, match="magic"):
        checkpoint.loads(b"NOTACKPT" + blob[8:])
    with pytest.raises(CheckpointFormatError, match="version 7"):
        checkpoint.loads(blob[:8] + struct.pack("<I", 7) + blob[12:])
    with pytest.raises(CheckpointFormatError):
        checkpoint.loads(b"")


def test_truncation_is_detected(trained):
    with pytest.raises(CheckpointFormatError):
        checkpoint.loads(trained[0].checkpoint[:-100])
