import struct

import numpy as np
import pytest

from app.core.errors import ChecksumMismatch, FormatVersionMismatch, IoFailure
from app.db.checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from app.models.config import ScheduleConfig, TrainerConfig
from app.services.trainer_service import init_state


@pytest.fixture
def state(small_config):
    s = init_state(small_config, TrainerConfig(schedule=ScheduleConfig(start=5, warmup=10)), seed=3)
    s.episode = 17
    s.adam.step = 17
    rng = np.random.default_rng(0)
    for name, p in s.model.params.items():
        s.adam.m[name] = rng.standard_normal(p.data.shape)
        s.adam.v[name] = rng.random(p.data.shape)
    return s


def _assert_same(a, b):
    assert a.episode == b.episode and a.seed == b.seed and a.adam.step == b.adam.step
    assert a.model.config == b.model.config and a.trainer == b.trainer
    assert a.model.dictionary.active_count == b.model.dictionary.active_count
    assert list(a.model.params) == list(b.model.params)
    for name in a.model.params:
        assert a.model.params[name].data.dtype == b.model.params[name].data.dtype
        assert np.array_equal(a.model.params[name].data, b.model.params[name].data)
        assert np.array_equal(a.adam.m[name], b.adam.m[name])
        assert np.array_equal(a.adam.v[name], b.adam.v[name])


def test_roundtrip_is_bitwise(state, tmp_path):
    path = tmp_path / "model.tailck"
    save_checkpoint(state, str(path))
    loaded = load_checkpoint(str(path))
    _assert_same(state, loaded)
    assert loaded.model.dictionary.active_count == 5
    assert path.read_bytes()[:8] == b"TAILCK01"


def test_single_precision_payload(small_config):
    state = init_state(small_config.model_copy(update={"precision": "f32"}), TrainerConfig(), seed=0)
    blob = encode_checkpoint(state)
    loaded = decode_checkpoint(blob)
    _assert_same(state, loaded)
    assert loaded.model.dtype == np.float32
    assert len(blob) < len(encode_checkpoint(init_state(small_config, TrainerConfig(), seed=0)))


def test_flipped_byte_fails_checksum(state):
    blob = bytearray(encode_checkpoint(state))
    blob[-100] ^= 0x01
    with pytest.raises(ChecksumMismatch):
        decode_checkpoint(bytes(blob))


def test_truncated_file_fails_checksum(state):
    blob = encode_checkpoint(state)
    with pytest.raises(ChecksumMismatch):
        decode_checkpoint(blob[:-9])
    with pytest.raises(ChecksumMismatch):
        decode_checkpoint(blob[:10])


def test_bad_magic_and_version(state):
    blob = encode_checkpoint(state)
    with pytest.raises(FormatVersionMismatch):
        decode_checkpoint(b"NOTACKPT" + blob[8:])
    with pytest.raises(FormatVersionMismatch):
        decode_checkpoint(blob[:8] + struct.pack("<I", 99) + blob[12:])


def test_missing_file_is_io_failure(tmp_path):
    with pytest.raises(IoFailure):
        load_checkpoint(str(tmp_path / "absent.tailck"))
