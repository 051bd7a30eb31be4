# app/db/checkpoint.py
"""
Checkpoint file:

    b"TAILCK01" | u32 version | u32 header length | JSON header | payload | u32 CRC32

All integers little-endian. The payload concatenates every tensor listed in
the header (parameters, then Adam first and second moments) in the state's
dtype. The CRC covers every byte before it.
"""
import os
import struct
import zlib
from typing import List, Literal, Tuple

import numpy as np
from pydantic import BaseModel

from app.core.config import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from app.core.errors import ChecksumMismatch, FormatVersionMismatch, IoFailure
from app.models.config import ModelConfig, TrainerConfig
from app.models.state import AdamState, TailModel, TrainerState
from app.nn.tensor import parameter
from app.utiles.logger import get_logger

logger = get_logger(__name__)

_PREFIX = struct.Struct("<8sII")
_CRC = struct.Struct("<I")


class TensorEntry(BaseModel):
    name: str
    kind: Literal["param", "adam_m", "adam_v"]
    shape: Tuple[int, ...]


class CheckpointHeader(BaseModel):
    model: ModelConfig
    trainer: TrainerConfig
    seed: int
    episode: int
    active_count: int
    adam_step: int
    dtype: Literal["<f4", "<f8"]
    tensors: List[TensorEntry]


def _entries(state: TrainerState):
    for name, p in state.model.params.items():
        yield TensorEntry(name=name, kind="param", shape=p.data.shape), p.data
    for name in state.model.params:
        yield TensorEntry(name=name, kind="adam_m", shape=state.adam.m[name].shape), state.adam.m[name]
    for name in state.model.params:
        yield TensorEntry(name=name, kind="adam_v", shape=state.adam.v[name].shape), state.adam.v[name]


def encode_checkpoint(state: TrainerState) -> bytes:
    dtype = "<f4" if state.model.dtype == np.float32 else "<f8"
    entries, arrays = zip(*_entries(state))
    header = CheckpointHeader(
        model=state.model.config,
        trainer=state.trainer,
        seed=state.seed,
        episode=state.episode,
        active_count=state.model.dictionary.active_count,
        adam_step=state.adam.step,
        dtype=dtype,
        tensors=list(entries),
    ).model_dump_json().encode("utf-8")
    payload = b"".join(np.ascontiguousarray(a, dtype=dtype).tobytes() for a in arrays)
    body = _PREFIX.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(header)) + header + payload
    return body + _CRC.pack(zlib.crc32(body))


def decode_checkpoint(blob: bytes) -> TrainerState:
    if len(blob) < _PREFIX.size + _CRC.size:
        raise ChecksumMismatch("checkpoint is truncated")
    magic, version, header_len = _PREFIX.unpack_from(blob, 0)
    if magic != CHECKPOINT_MAGIC:
        raise FormatVersionMismatch(f"not a checkpoint (magic {magic!r})")
    if version != CHECKPOINT_VERSION:
        raise FormatVersionMismatch(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    body, (crc,) = blob[:-_CRC.size], _CRC.unpack_from(blob, len(blob) - _CRC.size)
    if zlib.crc32(body) != crc:
        raise ChecksumMismatch("checkpoint CRC32 does not match its contents")

    start = _PREFIX.size
    header = CheckpointHeader.model_validate_json(body[start:start + header_len])
    dtype = np.dtype(header.dtype)
    offset = start + header_len
    tensors = {"param": {}, "adam_m": {}, "adam_v": {}}
    for entry in header.tensors:
        count = int(np.prod(entry.shape, dtype=np.int64))
        arr = np.frombuffer(body, dtype=dtype, count=count, offset=offset).reshape(entry.shape)
        tensors[entry.kind][entry.name] = arr.astype(dtype.newbyteorder("="), copy=True)
        offset += count * dtype.itemsize
    if offset != len(body):
        raise ChecksumMismatch("checkpoint payload length does not match its header")

    params = {name: parameter(arr, arr.dtype) for name, arr in tensors["param"].items()}
    model = TailModel(header.model, params, header.active_count)
    adam = AdamState(params)
    adam.m, adam.v, adam.step = tensors["adam_m"], tensors["adam_v"], header.adam_step
    return TrainerState(model, header.trainer, header.seed, adam=adam, episode=header.episode)


def save_checkpoint(state: TrainerState, path: str) -> None:
    blob = encode_checkpoint(state)
    try:
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        with open(path, "wb") as fh:
            fh.write(blob)
    except OSError as e:
        logger.exception("Failed to write checkpoint %s", path)
        raise IoFailure(f"cannot write checkpoint {path}: {e}") from e
    logger.info("Checkpoint saved: %s (%s bytes, episode %s)", path, len(blob), state.episode)


def load_checkpoint(path: str) -> TrainerState:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as e:
        logger.error("Failed to read checkpoint %s: %s", path, e)
        raise IoFailure(f"cannot read checkpoint {path}: {e}") from e
    state = decode_checkpoint(blob)
    logger.info("Checkpoint loaded: %s (episode %s)", path, state.episode)
    return state
