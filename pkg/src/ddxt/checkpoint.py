"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"DDXT"  u32 version
    4 x [u32 length, UTF-8 bytes]   model config JSON, encoder vocab, decoder vocab, state JSON
    u32 entry count
    entries: u16 name length, name, u8 dtype code, u8 rank, rank x u32 dims, u64 offset
    raw array data; each entry's offset is relative to the start of this section

The state JSON carries the epoch counter, optimizer step/hyperparameters, the
generator state and any free-form metadata. Optimizer moments are stored as
array entries named ``adam.m/<param>`` and ``adam.v/<param>``.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError, CorpusError, DimensionError, ParameterError, UnsupportedVersionError
from .model import ModelConfig, ModelParams
from .optim import Adam, AdamState
from .tokenizer import Vocabulary

MAGIC = b"DDXT"
VERSION = 1
DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i8")}
_CODE_FOR = {np.dtype(v).str: k for k, v in DTYPE_CODES.items()}


@dataclass
class Checkpoint:
    config: ModelConfig
    enc_vocab: Vocabulary
    dec_vocab: Vocabulary
    params: dict[str, np.ndarray]
    optimizer: Adam | None = None
    epoch: int = 0
    rng_state: dict | None = None
    meta: dict = field(default_factory=dict)

    def model_params(self, requires_grad: bool = False) -> ModelParams:
        return ModelParams.from_arrays(self.params, requires_grad=requires_grad)


def _block(data: bytes) -> bytes:
    return struct.pack("<I", len(data)) + data


def _entry(name: str, arr: np.ndarray, offset: int) -> bytes:
    code = _CODE_FOR.get(arr.dtype.newbyteorder("<").str)
    if code is None:
        raise CheckpointError(f"cannot store array {name!r} of dtype {arr.dtype}")
    raw = name.encode("utf-8")
    return (struct.pack("<H", len(raw)) + raw + struct.pack("<BB", code, arr.ndim)
            + struct.pack(f"<{arr.ndim}I", *arr.shape) + struct.pack("<Q", offset))


def dumps(ckpt: Checkpoint) -> bytes:
    arrays = dict(ckpt.params)
    state = {"epoch": ckpt.epoch, "rng_state": ckpt.rng_state, "meta": ckpt.meta, "optimizer": None}
    if ckpt.optimizer is not None:
        opt = ckpt.optimizer
        state["optimizer"] = {"beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps,
                              "steps": {n: s.t for n, s in opt.states.items()}}
        for name, s in opt.states.items():
            arrays[f"adam.m/{name}"] = s.m
            arrays[f"adam.v/{name}"] = s.v

    header = bytearray(MAGIC + struct.pack("<I", VERSION))
    header += _block(json.dumps(ckpt.config.to_dict(), sort_keys=True).encode("utf-8"))
    header += _block(ckpt.enc_vocab.to_text().encode("utf-8"))
    header += _block(ckpt.dec_vocab.to_text().encode("utf-8"))
    header += _block(json.dumps(state, sort_keys=True).encode("utf-8"))
    header += struct.pack("<I", len(arrays))
    chunks, offset = [], 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype=np.asarray(arr).dtype.newbyteorder("<"))
        header += _entry(name, arr, offset)
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    return bytes(header) + b"".join(chunks)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def block(self) -> bytes:
        (n,) = self.unpack("<I")
        return self.take(n)


def loads(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise CheckpointError("bad magic: not a DDXT checkpoint")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported checkpoint version {version} (reader handles {VERSION})")
    try:
        config = ModelConfig.from_dict(json.loads(r.block().decode("utf-8")))
        enc_vocab = Vocabulary.from_text(r.block().decode("utf-8"))
        dec_vocab = Vocabulary.from_text(r.block().decode("utf-8"))
        state = json.loads(r.block().decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError, TypeError, ParameterError, CorpusError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None

    (count,) = r.unpack("<I")
    entries = []
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        code, rank = r.unpack("<BB")
        if code not in DTYPE_CODES:
            raise CheckpointError(f"{name}: unknown dtype code {code}")
        dims = r.unpack(f"<{rank}I") if rank else ()
        (offset,) = r.unpack("<Q")
        entries.append((name, DTYPE_CODES[code], tuple(dims), offset))

    data = memoryview(buf)[r.pos:]
    arrays, expected_offset = {}, 0
    for name, dtype, dims, offset in entries:
        nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
        if offset != expected_offset:
            raise CheckpointError(f"{name}: offset {offset} breaks the contiguous layout")
        if offset + nbytes > len(data):
            raise CheckpointError("checkpoint truncated inside array data")
        arrays[name] = np.frombuffer(data[offset:offset + nbytes], dtype=dtype).reshape(dims).astype(
            dtype.newbyteorder("="))
        expected_offset = offset + nbytes
    if expected_offset != len(data):
        raise CheckpointError(f"{len(data) - expected_offset} trailing bytes after array data")

    params = {n: a for n, a in arrays.items() if not n.startswith("adam.")}
    try:
        ModelParams.from_arrays(params).check_against(config)
    except DimensionError as exc:
        raise CheckpointError(f"parameters do not match embedded config: {exc}") from None
    if len(enc_vocab) != config.enc_vocab_size or len(dec_vocab) != config.dec_vocab_size:
        raise CheckpointError("vocabulary sizes do not match embedded config")

    optimizer = None
    try:
        if state.get("optimizer") is not None:
            o = state["optimizer"]
            optimizer = Adam(o["beta1"], o["beta2"], o["eps"])
            for name, t in o["steps"].items():
                optimizer.states[name] = AdamState(arrays[f"adam.m/{name}"], arrays[f"adam.v/{name}"], t,
                                                   o["beta1"], o["beta2"], o["eps"])
        epoch = int(state["epoch"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"corrupt checkpoint state block: {exc!r}") from None
    return Checkpoint(config, enc_vocab, dec_vocab, params, optimizer, epoch,
                      state.get("rng_state"), state.get("meta") or {})


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    """Write atomically: a partial file never replaces an existing checkpoint."""
    path = Path(path)
    payload = dumps(ckpt)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> Checkpoint:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    return loads(buf)

