"""Binary model checkpoints.

Layout (all integers little-endian):
  magic "DSGS" | u32 format version | u32 json length | config JSON
  | u32 entry count | entries | u64 payload length | float32 payload
  | u32 CRC-32 of the payload

Each entry: u16 name length, UTF-8 name, u8 ndim, u32 dims, u64 byte
offset into the payload. Parameters and batchnorm running statistics are
both stored, so a round trip reproduces the model bit-exactly.
"""

import json
import struct
import zlib

import numpy as np

from .model import Model, ModelConfig, build_model
from .rng import Rng

MAGIC = b"DSGS"
VERSION = 1


class CheckpointError(Exception):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


class CrcError(CheckpointError):
    pass


def _tensors(model: Model) -> dict:
    arrays = {name: p.data for name, p in model.named_parameters().items()}
    arrays.update(model.named_buffers())
    return arrays


def save_checkpoint(model: Model, path):
    arrays = _tensors(model)
    config_json = json.dumps(model.config.to_dict()).encode("utf-8")

    payload = bytearray()
    entries = []
    for name, arr in arrays.items():
        offset = len(payload)
        payload += np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append((name, arr.shape, offset))

    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(config_json)))
        f.write(config_json)
        f.write(struct.pack("<I", len(entries)))
        for name, shape, offset in entries:
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", len(shape)))
            for d in shape:
                f.write(struct.pack("<I", d))
            f.write(struct.pack("<Q", offset))
        f.write(struct.pack("<Q", len(payload)))
        f.write(bytes(payload))
        f.write(struct.pack("<I", zlib.crc32(bytes(payload)) & 0xFFFFFFFF))


def _read(f, n, what):
    b = f.read(n)
    if len(b) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return b


def read_config(path) -> ModelConfig:
    with open(path, "rb") as f:
        if _read(f, 4, "magic") != MAGIC:
            raise BadMagicError("bad magic: not a checkpoint file")
        (version,) = struct.unpack("<I", _read(f, 4, "version"))
        if version != VERSION:
            raise VersionMismatchError(
                f"checkpoint format version {version}, expected {VERSION}")
        (jlen,) = struct.unpack("<I", _read(f, 4, "config length"))
        cfg = json.loads(_read(f, jlen, "config").decode("utf-8"))
    return ModelConfig.from_dict(cfg)


def load_checkpoint(path, config: ModelConfig | None = None) -> Model:
    with open(path, "rb") as f:
        if _read(f, 4, "magic") != MAGIC:
            raise BadMagicError("bad magic: not a checkpoint file")
        (version,) = struct.unpack("<I", _read(f, 4, "version"))
        if version != VERSION:
            raise VersionMismatchError(
                f"checkpoint format version {version}, expected {VERSION}")
        (jlen,) = struct.unpack("<I", _read(f, 4, "config length"))
        stored_cfg = ModelConfig.from_dict(
            json.loads(_read(f, jlen, "config").decode("utf-8")))
        (nentries,) = struct.unpack("<I", _read(f, 4, "entry count"))
        entries = []
        for _ in range(nentries):
            (nlen,) = struct.unpack("<H", _read(f, 2, "name length"))
            name = _read(f, nlen, "name").decode("utf-8")
            (ndim,) = struct.unpack("<B", _read(f, 1, "ndim"))
            shape = tuple(struct.unpack("<I", _read(f, 4, "dim"))[0]
                          for _ in range(ndim))
            (offset,) = struct.unpack("<Q", _read(f, 8, "offset"))
            entries.append((name, shape, offset))
        (plen,) = struct.unpack("<Q", _read(f, 8, "payload length"))
        payload = _read(f, plen, "payload")
        (crc,) = struct.unpack("<I", _read(f, 4, "crc"))
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise CrcError("payload CRC mismatch")

    model = build_model(config if config is not None else stored_cfg, Rng(0))
    arrays = _tensors(model)
    if set(arrays) != {name for name, _, _ in entries}:
        missing = set(arrays).symmetric_difference(name for name, _, _ in entries)
        raise ShapeMismatchError(
            f"parameter set mismatch between config and checkpoint: {sorted(missing)}")
    for name, shape, offset in entries:
        dst = arrays[name]
        if dst.shape != shape:
            raise ShapeMismatchError(
                f"shape mismatch for parameter {name}: "
                f"config gives {dst.shape}, checkpoint has {shape}")
        nbytes = int(np.prod(shape, dtype=np.int64)) * 4
        src = np.frombuffer(payload, dtype="<f4", count=nbytes // 4,
                            offset=offset).reshape(shape)
        dst[...] = src
    return model
