"""VQEC checkpoint files.

Layout (all integers little-endian)::

    b"VQEC"  u16 version  u32 header_len  header (UTF-8 JSON: {"config": ..., "meta": ...})
    u32 record_count
    per record: u16 name_len, name (UTF-8), u8 ndim, ndim x u32 dims, float32 data (C order)
"""

import json
import logging
import os
import struct
from dataclasses import dataclass, field
from typing import BinaryIO

import numpy as np
from pydantic import ValidationError

from .errors import CheckpointError
from .network import init_params
from .schemas import ModelConfig
from .tensor import Tensor

logger = logging.getLogger("vqe.checkpoint")

MAGIC = b"VQEC"
VERSION = 1


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict
    meta: dict = field(default_factory=dict)


def _write_record(handle: BinaryIO, name: str, data: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    handle.write(struct.pack("<H", len(encoded)))
    handle.write(encoded)
    handle.write(struct.pack("<B", data.ndim))
    handle.write(struct.pack(f"<{data.ndim}I", *data.shape))
    handle.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def save_checkpoint(path, config: ModelConfig, params: dict, meta: dict | None = None) -> None:
    """Write atomically: a temporary sibling file is renamed over ``path``."""
    header = json.dumps({"config": config.model_dump(), "meta": meta or {}}, sort_keys=True).encode("utf-8")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as handle:
        handle.write(MAGIC)
        handle.write(struct.pack("<HI", VERSION, len(header)))
        handle.write(header)
        handle.write(struct.pack("<I", len(params)))
        for name, p in params.items():
            _write_record(handle, name, p.data)
    os.replace(tmp, path)
    logger.debug(f"saved {len(params)} tensors to {path}")


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(f"{self.path}: truncated at byte {self.pos}")
        chunk = self.blob[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "rb") as handle:
            blob = handle.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc.strerror}") from exc

    reader = _Reader(blob, path)
    if reader.take(4) != MAGIC:
        raise CheckpointError(f"{path}: not a VQEC checkpoint")
    version, header_len = reader.unpack("<HI")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    try:
        header = json.loads(reader.take(header_len).decode("utf-8"))
        config = ModelConfig(**header["config"])
    except (ValueError, KeyError, ValidationError) as exc:
        raise CheckpointError(f"{path}: bad header ({exc})") from exc

    params = {}
    (count,) = reader.unpack("<I")
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}I")
        size = int(np.prod(shape)) * 4
        data = np.frombuffer(reader.take(size), dtype="<f4").reshape(shape).astype(np.float32)
        params[name] = Tensor(data, requires_grad=True, dtype=np.float32, name=name)
    if reader.pos != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - reader.pos} trailing bytes")

    _check_layout(path, config, params)
    return Checkpoint(config=config, params=params, meta=header.get("meta", {}))


def _check_layout(path, config: ModelConfig, params: dict) -> None:
    expected = {name: p.shape for name, p in init_params(config).items()}
    missing = sorted(set(expected) - set(params))
    extra = sorted(set(params) - set(expected))
    if missing or extra:
        raise CheckpointError(f"{path}: parameter set does not match config (missing {missing[:3]}, unexpected {extra[:3]})")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise CheckpointError(f"{path}: {name} has shape {params[name].shape}, config needs {shape}")
