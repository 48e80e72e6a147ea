"""Versioned binary checkpoint for model parameters.

Layout: 8-byte magic, u32 version, 32-byte sha256 of the canonical
config JSON, u32 tensor count, then per tensor: u16 name length, utf-8
name, u8 rank, u32 dims, float64 little-endian values.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError
from .models import ModelConfig, ModelParams, init_params

MAGIC = b"CMILCKPT"
VERSION = 1


def save_checkpoint(params: ModelParams, path: str | Path) -> Path:
    path = Path(path)
    chunks = [MAGIC, struct.pack("<I", VERSION), params.config.digest()]
    names = params.names()
    chunks.append(struct.pack("<I", len(names)))
    for name in names:
        data = params.tensors[name].data
        encoded = name.encode()
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.astype("<f8").tobytes())
    path.write_bytes(b"".join(chunks))
    return path


def load_checkpoint(path: str | Path, cfg: ModelConfig) -> ModelParams:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", raw, 8)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    digest = raw[12:44]
    if digest != cfg.digest():
        raise ConfigError(f"{path}: checkpoint was written for a different model config")
    (count,) = struct.unpack_from("<I", raw, 44)
    offset = 48
    values: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        name = raw[offset : offset + name_len].decode()
        offset += name_len
        (rank,) = struct.unpack_from("<B", raw, offset)
        offset += 1
        shape = struct.unpack_from(f"<{rank}I", raw, offset)
        offset += 4 * rank
        n = int(np.prod(shape)) if rank else 1
        values[name] = np.frombuffer(raw, dtype="<f8", count=n, offset=offset).reshape(shape).copy()
        offset += 8 * n
    params = init_params(cfg, seed=0)
    if set(values) != set(params.tensors):
        raise FormatError(f"{path}: tensor names do not match the model config")
    params.load_values(values)
    return params
