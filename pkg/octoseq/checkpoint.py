"""
OCTM checkpoint files.

Layout, all little-endian:

- magic `OCTM`, u16 format version, u8 parameter precision (32 or 64)
- config block: u32 layers, heads, width, ff_width, max_positions, num_classes, max_depth;
  f64 dropout; u16 length + UTF-8 scheme text
- u32 record count, then per parameter: u16 name length + UTF-8 name, u8 ndim,
  u32 per dimension, float64 values in C order
- u32 CRC32 of everything before it
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path
from typing import Optional, Union

import numpy as np
import torch
from pydantic import ValidationError

from octoseq.config import ModelConfig
from octoseq.exceptions import (
    CheckpointError,
    CheckpointVersionError,
    ChecksumError,
    ShapeMismatchError,
)
from octoseq.logger import logger
from octoseq.model import OctreeTransformer

OCTM_MAGIC = b"OCTM"
OCTM_VERSION = 1
_PREAMBLE = struct.Struct("<4sHB")
_CONFIG = struct.Struct("<7Id")
_DTYPES = {32: torch.float32, 64: torch.float64}
_CONFIG_FIELDS = (
    "layers",
    "heads",
    "width",
    "ff_width",
    "max_positions",
    "num_classes",
    "max_depth",
)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def unpack(self, fmt: Union[str, struct.Struct]):
        packer = fmt if isinstance(fmt, struct.Struct) else struct.Struct(fmt)
        if self.offset + packer.size > len(self.data):
            raise ChecksumError("checkpoint is truncated")
        values = packer.unpack_from(self.data, self.offset)
        self.offset += packer.size
        return values

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise ChecksumError("checkpoint is truncated")
        chunk = self.data[self.offset : self.offset + size]
        self.offset += size
        return chunk


def checkpoint_bytes(model: OctreeTransformer) -> bytes:
    config = model.config
    precision = 64 if model.dtype == torch.float64 else 32
    scheme = config.scheme.encode()
    parts = [
        _PREAMBLE.pack(OCTM_MAGIC, OCTM_VERSION, precision),
        _CONFIG.pack(*(getattr(config, name) for name in _CONFIG_FIELDS), config.dropout),
        struct.pack("<H", len(scheme)),
        scheme,
    ]
    state = model.state_dict()
    parts.append(struct.pack("<I", len(state)))
    for name, tensor in state.items():
        encoded = name.encode()
        values = tensor.detach().cpu().to(torch.float64).numpy()
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack(f"<B{values.ndim}I", values.ndim, *values.shape))
        parts.append(values.astype("<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(model: OctreeTransformer, path: Union[str, Path]) -> None:
    Path(path).write_bytes(checkpoint_bytes(model))
    logger.info(f"checkpoint written to {path}")


def _read_preamble(reader: _Reader) -> int:
    magic, version, precision = reader.unpack(_PREAMBLE)
    if magic != OCTM_MAGIC:
        raise CheckpointError(f"bad checkpoint magic {magic!r}")
    if version != OCTM_VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version}")
    if precision not in _DTYPES:
        raise CheckpointError(f"unsupported parameter precision {precision}")
    return precision


def _read_config(reader: _Reader) -> ModelConfig:
    *fields, dropout = reader.unpack(_CONFIG)
    (scheme_length,) = reader.unpack("<H")
    try:
        scheme = reader.take(scheme_length).decode()
        return ModelConfig(**dict(zip(_CONFIG_FIELDS, fields)), dropout=dropout, scheme=scheme)
    except (UnicodeDecodeError, ValidationError) as error:
        raise CheckpointError(f"checkpoint holds an invalid model config: {error}") from None


def model_from_bytes(data: bytes, config: Optional[ModelConfig] = None) -> OctreeTransformer:
    """Rebuild a model from OCTM bytes.

    params:
        data: checkpoint contents.
        config: expected architecture; parameter shapes are checked against it. Defaults to
            the config stored in the checkpoint.
    """
    reader = _Reader(data)
    precision = _read_preamble(reader)
    if len(data) < reader.offset + 4:
        raise ChecksumError("checkpoint is truncated")
    (checksum,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) != checksum:
        raise ChecksumError("checkpoint checksum mismatch, the file is truncated or corrupted")
    reader.data = data[:-4]
    stored = _read_config(reader)

    model = OctreeTransformer(config or stored).to(_DTYPES[precision])
    expected = model.state_dict()
    (count,) = reader.unpack("<I")
    loaded = {}
    for _ in range(count):
        (name_length,) = reader.unpack("<H")
        name = reader.take(name_length).decode()
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}I") if ndim else ()
        values = np.frombuffer(reader.take(8 * int(np.prod(shape))), dtype="<f8").reshape(shape)
        if name not in expected or tuple(expected[name].shape) != tuple(shape):
            have = tuple(expected[name].shape) if name in expected else "nothing"
            raise ShapeMismatchError(
                f"parameter {name} has shape {tuple(shape)}, config expects {have}"
            )
        loaded[name] = torch.from_numpy(values.copy()).to(_DTYPES[precision])
    missing = sorted(set(expected) - set(loaded))
    if missing:
        raise ShapeMismatchError(f"checkpoint lacks parameters {missing}")
    model.load_state_dict(loaded)
    return model


def load_checkpoint(
    path: Union[str, Path], config: Optional[ModelConfig] = None
) -> OctreeTransformer:
    model = model_from_bytes(Path(path).read_bytes(), config=config)
    model.eval()
    logger.info(f"checkpoint loaded from {path}")
    return model
