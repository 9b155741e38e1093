"""Versioned little-endian named-tensor archive.

Layout::

    b"TWNS" | u32 version=1 | u32 count |
    count x ( u32 name_len | name (utf-8) | u8 dtype (0=f32, 1=f64) |
              u8 rank | rank x u64 dims | raw little-endian elements )
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .models import build

MAGIC = b"TWNS"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class CheckpointError(ValueError):
    pass


class CorruptHeaderError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


def encode(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype not in _TAGS:
            raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        tag = _TAGS[arr.dtype]
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<BB", tag, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes())
    return b"".join(parts)


def decode(buf: bytes) -> dict[str, np.ndarray]:
    if len(buf) < 12 or buf[:4] != MAGIC:
        raise CorruptHeaderError("bad magic; not a TWNS checkpoint")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise CorruptHeaderError(f"unsupported checkpoint version {version}")
    pos = 12
    out: dict[str, np.ndarray] = {}
    for index in range(count):
        name = f"<tensor #{index}>"

        def need(n: int) -> None:
            if pos + n > len(buf):
                raise TruncatedCheckpointError(f"file truncated while reading {name}")

        need(4)
        (nlen,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        need(nlen)
        try:
            name = buf[pos : pos + nlen].decode("utf-8")
        except UnicodeDecodeError:
            raise CorruptHeaderError(f"tensor #{index} has an invalid name") from None
        pos += nlen
        need(2)
        tag, rank = struct.unpack_from("<BB", buf, pos)
        pos += 2
        if tag not in _DTYPES:
            raise CorruptHeaderError(f"{name}: unknown dtype tag {tag}")
        need(8 * rank)
        shape = struct.unpack_from(f"<{rank}Q", buf, pos)
        pos += 8 * rank
        dtype = _DTYPES[tag]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        need(nbytes)
        if name in out:
            raise CorruptHeaderError(f"duplicate tensor name {name}")
        arr = np.frombuffer(buf, dtype=dtype, count=nbytes // dtype.itemsize, offset=pos).reshape(shape)
        out[name] = arr.astype(dtype.newbyteorder("="), copy=True)
        pos += nbytes
    if pos != len(buf):
        raise CorruptHeaderError(f"{len(buf) - pos} trailing bytes after last tensor")
    return out


def save(tensors: Mapping[str, np.ndarray], path) -> None:
    Path(path).write_bytes(encode(tensors))


def load(path) -> dict[str, np.ndarray]:
    return decode(Path(path).read_bytes())


def validate_shapes(tensors: Mapping[str, np.ndarray], expected: Mapping[str, tuple[int, ...]]) -> None:
    """Raise :class:`ShapeMismatchError` unless every expected name is present with its shape."""
    for name, shape in expected.items():
        if name not in tensors:
            raise ShapeMismatchError(f"shape mismatch: checkpoint has no tensor {name}")
        if tuple(tensors[name].shape) != tuple(shape):
            raise ShapeMismatchError(f"{name}: checkpoint shape {tensors[name].shape}, expected {tuple(shape)}")


def save_checkpoint(model, path, extra: Mapping[str, np.ndarray] | None = None) -> None:
    tensors = dict(model.state_dict())
    if extra:
        tensors.update(extra)
    save(tensors, path)


def load_checkpoint(path, config=None) -> dict[str, np.ndarray]:
    """Read a checkpoint; with ``config`` also check every parameter shape against it."""
    tensors = load(path)
    if config is not None:
        expected = {name: p.shape for name, p in build(config, seed=0).named_parameters()}
        validate_shapes(tensors, expected)
    return tensors
