"""Versioned binary checkpoints.

Layout (little-endian): ``b"PIIG"``, u32 version, u32 length + UTF-8 config
text, u32 record count, then records of (u32 name length, name, u32 rank,
rank x u32 dims, float32 payload). Integers (step counters, seed, iteration)
are stored as 16-bit chunks in float32, which is exact.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"PIIG"
VERSION = 1
_INT_CHUNKS = 4


class CheckpointError(ValueError):
    pass


def encode_int(value: int) -> np.ndarray:
    if not 0 <= value < 1 << (16 * _INT_CHUNKS):
        raise CheckpointError(f"integer {value} out of range")
    return np.array([(value >> (16 * i)) & 0xFFFF for i in range(_INT_CHUNKS)], np.float32)


def decode_int(chunks: np.ndarray) -> int:
    return sum(int(c) << (16 * i) for i, c in enumerate(np.asarray(chunks).reshape(-1)))


def write_records(path, config_text: str, records: dict[str, np.ndarray]) -> None:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    cfg = config_text.encode("utf-8")
    parts += [struct.pack("<I", len(cfg)), cfg, struct.pack("<I", len(records))]
    for name, arr in records.items():
        arr = np.asarray(arr)
        if arr.dtype != np.float32:
            raise CheckpointError(f"record {name!r} must be float32, got {arr.dtype}")
        raw = name.encode("utf-8")
        parts += [struct.pack("<I", len(raw)), raw, struct.pack("<I", arr.ndim)]
        parts += [struct.pack(f"<{arr.ndim}I", *arr.shape), arr.astype("<f4").tobytes()]
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


def read_records(path) -> tuple[str, dict[str, np.ndarray]]:
    buf = Path(path).read_bytes()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError(f"{path}: truncated checkpoint")
        chunk = buf[pos : pos + n]
        pos += n
        return chunk

    def u32() -> int:
        return struct.unpack("<I", take(4))[0]

    if take(4) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version = u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {VERSION}")
    config_text = take(u32()).decode("utf-8")
    records = {}
    for _ in range(u32()):
        name = take(u32()).decode("utf-8")
        rank = u32()
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(dims)) if rank else 1
        records[name] = np.frombuffer(take(4 * count), "<f4").astype(np.float32).reshape(dims)
    if pos != len(buf):
        raise CheckpointError(f"{path}: trailing bytes after last record")
    return config_text, records
