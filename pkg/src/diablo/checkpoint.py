"""Versioned binary checkpoints: named float64 tensors plus a config snapshot.

Layout (all integers little-endian):
    bytes 0..11   magic b"DIABLOCKPT\\x00\\x00"
    bytes 12..15  format version (u32)
    u64 config length, then canonical JSON (utf-8, sorted keys)
    u32 tensor count, then per tensor:
        u16 name length + utf-8 name
        u8 rank, u32 extent per axis
        float64 payload, little-endian, row-major

Round trips are bit-exact, so checkpoints double as an interchange format.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import FormatError

MAGIC = b"DIABLOCKPT\x00\x00"
VERSION = 1


def save_checkpoint(path: str, named_values, config_dict: dict):
    """Write (name, array) pairs and the config snapshot."""
    blob = json.dumps(config_dict, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        named_values = list(named_values)
        f.write(struct.pack("<I", len(named_values)))
        for name, values in named_values:
            encoded = name.encode("utf-8")
            arr = np.ascontiguousarray(np.asarray(values, dtype=np.float64))
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", arr.ndim))
            for extent in arr.shape:
                f.write(struct.pack("<I", extent))
            f.write(arr.astype("<f8").tobytes())


class _Reader:
    def __init__(self, path: str):
        self.path = path
        with open(path, "rb") as f:
            self.data = f.read()
        self.pos = 0

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.data):
            raise FormatError(f"{self.path}: truncated at offset {self.pos} (need {count} bytes)")
        out = self.data[self.pos:self.pos + count]
        self.pos += count
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: str):
    """Return (config_dict, dict of name -> float64 array)."""
    r = _Reader(path)
    if r.take(len(MAGIC)) != MAGIC:
        raise FormatError(f"{path}: bad magic at offset 0")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    (blob_len,) = r.unpack("<Q")
    try:
        config = json.loads(r.take(blob_len).decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as e:
        raise FormatError(f"{path}: corrupt config block ({e})") from e
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (rank,) = r.unpack("<B")
        shape = tuple(r.unpack("<" + "I" * rank)) if rank else ()
        n_values = int(np.prod(shape)) if rank else 1
        payload = r.take(8 * n_values)
        tensors[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)
    if r.pos != len(r.data):
        raise FormatError(f"{path}: {len(r.data) - r.pos} trailing bytes at offset {r.pos}")
    return config, tensors
