"""Versioned binary checkpoint files.

Layout: magic, format version, vocabulary content hash, JSON config block,
then per-parameter records (dotted name, frozen flag, shape, raw
little-endian float32 data). The loader refuses version or vocab-hash
mismatches so a model can never silently run against the wrong token map.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"S2MCKPT\x00"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


def save_checkpoint(path, params: dict[str, np.ndarray], config: dict,
                    vocab_hash: str, frozen: set[str] | None = None) -> None:
    frozen = frozen or set()
    vocab_bytes = vocab_hash.encode("ascii")
    if len(vocab_bytes) != 64:
        raise CheckpointError("vocab hash must be a 64-char sha256 hex digest")
    config_bytes = json.dumps(config, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(vocab_bytes)
        fh.write(struct.pack("<I", len(config_bytes)))
        fh.write(config_bytes)
        fh.write(struct.pack("<I", len(params)))
        for name, array in params.items():
            array = np.ascontiguousarray(array, dtype="<f4")
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<B", 1 if name in frozen else 0))
            fh.write(struct.pack("<B", array.ndim))
            for dim in array.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(array.tobytes())


def load_checkpoint(path, expected_vocab_hash: str | None = None):
    """Returns (params, config, vocab_hash, frozen set)."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    pos = 8
    (version,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {version}, expected {FORMAT_VERSION}")
    vocab_hash = data[pos:pos + 64].decode("ascii")
    pos += 64
    if expected_vocab_hash is not None and vocab_hash != expected_vocab_hash:
        raise CheckpointError(
            f"{path}: vocabulary hash mismatch "
            f"({vocab_hash[:12]}… != {expected_vocab_hash[:12]}…)")
    (config_len,) = struct.unpack_from("<I", data, pos)
    pos += 4
    config = json.loads(data[pos:pos + config_len].decode("utf-8"))
    pos += config_len
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    params: dict[str, np.ndarray] = {}
    frozen: set[str] = set()
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + name_len].decode("utf-8")
        pos += name_len
        is_frozen, ndim = struct.unpack_from("<BB", data, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        array = np.frombuffer(data, dtype="<f4", count=size, offset=pos)
        pos += 4 * size
        params[name] = array.reshape(shape).copy()
        if is_frozen:
            frozen.add(name)
    if pos != len(data):
        raise CheckpointError(f"{path}: trailing bytes after parameters")
    return params, config, vocab_hash, frozen
