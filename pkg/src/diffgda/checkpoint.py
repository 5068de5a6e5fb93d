"""Binary parameter checkpoints.

Layout: magic `DGDA`, format version u32 LE, then per-tensor records of
(name length u32 LE, UTF-8 name, rank u64 LE, dims u64 LE each, payload
float64 LE) until end of file.
"""
from __future__ import annotations

import struct

import numpy as np

MAGIC = b"DGDA"
VERSION = 1


def save_checkpoint(path, tensors: dict[str, np.ndarray]):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        for name, arr in tensors.items():
            data = np.asarray(arr, dtype=np.float64)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<Q", data.ndim))
            for d in data.shape:
                fh.write(struct.pack("<Q", d))
            fh.write(data.astype("<f8").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    tensors: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        while True:
            head = fh.read(4)
            if not head:
                break
            (name_len,) = struct.unpack("<I", head)
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<Q", fh.read(8))
            dims = struct.unpack(f"<{rank}Q", fh.read(8 * rank)) if rank else ()
            count = int(np.prod(dims)) if rank else 1
            payload = np.frombuffer(fh.read(8 * count), dtype="<f8")
            if payload.size != count:
                raise ValueError(f"truncated payload for tensor {name!r}")
            tensors[name] = payload.reshape(dims).astype(np.float64)
    return tensors
