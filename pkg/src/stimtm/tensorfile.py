"""Binary tensor files.

Layout (all little-endian)::

    b"STTK" | u32 version | u32 rank | rank x u32 dims | float32 payload

The payload is row-major with channels innermost.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"STTK"
VERSION = 1


def encode_tensor(array) -> bytes:
    arr = np.asarray(array, dtype="<f4")  # ascontiguousarray would promote 0-d to 1-d
    head = MAGIC + struct.pack("<II", VERSION, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes(order="C")


def decode_tensor(blob: bytes) -> np.ndarray:
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise ValueError("not a token tensor file (bad magic)")
    version, rank = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise ValueError(f"unsupported tensor file version {version}")
    dims = struct.unpack_from(f"<{rank}I", blob, 12)
    offset = 12 + 4 * rank
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    if len(blob) - offset != 4 * count:
        raise ValueError(f"payload is {len(blob) - offset} bytes, expected {4 * count}")
    return np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(dims).copy()


def write_tensor(path, array) -> None:
    Path(path).write_bytes(encode_tensor(array))


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


def export_weights(encoder, directory) -> list[Path]:
    """Write one tensor file per named weight matrix."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, arr in sorted(encoder.named_weights().items()):
        p = directory / f"{name}.sttk"
        write_tensor(p, arr)
        paths.append(p)
    return paths


def import_weights(encoder, directory):
    """Return a copy of ``encoder`` with every ``*.sttk`` weight in ``directory`` loaded."""
    weights = {p.name[: -len(".sttk")]: read_tensor(p).astype(np.float64)
               for p in sorted(Path(directory).glob("*.sttk"))}
    return encoder.with_weights(weights)
