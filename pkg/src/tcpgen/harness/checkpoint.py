"""Binary checkpoint container for named float64 tensors.

Layout: magic b"TCPG", version uint32 LE, tensor count uint32 LE, then per
tensor: name length uint16, name UTF-8, rank uint8, dims uint32 each, data
float64 LE row-major.  Tensors are written in sorted name order so a
save -> load -> save roundtrip is byte-identical.  A config echo, when
given, goes to a sidecar '<path>.meta' text file (the binary layout carries
tensors only).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"TCPG"
VERSION = 1


class CheckpointError(IOError):
    pass


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    version: int = VERSION
    config_text: str | None = None


def save_checkpoint(tensors: dict[str, np.ndarray], path: str,
                    config_text: str | None = None) -> None:
    for name, arr in tensors.items():
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"non-finite values in tensor {name!r}")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            # asarray keeps 0-d tensors 0-d (ascontiguousarray would not)
            arr = np.asarray(tensors[name], dtype="<f8", order="C")
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<I", d))
            f.write(arr.tobytes())
    if config_text is not None:
        with open(path + ".meta", "w", encoding="utf-8") as f:
            f.write(config_text)


def _read(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated file while reading {what}")
    return data


def load_checkpoint(path: str) -> Checkpoint:
    tensors: dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        if _read(f, 4, "magic") != MAGIC:
            raise CheckpointError("bad magic bytes")
        version = struct.unpack("<I", _read(f, 4, "version"))[0]
        if version != VERSION:
            raise CheckpointError(f"unsupported version {version}")
        count = struct.unpack("<I", _read(f, 4, "tensor count"))[0]
        for i in range(count):
            nlen = struct.unpack("<H", _read(f, 2, f"name length of tensor {i}"))[0]
            name = _read(f, nlen, f"name of tensor {i}").decode("utf-8")
            rank = struct.unpack("<B", _read(f, 1, f"rank of tensor {name!r}"))[0]
            shape = tuple(
                struct.unpack("<I", _read(f, 4, f"dims of tensor {name!r}"))[0]
                for _ in range(rank))
            n = int(np.prod(shape)) if shape else 1
            data = _read(f, 8 * n, f"data of tensor {name!r}")
            tensors[name] = np.frombuffer(data, dtype="<f8").reshape(shape).copy()
        if f.read(1) != b"":
            raise CheckpointError("trailing bytes after last tensor")
    config_text = None
    try:
        with open(path + ".meta", "r", encoding="utf-8") as f:
            config_text = f.read()
    except FileNotFoundError:
        pass
    return Checkpoint(tensors=tensors, version=version, config_text=config_text)
