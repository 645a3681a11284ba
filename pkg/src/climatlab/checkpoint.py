"""Binary named-tensor checkpoints.

Layout (all integers little-endian):

    magic    8 bytes  b"CLMTCKPT"
    version  uint32   (currently 1)
    config   uint32 length + canonical-JSON UTF-8 bytes (run-config echo)
    sigma    uint32 count + count float32 values
    tensors  uint32 count, then per tensor in sorted path order:
             uint16 path length + UTF-8 path
             uint8 rank, rank * uint32 dims
             row-major float32 values

Tensors are stored float32; save(load(x)) is byte-identical because paths are
sorted and the config JSON is canonical.
"""

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"CLMTCKPT"
VERSION = 1


@dataclass
class Checkpoint:
    params: dict          # path -> float32 ndarray
    sigma: np.ndarray     # float32 per-task noise vector
    config: dict          # run-config echo


def _canonical_json(config: dict) -> bytes:
    return json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(path, params, sigma, config: dict) -> None:
    """params: path -> ndarray (or Tensor); values are cast to float32."""
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    blob = _canonical_json(config)
    chunks.append(struct.pack("<I", len(blob)))
    chunks.append(blob)
    sigma32 = np.ascontiguousarray(np.asarray(getattr(sigma, "data", sigma)), dtype="<f4")
    chunks.append(struct.pack("<I", sigma32.size))
    chunks.append(sigma32.tobytes())
    names = sorted(params)
    chunks.append(struct.pack("<I", len(names)))
    for name in names:
        arr = np.asarray(getattr(params[name], "data", params[name]))
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def read(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ValueError("truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        vals = struct.unpack(fmt, self.read(struct.calcsize(fmt)))
        return vals[0] if len(vals) == 1 else vals


def load_checkpoint(path) -> Checkpoint:
    r = _Reader(Path(path).read_bytes())
    if r.read(len(MAGIC)) != MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic")
    version = r.unpack("<I")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    config = json.loads(r.read(r.unpack("<I")).decode("utf-8"))
    n_sigma = r.unpack("<I")
    sigma = np.frombuffer(r.read(4 * n_sigma), dtype="<f4").copy()
    count = r.unpack("<I")
    params = {}
    for _ in range(count):
        name = r.read(r.unpack("<H")).decode("utf-8")
        if name in params:
            raise ValueError(f"{path}: duplicate tensor path {name!r}")
        rank = r.unpack("<B")
        dims = struct.unpack(f"<{rank}I", r.read(4 * rank)) if rank else ()
        size = int(np.prod(dims, dtype=np.int64)) if rank else 1
        values = np.frombuffer(r.read(4 * size), dtype="<f4").copy()
        params[name] = values.reshape(dims)
    if r.pos != len(r.data):
        raise ValueError(f"{path}: trailing bytes after tensor table")
    return Checkpoint(params=params, sigma=sigma, config=config)
