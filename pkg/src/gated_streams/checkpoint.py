"""Binary checkpoints: a serialized ModelConfig followed by named float64 tensors.

Layout (little-endian)::

    b"GLSC"  u32 version  u32 len  <config key=value text, UTF-8>
    u32 n_records
    n_records x { u32 len  <name UTF-8>  u32 rank  u64 extents[rank]  f64 data[...] }
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .config import ConfigError, ModelConfig
from .model import GatedStreamTransformer, parameter_shapes
from .tensor import Tensor

MAGIC = b"GLSC"
VERSION = 1


class CheckpointError(ValueError):
    def __init__(self, offset: int, message: str):
        super().__init__(f"checkpoint byte {offset}: {message}")
        self.offset = offset


def dumps(config: ModelConfig, params: dict[str, Tensor]) -> bytes:
    cfg = config.to_text().encode("utf-8")
    out = [MAGIC, struct.pack("<II", VERSION, len(cfg)), cfg, struct.pack("<I", len(params))]
    for name in sorted(params):
        arr = np.asarray(params[name].data, dtype="<f8")
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)) + raw)
        out.append(struct.pack(f"<I{arr.ndim}Q", arr.ndim, *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(self.pos, f"truncated while reading {what}")
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def loads(buf: bytes) -> GatedStreamTransformer:
    """Parse and validate every tensor shape against the embedded config."""
    r = _Reader(buf)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError(0, f"bad magic {magic!r}, expected {MAGIC!r}")
    version, cfg_len = r.unpack("<II", "header")
    if version != VERSION:
        raise CheckpointError(4, f"unsupported version {version}")
    cfg_at = r.pos
    try:
        config = ModelConfig.from_text(r.take(cfg_len, "config").decode("utf-8"))
    except (ConfigError, UnicodeDecodeError) as exc:
        raise CheckpointError(cfg_at, f"invalid config: {exc}") from None
    expected = parameter_shapes(config)
    (count,) = r.unpack("<I", "record count")
    if count != len(expected):
        raise CheckpointError(r.pos - 4, f"{count} tensors, config implies {len(expected)}")
    params = {}
    for _ in range(count):
        at = r.pos
        (n,) = r.unpack("<I", "name length")
        name = r.take(n, "name").decode("utf-8", errors="replace")
        (rank,) = r.unpack("<I", f"rank of {name}")
        shape = r.unpack(f"<{rank}Q", f"extents of {name}")
        if expected.get(name) != tuple(shape):
            raise CheckpointError(at, f"tensor {name!r} has shape {shape}, config implies {expected.get(name)}")
        if name in params:
            raise CheckpointError(at, f"duplicate tensor {name!r}")
        size = int(np.prod(shape, dtype=np.int64)) * 8
        data = np.frombuffer(r.take(size, f"data of {name}"), dtype="<f8").reshape(shape)
        params[name] = Tensor(data.astype(np.float64), requires_grad=True)
    if r.pos != len(buf):
        raise CheckpointError(r.pos, f"{len(buf) - r.pos} trailing bytes")
    return GatedStreamTransformer(config, params)


def save(path: str | Path, model: GatedStreamTransformer) -> Path:
    path = Path(path)
    path.write_bytes(dumps(model.config, model.params))
    return path


def load(path: str | Path) -> GatedStreamTransformer:
    return loads(Path(path).read_bytes())
