"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"IMCK"  u8 version  u32 meta_len  meta (UTF-8 JSON)  u32 n_tensors
    per tensor: u16 name_len  name (UTF-8)  u8 rank  u32 dims[rank]  f32 data (row-major)

The JSON metadata carries the frame spec, the training config and the
architecture so a checkpoint can be checked against the spec it is used with.
"""

from __future__ import annotations

import io
import json
import struct

import numpy as np

from ..errors import CheckpointMismatch
from ..render import FrameSpec
from .network import Architecture, ModelParams
from .train import TrainConfig

MAGIC = b"IMCK"
VERSION = 1


def dumps(params: ModelParams, frame_spec: FrameSpec, train_config: TrainConfig | None = None,
          extra: dict | None = None) -> bytes:
    meta = {
        "frame_spec": frame_spec.to_dict(),
        "train_config": None if train_config is None else train_config.to_dict(),
        "architecture": params.arch.__dict__.copy(),
        "extra": extra or {},
    }
    mb = json.dumps(meta, sort_keys=True).encode()
    out = io.BytesIO()
    out.write(MAGIC + struct.pack("<BI", VERSION, len(mb)) + mb)
    out.write(struct.pack("<I", len(params.tensors)))
    for name, t in params.tensors.items():
        nb = name.encode()
        out.write(struct.pack("<H", len(nb)) + nb + struct.pack("<B", t.ndim))
        out.write(struct.pack(f"<{t.ndim}I", *t.shape))
        out.write(np.ascontiguousarray(t, dtype="<f4").tobytes())
    return out.getvalue()


def _take(buf: memoryview, pos: int, n: int):
    if pos + n > len(buf):
        raise CheckpointMismatch("truncated checkpoint")
    return bytes(buf[pos:pos + n]), pos + n


def loads(data: bytes):
    """Parse a checkpoint into ``(params, frame_spec, train_config, extra)``."""
    buf = memoryview(data)
    head, pos = _take(buf, 0, 9)
    if head[:4] != MAGIC:
        raise CheckpointMismatch("not a checkpoint file (bad magic)")
    version, mlen = struct.unpack("<BI", head[4:])
    if version != VERSION:
        raise CheckpointMismatch(f"unsupported checkpoint version {version}")
    mb, pos = _take(buf, pos, mlen)
    meta = json.loads(mb)
    raw, pos = _take(buf, pos, 4)
    (count,) = struct.unpack("<I", raw)
    tensors = {}
    for _ in range(count):
        raw, pos = _take(buf, pos, 2)
        nb, pos = _take(buf, pos, struct.unpack("<H", raw)[0])
        raw, pos = _take(buf, pos, 1)
        rank = raw[0]
        raw, pos = _take(buf, pos, 4 * rank)
        dims = struct.unpack(f"<{rank}I", raw)
        raw, pos = _take(buf, pos, 4 * int(np.prod(dims, dtype=np.int64)))
        tensors[nb.decode()] = np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float32)
    if pos != len(buf):
        raise CheckpointMismatch("trailing bytes after checkpoint")
    arch = Architecture(**meta["architecture"])
    try:
        params = ModelParams(tensors, arch)
    except KeyError as exc:
        raise CheckpointMismatch(f"checkpoint lacks tensor {exc}") from None
    tc = meta.get("train_config")
    return (params, FrameSpec.from_dict(meta["frame_spec"]),
            None if tc is None else TrainConfig.from_dict(tc), meta.get("extra", {}))


def check_spec(stored: FrameSpec, requested: FrameSpec) -> None:
    if stored != requested:
        raise CheckpointMismatch(f"checkpoint was trained for {stored.to_dict()}, "
                                 f"requested {requested.to_dict()}")
