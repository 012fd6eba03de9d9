"""Binary checkpoint format.

Layout (little-endian)::

    magic      8 bytes  b"LINNCKPT"
    version    u32
    cfg_len    u32, then cfg_len bytes of UTF-8 JSON (full ModelConfig plus extras)
    n_params   u32
    per param: u16 name length, name, u8 ndim, u32 extents, float32 data
    sha256     32 bytes over everything above
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .config import ModelConfig, merge, resolve
from .model import BinauralRenderer
from .warp import TimeDomainWarp

MAGIC = b"LINNCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode_checkpoint(model: BinauralRenderer, extra: dict | None = None) -> bytes:
    meta = {"config": model.cfg.to_dict(), "extra": extra or {}}
    cfg_bytes = json.dumps(meta, sort_keys=True).encode()
    named = model.named_params(active_only=False)
    parts = [MAGIC, struct.pack("<II", VERSION, len(cfg_bytes)), cfg_bytes,
             struct.pack("<I", len(named))]
    for name, p in named:
        nb = name.encode()
        parts.append(struct.pack("<H", len(nb)) + nb)
        parts.append(struct.pack("<B", p.value.ndim) + struct.pack(f"<{p.value.ndim}I", *p.value.shape))
        parts.append(np.ascontiguousarray(p.value, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(path, model: BinauralRenderer, extra: dict | None = None):
    Path(path).write_bytes(encode_checkpoint(model, extra))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("truncated checkpoint")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(buf: bytes, overrides: dict | None = None):
    """Returns ``(model, config, extra)``; architecture fields in the file win over overrides."""
    if len(buf) < len(MAGIC) + 32 or buf[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic or truncated)")
    body, digest = buf[:-32], buf[-32:]
    r = _Reader(body)
    r.take(len(MAGIC))
    version, cfg_len = r.unpack("<II")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint checksum mismatch")
    meta = json.loads(r.take(cfg_len).decode())
    stored = ModelConfig.from_dict(meta["config"])
    cfg = resolve(stored, overrides or {})
    # build with the stored architecture, then apply runtime ablations
    model = BinauralRenderer(merge(cfg, {"warp": {"neural_enabled": stored.warp.neural_enabled}}))
    params = dict(model.named_params(active_only=False))
    (n,) = r.unpack("<I")
    if n != len(params):
        raise CheckpointError(f"checkpoint holds {n} tensors, model expects {len(params)}")
    for _ in range(n):
        (ln,) = r.unpack("<H")
        name = r.take(ln).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        data = np.frombuffer(r.take(4 * int(np.prod(shape))), dtype="<f4").reshape(shape)
        if name not in params or params[name].shape != tuple(shape):
            raise CheckpointError(f"unexpected tensor {name} {shape}")
        params[name].value[...] = data
    if r.pos != len(body):
        raise CheckpointError("trailing bytes in checkpoint")
    if not cfg.warp.neural_enabled:
        model.tdw = TimeDomainWarp(cfg.warp)
    model.cfg = cfg
    return model, cfg, meta.get("extra", {})


def load_checkpoint(path, overrides: dict | None = None):
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode_checkpoint(buf, overrides)
