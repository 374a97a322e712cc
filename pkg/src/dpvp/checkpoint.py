"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"DPVP"                      magic
    u32  version (= 1)
    str  variant tag             (u32 byte length + UTF-8)
    str  gate mode
    str  parameter dtype         ("float64" / "float32")
    u32  d, M, L, N'
    u32  number of MLP hidden layers H, then H x u32 widths
    u32  n_users, n_stores, n_foods
    u32  number of arrays A
    A x { str name; u32 ndim; ndim x u64 shape; float64 data (C order) }

Arrays appear in the order of :func:`dpvp.model.param_shapes`.
"""
from __future__ import annotations

import struct

import numpy as np

from .errors import DPVPError
from .model import ModelConfig, param_shapes

MAGIC = b"DPVP"
VERSION = 1


class CheckpointError(DPVPError):
    pass


def _str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def save_checkpoint(path, config: ModelConfig, params: dict, node_counts) -> None:
    n_nodes = int(sum(node_counts))
    order = list(param_shapes(config, n_nodes))
    if set(order) != set(params):
        raise CheckpointError(f"parameter names {sorted(params)} do not match variant layout")
    out = [MAGIC, struct.pack("<I", VERSION), _str(config.variant), _str(config.gate_mode),
           _str(config.dtype),
           struct.pack("<4I", config.embedding_dim, config.n_periods, config.layers, config.n_prime),
           struct.pack("<I", len(config.mlp_hidden)),
           struct.pack(f"<{len(config.mlp_hidden)}I", *config.mlp_hidden),
           struct.pack("<3I", *(int(x) for x in node_counts)),
           struct.pack("<I", len(order))]
    for name in order:
        a = np.ascontiguousarray(params[name], dtype="<f8")
        out += [_str(name), struct.pack("<I", a.ndim), struct.pack(f"<{a.ndim}Q", *a.shape),
                a.tobytes(order="C")]
    with open(path, "wb") as fh:
        fh.write(b"".join(out))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CheckpointError("truncated checkpoint")
        b = self.buf[self.pos:self.pos + n]
        self.pos += n
        return b

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def str(self):
        (n,) = self.unpack("<I")
        return self.take(n).decode("utf-8")


def load_checkpoint(path):
    """Returns ``(ModelConfig, params, (n_users, n_stores, n_foods))``."""
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: not a DPVP checkpoint")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    variant, gate, dtype = r.str(), r.str(), r.str()
    d, M, L, n_prime = r.unpack("<4I")
    (nh,) = r.unpack("<I")
    hidden = r.unpack(f"<{nh}I")
    counts = r.unpack("<3I")
    config = ModelConfig(variant=variant, embedding_dim=d, layers=L, n_periods=M, n_prime=n_prime,
                         mlp_hidden=hidden, gate_mode=gate, dtype=dtype)
    (na,) = r.unpack("<I")
    params = {}
    for _ in range(na):
        name = r.str()
        (ndim,) = r.unpack("<I")
        shape = r.unpack(f"<{ndim}Q")
        n = int(np.prod(shape)) if ndim else 1
        a = np.frombuffer(r.take(8 * n), dtype="<f8").reshape(shape)
        params[name] = a.astype(dtype, copy=True)
    expected = param_shapes(config, sum(counts))
    for name, shape in expected.items():
        if name not in params or params[name].shape != tuple(shape):
            raise CheckpointError(f"{path}: array {name} missing or mis-shaped")
    return config, params, counts
