"""QCKPT checkpoint files.

Layout (little-endian)::

    4s   magic b"QCKP"
    u8   version (1)
    u32  tensor count
    per tensor:
        u16  name length, then the UTF-8 name
        u8   rank, then rank x u32 dims
        f64  payload, C order

Besides the network parameters a checkpoint holds ``config.backbone``
(``[kind code, levels, base, oalfe, lot_channels]``) and any extra tensors
the caller adds, e.g. optimizer state under ``adam.*``.
"""

import os
import struct

import numpy as np

from .network import KINDS, BackboneConfig, NetworkParams, parameter_shapes

MAGIC = b"QCKP"
VERSION = 1
CONFIG_KEY = "config.backbone"


class CheckpointError(ValueError):
    pass


def encode_tensors(tensors):
    parts = [MAGIC, struct.pack("<BI", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def decode_tensors(buf):
    if buf[:4] != MAGIC:
        raise CheckpointError(f"bad magic {bytes(buf[:4])!r}")
    try:
        version, count = struct.unpack_from("<BI", buf, 4)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        off = 9
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, off)
            off += 2
            name = bytes(buf[off:off + nlen]).decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<B", buf, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}I", buf, off)
            off += 4 * rank
            n = int(np.prod(dims, dtype=np.int64))
            if off + 8 * n > len(buf):
                raise CheckpointError(f"truncated tensor {name!r}")
            out[name] = np.frombuffer(buf, dtype="<f8", count=n, offset=off).reshape(dims).copy()
            off += 8 * n
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None
    if off != len(buf):
        raise CheckpointError(f"{len(buf) - off} trailing bytes")
    return out


def _config_tensor(cfg):
    return np.array([KINDS.index(cfg.kind), cfg.levels, cfg.base, int(cfg.oalfe),
                     cfg.lot_channels], dtype=np.float64)


def save_checkpoint(path, net, extra=None):
    tensors = {CONFIG_KEY: _config_tensor(net.config)}
    tensors.update(net.params)
    for k, v in (extra or {}).items():
        if k in tensors:
            raise CheckpointError(f"extra tensor {k!r} collides with a parameter")
        tensors[k] = v
    with open(os.fspath(path), "wb") as f:
        f.write(encode_tensors(tensors))


def load_checkpoint(path):
    """Return ``(NetworkParams, extra)`` where ``extra`` holds non-parameter tensors."""
    with open(os.fspath(path), "rb") as f:
        tensors = decode_tensors(f.read())
    if CONFIG_KEY not in tensors:
        raise CheckpointError("checkpoint has no backbone config")
    code, levels, base, oalfe, lot_channels = (int(v) for v in tensors.pop(CONFIG_KEY))
    cfg = BackboneConfig(KINDS[code], levels, base, bool(oalfe), lot_channels)
    shapes = parameter_shapes(cfg)
    params = {}
    for name, shape in shapes.items():
        if name not in tensors:
            raise CheckpointError(f"missing parameter {name!r}")
        arr = tensors.pop(name)
        if arr.shape != shape:
            raise CheckpointError(f"parameter {name!r} has shape {arr.shape}, expected {shape}")
        params[name] = arr
    return NetworkParams(cfg, params), tensors
