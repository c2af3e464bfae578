"""QVOL binary volume files.

Layout (little-endian, 64-byte header)::

    0   4s   magic b"QVOL"
    4   u8   version (1), followed by three zero bytes
    8   3u32 nx, ny, nz
    20  u32  dtype: 0 = f32, 1 = f64, 2 = complex-f32 interleaved (re, im)
    24  3f32 voxel size, mm
    36  3f32 orientation (NaN triplet = absent)
    48  f32  B0, tesla (NaN = absent)
    52  f32  TE, seconds (NaN = absent)
    56  8x   reserved, zero
    64       payload, x-fastest

The orientation is stored in single precision; :func:`read_qvol`
renormalizes it in double precision before building the metadata.
"""

import os
import struct

import numpy as np

from .volume import AcquisitionMeta, Volume3, normalize_orientation

MAGIC = b"QVOL"
VERSION = 1
HEADER = struct.Struct("<4sB3x3II3f3fff8x")
assert HEADER.size == 64

DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<c8")}
CODES = {"f32": 0, "f64": 1, "c64": 2}


class QvolError(ValueError):
    """Malformed QVOL file."""


class BadMagicError(QvolError):
    pass


class DtypeMismatchError(QvolError):
    pass


class TruncatedPayloadError(QvolError):
    pass


def _default_code(data):
    return 2 if np.iscomplexobj(data) else 1


def encode_qvol(volume, meta=None, dtype=None):
    """Serialize a volume (and optional metadata) to QVOL bytes."""
    if not isinstance(volume, Volume3):
        volume = Volume3(volume)
    data = volume.data
    code = _default_code(data) if dtype is None else CODES[dtype]
    if np.iscomplexobj(data) and code != 2:
        raise DtypeMismatchError("complex data can only be stored as c64")
    nan3 = (float("nan"),) * 3
    orient, b0, te = nan3, float("nan"), float("nan")
    if meta is not None:
        if meta.orientation is not None:
            orient = tuple(float(v) for v in meta.orientation)
        if meta.b0 is not None:
            b0 = meta.b0
        if meta.te is not None:
            te = meta.te
    header = HEADER.pack(MAGIC, VERSION, *data.shape, code, *volume.voxel_size, *orient, b0, te)
    payload = np.asarray(data, dtype=DTYPES[code]).tobytes(order="F")
    return header + payload


def decode_qvol(buf, dtype=None):
    """Parse QVOL bytes into ``(Volume3, AcquisitionMeta or None)``.

    ``dtype`` ("f32", "f64", "c64") asserts the stored sample type.
    """
    if len(buf) < HEADER.size:
        raise TruncatedPayloadError(f"header needs {HEADER.size} bytes, got {len(buf)}")
    if buf[:4] != MAGIC:
        raise BadMagicError(f"bad magic {bytes(buf[:4])!r}")
    fields = HEADER.unpack_from(buf)
    version, dims, code = fields[1], fields[2:5], fields[5]
    voxel, orient, b0, te = fields[6:9], fields[9:12], fields[12], fields[13]
    if version != VERSION:
        raise QvolError(f"unsupported QVOL version {version}")
    if code not in DTYPES:
        raise DtypeMismatchError(f"unknown dtype code {code}")
    if dtype is not None and CODES[dtype] != code:
        raise DtypeMismatchError(f"file holds dtype code {code}, expected {dtype}")
    if min(dims) < 1:
        raise QvolError(f"invalid dims {dims}")
    dt = DTYPES[code]
    nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
    payload = buf[HEADER.size:]
    if len(payload) < nbytes:
        raise TruncatedPayloadError(f"payload has {len(payload)} bytes, expected {nbytes}")
    if len(payload) > nbytes:
        raise QvolError(f"{len(payload) - nbytes} trailing bytes after payload")
    data = np.frombuffer(payload, dtype=dt, count=int(np.prod(dims))).reshape(dims, order="F")
    vol = Volume3(data, voxel)

    present = lambda v: np.isfinite(v)  # noqa: E731
    p = normalize_orientation(orient) if all(present(v) for v in orient) else None
    b0 = float(b0) if present(b0) else None
    te = float(te) if present(te) else None
    if p is None and b0 is None and te is None:
        return vol, None
    return vol, AcquisitionMeta(b0=b0, te=te, orientation=p, voxel_size=vol.voxel_size)


def write_qvol(path, volume, meta=None, dtype=None):
    buf = encode_qvol(volume, meta, dtype)
    with open(os.fspath(path), "wb") as f:
        f.write(buf)


def read_qvol(path, dtype=None):
    with open(os.fspath(path), "rb") as f:
        buf = f.read()
    return decode_qvol(buf, dtype)
