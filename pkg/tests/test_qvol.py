import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oaqsm.qvol import (HEADER, BadMagicError, DtypeMismatchError, QvolError, TruncatedPayloadError,
                        decode_qvol, encode_qvol, read_qvol, write_qvol)
from oaqsm.volume import AcquisitionMeta, Volume3


def test_roundtrip_f64_file(tmp_path, gen):
    v = Volume3(gen.normal(size=(8, 8, 8)), (1.0, 0.5, 2.0))
    meta = AcquisitionMeta(3.0, 0.02, [0, 0, 1], v.voxel_size)
    write_qvol(tmp_path / "a.qvol", v, meta)
    w, m = read_qvol(tmp_path / "a.qvol")
    assert np.array_equal(w.data, v.data)
    assert w.voxel_size == v.voxel_size
    assert m.b0 == pytest.approx(3.0) and m.te == pytest.approx(0.02)
    assert np.allclose(m.orientation, [0, 0, 1])


def test_header_layout(gen):
    v = Volume3(gen.normal(size=(2, 3, 4)))
    buf = encode_qvol(v)
    assert len(buf) == 64 + 24 * 8
    assert buf[:8] == b"QVOL\x01\x00\x00\x00"
    assert struct.unpack_from("<3II", buf, 8) == (2, 3, 4, 1)
    assert buf[56:64] == b"\x00" * 8
    # x-fastest payload
    first = np.frombuffer(buf, "<f8", count=2, offset=64)
    assert np.array_equal(first, v.data[:2, 0, 0])


def test_nan_orientation_means_absent(gen):
    v = Volume3(gen.normal(size=(2, 2, 2)))
    _, m = decode_qvol(encode_qvol(v, AcquisitionMeta(3.0, 0.01)))
    assert m.orientation is None and m.b0 == pytest.approx(3.0)
    _, m = decode_qvol(encode_qvol(v))
    assert m is None


def test_orientation_renormalized_in_double():
    p = np.array([0, 0.707, 0.707]) / np.linalg.norm([0, 0.707, 0.707])
    buf = encode_qvol(Volume3(np.zeros((2, 2, 2))), AcquisitionMeta(orientation=p))
    _, m = decode_qvol(buf)
    assert abs(np.linalg.norm(m.orientation) - 1) < 1e-15


def test_f32_and_c64(gen):
    v = Volume3(gen.normal(size=(3, 3, 3)))
    w, _ = decode_qvol(encode_qvol(v, dtype="f32"), dtype="f32")
    assert np.array_equal(w.data, v.data.astype(np.float32).astype(np.float64))
    c = Volume3(gen.normal(size=(3, 3, 3)) + 1j * gen.normal(size=(3, 3, 3)))
    buf = encode_qvol(c)
    assert struct.unpack_from("<I", buf, 20)[0] == 2
    w, _ = decode_qvol(buf)
    assert np.allclose(w.data, c.data, atol=1e-6)


def test_distinct_errors(gen):
    buf = encode_qvol(Volume3(gen.normal(size=(4, 4, 4))))
    with pytest.raises(BadMagicError):
        decode_qvol(b"XVOL" + buf[4:])
    with pytest.raises(DtypeMismatchError):
        decode_qvol(buf, dtype="f32")
    with pytest.raises(TruncatedPayloadError):
        decode_qvol(buf[:-8])
    with pytest.raises(TruncatedPayloadError):
        decode_qvol(buf[:10])
    with pytest.raises(QvolError):
        decode_qvol(buf + b"\x00")
    bad = bytearray(buf)
    struct.pack_into("<I", bad, 20, 9)
    with pytest.raises(DtypeMismatchError):
        decode_qvol(bytes(bad))
    with pytest.raises(DtypeMismatchError):
        encode_qvol(Volume3(np.ones((2, 2, 2)) * 1j), dtype="f64")
    # the three are distinct classes, all QvolError
    assert len({BadMagicError, DtypeMismatchError, TruncatedPayloadError}) == 3
    assert issubclass(TruncatedPayloadError, QvolError)


@given(st.tuples(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5)), st.integers(0, 2**31))
def test_roundtrip_payload_bit_identical(dims, seed):
    g = np.random.default_rng(seed)
    v = Volume3(g.normal(size=dims) * 10.0 ** g.integers(-5, 5))
    buf = encode_qvol(v)
    w, _ = decode_qvol(buf)
    assert w.data.tobytes() == v.data.tobytes()
    assert encode_qvol(w) == buf


def test_header_struct_size():
    assert HEADER.size == 64
