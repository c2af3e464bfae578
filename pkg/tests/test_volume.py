import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oaqsm.volume import (GAMMA_BAR, AcquisitionMeta, Volume3, axis_frequencies, check_orientation,
                          fft3, ifft3, kgrid_for, normalize_orientation, symmetrize_even)


def test_volume_is_immutable_float64():
    v = Volume3(np.ones((2, 3, 4), dtype=np.float32), (1, 2, 3))
    assert v.data.dtype == np.float64
    assert v.dims == (2, 3, 4)
    assert v.fov == (2.0, 6.0, 12.0)
    with pytest.raises(ValueError):
        v.data[0, 0, 0] = 5


def test_volume_rejects_bad_inputs():
    with pytest.raises(ValueError):
        Volume3(np.ones((2, 2)))
    with pytest.raises(ValueError):
        Volume3(np.ones((2, 2, 2)), (1, 0, 1))
    with pytest.raises(ValueError):
        Volume3(np.full((2, 2, 2), np.nan))
    v = Volume3(np.full((2, 2, 2), np.inf), allow_nonfinite=True)
    assert np.isinf(v.data).all()


def test_complex_volume_kept_complex():
    v = Volume3(np.ones((2, 2, 2)) * (1 + 2j))
    assert v.is_complex and v.data.dtype == np.complex128


def test_orientation_checks():
    assert np.allclose(check_orientation([0, 0, 1]), [0, 0, 1])
    with pytest.raises(ValueError):
        check_orientation([0, 0, 1.001])
    with pytest.raises(ValueError):
        check_orientation([0, 1])
    with pytest.raises(ValueError):
        normalize_orientation([0, 0, 0])
    assert np.allclose(normalize_orientation([0, 3, 4]), [0, 0.6, 0.8])


def test_meta_validation_and_phase_scale():
    m = AcquisitionMeta(3.0, 0.02, [0, 0, 1])
    assert m.phase_scale() == pytest.approx(2 * np.pi * GAMMA_BAR * 3 * 0.02 * 1e-6)
    with pytest.raises(ValueError):
        AcquisitionMeta(-1.0, 0.02)
    with pytest.raises(ValueError):
        AcquisitionMeta(3.0, 0.0)
    with pytest.raises(ValueError):
        AcquisitionMeta(3.0).phase_scale()


def test_constant_volume_has_dc_only_spectrum():
    s = fft3(np.full((4, 5, 6), 2.5))
    assert s[0, 0, 0] == pytest.approx(2.5 * 120)
    s[0, 0, 0] = 0
    assert np.abs(s).max() < 1e-12


def test_fft_roundtrip_64(gen):
    v = gen.normal(size=(64, 64, 64))
    assert np.linalg.norm(ifft3(fft3(v)) - v) / np.linalg.norm(v) < 1e-12


def test_parseval(gen):
    v = gen.normal(size=(16, 16, 16))
    assert np.sum(v**2) == pytest.approx(np.sum(np.abs(fft3(v)) ** 2) / v.size, rel=1e-12)


@given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_fft_linearity(seed, a, b):
    g = np.random.default_rng(seed)
    x, y = g.normal(size=(2, 4, 5, 6))
    lhs = fft3(a * x + b * y)
    rhs = a * fft3(x) + b * fft3(y)
    assert np.abs(lhs - rhs).max() <= 1e-10 * (1 + np.abs(rhs).max())


def test_fft_rejects_non_3d():
    with pytest.raises(ValueError):
        fft3(np.ones((4, 4)))


def test_axis_frequencies_order():
    assert list(axis_frequencies(4)) == [0, 1, 2, -1]
    assert list(axis_frequencies(5)) == [0, 1, 2, -2, -1]
    with pytest.raises(ValueError):
        axis_frequencies(1)


def test_kgrid_dc_at_origin_and_physical_units():
    g = kgrid_for((4, 6, 8))
    kx, ky, kz = g.mesh()
    assert kx[0, 0, 0] == ky[0, 0, 0] == kz[0, 0, 0] == 0
    px, _, _ = g.mesh((2.0, 1, 1))
    assert px[1, 0, 0] == pytest.approx(1 / 8)


def test_real_spectrum_conjugate_symmetric(gen):
    v = gen.normal(size=(8, 8, 8))
    s = fft3(v)
    neg = np.ix_(*((-np.arange(8)) % 8 for _ in range(3)))
    assert np.abs(s[neg] - np.conj(s)).max() < 1e-10


def test_symmetrize_even_is_even(gen):
    m = gen.normal(size=(4, 5, 6))
    e = symmetrize_even(m)
    neg = np.ix_((-np.arange(4)) % 4, (-np.arange(5)) % 5, (-np.arange(6)) % 6)
    assert np.array_equal(e, e[neg])
