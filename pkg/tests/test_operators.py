import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import band_limited
from oaqsm.operators import STENCIL27, ap_stencil, apply_Ap, laplacian, lot
from oaqsm.physics import forward_field, phase_evolve, sample_orientation, wrap_phase
from oaqsm.volume import AcquisitionMeta


def test_stencil_weights():
    assert STENCIL27.sum() == pytest.approx(0, abs=1e-14)
    assert STENCIL27[1, 1, 1] == pytest.approx(-44 / 13)
    assert STENCIL27[0, 1, 1] == pytest.approx(3 / 13)
    assert STENCIL27[0, 0, 1] == pytest.approx(3 / 26)
    assert STENCIL27[0, 0, 0] == pytest.approx(1 / 13)
    # exact on a quadratic: lap(x^2) = 2
    x = np.arange(7.0)[:, None, None] * np.ones((7, 7, 7))
    assert laplacian(x**2, "stencil")[3, 3, 3] == pytest.approx(2.0, abs=1e-12)


@pytest.mark.parametrize("mode", ["spectral", "stencil"])
def test_constant_annihilated(mode):
    out = laplacian(np.full((8, 8, 8), 3.0), mode)
    inner = out[1:-1, 1:-1, 1:-1] if mode == "stencil" else out
    assert np.abs(inner).max() < 1e-12


def test_spectral_eigenfunction():
    L = 16
    x = np.arange(L)[:, None, None] * np.ones((L, L, L))
    v = np.sin(2 * np.pi * x / L)
    assert np.abs(laplacian(v) + (2 * np.pi / L) ** 2 * v).max() < 1e-12


def test_stencil_close_to_spectral():
    v = band_limited(np.random.default_rng(0), 64)
    a, b = laplacian(v, "spectral"), laplacian(v, "stencil")
    inner = (slice(1, -1),) * 3
    err = np.linalg.norm(a[inner] - b[inner]) / np.linalg.norm(a[inner])
    assert err <= 0.05


def test_lot_wrap_invariance_and_constant():
    gen = np.random.default_rng(1)
    phi = 8 * band_limited(gen, 16) / band_limited(gen, 16).std()
    assert np.abs(lot(wrap_phase(phi)) - lot(phi)).max() < 1e-12
    assert np.abs(lot(np.full((8, 8, 8), 1.3))).max() < 1e-12


def test_lot_matches_laplacian_small_amplitude():
    v = band_limited(np.random.default_rng(2), 32)
    phi = (np.pi / 4) * 0.9 * v / np.abs(v).max()
    a, b = lot(phi), laplacian(phi)
    assert np.linalg.norm(a - b) / np.linalg.norm(b) <= 0.05


def test_ap_identity_and_uniform(gen):
    chi = gen.normal(size=(16, 16, 16))
    p = sample_orientation(gen)
    a = apply_Ap(chi, p)
    b = laplacian(forward_field(chi, p))
    assert np.linalg.norm(a - b) <= 1e-12 * np.linalg.norm(b)
    assert np.abs(apply_Ap(np.full((8, 8, 8), 2.0), p)).max() < 1e-12


def test_ap_stencil_close_to_spectral():
    gen = np.random.default_rng(3)
    chi = band_limited(gen, 64)
    p = sample_orientation(gen)
    a, b = apply_Ap(chi, p), apply_Ap(chi, p, "stencil")
    inner = (slice(1, -1),) * 3
    assert np.linalg.norm(a[inner] - b[inner]) / np.linalg.norm(a[inner]) <= 0.08


def test_ap_stencil_axial_structure():
    k = ap_stencil([0, 0, 1])
    # pure second derivatives only; in-plane weight 1/3, through-plane -2/3
    assert k[0, 1, 1] == pytest.approx(1 / 3)
    assert k[1, 1, 0] == pytest.approx(-2 / 3)
    assert k[0, 0, 1] == 0
    assert k.sum() == pytest.approx(0, abs=1e-15)


@given(st.integers(0, 2**31), st.sampled_from(["spectral", "stencil"]))
def test_ap_symmetric(seed, mode):
    g = np.random.default_rng(seed)
    a, b = g.normal(size=(2, 8, 9, 10))
    p = sample_orientation(g)
    lhs = np.vdot(apply_Ap(a, p, mode), b)
    rhs = np.vdot(a, apply_Ap(b, p, mode))
    assert abs(lhs - rhs) <= 1e-10 * (abs(lhs) + 1)


@given(st.integers(0, 2**31), st.sampled_from(["spectral", "stencil"]))
def test_laplacian_linear(seed, mode):
    g = np.random.default_rng(seed)
    a, b = g.normal(size=(2, 6, 6, 6))
    lhs = laplacian(2 * a - 3 * b, mode)
    rhs = 2 * laplacian(a, mode) - 3 * laplacian(b, mode)
    assert np.abs(lhs - rhs).max() <= 1e-12 * np.abs(rhs).max()


def test_pipeline_consistency_64():
    """Wrapped-phase LoT over the phase scale recovers A_p chi.

    TE = 5 ms keeps every neighbour phase step below pi on this phantom.
    """
    from oaqsm.phantom import default_spec, generate_phantom
    from dataclasses import replace
    gen = np.random.default_rng(4)
    spec = replace(default_spec(lesion=True), random_primitives=10, texture=0.02)
    chi, _ = generate_phantom(spec, gen)
    p = np.array([0, 0.707, 0.707]) / np.linalg.norm([0, 0.707, 0.707])
    meta = AcquisitionMeta(3.0, 0.005, p)
    phi_w = wrap_phase(phase_evolve(forward_field(chi, p), meta))
    assert np.abs(np.diff(phase_evolve(forward_field(chi, p), meta), axis=0)).max() < np.pi
    est = lot(phi_w) / meta.phase_scale()
    ref = apply_Ap(chi, p)
    assert np.linalg.norm(est - ref) / np.linalg.norm(ref) <= 0.10


def test_errors():
    with pytest.raises(ValueError):
        laplacian(np.zeros((4, 4, 4)), "fourier")
    with pytest.raises(ValueError):
        laplacian(np.zeros((4, 4, 4)), "stencil", (1, 1, 2))
    with pytest.raises(ValueError):
        apply_Ap(np.zeros((4, 4, 4)) + 0j, [0, 0, 1])
