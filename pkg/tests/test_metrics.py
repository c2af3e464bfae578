import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import ndimage

from oaqsm.metrics import (MetricReport, evaluate, format_table, gaussian_window, hfen, log_filter,
                           log_kernel, nrmse, roi_stats, rows_to_csv, ssim, ssim_map)
from oaqsm.phantom import generate_phantom, random_spec


def textured(seed=0, n=24):
    g = np.random.default_rng(seed)
    return ndimage.gaussian_filter(g.normal(size=(n,) * 3), 1.0)


def test_nrmse_cases():
    x = textured()
    assert nrmse(x, x) == 0
    assert nrmse(2 * x, x) == pytest.approx(100)
    assert nrmse(np.zeros_like(x), x) == pytest.approx(100)
    with pytest.raises(ValueError):
        nrmse(x, np.zeros_like(x))
    with pytest.raises(ValueError):
        nrmse(x, x, np.zeros_like(x))
    with pytest.raises(ValueError):
        nrmse(x[:-1], x)


def test_identity_cases():
    x = textured()
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)
    assert hfen(x, x) == 0
    assert ssim(x + 10 * np.abs(x).max(), x) < 1
    assert hfen(x + 3.0, x) < 1e-10


def _scalar_ssim(a, b, sigma=1.5, radius=5, k1=0.01, k2=0.03):
    """Voxel-by-voxel SSIM with explicit clamped-index windows."""
    n = a.shape[0]
    dr = float(b.max() - b.min())
    c1, c2 = (k1 * dr) ** 2, (k2 * dr) ** 2
    g = [math.exp(-(r * r) / (2 * sigma * sigma)) for r in range(-radius, radius + 1)]
    total = sum(g) ** 3
    vals = []
    for i in range(n):
        for j in range(n):
            for k in range(n):
                sx = sy = sxx = syy = sxy = 0.0
                for di in range(-radius, radius + 1):
                    for dj in range(-radius, radius + 1):
                        for dk in range(-radius, radius + 1):
                            w = g[di + radius] * g[dj + radius] * g[dk + radius] / total
                            ii = min(max(i + di, 0), n - 1)
                            jj = min(max(j + dj, 0), n - 1)
                            kk = min(max(k + dk, 0), n - 1)
                            x, y = a[ii, jj, kk], b[ii, jj, kk]
                            sx += w * x
                            sy += w * y
                            sxx += w * x * x
                            syy += w * y * y
                            sxy += w * x * y
                vx, vy, cxy = sxx - sx * sx, syy - sy * sy, sxy - sx * sy
                vals.append(((2 * sx * sy + c1) * (2 * cxy + c2))
                            / ((sx * sx + sy * sy + c1) * (vx + vy + c2)))
    return sum(vals) / len(vals)


SSIM_FIXTURE_VALUE = 0.853698380028224


def ssim_fixture():
    g = np.random.default_rng(11)
    b = np.round(g.normal(size=(5, 5, 5)), 2)
    a = np.round(b + 0.3 * g.normal(size=(5, 5, 5)), 2)
    return a, b


def test_ssim_scalar_oracle_5cube():
    a, b = ssim_fixture()
    ref = _scalar_ssim(a, b)
    assert ssim(a, b) == pytest.approx(ref, abs=1e-12)
    assert ref == pytest.approx(SSIM_FIXTURE_VALUE, abs=1e-12)


def test_dense_and_separable_filters_agree():
    x = textured(1, 20)
    w = gaussian_window()
    assert w.sum() == pytest.approx(1.0)
    from oaqsm.metrics import _local_mean
    assert np.abs(_local_mean(x) - ndimage.correlate(x, w, mode="nearest")).max() < 1e-12
    k = log_kernel()
    assert abs(k.sum()) < 1e-15
    dense = ndimage.correlate(x, k, mode="nearest")
    assert np.abs(log_filter(x) - dense).max() < 1e-12 * np.abs(dense).max()


def test_hfen_penalizes_smoothing():
    spec = random_spec((32,) * 3, np.random.default_rng(2), lesion=True, texture=0.05)
    chi, mask = generate_phantom(spec, np.random.default_rng(3))
    mask = ndimage.binary_erosion(mask, iterations=2)
    # blur wider than the LoG scale; narrower blurs leave the LoG band mostly intact
    sm = ndimage.gaussian_filter(chi, 2.5)
    assert hfen(sm, chi, mask) > nrmse(sm, chi, mask)


def test_roi_stats():
    v = np.zeros((6, 6, 6))
    roi = np.zeros_like(v, dtype=bool)
    roi[1:3, 1:3, 1:3] = True
    v[roi] = 0.8
    assert roi_stats(v, roi) == (pytest.approx(0.8), pytest.approx(0.0))
    with pytest.raises(ValueError):
        roi_stats(v, np.zeros_like(roi))
    other = np.zeros_like(roi)
    other[4:, 4:, 4:] = True
    assert (roi | other).sum() == roi.sum() + other.sum()


@given(st.integers(0, 2**31))
def test_ssim_symmetric(seed):
    g = np.random.default_rng(seed)
    a, b = g.normal(size=(2, 9, 9, 9))
    # a common explicit range keeps the formula symmetric in its arguments
    assert ssim(a, b, data_range=4.0) == pytest.approx(ssim(b, a, data_range=4.0), abs=1e-12)
    assert np.allclose(ssim_map(a, b, 4.0), ssim_map(b, a, 4.0), atol=1e-12)


@given(st.integers(0, 2**31), st.floats(0.1, 10))
def test_error_scale_covariance(seed, s):
    g = np.random.default_rng(seed)
    x = g.normal(size=(10, 10, 10))
    e = g.normal(size=(10, 10, 10))
    assert nrmse(x + s * e, x) == pytest.approx(s * nrmse(x + e, x), rel=1e-10)
    assert hfen(x + s * e, x) == pytest.approx(s * hfen(x + e, x), rel=1e-10)


@given(st.integers(0, 2**31))
def test_nrmse_roi_permutation_invariant(seed):
    g = np.random.default_rng(seed)
    a, b = g.normal(size=(2, 6, 6, 6))
    m = g.random((6, 6, 6)) < 0.6
    perm = g.permutation(a.size)
    pa, pb, pm = (v.ravel()[perm].reshape(v.shape) for v in (a, b, m))
    assert nrmse(pa, pb, pm) == pytest.approx(nrmse(a, b, m), rel=1e-12)
    assert roi_stats(pa, pm)[0] == pytest.approx(roi_stats(a, m)[0], rel=1e-12)


@given(st.integers(0, 2**31), st.permutations([0, 1, 2]), st.lists(st.booleans(), min_size=3,
                                                                    max_size=3))
def test_filtered_metrics_invariant_under_grid_symmetries(seed, axes, flips):
    g = np.random.default_rng(seed)
    a = textured(seed % 1000, 12)
    b = a + 0.2 * g.normal(size=a.shape)

    def t(v):
        v = np.transpose(v, axes)
        for ax, f in enumerate(flips):
            if f:
                v = np.flip(v, ax)
        return v

    assert ssim(t(a), t(b)) == pytest.approx(ssim(a, b), abs=1e-12)
    assert hfen(t(a), t(b)) == pytest.approx(hfen(a, b), rel=1e-10)


def test_report_and_tables():
    x = textured(3, 16)
    mask = np.ones_like(x)
    roi = np.zeros_like(x, dtype=bool)
    roi[5:8, 5:8, 5:8] = True
    rep = evaluate(x, x, mask, rois={"lesion": roi})
    assert (rep.nrmse, rep.hfen) == (0, 0) and rep.ssim == pytest.approx(1)
    row = rep.row()
    assert row["erosion"] == 2 and "lesion_mean" in row
    text = rows_to_csv([row])
    assert text.startswith("# ssim: sigma=1.5 radius=5 k1=0.01 k2=0.03; hfen: LoG sigma=1.5 radius=7")
    assert text.splitlines()[1].startswith("nrmse,ssim,hfen,erosion")
    assert "nrmse" in format_table([row])
    with pytest.raises(ValueError):
        MetricReport(-1, 0.5, 1)
    with pytest.raises(ValueError):
        MetricReport(1, 1.5, 1)
    with pytest.raises(ValueError):
        ssim(x, np.ones_like(x))
