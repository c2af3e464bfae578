"""Laplacian, LoT and the orientation-dependent single-step operator.

Both ``spectral`` (periodic, exact on the DFT grid) and ``stencil``
(3x3x3 finite differences, zero-padded boundaries) forms are provided.
"""

import numpy as np
from scipy import ndimage

from .physics import apply_kspace, dipole_kernel
from .volume import as_array, check_orientation, kgrid_for

MODES = ("spectral", "stencil")


def _laplacian_stencil():
    w = np.empty((3, 3, 3))
    for idx in np.ndindex(3, 3, 3):
        nonzero = sum(i != 1 for i in idx)
        w[idx] = {0: -44.0 / 13.0, 1: 3.0 / 13.0, 2: 3.0 / 26.0, 3: 1.0 / 13.0}[nonzero]
    w.flags.writeable = False
    return w


#: 27-point Laplacian weights for unit voxel spacing
STENCIL27 = _laplacian_stencil()


def _check_mode(mode):
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}, expected one of {MODES}")


def _isotropic_h(voxel_size):
    vs = np.broadcast_to(np.asarray(voxel_size, dtype=float), (3,))
    if not np.allclose(vs, vs[0], rtol=1e-9, atol=0):
        raise ValueError(f"stencil Laplacian needs isotropic voxels, got {tuple(vs)}")
    return float(vs[0])


def laplacian_multiplier(dims, voxel_size=(1.0, 1.0, 1.0)):
    """``-(2 pi)^2 |k / L|^2`` on the FFT grid."""
    kx, ky, kz = kgrid_for(dims).mesh(voxel_size)
    return -((2.0 * np.pi) ** 2) * (kx**2 + ky**2 + kz**2)


def correlate3(v, kernel):
    """Zero-padded 3x3x3 correlation with 'same' output size."""
    return ndimage.correlate(v, kernel, mode="constant", cval=0.0)


def laplacian(v, mode="spectral", voxel_size=(1.0, 1.0, 1.0)):
    _check_mode(mode)
    v = as_array(v)
    if np.iscomplexobj(v):
        raise ValueError("laplacian expects a real volume")
    if mode == "spectral":
        return apply_kspace(v, laplacian_multiplier(v.shape, voxel_size))
    h = _isotropic_h(voxel_size)
    return correlate3(v, STENCIL27 / h**2)


def lot(phi_w, mode="spectral", voxel_size=(1.0, 1.0, 1.0)):
    """Laplacian of the unwrapped phase computed from wrapped phase.

    ``cos(phi) lap(sin(phi)) - sin(phi) lap(cos(phi))``
    """
    phi_w = as_array(phi_w)
    s, c = np.sin(phi_w), np.cos(phi_w)
    return c * laplacian(s, mode, voxel_size) - s * laplacian(c, mode, voxel_size)


def ap_stencil(p, voxel_size=(1.0, 1.0, 1.0)):
    """3x3x3 finite-difference kernel of the single-step operator.

    Second derivatives use ``[1, -2, 1] / h^2`` weighted by ``1/3 - p_i^2``;
    mixed derivatives use the centered 4-point diagonal stencil weighted by
    ``-2 p_i p_j``.
    """
    p = check_orientation(p)
    h = np.broadcast_to(np.asarray(voxel_size, dtype=float), (3,))
    k = np.zeros((3, 3, 3))
    for i in range(3):
        w = (1.0 / 3.0 - p[i] ** 2) / h[i] ** 2
        for off, coef in ((-1, 1.0), (0, -2.0), (1, 1.0)):
            idx = [1, 1, 1]
            idx[i] += off
            k[tuple(idx)] += w * coef
    for i, j in ((0, 1), (0, 2), (1, 2)):
        w = -2.0 * p[i] * p[j] / (4.0 * h[i] * h[j])
        for si in (-1, 1):
            for sj in (-1, 1):
                idx = [1, 1, 1]
                idx[i] += si
                idx[j] += sj
                k[tuple(idx)] += w * si * sj
    return k


def ap_multiplier(dims, p, voxel_size=(1.0, 1.0, 1.0)):
    """k-space multiplier ``-|2 pi k / L|^2 D_p(k)``."""
    return laplacian_multiplier(dims, voxel_size) * dipole_kernel(dims, p, voxel_size)


def apply_Ap(chi, p, mode="spectral", voxel_size=(1.0, 1.0, 1.0)):
    """Map susceptibility to the Laplacian-domain phase observation (per unit phase scale)."""
    _check_mode(mode)
    chi = as_array(chi)
    if np.iscomplexobj(chi):
        raise ValueError("chi must be real")
    if mode == "spectral":
        return apply_kspace(chi, ap_multiplier(chi.shape, p, voxel_size))
    return correlate3(chi, ap_stencil(p, voxel_size))
