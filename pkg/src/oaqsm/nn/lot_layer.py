"""Learnable Laplacian-of-trigonometric-functions input layer.

For each output channel ``c`` with its own 3x3x3 kernel ``L_c``::

    out_c = (cos(phi) * (L_c (*) sin(phi)) - sin(phi) * (L_c (*) cos(phi))) / (s * h^2)

where ``s = 2 pi gamma_bar B0 TE 1e-6`` converts ppm to radians and ``h`` is
the isotropic voxel size, so channels come out in ppm / mm^2.  Kernels start
as the 27-point Laplacian stencil.
"""

import numpy as np

from ..operators import STENCIL27
from .layers import _offsets


def init_lot_kernels(channels=4):
    return np.repeat(np.array(STENCIL27)[None], channels, axis=0)


def lot_inv_scale(meta):
    """Per-sample divisor ``1 / (s h^2)`` from an :class:`AcquisitionMeta`."""
    vs = np.asarray(meta.voxel_size, dtype=float)
    if not np.allclose(vs, vs[0]):
        raise ValueError("LoT layer needs isotropic voxels")
    return 1.0 / (meta.phase_scale() * vs[0] ** 2)


def _correlate_bank(vp, kernels, shape):
    """``(N, X+2, Y+2, Z+2)`` padded input against ``(C, 3, 3, 3)`` kernels."""
    X, Y, Z = shape
    out = np.zeros((vp.shape[0], kernels.shape[0], X, Y, Z))
    for i, j, l in _offsets(3):
        out += kernels[None, :, i, j, l, None, None, None] * vp[:, None, i:i + X, j:j + Y, l:l + Z]
    return out


def lot_layer_forward(phi, inv_scale, kernels):
    """``phi`` is ``(N, X, Y, Z)`` or ``(N, 1, X, Y, Z)``; returns ``(N, C, X, Y, Z)``."""
    phi = np.asarray(phi, dtype=np.float64)
    if phi.ndim == 5:
        if phi.shape[1] != 1:
            raise ValueError("LoT layer takes a single input channel")
        phi = phi[:, 0]
    if phi.ndim != 4:
        raise ValueError(f"phase must be (N, X, Y, Z), got {phi.shape}")
    inv_scale = np.broadcast_to(np.asarray(inv_scale, dtype=np.float64), (phi.shape[0],))
    if kernels.ndim != 4 or kernels.shape[1:] != (3, 3, 3):
        raise ValueError(f"kernels must be (C, 3, 3, 3), got {kernels.shape}")
    shape = phi.shape[1:]
    s, c = np.sin(phi), np.cos(phi)
    pad = ((0, 0), (1, 1), (1, 1), (1, 1))
    sp, cp = np.pad(s, pad), np.pad(c, pad)
    ls = _correlate_bank(sp, kernels, shape)
    lc = _correlate_bank(cp, kernels, shape)
    isc = inv_scale[:, None, None, None, None]
    out = isc * (c[:, None] * ls - s[:, None] * lc)
    return out, (s, c, sp, cp, ls, lc, inv_scale, kernels)


def lot_layer_backward(dy, cache):
    """Return ``(dphi, dkernels)``; ``dphi`` is ``(N, X, Y, Z)``."""
    s, c, sp, cp, ls, lc, inv_scale, kernels = cache
    X, Y, Z = s.shape[1:]
    g = dy * inv_scale[:, None, None, None, None]
    dk = np.zeros_like(kernels)
    gc = g * c[:, None]
    gs = g * s[:, None]
    for i, j, l in _offsets(3):
        dk[:, i, j, l] = (np.einsum("ncxyz,nxyz->c", gc, sp[:, i:i + X, j:j + Y, l:l + Z])
                          - np.einsum("ncxyz,nxyz->c", gs, cp[:, i:i + X, j:j + Y, l:l + Z]))
    # pointwise dependence on phi through the outer cos / sin factors
    dphi = -(g * (s[:, None] * ls + c[:, None] * lc)).sum(axis=1)
    # dependence through the correlated sin / cos fields (adjoint correlation)
    dsp = np.zeros_like(sp)
    dcp = np.zeros_like(cp)
    for i, j, l in _offsets(3):
        w = kernels[None, :, i, j, l, None, None, None]
        dsp[:, i:i + X, j:j + Y, l:l + Z] += (w * gc).sum(axis=1)
        dcp[:, i:i + X, j:j + Y, l:l + Z] -= (w * gs).sum(axis=1)
    ds = dsp[:, 1:-1, 1:-1, 1:-1]
    dc = dcp[:, 1:-1, 1:-1, 1:-1]
    dphi += ds * c - dc * s
    return dphi, dk
