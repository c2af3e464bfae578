"""Acquisition simulator: dipole kernel, field, background, phase."""

import numpy as np
from scipy import ndimage

from .volume import (
    as_array,
    check_orientation,
    fft3,
    ifft3,
    kgrid_for,
    symmetrize_even,
)

AXIAL = np.array([0.0, 0.0, 1.0])


def dipole_kernel(dims, p, voxel_size=(1.0, 1.0, 1.0)):
    """Unit dipole kernel ``D(k) = 1/3 - (p.k)^2 / |k|^2`` in FFT layout.

    ``k`` is the physical frequency, so non-cubic grids keep the correct
    angular dependence.  ``D(0)`` is set to 0 and the kernel is made exactly
    even on the grid (see :func:`~oaqsm.volume.symmetrize_even`).
    """
    p = check_orientation(p)
    dims = tuple(int(n) for n in dims)
    if min(dims) < 2:
        raise ValueError(f"dims must be >= 2 per axis, got {dims}")
    kx, ky, kz = kgrid_for(dims).mesh(voxel_size)
    k2 = kx**2 + ky**2 + kz**2
    pk = p[0] * kx + p[1] * ky + p[2] * kz
    with np.errstate(invalid="ignore", divide="ignore"):
        d = 1.0 / 3.0 - pk**2 / k2
    d[0, 0, 0] = 0.0
    return symmetrize_even(d)


def apply_kspace(v, mult):
    """Real part of ``ifft3(mult * fft3(v))``."""
    return np.real(ifft3(mult * fft3(v)))


def forward_field(chi, p, voxel_size=(1.0, 1.0, 1.0), kernel=None):
    """Local field (ppm) induced by susceptibility ``chi`` (ppm)."""
    chi = as_array(chi)
    if np.iscomplexobj(chi):
        raise ValueError("chi must be real")
    if kernel is None:
        kernel = dipole_kernel(chi.shape, p, voxel_size)
    elif kernel.shape != chi.shape:
        raise ValueError(f"kernel shape {kernel.shape} does not match chi {chi.shape}")
    return apply_kspace(chi, kernel)


def random_orientation(theta, phi):
    """Unit vector from polar angle ``theta`` in [0, pi] and azimuth ``phi`` in [0, 2 pi]."""
    if not 0.0 <= theta <= np.pi:
        raise ValueError(f"theta must lie in [0, pi], got {theta}")
    if not 0.0 <= phi <= 2.0 * np.pi:
        raise ValueError(f"phi must lie in [0, 2 pi], got {phi}")
    p = np.array([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])
    return p / np.linalg.norm(p)


def sample_orientation(rng):
    """Draw ``theta ~ U[0, pi]``, ``phi ~ U[0, 2 pi]`` and build the vector."""
    theta = rng.uniform(0.0, np.pi)
    phi = rng.uniform(0.0, 2.0 * np.pi)
    return random_orientation(theta, phi)


def sphere_mask(dims, center, radius):
    """Boolean ball on the voxel grid (centers in voxel units)."""
    x, y, z = np.ogrid[: dims[0], : dims[1], : dims[2]]
    c = center
    return (x - c[0]) ** 2 + (y - c[1]) ** 2 + (z - c[2]) ** 2 <= radius**2


def exterior_sources(mask, rng, n_sources=6, max_chi=9.0, radius=(1.5, 3.0), gap=3.0,
                     edge=2, smooth=1.0):
    """Random spherical sources placed strictly outside ``mask``.

    Each source ball keeps at least ``gap`` voxels from the mask and
    ``edge`` voxels from the volume boundary.  Fewer than ``n_sources`` are
    placed when the exterior is too thin.  The balls are blurred by a
    Gaussian of width ``smooth`` voxels: the spectral field of a hard-edged
    ball rings across the whole grid and is far from harmonic inside the
    mask.  Returns the susceptibility map (zero inside the mask).
    """
    mask = as_array(mask).astype(bool)
    if not mask.any():
        raise ValueError("mask is empty")
    dims = mask.shape
    dist = ndimage.distance_transform_edt(~mask)
    chi = np.zeros(dims)
    for _ in range(n_sources):
        r = rng.uniform(*radius)
        ok = dist >= r + gap
        lo = int(np.ceil(r)) + edge
        inner = np.zeros(dims, dtype=bool)
        inner[lo:dims[0] - lo, lo:dims[1] - lo, lo:dims[2] - lo] = True
        candidates = np.flatnonzero(ok & inner)
        if candidates.size == 0:
            continue
        idx = np.unravel_index(candidates[rng.integers(candidates.size)], dims)
        ball = sphere_mask(dims, idx, r)
        chi[ball] += rng.uniform(-max_chi, max_chi)
    if smooth:
        chi = ndimage.gaussian_filter(chi, smooth, mode="wrap")
        chi[mask] = 0.0
    return chi


def background_field(mask, rng=None, p=AXIAL, voxel_size=(1.0, 1.0, 1.0), sources=None,
                     **source_kw):
    """Harmonic background field inside ``mask`` from exterior sources.

    ``sources`` is an explicit exterior susceptibility map; when omitted,
    :func:`exterior_sources` draws one from ``rng``.  The field is zero
    outside the mask.
    """
    mask = as_array(mask).astype(bool)
    if not mask.any():
        raise ValueError("mask is empty")
    if sources is None:
        if rng is None:
            raise ValueError("either rng or sources is required")
        sources = exterior_sources(mask, rng, **source_kw)
    sources = as_array(sources)
    if np.any(sources[mask] != 0):
        raise ValueError("background sources must lie outside the mask")
    if not sources.any():
        return np.zeros(mask.shape)
    return forward_field(sources, p, voxel_size) * mask


def phase_evolve(field, meta):
    """Unwrapped phase (rad) from field (ppm) for a single echo."""
    return as_array(field) * meta.phase_scale()


def wrap_phase(phi):
    """Map phase to ``[-pi, pi)``."""
    phi = as_array(phi)
    w = np.mod(phi + np.pi, 2.0 * np.pi) - np.pi
    # mod can round up to exactly 2 pi for tiny negative inputs
    return np.where(w >= np.pi, w - 2.0 * np.pi, w)
