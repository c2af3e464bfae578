"""Volumes, orientation vectors, acquisition metadata and the k-space grid.

Conventions used throughout the package:

* Arrays are indexed ``[x, y, z]``.  On disk the payload is x-fastest, which
  is Fortran order for such an array.
* ``fft3`` is the unnormalized forward DFT and ``ifft3`` divides by
  ``nx * ny * nz``, so ``ifft3(fft3(v)) == v``.
* All computation is double precision.
"""

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

#: proton gyromagnetic ratio over 2 pi, Hz/T
GAMMA_BAR = 42.5774785e6

ORIENTATION_TOL = 1e-9


def check_orientation(p, tol=ORIENTATION_TOL):
    """Validate a dipole orientation and return it as a float64 3-vector."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (3,):
        raise ValueError(f"orientation must be a 3-vector, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError("orientation contains non-finite values")
    norm = np.linalg.norm(p)
    if abs(norm - 1.0) > tol:
        raise ValueError(f"orientation must be a unit vector, |p| = {norm!r}")
    return p


def normalize_orientation(p):
    """Scale ``p`` to unit length; a zero vector is rejected."""
    p = np.asarray(p, dtype=np.float64)
    norm = np.linalg.norm(p)
    if p.shape != (3,) or not np.isfinite(norm) or norm == 0.0:
        raise ValueError(f"cannot normalize orientation {p!r}")
    return p / norm


def _voxel_tuple(voxel_size):
    vs = tuple(float(v) for v in np.broadcast_to(np.asarray(voxel_size, dtype=np.float64), (3,)))
    if not all(np.isfinite(v) and v > 0 for v in vs):
        raise ValueError(f"voxel size must be strictly positive, got {vs}")
    return vs


@dataclass(frozen=True)
class Volume3:
    """Immutable 3D field with voxel size in millimetres.

    ``data`` is stored as a read-only float64 or complex128 array.
    """

    data: np.ndarray
    voxel_size: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    allow_nonfinite: bool = field(default=False, repr=False)

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ValueError(f"Volume3 needs a non-empty 3D array, got shape {arr.shape}")
        arr = np.array(arr, dtype=np.complex128 if np.iscomplexobj(arr) else np.float64)
        if not self.allow_nonfinite and not np.all(np.isfinite(arr)):
            raise ValueError("Volume3 samples must be finite")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "voxel_size", _voxel_tuple(self.voxel_size))

    @property
    def dims(self):
        return self.data.shape

    @property
    def fov(self):
        """Field of view per axis in millimetres."""
        return tuple(n * h for n, h in zip(self.dims, self.voxel_size))

    @property
    def is_complex(self):
        return np.iscomplexobj(self.data)


@dataclass(frozen=True)
class AcquisitionMeta:
    """Field strength (T), echo time (s), dipole orientation and voxel size (mm).

    Any of ``b0``, ``te`` and ``orientation`` may be ``None`` when a file
    header does not carry it.
    """

    b0: Optional[float] = None
    te: Optional[float] = None
    orientation: Optional[np.ndarray] = None
    voxel_size: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        for name in ("b0", "te"):
            v = getattr(self, name)
            if v is not None:
                if not (np.isfinite(v) and v > 0):
                    raise ValueError(f"{name} must be positive, got {v}")
                object.__setattr__(self, name, float(v))
        if self.orientation is not None:
            p = check_orientation(self.orientation)
            p.flags.writeable = False
            object.__setattr__(self, "orientation", p)
        object.__setattr__(self, "voxel_size", _voxel_tuple(self.voxel_size))

    def phase_scale(self):
        """Radians of phase per ppm of field: ``2 pi gamma_bar B0 TE 1e-6``."""
        if self.b0 is None or self.te is None:
            raise ValueError("B0 and TE are required to convert field to phase")
        return 2.0 * np.pi * GAMMA_BAR * self.b0 * self.te * 1e-6


def fft3(v):
    """Unnormalized forward 3D DFT."""
    v = np.asarray(v)
    if v.ndim != 3:
        raise ValueError(f"fft3 expects a 3D array, got ndim={v.ndim}")
    if v.size > np.iinfo(np.int64).max // 16:
        raise OverflowError("volume too large for FFT")
    return np.fft.fftn(v)


def ifft3(s):
    """Inverse of :func:`fft3` (divides by the number of voxels)."""
    s = np.asarray(s)
    if s.ndim != 3:
        raise ValueError(f"ifft3 expects a 3D array, got ndim={s.ndim}")
    return np.fft.ifftn(s)


def axis_frequencies(n):
    """Integer frequencies of an n-point DFT in FFT order.

    The Nyquist bin of an even length is reported once, as ``+n/2``.
    """
    if n < 2:
        raise ValueError(f"axis length must be >= 2, got {n}")
    k = np.fft.fftfreq(n) * n
    k = np.rint(k)
    if n % 2 == 0:
        k[n // 2] = n // 2
    return k


def negated_index(n):
    """Index map ``i -> (-i) mod n`` on an n-point DFT axis."""
    return (-np.arange(n)) % n


@dataclass(frozen=True)
class KGrid:
    """Per-axis integer frequencies (cycles per FOV) laid out like ``fft3``."""

    dims: Tuple[int, int, int]
    kx: np.ndarray
    ky: np.ndarray
    kz: np.ndarray

    def mesh(self, voxel_size=None):
        """Broadcastable frequency arrays.

        With ``voxel_size`` the frequencies are physical, in cycles per mm
        (``k / FOV``); otherwise integer cycles per FOV.
        """
        ks = [self.kx, self.ky, self.kz]
        if voxel_size is not None:
            vs = _voxel_tuple(voxel_size)
            ks = [k / (n * h) for k, n, h in zip(ks, self.dims, vs)]
        return (ks[0][:, None, None], ks[1][None, :, None], ks[2][None, None, :])


def kgrid_for(dims):
    dims = tuple(int(n) for n in dims)
    if len(dims) != 3:
        raise ValueError(f"dims must have three entries, got {dims}")
    return KGrid(dims, *(axis_frequencies(n) for n in dims))


def symmetrize_even(mult):
    """Average a k-space multiplier with its point reflection ``k -> -k``.

    On even-length axes the Nyquist bin is its own negative, so a multiplier
    that is odd in a cross term there (e.g. ``kx * ky``) is not even on the
    grid.  Averaging restores ``M(k) == M(-k)``, which keeps the image-domain
    operator real and self-adjoint.
    """
    ix, iy, iz = (negated_index(n) for n in mult.shape)
    return 0.5 * (mult + mult[np.ix_(ix, iy, iz)])


def as_array(v):
    """Unwrap a :class:`Volume3` (or pass an array through)."""
    return v.data if isinstance(v, Volume3) else np.asarray(v)
