"""Non-learned dipole inversion baselines.

* :func:`tkd_inversion`: thresholded k-space division
* :func:`tikhonov_inversion`: closed-form ridge-regularized division
* :func:`cg_normal_solve`: conjugate gradients on the regularized normal
  equations, for either the dipole operator (local field input) or the
  single-step Laplacian-domain operator (LoT input)
"""

from dataclasses import dataclass, field
from typing import List

import numpy as np

from .operators import ap_multiplier, apply_Ap, laplacian_multiplier
from .physics import apply_kspace, dipole_kernel
from .volume import as_array, fft3, ifft3


@dataclass(frozen=True)
class InversionConfig:
    tkd_threshold: float = 0.2
    tikhonov_lambda: float = 1e-2
    cg_max_iters: int = 100
    cg_tolerance: float = 1e-6

    def __post_init__(self):
        if not 0.0 < self.tkd_threshold <= 2.0 / 3.0:
            raise ValueError(f"tkd_threshold must lie in (0, 2/3], got {self.tkd_threshold}")
        if self.tikhonov_lambda < 0:
            raise ValueError("tikhonov_lambda must be >= 0")
        if self.cg_max_iters < 1:
            raise ValueError("cg_max_iters must be >= 1")
        if not self.cg_tolerance > 0:
            raise ValueError("cg_tolerance must be positive")


class DivergenceError(ArithmeticError):
    """CG residual grew for too many consecutive iterations."""


@dataclass
class CGReport:
    converged: bool
    iterations: int
    residuals: List[float] = field(default_factory=list)

    @property
    def final_residual(self):
        return self.residuals[-1] if self.residuals else 0.0


def tkd_inversion(field, p, cfg=InversionConfig(), voxel_size=(1.0, 1.0, 1.0)):
    """Thresholded k-space division of a local field map."""
    field = as_array(field)
    t = cfg.tkd_threshold
    d = dipole_kernel(field.shape, p, voxel_size)
    inv = np.where(np.abs(d) >= t, 1.0 / np.where(d == 0, 1.0, d), np.sign(d) / t)
    inv[0, 0, 0] = 0.0
    return np.real(ifft3(fft3(field) * inv))


def tikhonov_inversion(field, p, cfg=InversionConfig(), voxel_size=(1.0, 1.0, 1.0)):
    """``chi(k) = D field / (D^2 + lambda)``; bins with ``D = 0`` map to zero."""
    field = as_array(field)
    lam = cfg.tikhonov_lambda
    d = dipole_kernel(field.shape, p, voxel_size)
    den = d**2 + lam
    inv = np.divide(d, den, out=np.zeros_like(d), where=den > 0)
    return np.real(ifft3(fft3(field) * inv))


def _operator(kind, shape, p, voxel_size, mode):
    """Return ``(A, A^T, P)``: forward operator, its adjoint and a data-side normalizer.

    The Laplacian-domain operator has units of 1/mm^2; ``P`` (the inverse
    spectral Laplacian, DC mapped to 0) makes ``P A`` dimensionless so the
    same ridge weight means the same thing for both operators.
    """
    if kind == "dipole":
        d = dipole_kernel(shape, p, voxel_size)
        a = lambda x: apply_kspace(x, d)  # noqa: E731
        return a, a, None
    if kind == "Ap":
        if mode == "spectral":
            m = ap_multiplier(shape, p, voxel_size)
            a = lambda x: apply_kspace(x, m)  # noqa: E731
        else:
            a = lambda x: apply_Ap(x, p, "stencil", voxel_size)  # noqa: E731
        lap = laplacian_multiplier(shape, voxel_size)
        inv = np.divide(1.0, lap, out=np.zeros_like(lap), where=lap != 0)
        # both Ap forms are symmetric (real even multiplier / point-symmetric stencil)
        return a, a, (lambda x: apply_kspace(x, inv))
    raise ValueError(f"unknown operator {kind!r}, expected 'dipole' or 'Ap'")


def cg_normal_solve(rhs, p, cfg=InversionConfig(), operator="dipole",
                    voxel_size=(1.0, 1.0, 1.0), mode="spectral", x0=None,
                    divergence_window=10):
    """Solve the ridge-regularized normal equations by conjugate residuals.

    With ``B = P A`` (``P`` is the identity for ``operator="dipole"`` and the
    inverse Laplacian for ``operator="Ap"``) the system is
    ``(B^T B + lambda I) chi = B^T P rhs``.  The conjugate-residual variant
    of CG minimizes the residual over each Krylov space, so the reported
    residual sequence never increases.

    Returns ``(chi, CGReport)`` with residuals relative to ``||B^T P rhs||``.
    Raises :class:`DivergenceError` if the residual increases over
    ``divergence_window`` consecutive iterations (a symptom of an operator
    that is not symmetric positive definite).
    """
    rhs = as_array(rhs).astype(np.float64)
    lam = cfg.tikhonov_lambda
    A, At, P = _operator(operator, rhs.shape, p, voxel_size, mode)
    if P is None:
        P = lambda x: x  # noqa: E731

    def normal(x):
        return At(P(P(A(x)))) + lam * x

    b = At(P(P(rhs)))
    bnorm = np.linalg.norm(b)
    x = np.zeros_like(rhs) if x0 is None else np.array(as_array(x0), dtype=np.float64)
    if bnorm == 0.0:
        if x0 is None:
            return x, CGReport(True, 0, [0.0])
        bnorm = 1.0
    r = b - normal(x)
    nr = normal(r)
    d, nd = r.copy(), nr.copy()
    rnr = float(np.vdot(r, nr))
    residuals = [np.linalg.norm(r) / bnorm]
    increases = 0
    converged = residuals[-1] <= cfg.cg_tolerance
    it = 0
    while not converged and it < cfg.cg_max_iters:
        it += 1
        ndnd = float(np.vdot(nd, nd))
        if ndnd == 0.0 or rnr <= 0.0:
            raise DivergenceError("normal operator is not positive definite")
        alpha = rnr / ndnd
        x += alpha * d
        r -= alpha * nd
        res = np.linalg.norm(r) / bnorm
        if not np.isfinite(res):
            raise DivergenceError("non-finite residual")
        increases = increases + 1 if res > residuals[-1] else 0
        residuals.append(res)
        if increases >= divergence_window:
            raise DivergenceError(f"residual increased for {increases} consecutive iterations")
        converged = res <= cfg.cg_tolerance
        if converged:
            break
        nr = normal(r)
        rnr_new = float(np.vdot(r, nr))
        beta = rnr_new / rnr
        d = r + beta * d
        nd = nr + beta * nd
        rnr = rnr_new
    return x, CGReport(converged, it, residuals)
