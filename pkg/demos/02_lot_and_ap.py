"""
Laplacian of trigonometric functions and the A_p operator
==========================================================

The Laplacian of the unwrapped phase can be read directly off the wrapped
phase: ``cos(phi) lap(sin(phi)) - sin(phi) lap(cos(phi))``.  Combined with
the dipole model this gives one linear operator from chi to the observed
Laplacian.
"""

import numpy as np

from oaqsm.operators import apply_Ap, laplacian, lot
from oaqsm.physics import forward_field, sample_orientation, wrap_phase

gen = np.random.default_rng(3)

###############################################################################
# A smooth phase with several wraps.

n = 32
k = np.fft.fftfreq(n)
k2 = k[:, None, None] ** 2 + k[None, :, None] ** 2 + k[None, None, :] ** 2
v = np.real(np.fft.ifftn(np.fft.fftn(gen.normal(size=(n, n, n))) * (k2 < 0.045**2)))
phi = 12 * v / np.abs(v).max()
print("phase range %.1f rad (%d wraps)" % (np.ptp(phi), np.ptp(phi) // (2 * np.pi)))

a, b = lot(wrap_phase(phi)), lot(phi)
print("LoT(wrapped) vs LoT(true): max diff %.1e" % np.abs(a - b).max())
print("LoT vs Laplacian of the true phase: rel err %.3f"
      % (np.linalg.norm(b - laplacian(phi)) / np.linalg.norm(laplacian(phi))))

###############################################################################
# 27-point stencil against the spectral route. The stencil is what the
# network's LoT layer is initialized with. It needs small phase steps between
# neighbours: sin and cos of a steep phase carry frequencies the stencil
# cannot resolve. The stencil also zero-pads while the spectral route is
# periodic, so the comparison skips a two-voxel border.

inner = (slice(2, -2),) * 3
for amp in (12, 3):
    w = wrap_phase(amp * v / np.abs(v).max())
    s, a2 = lot(w, mode="stencil")[inner], lot(w)[inner]
    print("amplitude %2d rad: stencil vs spectral LoT rel err %.3f"
          % (amp, np.linalg.norm(s - a2) / np.linalg.norm(a2)))

###############################################################################
# A_p in k-space is -|k|^2 D(k): applying it equals the Laplacian of the
# forward field, for any orientation.

chi = gen.normal(size=(n, n, n))
for _ in range(3):
    p = sample_orientation(gen)
    lhs, rhs = apply_Ap(chi, p), laplacian(forward_field(chi, p))
    print("p = %s  identity rel err %.1e"
          % (np.round(p, 3), np.linalg.norm(lhs - rhs) / np.linalg.norm(rhs)))
