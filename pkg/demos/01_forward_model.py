"""
Forward model: from susceptibility to wrapped phase
===================================================

Build a numerical phantom, push it through the dipole kernel, add a
background field from sources outside the brain mask, then convert to
radians and wrap.  Run with ``python demos/01_forward_model.py``.
"""

import numpy as np

from oaqsm import rng as rngmod
from oaqsm.phantom import default_spec, generate_phantom
from oaqsm.physics import (background_field, dipole_kernel, forward_field, phase_evolve,
                           sphere_mask, wrap_phase)
from oaqsm.volume import AcquisitionMeta

seed = 7
gen = rngmod.stream(seed, rngmod.PHANTOM)

###############################################################################
# The dipole kernel is a k-space multiplier. It vanishes on a double cone
# around the orientation vector p, which is what makes the inversion ill-posed.

p = np.array([0.0, 0.5, 1.0])
p /= np.linalg.norm(p)
D = dipole_kernel((64, 64, 64), p)
print("D range: [%.4f, %.4f]" % (D.min(), D.max()))
print("fraction of k-space with |D| < 0.2: %.3f" % np.mean(np.abs(D) < 0.2))

###############################################################################
# A uniform sphere gives a closed-form exterior field, which is a cheap check
# of the whole FFT pipeline.

n, R = 64, 8
chi = sphere_mask((n,) * 3, (n // 2,) * 3, R).astype(float)
field = forward_field(chi, [0, 0, 1])
x, y, z = np.meshgrid(*(np.arange(n) - n // 2,) * 3, indexing="ij")
r = np.sqrt(x**2 + y**2 + z**2)
shell = (r > 1.5 * R) & (r < 3 * R)
oracle = (R / r[shell]) ** 3 * (3 * z[shell] ** 2 / r[shell] ** 2 - 1) / 3
err = np.sqrt(np.mean((field[shell] - oracle) ** 2) / np.mean(oracle**2))
print("sphere exterior RMS error: %.2f %%" % (100 * err))

###############################################################################
# Now a phantom. The local field comes from tissue inside the mask, the
# background from strong sources placed outside it.

spec = default_spec(lesion=True)
chi, mask = generate_phantom(spec, gen)
mask = mask > 0
local = forward_field(chi, p)
bg = background_field(mask, rngmod.stream(seed, rngmod.SAMPLE), p=p)
meta = AcquisitionMeta(b0=3.0, te=0.02, orientation=p)
phase = phase_evolve(local + bg, meta)
wrapped = wrap_phase(phase) * mask

print("chi inside mask: mean %.3f, max %.3f ppm" % (chi[mask].mean(), chi.max()))
print("local field std %.4f ppm, background std %.4f ppm" % (local[mask].std(), bg[mask].std()))
print("phase scale %.4f rad/ppm" % meta.phase_scale())
print("unwrapped phase spans %.1f rad; wrapped stays in [%.3f, %.3f)"
      % (np.ptp(phase[mask]), wrapped.min(), wrapped.max()))
