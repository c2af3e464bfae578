"""Orientation-adaptive susceptibility reconstruction toolkit.

Simulates MRI phase of susceptibility phantoms at arbitrary dipole
orientations, reconstructs susceptibility with classical solvers or with
small U-shaped networks conditioned on the orientation through OA-LFE
blocks, and scores the results.
"""

from .classical import InversionConfig, cg_normal_solve, tikhonov_inversion, tkd_inversion
from .metrics import MetricReport, evaluate, hfen, nrmse, roi_stats, ssim
from .operators import apply_Ap, laplacian, lot
from .phantom import PhantomSpec, default_spec, generate_phantom, random_spec
from .physics import (background_field, dipole_kernel, forward_field, phase_evolve,
                      random_orientation, wrap_phase)
from .qvol import read_qvol, write_qvol
from .training import TrainConfig, TrainingSample, make_sample, orientation_sweep_eval, train
from .volume import AcquisitionMeta, KGrid, Volume3

__version__ = "0.1.0"
