"""
Training a small network and probing its orientation use
=========================================================

A desk-sized run: a few epochs on 32^3 random phantoms.  Pass a number of
epochs and phantoms on the command line for a longer run, e.g.
``python demos/05_train_and_probe.py 30 64``.  The defaults finish in a
few minutes and only show the mechanics; the numbers get meaningful at the
acceptance-test budget.
"""

import sys

import numpy as np

from oaqsm import rng as rngmod
from oaqsm.metrics import erode, nrmse
from oaqsm.training import (AcquisitionMeta, TrainConfig, TrainingSample, make_label_set,
                            net_method, orientation_sweep_eval, simulate, spread, train)
from oaqsm.volume import Volume3

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 3
n_phantoms = int(sys.argv[2]) if len(sys.argv) > 2 else 8

cfg = TrainConfig(kind="xqsm", oalfe=True, orientation_mode="full-sphere", epochs=epochs,
                  n_phantoms=n_phantoms, batch_size=1)
labels = make_label_set(cfg)
net, log = train(labels, cfg, progress=lambda r: print(
    "epoch %d step %d loss %.4g" % (r["epoch"], r["step"], r["total"])) if r["step"] == 0 else None)

###############################################################################
# Sweep the trained model over ten orientations on an unseen phantom.

test = make_label_set(TrainConfig(n_phantoms=1, seed=999, lesion_fraction=1.0))[0]
rows = orientation_sweep_eval(net_method(net), test)
print("per-angle NRMSE", [round(float(r["nrmse"]), 1) for r in rows], "spread %.1f" % spread(rows))

###############################################################################
# Reconstruct an oblique acquisition twice: with its true p, and with
# p = [0, 0, 1] substituted. A model that uses p gets the first one right.

p = np.array([0, 1.0, 1.0]) / np.sqrt(2)
meta = AcquisitionMeta(3.0, 0.02, p)
phase, local = simulate(test.chi, test.mask, p, meta, rngmod.stream(0, rngmod.EVAL))
s = TrainingSample(Volume3(phase), p, meta, Volume3(test.chi), Volume3(local),
                   test.mask.astype(bool), 0)
em = erode(test.mask, 2)
right = nrmse(net_method(net)(s), test.chi, em)
wrong = nrmse(net_method(net, [0, 0, 1])(s), test.chi, em)
print("NRMSE with true p %.1f, with axial p %.1f" % (right, wrong))
