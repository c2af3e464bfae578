"""
The orientation-adaptive feature editing block
==============================================

Three small MLPs map the orientation vector p to a 3x3x3 kernel K and two
per-channel vectors V1, V2.  The block returns ``H + V1 * (H conv K) + V2``,
so with zeroed MLPs it is the identity.
"""

import numpy as np

from oaqsm import gradcheck
from oaqsm.nn import build_backbone, network_forward
from oaqsm.nn.oalfe import init_oalfe, mlp_forward, oalfe_forward

gen = np.random.default_rng(0)
params = {h: {k: gen.normal(0, 0.5, size=v.shape) for k, v in m.items()}
          for h, m in init_oalfe(gen, 4).items()}
h = gen.normal(size=(2, 4, 8, 8, 8))

###############################################################################
# Different orientations edit the same features differently.

for p in ([0, 0, 1], [0, 1, 0], [0, 0.6, 0.8]):
    pp = np.array([p], float)
    K = mlp_forward(pp, params["fek"])[0].reshape(3, 3, 3)
    y, _ = oalfe_forward(h[:1], pp, params)
    print("p=%s  |K|=%.3f  |y - h|/|h| = %.3f"
          % (p, np.linalg.norm(K), np.linalg.norm(y - h[:1]) / np.linalg.norm(h[:1])))

###############################################################################
# Residual identity on a whole network: zero every MLP parameter and the
# oalfe=on network matches the oalfe=off network with the same weights.

on = build_backbone("xqsm", levels=2, base=4, oalfe=True, seed=1)
off = build_backbone("xqsm", levels=2, base=4, oalfe=False, seed=1)
for k in off.params:
    off.params[k][...] = on.params[k]
for k in on.params:
    if ".oalfe." in k:
        on.params[k][...] = 0.0
x = gen.normal(size=(1, 16, 16, 16))
a = network_forward(on, x, np.array([[0, 0.6, 0.8]]))[0]
b = network_forward(off, x, None)[0]
print("oalfe=on (zeroed) vs oalfe=off: max diff %.1e" % np.abs(a - b).max())

###############################################################################
# Every backward pass is checked against central differences.

for res in gradcheck.run_all(include_network=False):
    print("%-18s %.1e %s" % (res.name, res.error, "ok" if res.passed else "FAIL"))
