"""Central finite-difference checks of every analytic backward pass.

Each check builds a small random fixture, projects the output onto a fixed
random tensor to get a scalar, and compares the analytic gradient with
central differences on a random subset of coordinates.  The reported error
is ``max |analytic - numeric| / max |numeric|`` over the probed entries.
"""

from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .nn import layers
from .nn.lot_layer import lot_layer_backward, lot_layer_forward
from .nn.network import build_backbone, network_backward, network_forward
from .nn.oalfe import HEADS, init_oalfe, mlp_backward, mlp_forward, oalfe_backward, oalfe_forward
from .physics import sample_orientation

LAYER_TOL = 1e-5
NETWORK_TOL = 1e-4
EPS = 1e-6


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float

    @property
    def passed(self):
        return bool(self.error <= self.tol)


def rel_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    scale = np.abs(numeric).max()
    if scale == 0:
        return float(np.abs(analytic).max())
    return float(np.abs(analytic - numeric).max() / scale)


def numeric_grad(f, x, idx, eps=EPS):
    """Central differences of scalar ``f()`` w.r.t. ``x.flat[idx]`` (``x`` perturbed in place)."""
    flat = x.reshape(-1)
    out = np.empty(len(idx))
    for j, i in enumerate(idx):
        old = flat[i]
        flat[i] = old + eps
        fp = f()
        flat[i] = old - eps
        fm = f()
        flat[i] = old
        out[j] = (fp - fm) / (2 * eps)
    return out


def _probe(gen, x, count):
    n = x.size
    return np.arange(n) if n <= count else gen.choice(n, size=count, replace=False)


def compare(f, tensors, grads, gen, count=12, eps=EPS):
    """Worst relative error over every ``(tensor, analytic grad)`` pair."""
    worst = 0.0
    for x, g in zip(tensors, grads):
        idx = _probe(gen, x, count)
        num = numeric_grad(f, x, idx, eps)
        worst = max(worst, rel_error(g.reshape(-1)[idx], num))
    return worst


def _away_from_zero(gen, shape, margin=0.05):
    x = gen.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x) * margin + x, x)


def _layer_fixtures(gen):
    """``(name, forward, inputs, backward)``; forward returns one array."""
    out = []
    x = gen.normal(size=(2, 3, 6, 5, 4))
    w = gen.normal(size=(4, 3, 3, 3, 3))
    b = gen.normal(size=4)
    out.append(("conv3d", lambda x, w, b: layers.conv3d_forward(x, w, b),
                [x, w, b], layers.conv3d_backward))
    w1 = gen.normal(size=(2, 3, 1, 1, 1))
    out.append(("conv1x1", lambda x, w, b: layers.conv1x1_forward(x, w, b),
                [x.copy(), w1, gen.normal(size=2)], layers.conv1x1_backward))
    xt = gen.normal(size=(2, 4, 3, 2, 3))
    wt = gen.normal(size=(4, 3, 2, 2, 2))
    out.append(("conv_transpose", lambda x, w, b: layers.conv_transpose_forward(x, w, b),
                [xt, wt, gen.normal(size=3)], layers.conv_transpose_backward))
    out.append(("maxpool", layers.maxpool_forward, [gen.normal(size=(2, 2, 4, 6, 4))],
                layers.maxpool_backward))
    out.append(("relu", layers.relu_forward, [_away_from_zero(gen, (2, 2, 3, 3, 3))],
                layers.relu_backward))
    out.append(("silu", layers.silu_forward, [gen.normal(size=(2, 2, 3, 3, 3))],
                layers.silu_backward))
    out.append(("add", layers.add_forward, [gen.normal(size=(2, 2, 3, 3, 3)),
                                             gen.normal(size=(2, 2, 3, 3, 3))],
                layers.add_backward))
    out.append(("concat", layers.concat_forward, [gen.normal(size=(2, 2, 3, 3, 3)),
                                                   gen.normal(size=(2, 3, 3, 3, 3))],
                layers.concat_backward))
    out.append(("depthwise_shared", layers.depthwise_shared_forward,
                [gen.normal(size=(2, 3, 5, 4, 6)), gen.normal(size=(2, 3, 3, 3))],
                layers.depthwise_shared_backward))
    out.append(("linear", layers.linear_forward,
                [gen.normal(size=(4, 5)), gen.normal(size=(3, 5)), gen.normal(size=3)],
                layers.linear_backward))
    return out


def check_layers(seed=0, tol=LAYER_TOL):
    gen = rngmod.stream(seed, rngmod.EVAL, 0)
    results = []
    for name, fwd, inputs, bwd in _layer_fixtures(gen):
        y, cache = fwd(*inputs)
        r = gen.normal(size=y.shape)
        grads = bwd(r, cache)
        err = compare(lambda: float(np.sum(fwd(*inputs)[0] * r)), inputs, grads, gen)
        results.append(CheckResult(name, err, tol))
    return results


def check_mlp(seed=0, tol=LAYER_TOL):
    gen = rngmod.stream(seed, rngmod.EVAL, 1)
    params = {k: gen.normal(0, 0.5, size=v.shape) for k, v in
              init_oalfe(gen, 4)["fev1"].items()}
    p = np.stack([sample_orientation(gen) for _ in range(3)])
    y, caches = mlp_forward(p, params)
    r = gen.normal(size=y.shape)
    dp, grads = mlp_backward(r, caches)
    names = sorted(params)
    err = compare(lambda: float(np.sum(mlp_forward(p, params)[0] * r)),
                  [p] + [params[k] for k in names], [dp] + [grads[k] for k in names], gen)
    return [CheckResult("mlp", err, tol)]


def check_oalfe(seed=0, tol=LAYER_TOL):
    """The whole block: features, orientation and all three MLP heads."""
    gen = rngmod.stream(seed, rngmod.EVAL, 2)
    params = {h: {k: gen.normal(0, 0.5, size=v.shape) for k, v in m.items()}
              for h, m in init_oalfe(gen, 3).items()}
    h = gen.normal(size=(2, 3, 5, 4, 4))
    p = np.stack([sample_orientation(gen) for _ in range(2)])
    y, cache = oalfe_forward(h, p, params)
    r = gen.normal(size=y.shape)
    dh, grads, dp = oalfe_backward(r, cache)

    def f():
        return float(np.sum(oalfe_forward(h, p, params)[0] * r))

    results = [CheckResult("oalfe.features", compare(f, [h], [dh], gen), tol),
               CheckResult("oalfe.orientation", compare(f, [p], [dp], gen), tol)]
    for head in HEADS:
        keys = sorted(params[head])
        err = compare(f, [params[head][k] for k in keys], [grads[head][k] for k in keys], gen)
        results.append(CheckResult(f"oalfe.{head}", err, tol))
    return results


def check_lot(seed=0, tol=LAYER_TOL):
    gen = rngmod.stream(seed, rngmod.EVAL, 3)
    phi = gen.uniform(-np.pi, np.pi, size=(2, 5, 6, 4))
    kernels = gen.normal(size=(3, 3, 3, 3))
    inv = np.array([0.7, 1.3])
    y, cache = lot_layer_forward(phi, inv, kernels)
    r = gen.normal(size=y.shape)
    dphi, dk = lot_layer_backward(r, cache)
    err = compare(lambda: float(np.sum(lot_layer_forward(phi, inv, kernels)[0] * r)),
                  [phi, kernels], [dphi, dk], gen)
    return [CheckResult("lot_layer", err, tol)]


def check_loss(seed=0, tol=LAYER_TOL, n=8):
    """Composite loss on ``n^3`` volumes."""
    from .training import TrainConfig, make_sample, loss

    gen = rngmod.stream(seed, rngmod.EVAL, 4)
    cfg = TrainConfig(epochs=1, patch=n, levels=0, background=False)
    mask = np.ones((n,) * 3)
    samples = [make_sample(gen.normal(size=(n,) * 3), mask, cfg,
                           rngmod.derive_seed(seed, rngmod.EVAL, 4, i)) for i in range(2)]
    pred = gen.normal(size=(2,) + (n,) * 3)
    _, g, _ = loss(pred, samples, 0.1)
    err = compare(lambda: loss(pred, samples, 0.1)[0], [pred], [g], gen)
    return [CheckResult("loss", err, tol)]


def check_network(seed=0, tol=NETWORK_TOL, kind="iqsm", n=16, count=4):
    """End-to-end backbone on ``n^3`` inputs: every parameter tensor is probed."""
    gen = rngmod.stream(seed, rngmod.EVAL, 5)
    net = build_backbone(kind, levels=1, base=2, oalfe=True, seed=seed)
    for k, v in net.params.items():
        if ".oalfe." in k:
            v[...] = gen.normal(0, 0.3, size=v.shape)
        elif k != "lot.kernels":
            v += gen.normal(0, 0.05, size=v.shape)
    x = (gen.uniform(-np.pi, np.pi, size=(2,) + (n,) * 3) if kind == "iqsm"
         else gen.normal(size=(2,) + (n,) * 3))
    p = np.stack([sample_orientation(gen) for _ in range(2)])
    inv = np.array([0.01, 0.02]) if kind == "iqsm" else None
    y, cache = network_forward(net, x, p, inv)
    r = gen.normal(size=y.shape)
    r /= np.sqrt(r.size)
    grads = network_backward(net, cache, r)
    keys = list(net.params)
    err = compare(lambda: float(np.sum(network_forward(net, x, p, inv)[0] * r)),
                  [net.params[k] for k in keys], [grads[k] for k in keys], gen, count=count)
    return [CheckResult(f"network.{kind}", err, tol)]


def run_all(seed=0, include_network=True):
    results = check_layers(seed) + check_mlp(seed) + check_oalfe(seed) + check_lot(seed)
    results += check_loss(seed)
    if include_network:
        results += check_network(seed, kind="iqsm") + check_network(seed, kind="xqsm")
    return results
