"""Conditionable U-shaped reconstructors.

Topology for ``levels = L`` and ``base = b`` (channels ``c_l = b * 2**l``)::

    [iqsm] wrapped phase -> LoT layer (lot_channels)      [xqsm] local field (1 channel)
    enc_l   : 2 x (conv3 -> OA-LFE -> ReLU), then 2x2x2 max-pool     l = 0 .. L-1
    bottom  : 2 x (conv3 -> OA-LFE -> ReLU)
    dec_l   : up-conv 2x2x2 -> ReLU, concat skip_l, 2 x (conv3 -> OA-LFE -> ReLU)
    out     : conv 1x1x1 -> chi          (+ LoT channel 0 for iqsm)

That is ``4L + 2`` 3x3x3 convolutions and ``5L + 2`` ReLUs; ``L = 4`` gives
18 convolutions and 22 ReLUs.  With ``oalfe=False`` the OA-LFE blocks are
absent.

Parameter names follow ``<block>.<layer>.<param>``::

    lot.kernels
    enc0.conv0.weight / enc0.conv0.bias
    enc0.conv0.oalfe.fek.W1 ... enc0.conv0.oalfe.fev2.b4
    bottom.conv1.weight
    dec0.up.weight / dec0.up.bias
    out.weight / out.bias
"""

from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from .. import rng as rngmod
from . import layers
from .lot_layer import init_lot_kernels, lot_layer_backward, lot_layer_forward
from .oalfe import HEADS, oalfe_backward, oalfe_forward, oalfe_shapes

KINDS = ("iqsm", "xqsm")
MLP_INIT_STD = 0.01


@dataclass(frozen=True)
class BackboneConfig:
    kind: str = "iqsm"
    levels: int = 2
    base: int = 8
    oalfe: bool = True
    lot_channels: int = 4

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown backbone kind {self.kind!r}")
        if self.levels < 0 or self.base < 1 or self.lot_channels < 1:
            raise ValueError(f"invalid depth config {self}")

    @property
    def in_channels(self):
        return self.lot_channels if self.kind == "iqsm" else 1

    def channels(self, level):
        return self.base * 2**level

    def conv_blocks(self):
        """Ordered ``(block, in_channels, out_channels)`` for the two convs of each block."""
        out = []
        cin = self.in_channels
        for lvl in range(self.levels):
            c = self.channels(lvl)
            out.append((f"enc{lvl}", cin, c))
            cin = c
        c = self.channels(self.levels)
        out.append(("bottom", cin, c))
        for lvl in reversed(range(self.levels)):
            out.append((f"dec{lvl}", 2 * self.channels(lvl), self.channels(lvl)))
        return out

    def num_convs(self):
        return 2 * len(self.conv_blocks())


@dataclass
class NetworkParams:
    config: BackboneConfig
    params: Dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self):
        return NetworkParams(self.config, {k: v.copy() for k, v in self.params.items()})

    def num_parameters(self):
        return int(sum(v.size for v in self.params.values()))

    def oalfe_blocks(self):
        return sorted({k.split(".oalfe.")[0] for k in self.params if ".oalfe." in k})


def parameter_shapes(cfg):
    """Ordered mapping of parameter name to shape."""
    shapes = {}
    if cfg.kind == "iqsm":
        shapes["lot.kernels"] = (cfg.lot_channels, 3, 3, 3)
    for block, cin, cout in cfg.conv_blocks():
        if block.startswith("dec"):
            lvl = int(block[3:])
            shapes[f"{block}.up.weight"] = (cfg.channels(lvl + 1), cfg.channels(lvl), 2, 2, 2)
            shapes[f"{block}.up.bias"] = (cfg.channels(lvl),)
        for j, ci in enumerate((cin, cout)):
            name = f"{block}.conv{j}"
            shapes[f"{name}.weight"] = (cout, ci, 3, 3, 3)
            shapes[f"{name}.bias"] = (cout,)
            if cfg.oalfe:
                for head, mlp in oalfe_shapes(cout).items():
                    for k, s in mlp.items():
                        shapes[f"{name}.oalfe.{head}.{k}"] = s
    shapes["out.weight"] = (1, cfg.channels(0), 1, 1, 1)
    shapes["out.bias"] = (1,)
    return shapes


def _fan_in(name, shape):
    if name.endswith(".up.weight"):
        # (C_in, C_out, 2, 2, 2): each output voxel sees one input voxel per channel
        return shape[0]
    return int(np.prod(shape[1:]))


def _mlp_init(gen, name, shape):
    """Hidden MLP layers get ``std = sqrt(1 / fan_in)`` so ``p`` reaches the last
    layer with O(1) variation.  So does the FEK output layer: the kernel enters
    only through ``V1 * (H * K)``, and with both factors near zero neither
    would get a gradient.  The FEV output layers and all biases stay small, so
    the block still starts near the identity."""
    leaf = name.rsplit(".", 1)[-1]
    if leaf in ("W1", "W2", "W3") or (leaf == "W4" and ".fek." in name):
        return gen.normal(0.0, np.sqrt(1.0 / shape[1]), size=shape)
    return gen.normal(0.0, MLP_INIT_STD, size=shape)


def build_backbone(kind="iqsm", levels=2, base=8, oalfe=True, seed=0, lot_channels=4,
                   init_std=None):
    """Create a network with deterministic random parameters.

    With ``init_std=None`` convolution weights are He-normal
    (``std = sqrt(2 / fan_in)``) and biases start at zero.  In the OA-LFE
    MLPs the hidden layers are ``sqrt(1 / fan_in)``-scaled while the output
    layer and biases are Gaussian(0, 0.01), so every block starts close to
    the identity yet its output already varies with ``p``.  A number
    instead draws every parameter from Gaussian(0, ``init_std``).  LoT
    kernels always start as the 27-point Laplacian stencil.
    """
    cfg = BackboneConfig(kind, levels, base, oalfe, lot_channels)
    gen = rngmod.stream(seed, rngmod.INIT)
    params = {}
    for name, shape in parameter_shapes(cfg).items():
        if name == "lot.kernels":
            params[name] = init_lot_kernels(lot_channels)
        elif init_std is not None:
            params[name] = gen.normal(0.0, init_std, size=shape)
        elif ".oalfe." in name:
            params[name] = _mlp_init(gen, name, shape)
        elif name.endswith(".bias"):
            params[name] = np.zeros(shape)
        else:
            params[name] = gen.normal(0.0, np.sqrt(2.0 / _fan_in(name, shape)), size=shape)
    return NetworkParams(cfg, params)


def _oalfe_params(params, name):
    prefix = f"{name}.oalfe."
    return {h: {k.split(".")[-1]: v for k, v in params.items() if k.startswith(prefix + h + ".")}
            for h in HEADS}


def _conv_unit_forward(net, name, x, p):
    P = net.params
    x, cc = layers.conv3d_forward(x, P[f"{name}.weight"], P[f"{name}.bias"])
    oc = None
    if net.config.oalfe:
        x, oc = oalfe_forward(x, p, _oalfe_params(P, name))
    x, rc = layers.relu_forward(x)
    return x, (cc, oc, rc)


def _conv_unit_backward(net, name, dy, cache, grads):
    cc, oc, rc = cache
    (dx,) = layers.relu_backward(dy, rc)
    if oc is not None:
        dx, og, _ = oalfe_backward(dx, oc)
        for head, g in og.items():
            for k, v in g.items():
                grads[f"{name}.oalfe.{head}.{k}"] = v
    dx, grads[f"{name}.weight"], grads[f"{name}.bias"] = layers.conv3d_backward(dx, cc)
    return dx


def _block_forward(net, block, x, p):
    caches = []
    for j in range(2):
        x, c = _conv_unit_forward(net, f"{block}.conv{j}", x, p)
        caches.append(c)
    return x, caches


def _block_backward(net, block, dy, caches, grads):
    for j in (1, 0):
        dy = _conv_unit_backward(net, f"{block}.conv{j}", dy, caches[j], grads)
    return dy


def network_forward(net, x, p=None, inv_scale=None):
    """Run the network on a batch.

    ``x`` is wrapped phase (iqsm) or local field (xqsm), shaped ``(N, X, Y, Z)``.
    ``p`` is ``(N, 3)`` orientations (required when OA-LFE is on) and
    ``inv_scale`` the per-sample LoT divisor (iqsm only, see
    :func:`~oaqsm.nn.lot_layer.lot_inv_scale`).  Returns ``(chi, cache)``
    with ``chi`` shaped ``(N, X, Y, Z)``.
    """
    cfg = net.config
    P = net.params
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4:
        raise ValueError(f"input must be (N, X, Y, Z), got {x.shape}")
    n = x.shape[0]
    f = 2**cfg.levels
    if any(s % f for s in x.shape[1:]):
        raise ValueError(f"input dims {x.shape[1:]} must be divisible by {f}")
    if cfg.oalfe:
        if p is None:
            raise ValueError("orientation is required when OA-LFE is on")
        p = np.atleast_2d(np.asarray(p, dtype=np.float64))
        if p.shape == (1, 3) and n > 1:
            p = np.repeat(p, n, axis=0)
    cache = {}
    if cfg.kind == "iqsm":
        if inv_scale is None:
            raise ValueError("iqsm input needs the per-sample phase scale")
        h, cache["lot"] = lot_layer_forward(x, inv_scale, P["lot.kernels"])
        lot0 = h[:, 0].copy()
    else:
        h = x[:, None]
    skips = []
    for lvl in range(cfg.levels):
        h, cache[f"enc{lvl}"] = _block_forward(net, f"enc{lvl}", h, p)
        skips.append(h)
        h, cache[f"pool{lvl}"] = layers.maxpool_forward(h)
    h, cache["bottom"] = _block_forward(net, "bottom", h, p)
    for lvl in reversed(range(cfg.levels)):
        h, uc = layers.conv_transpose_forward(h, P[f"dec{lvl}.up.weight"], P[f"dec{lvl}.up.bias"])
        h, rc = layers.relu_forward(h)
        h, split = layers.concat_forward(h, skips[lvl])
        cache[f"up{lvl}"] = (uc, rc, split)
        h, cache[f"dec{lvl}"] = _block_forward(net, f"dec{lvl}", h, p)
    y, cache["out"] = layers.conv1x1_forward(h, P["out.weight"], P["out.bias"])
    y = y[:, 0]
    if cfg.kind == "iqsm":
        # residual from the first LoT channel
        y = y + lot0
    return y, cache


def network_backward(net, cache, dchi):
    """Gradients of every parameter given ``dL/dchi`` shaped ``(N, X, Y, Z)``."""
    cfg = net.config
    grads = {}
    dchi = np.asarray(dchi, dtype=np.float64)
    dh, grads["out.weight"], grads["out.bias"] = layers.conv1x1_backward(dchi[:, None], cache["out"])
    dskips = {}
    for lvl in range(cfg.levels):
        dh = _block_backward(net, f"dec{lvl}", dh, cache[f"dec{lvl}"], grads)
        uc, rc, split = cache[f"up{lvl}"]
        dh, dskips[lvl] = layers.concat_backward(dh, split)
        (dh,) = layers.relu_backward(dh, rc)
        dh, grads[f"dec{lvl}.up.weight"], grads[f"dec{lvl}.up.bias"] = \
            layers.conv_transpose_backward(dh, uc)
    dh = _block_backward(net, "bottom", dh, cache["bottom"], grads)
    for lvl in reversed(range(cfg.levels)):
        (dh,) = layers.maxpool_backward(dh, cache[f"pool{lvl}"])
        dh = dh + dskips[lvl]
        dh = _block_backward(net, f"enc{lvl}", dh, cache[f"enc{lvl}"], grads)
    if cfg.kind == "iqsm":
        dlot = dh.copy()
        dlot[:, 0] += dchi
        _, grads["lot.kernels"] = lot_layer_backward(dlot, cache["lot"])
    return {k: grads[k] for k in net.params}
