"""Orientation-adaptive latent feature editing.

Three 4-layer MLPs map the dipole orientation ``p`` to

* a 3x3x3 feature editing kernel ``K`` (27 outputs), and
* two per-channel feature editing vectors ``V1`` (scale) and ``V2`` (bias).

The block computes ``H + V1 * (H (*) K) + V2`` where ``(*)`` correlates every
channel with the same kernel (zero padding, same size).

MLP widths are ``3 -> 3 -> 5 -> 10 -> out``; hidden layers use SiLU and the
last layer is affine.  Weights are stored as ``(out, in)`` so each layer is
``Z_n = W_n Z_{n-1} + b_n`` in column form.
"""

import numpy as np

from . import layers

WIDTHS = (3, 3, 5, 10)
HEADS = ("fek", "fev1", "fev2")
FEK_SIZE = 27


def mlp_shapes(out):
    widths = WIDTHS + (out,)
    shapes = {}
    for i in range(1, 5):
        shapes[f"W{i}"] = (widths[i], widths[i - 1])
        shapes[f"b{i}"] = (widths[i],)
    return shapes


def oalfe_shapes(channels):
    return {
        "fek": mlp_shapes(FEK_SIZE),
        "fev1": mlp_shapes(channels),
        "fev2": mlp_shapes(channels),
    }


def init_mlp(rng, out, std=0.01):
    return {k: rng.normal(0.0, std, size=s) for k, s in mlp_shapes(out).items()}


def init_oalfe(rng, channels, std=0.01):
    return {h: init_mlp(rng, FEK_SIZE if h == "fek" else channels, std) for h in HEADS}


def _check_mlp(params):
    widths = WIDTHS + (params["W4"].shape[0],)
    for k, s in mlp_shapes(widths[-1]).items():
        if params[k].shape != s:
            raise ValueError(f"MLP parameter {k} has shape {params[k].shape}, expected {s}")


def mlp_forward(p, params):
    """Evaluate the MLP on one orientation ``(3,)`` or a batch ``(N, 3)``."""
    _check_mlp(params)
    p = np.asarray(p, dtype=np.float64)
    single = p.ndim == 1
    z = np.atleast_2d(p)
    if z.shape[1] != 3:
        raise ValueError(f"orientation must have 3 components, got {z.shape}")
    caches = []
    for i in (1, 2, 3):
        a, lc = layers.linear_forward(z, params[f"W{i}"], params[f"b{i}"])
        z, ac = layers.silu_forward(a)
        caches.append((lc, ac))
    out, lc = layers.linear_forward(z, params["W4"], params["b4"])
    caches.append((lc, None))
    return (out[0] if single else out), caches


def mlp_backward(dout, caches):
    """Return ``(dp, grads)`` for a batched MLP evaluation."""
    grads = {}
    dz, grads["W4"], grads["b4"] = layers.linear_backward(np.atleast_2d(dout), caches[3][0])
    for i in (3, 2, 1):
        lc, ac = caches[i - 1]
        (da,) = layers.silu_backward(dz, ac)
        dz, grads[f"W{i}"], grads[f"b{i}"] = layers.linear_backward(da, lc)
    return dz, grads


def oalfe_forward(h, p, params):
    """Apply the block to ``h`` of shape ``(N, C, X, Y, Z)`` with orientations ``(N, 3)``."""
    layers._check5(h, "h")
    n, c = h.shape[:2]
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    if p.shape != (n, 3):
        raise ValueError(f"orientations shape {p.shape}, expected ({n}, 3)")
    for head in ("fev1", "fev2"):
        if params[head]["W4"].shape[0] != c:
            raise ValueError(
                f"{head} head produces {params[head]['W4'].shape[0]} channels, features have {c}")
    k, kc = mlp_forward(p, params["fek"])
    v1, v1c = mlp_forward(p, params["fev1"])
    v2, v2c = mlp_forward(p, params["fev2"])
    hs, dc = layers.depthwise_shared_forward(h, k.reshape(n, 3, 3, 3))
    out = h + v1[:, :, None, None, None] * hs + v2[:, :, None, None, None]
    return out, (hs, v1, dc, kc, v1c, v2c)


def oalfe_backward(dy, cache):
    """Return ``(dh, grads, dp)`` where ``grads`` mirrors the parameter nesting."""
    hs, v1, dc, kc, v1c, v2c = cache
    n = hs.shape[0]
    dv1 = np.einsum("ncxyz,ncxyz->nc", dy, hs)
    dv2 = dy.sum(axis=(2, 3, 4))
    dhs = v1[:, :, None, None, None] * dy
    dh_conv, dk = layers.depthwise_shared_backward(dhs, dc)
    dh = dy + dh_conv
    dp_k, gk = mlp_backward(dk.reshape(n, 27), kc)
    dp_1, g1 = mlp_backward(dv1, v1c)
    dp_2, g2 = mlp_backward(dv2, v2c)
    return dh, {"fek": gk, "fev1": g1, "fev2": g2}, dp_k + dp_1 + dp_2
