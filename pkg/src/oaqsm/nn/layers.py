"""Layer primitives with explicit forward and backward passes.

Activations are float64 arrays shaped ``(N, C, X, Y, Z)``.  Every
``*_forward`` returns ``(out, cache)``; the matching ``*_backward`` takes
the upstream gradient and the cache and returns the input gradient followed
by parameter gradients.

Convolutions are cross-correlations (no kernel flip), evaluated per
sample as a single matrix product against an im2col buffer.
"""

import itertools

import numpy as np


def _check5(x, name="x"):
    if x.ndim != 5:
        raise ValueError(f"{name} must be (N, C, X, Y, Z), got shape {x.shape}")


def _offsets(k):
    return list(itertools.product(range(k), repeat=3))


def _im2col(xp_n, k, shape, cols):
    """Fill ``cols`` ``(k^3, C, X, Y, Z)`` with the shifted copies of one padded sample."""
    X, Y, Z = shape
    for q, (i, j, l) in enumerate(_offsets(k)):
        cols[q] = xp_n[:, i:i + X, j:j + Y, l:l + Z]
    return cols


def conv3d_forward(x, w, b):
    """'Same' convolution, stride 1, zero padding ``(k - 1) / 2``.

    ``w`` is ``(C_out, C_in, k, k, k)`` with odd ``k``; ``b`` is ``(C_out,)``.
    """
    _check5(x)
    n, c, X, Y, Z = x.shape
    o, ci, k = w.shape[0], w.shape[1], w.shape[2]
    if ci != c or w.shape[2:] != (k, k, k) or k % 2 == 0:
        raise ValueError(f"weight {w.shape} incompatible with input channels {c}")
    if b.shape != (o,):
        raise ValueError(f"bias shape {b.shape}, expected ({o},)")
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad), (pad, pad))) if pad else x
    v = X * Y * Z
    # (O, k^3 * C), offset-major to match the column layout
    wm = w.transpose(0, 2, 3, 4, 1).reshape(o, k**3 * c)
    out = np.empty((n, o, v))
    cols = np.empty((k**3, c, X, Y, Z))
    for s in range(n):
        _im2col(xp[s], k, (X, Y, Z), cols)
        np.matmul(wm, cols.reshape(k**3 * c, v), out=out[s])
    out += b[None, :, None]
    return out.reshape(n, o, X, Y, Z), (xp, w, x.shape)


def conv3d_backward(dy, cache):
    xp, w, shape = cache
    n, c, X, Y, Z = shape
    o, k = w.shape[0], w.shape[2]
    if dy.shape != (n, o, X, Y, Z):
        raise ValueError(f"upstream gradient {dy.shape} does not match output {(n, o, X, Y, Z)}")
    v = X * Y * Z
    dyf = dy.reshape(n, o, v)
    wm = w.transpose(0, 2, 3, 4, 1).reshape(o, k**3 * c)
    dxp = np.zeros_like(xp)
    dwm = np.zeros((o, k**3 * c))
    cols = np.empty((k**3, c, X, Y, Z))
    for s in range(n):
        _im2col(xp[s], k, (X, Y, Z), cols)
        dwm += dyf[s] @ cols.reshape(k**3 * c, v).T
        dcols = (wm.T @ dyf[s]).reshape(k**3, c, X, Y, Z)
        for q, (i, j, l) in enumerate(_offsets(k)):
            dxp[s, :, i:i + X, j:j + Y, l:l + Z] += dcols[q]
    dw = dwm.reshape(o, k, k, k, c).transpose(0, 4, 1, 2, 3)
    pad = k // 2
    dx = dxp[:, :, pad:pad + X, pad:pad + Y, pad:pad + Z] if pad else dxp
    db = dyf.sum(axis=(0, 2))
    return dx, dw, db


def conv1x1_forward(x, w, b):
    """Pointwise convolution; ``w`` is ``(C_out, C_in, 1, 1, 1)``."""
    return conv3d_forward(x, w, b)


conv1x1_backward = conv3d_backward


def conv_transpose_forward(x, w, b):
    """2x2x2 transposed convolution with stride 2 (doubles each spatial dim).

    ``w`` is ``(C_in, C_out, 2, 2, 2)``.
    """
    _check5(x)
    n, c, X, Y, Z = x.shape
    if w.shape[0] != c or w.shape[2:] != (2, 2, 2):
        raise ValueError(f"weight {w.shape} incompatible with input channels {c}")
    o = w.shape[1]
    v = X * Y * Z
    xf = x.reshape(n, c, v)
    out = np.empty((n, o, 2 * X, 2 * Y, 2 * Z))
    for i, j, l in _offsets(2):
        blk = np.matmul(w[:, :, i, j, l].T, xf) + b[None, :, None]
        out[:, :, i::2, j::2, l::2] = blk.reshape(n, o, X, Y, Z)
    return out, (x, w)


def conv_transpose_backward(dy, cache):
    x, w = cache
    n, c, X, Y, Z = x.shape
    o = w.shape[1]
    if dy.shape != (n, o, 2 * X, 2 * Y, 2 * Z):
        raise ValueError(f"upstream gradient shape {dy.shape} mismatch")
    v = X * Y * Z
    xf = x.reshape(n, c, v)
    dx = np.zeros((n, c, v))
    dw = np.zeros_like(w)
    for i, j, l in _offsets(2):
        g = dy[:, :, i::2, j::2, l::2].reshape(n, o, v)
        dx += np.matmul(w[:, :, i, j, l], g)
        dw[:, :, i, j, l] = np.tensordot(xf, g, axes=([0, 2], [0, 2]))
    db = dy.sum(axis=(0, 2, 3, 4))
    return dx.reshape(x.shape), dw, db


def maxpool_forward(x):
    """2x2x2 max pooling, stride 2.  Ties route the gradient to the first maximum."""
    _check5(x)
    n, c, X, Y, Z = x.shape
    if X % 2 or Y % 2 or Z % 2:
        raise ValueError(f"spatial dims {x.shape[2:]} must be even for pooling")
    blocks = (x.reshape(n, c, X // 2, 2, Y // 2, 2, Z // 2, 2)
              .transpose(0, 1, 2, 4, 6, 3, 5, 7)
              .reshape(n, c, X // 2, Y // 2, Z // 2, 8))
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return out, (arg, x.shape)


def maxpool_backward(dy, cache):
    arg, shape = cache
    n, c, X, Y, Z = shape
    if dy.shape != arg.shape:
        raise ValueError(f"upstream gradient shape {dy.shape} mismatch")
    blocks = np.zeros(arg.shape + (8,))
    np.put_along_axis(blocks, arg[..., None], dy[..., None], axis=-1)
    dx = (blocks.reshape(n, c, X // 2, Y // 2, Z // 2, 2, 2, 2)
          .transpose(0, 1, 2, 5, 3, 6, 4, 7)
          .reshape(shape))
    return (dx,)


def relu_forward(x):
    return np.maximum(x, 0.0), x


def relu_backward(dy, x):
    return (dy * (x > 0),)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def silu(x):
    return x * _sigmoid(x)


def silu_forward(x):
    return silu(x), x


def silu_backward(dy, x):
    s = _sigmoid(x)
    return (dy * (s + x * s * (1.0 - s)),)


def add_forward(a, b):
    if a.shape != b.shape:
        raise ValueError(f"cannot add shapes {a.shape} and {b.shape}")
    return a + b, None


def add_backward(dy, cache=None):
    return dy, dy


def concat_forward(a, b):
    """Channel concatenation (decoder skip)."""
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ValueError(f"cannot concatenate {a.shape} and {b.shape}")
    return np.concatenate([a, b], axis=1), a.shape[1]


def concat_backward(dy, split):
    return dy[:, :split], dy[:, split:]


def depthwise_shared_forward(h, kernels):
    """Correlate every channel of sample ``n`` with that sample's 3x3x3 kernel.

    ``kernels`` is ``(N, 3, 3, 3)``; zero padding keeps the spatial size.
    """
    _check5(h, "h")
    n, c, X, Y, Z = h.shape
    if kernels.shape != (n, 3, 3, 3):
        raise ValueError(f"kernels shape {kernels.shape}, expected ({n}, 3, 3, 3)")
    hp = np.pad(h, ((0, 0), (0, 0), (1, 1), (1, 1), (1, 1)))
    out = np.zeros_like(h)
    for i, j, l in _offsets(3):
        out += kernels[:, i, j, l, None, None, None, None] * hp[:, :, i:i + X, j:j + Y, l:l + Z]
    return out, (hp, kernels)


def depthwise_shared_backward(dy, cache):
    hp, kernels = cache
    n, c = hp.shape[:2]
    X, Y, Z = (s - 2 for s in hp.shape[2:])
    dhp = np.zeros_like(hp)
    dk = np.zeros_like(kernels)
    for i, j, l in _offsets(3):
        sl = hp[:, :, i:i + X, j:j + Y, l:l + Z]
        dk[:, i, j, l] = np.einsum("ncxyz,ncxyz->n", dy, sl)
        dhp[:, :, i:i + X, j:j + Y, l:l + Z] += kernels[:, i, j, l, None, None, None, None] * dy
    return dhp[:, :, 1:-1, 1:-1, 1:-1], dk


def linear_forward(z, w, b):
    """Row-batched affine map ``z @ w.T + b`` (column form ``W z + b``)."""
    if z.shape[-1] != w.shape[1]:
        raise ValueError(f"input width {z.shape[-1]} does not match weight {w.shape}")
    return z @ w.T + b, (z, w)


def linear_backward(dy, cache):
    z, w = cache
    return dy @ w, dy.T @ z, dy.sum(axis=0)
