"""Differentiable primitives.

Every function takes :class:`Tensor` (or array-like) inputs, computes the
forward value with numpy and registers a closure computing input gradients.
"""
from __future__ import annotations

from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, as_tensor, record


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise arithmetic --------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return record("add", (a, b), a.data + b.data,
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return record("sub", (a, b), a.data - b.data,
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return record("mul", (a, b), ad * bd,
                  lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ValueError("matmul needs operands with at least 2 dims")
    if ad.shape[-1] != bd.shape[-2]:
        raise ValueError(f"matmul shape mismatch {ad.shape} @ {bd.shape}")

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return record("matmul", (a, b), ad @ bd, bw)


def sum(x, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    shape = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return record("sum", (x,), np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), bw)


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return record("reshape", (x,), x.data.reshape(shape), lambda g: (g.reshape(old),))


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return record("transpose", (x,), np.transpose(x.data, axes),
                  lambda g: (np.transpose(g, inv),))


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    cuts = np.cumsum(sizes)[:-1]
    return record("concat", ts, np.concatenate([t.data for t in ts], axis=axis),
                  lambda g: tuple(np.split(g, cuts, axis=axis)))


# -- dense layers --------------------------------------------------------------

def linear(x, W, b=None) -> Tensor:
    """``x @ W + b`` over the last axis of ``x``."""
    x, W = as_tensor(x), as_tensor(W)
    xd, Wd = x.data, W.data
    if xd.shape[-1] != Wd.shape[0]:
        raise ValueError(f"linear: input width {xd.shape[-1]} != weight rows {Wd.shape[0]}")
    out = xd @ Wd
    inputs = [x, W]
    if b is not None:
        b = as_tensor(b)
        if b.shape != (Wd.shape[1],):
            raise ValueError(f"linear: bias shape {b.shape} != ({Wd.shape[1]},)")
        out = out + b.data
        inputs.append(b)

    def bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ Wd.T
        gW = xd.reshape(-1, xd.shape[-1]).T @ g2
        if b is None:
            return gx, gW
        return gx, gW, g2.sum(axis=0)

    return record("linear", inputs, out, bw)


# -- activations -----------------------------------------------------------------

def relu(x) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    return record("relu", (x,), np.where(pos, x.data, 0.0), lambda g: (g * pos,))


def elu(x, alpha: float = 1.0) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    em1 = np.expm1(np.minimum(x.data, 0.0))
    out = np.where(pos, x.data, alpha * em1)
    return record("elu", (x,), out, lambda g: (g * np.where(pos, 1.0, alpha * (em1 + 1.0)),))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid(x.data)
    return record("sigmoid", (x,), s, lambda g: (g * s * (1.0 - s),))


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise ValueError("softmax needs a non-empty last dimension")
    p = _softmax(x.data)

    def bw(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return record("softmax", (x,), p, bw)


_ACTIVATIONS = {"relu": relu, "elu": elu, "sigmoid": sigmoid, "softmax": softmax,
                "softmax-lastdim": softmax}


def activation(x, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(x)


def dropout(x, p: float, rng: Optional[np.random.Generator], train: bool) -> Tensor:
    """Inverted dropout; the identity outside training."""
    x = as_tensor(x)
    if not train or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs an rng")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return record("dropout", (x,), x.data * keep, lambda g: (g * keep,))


# -- normalization ----------------------------------------------------------------

def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gamma.data

    def bw(g):
        dxhat = g * gd
        gx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        red = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return record("layer_norm", (x, gamma, beta), xhat * gd + beta.data, bw)


class BatchNormStats:
    """Running mean/variance buffers for one batch-norm layer."""

    def __init__(self, channels: int, momentum: float = 0.1):
        self.mean = np.zeros(channels)
        self.var = np.ones(channels)
        self.momentum = momentum


def batch_norm(x, gamma, beta, stats: BatchNormStats, train: bool, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization of ``[N, C]`` or ``[N, C, H, W]`` input."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    xd = x.data
    if xd.ndim not in (2, 4):
        raise ValueError("batch_norm expects [N, C] or [N, C, H, W]")
    axes = (0,) if xd.ndim == 2 else (0, 2, 3)
    bshape = (1, -1) if xd.ndim == 2 else (1, -1, 1, 1)
    gd = gamma.data.reshape(bshape)
    if train:
        n = xd.size // xd.shape[1]
        if xd.shape[0] < 2:
            raise ValueError("batch_norm in train mode needs a batch larger than 1")
        mu = xd.mean(axis=axes, keepdims=True)
        xc = xd - mu
        var = (xc * xc).mean(axis=axes, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        m = stats.momentum
        stats.mean = (1 - m) * stats.mean + m * mu.reshape(-1)
        stats.var = (1 - m) * stats.var + m * var.reshape(-1) * n / (n - 1)

        def bw(g):
            dxhat = g * gd
            gx = inv * (dxhat - dxhat.mean(axis=axes, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True))
            return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)
    else:
        inv = 1.0 / np.sqrt(stats.var.reshape(bshape) + eps)
        xhat = (xd - stats.mean.reshape(bshape)) * inv

        def bw(g):
            return g * gd * inv, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return record("batch_norm", (x, gamma, beta), xhat * gd + beta.data.reshape(bshape), bw)


def normalize(x, kind: str, gamma, beta, eps: float = 1e-5, mode: str = "train",
              stats: Optional[BatchNormStats] = None) -> Tensor:
    if kind == "layernorm-lastdim":
        return layer_norm(x, gamma, beta, eps)
    if kind == "batchnorm-channel":
        if stats is None:
            raise ValueError("batch norm needs running statistics")
        return batch_norm(x, gamma, beta, stats, train=(mode == "train"), eps=eps)
    raise ValueError(f"unknown normalization {kind!r}")


# -- convolution and pooling ---------------------------------------------------

def conv2d(x, kernels, bias=None, stride: int = 1) -> Tensor:
    """Zero 'same'-padded cross-correlation.

    ``x`` is ``[C_in, H, W]`` or ``[N, C_in, H, W]``; ``kernels`` is
    ``[C_out, C_in, k, k]`` with odd ``k``.
    """
    x, kernels = as_tensor(x), as_tensor(kernels)
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    kd = kernels.data
    if xd.ndim != 4 or kd.ndim != 4:
        raise ValueError("conv2d expects [N,C,H,W] input and [O,C,k,k] kernels")
    n, c, h, w = xd.shape
    o, ck, k, k2 = kd.shape
    if ck != c or k != k2:
        raise ValueError(f"conv2d shape mismatch: input {xd.shape}, kernels {kd.shape}")
    if k % 2 == 0:
        raise ValueError("conv2d needs an odd kernel size")
    p = k // 2
    xp = np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    kmat = kd.reshape(o, c * k * k)
    out = cols @ kmat.T
    inputs = [x, kernels]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        inputs.append(bias)
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def bw(g):
        g4 = g[None] if squeeze else g
        gm = g4.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        gk = (gm.T @ cols).reshape(kd.shape)
        gcols = (gm @ kmat).reshape(n, ho, wo, c, k, k)
        gxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                    gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, p:p + h, p:p + w]
        if squeeze:
            gx = gx[0]
        res = [np.ascontiguousarray(gx), gk]
        if bias is not None:
            res.append(gm.sum(axis=0))
        return res

    return record("conv2d", inputs, np.ascontiguousarray(out[0] if squeeze else out), bw)


def maxpool2d(x, window: int = 2) -> Tensor:
    """Non-overlapping max pooling over the last two axes.

    Gradient goes to the first (row-major) maximum of each window.
    """
    x = as_tensor(x)
    xd = x.data
    h, w = xd.shape[-2:]
    if h % window or w % window:
        raise ValueError(f"maxpool2d needs extents divisible by {window}, got {h}x{w}")
    lead = xd.shape[:-2]
    blocks = xd.reshape(*lead, h // window, window, w // window, window)
    nl = len(lead)
    perm = tuple(range(nl)) + (nl, nl + 2, nl + 1, nl + 3)
    flat = blocks.transpose(perm).reshape(*lead, h // window, w // window, window * window)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def bw(g):
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, idx[..., None], g[..., None], axis=-1)
        gb = gflat.reshape(*lead, h // window, w // window, window, window)
        return (gb.transpose(perm).reshape(xd.shape),)

    return record("maxpool2d", (x,), out, bw)


# -- attention -------------------------------------------------------------------

def _allowed(mask, lq: int, lk: int) -> Optional[np.ndarray]:
    if mask is None:
        return None
    m = np.asarray(mask)
    if m.dtype == bool:
        return m
    return np.isfinite(m) | (m > 0)


def attention(q, k, v, mask=None, return_weights: bool = False):
    """Scaled dot-product attention ``softmax(QK^T/sqrt(d_k) + mask) V``.

    ``mask`` is either a boolean array (True = may attend) or an additive
    float array using ``-inf`` for forbidden pairs, broadcastable to
    ``[..., L_q, L_k]``.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    qd, kd, vd = q.data, k.data, v.data
    dk = qd.shape[-1]
    if kd.shape[-1] != dk or kd.shape[-2] != vd.shape[-2]:
        raise ValueError(f"attention shape mismatch q{qd.shape} k{kd.shape} v{vd.shape}")
    scale = 1.0 / np.sqrt(dk)
    s = (qd @ np.swapaxes(kd, -1, -2)) * scale
    allowed = _allowed(mask, qd.shape[-2], kd.shape[-2])
    if allowed is not None:
        allowed = np.broadcast_to(allowed, s.shape)
        if not allowed.any(axis=-1).all():
            raise ValueError("attention: a query row has every key masked")
        s = np.where(allowed, s, -np.inf)
        if mask is not None and np.asarray(mask).dtype != bool:
            s = s + np.where(allowed, np.asarray(mask, dtype=float), 0.0)
    p = _softmax(s)
    out = p @ vd

    def bw(g):
        gv = _unbroadcast(np.swapaxes(p, -1, -2) @ g, vd.shape)
        gp = g @ np.swapaxes(vd, -1, -2)
        gs = p * (gp - (gp * p).sum(axis=-1, keepdims=True)) * scale
        gq = _unbroadcast(gs @ kd, qd.shape)
        gk = _unbroadcast(np.swapaxes(gs, -1, -2) @ qd, kd.shape)
        return gq, gk, gv

    res = record("attention", (q, k, v), out, bw)
    return (res, p) if return_weights else res


# -- losses -----------------------------------------------------------------------

def mse(pred, target, mask=None) -> Tensor:
    """Mean squared error; ``mask`` (broadcast over trailing axes) selects entries."""
    pred = as_tensor(pred)
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    diff = pred.data - t
    if mask is None:
        w = np.ones_like(diff)
    else:
        m = np.asarray(mask, dtype=np.float64)
        while m.ndim < diff.ndim:
            m = m[..., None]
        w = np.broadcast_to(m, diff.shape)
    count = w.sum()
    if count == 0:
        raise ValueError("mse over an empty selection")
    val = np.asarray((w * diff * diff).sum() / count)
    return record("mse", (pred,), val, lambda g: (g * 2.0 * w * diff / count,))
