"""Dense tensor primitives with explicit forward/backward pairs.

Every op accepts arrays with arbitrary leading batch dimensions and operates
on the trailing (N, d) block. Ops preserve the input dtype: the model runs
single precision forward, while gradient checks promote to float64 and reuse
the same code paths.
"""
from __future__ import annotations

import os

import numpy as np

from ..errors import NumericError, ShapeError

# Opt-in non-finite sentinels after each op; off by default because the
# checks cost a full pass over every activation.
DEBUG_CHECKS = bool(int(os.environ.get("POINTROUTE_DEBUG", "0")))


def _check_finite(name: str, *arrays: np.ndarray) -> None:
    if not DEBUG_CHECKS:
        return
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericError(f"non-finite values after {name}")


def _flat2(x: np.ndarray) -> np.ndarray:
    return x.reshape(-1, x.shape[-1])


def linear_forward(x, w, b=None):
    y = x @ w
    if b is not None:
        y = y + b
    _check_finite("linear", y)
    return y, (x, w, b is not None)


def linear_backward(g, cache):
    x, w, has_bias = cache
    dx = g @ w.T
    dw = _flat2(x).T @ _flat2(g)
    db = _flat2(g).sum(axis=0) if has_bias else None
    return dx, dw, db


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(g, mask):
    return g * mask


def layer_norm_forward(x, gain, bias, eps: float = 1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * gain + bias
    _check_finite("layer_norm", y)
    return y, (xhat, inv, gain)


def layer_norm_backward(g, cache):
    xhat, inv, gain = cache
    dgain = np.sum(_flat2(g * xhat), axis=0)
    dbias = np.sum(_flat2(g), axis=0)
    dxhat = g * gain
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    return dx, dgain, dbias


def softmax_rows(u):
    """Numerically stable softmax over the last axis; -inf entries map to 0."""
    m = np.max(u, axis=-1, keepdims=True)
    e = np.exp(u - m)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(p, dp):
    return p * (dp - np.sum(dp * p, axis=-1, keepdims=True))


def _split_heads(x, heads: int):
    *lead, n, d = x.shape
    return x.reshape(*lead, n, heads, d // heads).swapaxes(-3, -2)


def _merge_heads(x):
    *lead, heads, n, dh = x.shape
    return x.swapaxes(-3, -2).reshape(*lead, n, heads * dh)


def mha_forward_cached(x, wq, wk, wv, wo, heads: int):
    """Scaled dot-product multi-head self-attention over the rows of x.

    No positional encoding anywhere: the encoder must stay permutation
    equivariant. Returns (output, cache) where cache feeds mha_backward.
    """
    d = x.shape[-1]
    if d % heads != 0:
        raise ShapeError(f"model width {d} not divisible by {heads} heads")
    for name, w in (("wq", wq), ("wk", wk), ("wv", wv), ("wo", wo)):
        if w.shape != (d, d):
            raise ShapeError(f"attention weight {name} has shape {w.shape}, expected {(d, d)}")
    dh = d // heads
    scale = 1.0 / np.sqrt(dh)
    qh = _split_heads(x @ wq, heads)
    kh = _split_heads(x @ wk, heads)
    vh = _split_heads(x @ wv, heads)
    attn = softmax_rows((qh @ kh.swapaxes(-1, -2)) * scale)
    ctx = _merge_heads(attn @ vh)
    y = ctx @ wo
    _check_finite("mha", y)
    return y, (x, wq, wk, wv, wo, heads, qh, kh, vh, attn, ctx)


def mha_forward(x, wq, wk, wv, wo, heads: int = 8):
    return mha_forward_cached(x, wq, wk, wv, wo, heads)[0]


def mha_backward(g, cache):
    """Returns (dx, dwq, dwk, dwv, dwo) for upstream gradient g."""
    x, wq, wk, wv, wo, heads, qh, kh, vh, attn, ctx = cache
    dh = x.shape[-1] // heads
    scale = 1.0 / np.sqrt(dh)

    dwo = _flat2(ctx).T @ _flat2(g)
    dctx = _split_heads(g @ wo.T, heads)
    dattn = dctx @ vh.swapaxes(-1, -2)
    dvh = attn.swapaxes(-1, -2) @ dctx
    ds = softmax_backward(attn, dattn) * scale
    dqh = ds @ kh
    dkh = ds.swapaxes(-1, -2) @ qh

    dq = _merge_heads(dqh)
    dk = _merge_heads(dkh)
    dv = _merge_heads(dvh)
    xf = _flat2(x)
    dwq = xf.T @ _flat2(dq)
    dwk = xf.T @ _flat2(dk)
    dwv = xf.T @ _flat2(dv)
    dx = dq @ wq.T + dk @ wk.T + dv @ wv.T
    return dx, dwq, dwk, dwv, dwo


def ff_forward_cached(x, w1, b1, w2, b2):
    """Position-wise feed-forward: relu MLP with hidden width w1.shape[1]."""
    h_pre, c1 = linear_forward(x, w1, b1)
    h, mask = relu_forward(h_pre)
    y, c2 = linear_forward(h, w2, b2)
    _check_finite("ff", y)
    return y, (c1, mask, c2)


def ff_backward(g, cache):
    c1, mask, c2 = cache
    dh, dw2, db2 = linear_backward(g, c2)
    dh_pre = relu_backward(dh, mask)
    dx, dw1, db1 = linear_backward(dh_pre, c1)
    return dx, dw1, db1, dw2, db2
