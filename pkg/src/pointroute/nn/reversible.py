"""Reversible residual attention layers.

Forward per layer:   y1 = x1 + attn(norm(x2));  y2 = x2 + ff(norm(y1))
Inverse per layer:   x2 = y2 - ff(norm(y1));    x1 = y1 - attn(norm(x2))

Because layer inputs are recoverable from layer outputs, the stack backward
re-derives each layer's inputs on the fly and never stores intermediate
activations: the state carried between layers is the constant-size tuple
(x1, x2, g1, g2) no matter how many layers are stacked. The sub-functions
normalize their own input (rather than the residual sum) so the inverse
stays exact.
"""
from __future__ import annotations

import numpy as np

from ..errors import NumericError, ShapeError
from . import ops
from .params import ParamStore

LAYER_SUFFIXES = (
    "attn_ln.g", "attn_ln.b",
    "attn.wq", "attn.wk", "attn.wv", "attn.wo",
    "ff_ln.g", "ff_ln.b",
    "ff.w1", "ff.b1", "ff.w2", "ff.b2",
)


def layer_prefix(index: int) -> str:
    return f"enc{index}."


def _attn_sub_forward(store: ParamStore, p: str, x, heads: int):
    z, ln_cache = ops.layer_norm_forward(x, store[p + "attn_ln.g"], store[p + "attn_ln.b"])
    y, mha_cache = ops.mha_forward_cached(
        z, store[p + "attn.wq"], store[p + "attn.wk"],
        store[p + "attn.wv"], store[p + "attn.wo"], heads,
    )
    return y, (ln_cache, mha_cache)


def _attn_sub_backward(store: ParamStore, p: str, g, cache):
    ln_cache, mha_cache = cache
    dz, dwq, dwk, dwv, dwo = ops.mha_backward(g, mha_cache)
    dx, dgain, dbias = ops.layer_norm_backward(dz, ln_cache)
    store.accumulate(p + "attn.wq", dwq)
    store.accumulate(p + "attn.wk", dwk)
    store.accumulate(p + "attn.wv", dwv)
    store.accumulate(p + "attn.wo", dwo)
    store.accumulate(p + "attn_ln.g", dgain)
    store.accumulate(p + "attn_ln.b", dbias)
    return dx


def _ff_sub_forward(store: ParamStore, p: str, x):
    z, ln_cache = ops.layer_norm_forward(x, store[p + "ff_ln.g"], store[p + "ff_ln.b"])
    y, ff_cache = ops.ff_forward_cached(
        z, store[p + "ff.w1"], store[p + "ff.b1"], store[p + "ff.w2"], store[p + "ff.b2"],
    )
    return y, (ln_cache, ff_cache)


def _ff_sub_backward(store: ParamStore, p: str, g, cache):
    ln_cache, ff_cache = cache
    dz, dw1, db1, dw2, db2 = ops.ff_backward(g, ff_cache)
    dx, dgain, dbias = ops.layer_norm_backward(dz, ln_cache)
    store.accumulate(p + "ff.w1", dw1)
    store.accumulate(p + "ff.b1", db1)
    store.accumulate(p + "ff.w2", dw2)
    store.accumulate(p + "ff.b2", db2)
    store.accumulate(p + "ff_ln.g", dgain)
    store.accumulate(p + "ff_ln.b", dbias)
    return dx


def rev_block_forward(store: ParamStore, prefix: str, x1, x2, heads: int = 8):
    if x1.shape != x2.shape:
        raise ShapeError(f"x1 {x1.shape} and x2 {x2.shape} must match")
    y1 = x1 + _attn_sub_forward(store, prefix, x2, heads)[0]
    y2 = x2 + _ff_sub_forward(store, prefix, y1)[0]
    return y1, y2


def rev_block_inverse(store: ParamStore, prefix: str, y1, y2, heads: int = 8):
    if y1.shape != y2.shape:
        raise ShapeError(f"y1 {y1.shape} and y2 {y2.shape} must match")
    x2 = y2 - _ff_sub_forward(store, prefix, y1)[0]
    x1 = y1 - _attn_sub_forward(store, prefix, x2, heads)[0]
    return x1, x2


def rev_stack_forward(store: ParamStore, n_layers: int, x1, x2, heads: int = 8):
    for i in range(n_layers):
        x1, x2 = rev_block_forward(store, layer_prefix(i), x1, x2, heads)
    return x1, x2


def rev_stack_inverse(store: ParamStore, n_layers: int, y1, y2, heads: int = 8):
    for i in reversed(range(n_layers)):
        y1, y2 = rev_block_inverse(store, layer_prefix(i), y1, y2, heads)
    return y1, y2


def rev_stack_backward(store: ParamStore, n_layers: int, y1, y2, grad_y1, grad_y2,
                       heads: int = 8, retained_log: list | None = None):
    """Backward through the stack given only its outputs and their gradients.

    Re-runs each layer's sub-functions on reconstructed inputs to obtain
    local gradients; parameter gradients accumulate into ``store.grads``.
    ``retained_log``, when given, records how many inter-layer activation
    tensors are alive at each layer boundary (a constant, by construction).
    Returns (grad_x1, grad_x2) at the stack input.
    """
    y1 = np.asarray(y1, dtype=np.float64)
    y2 = np.asarray(y2, dtype=np.float64)
    g1 = np.asarray(grad_y1, dtype=np.float64)
    g2 = np.asarray(grad_y2, dtype=np.float64)
    carried = (y1, y2, g1, g2)
    for i in reversed(range(n_layers)):
        if retained_log is not None:
            retained_log.append(len(carried))
        y1, y2, g1, g2 = carried
        p = layer_prefix(i)

        ff_out, ff_cache = _ff_sub_forward(store, p, y1)
        x2 = y2 - ff_out
        g1_hat = g1 + _ff_sub_backward(store, p, g2, ff_cache)

        attn_out, attn_cache = _attn_sub_forward(store, p, x2, heads)
        x1 = y1 - attn_out
        g2_hat = g2 + _attn_sub_backward(store, p, g1_hat, attn_cache)

        if not (np.all(np.isfinite(g1_hat)) and np.all(np.isfinite(g2_hat))):
            raise NumericError(f"non-finite gradient while reversing layer {i}")
        carried = (x1, x2, g1_hat, g2_hat)
    if retained_log is not None:
        retained_log.append(len(carried))
    return carried[2], carried[3]
