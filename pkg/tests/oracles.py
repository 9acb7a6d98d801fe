"""Independent reference implementations used only as test oracles.

Each routine deliberately recomputes its answer along a different path from
the library code it checks: plain-python distance sums, permutation
enumeration, stored-activation backprop, and a step-by-step pointer
evaluation.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

from pointroute.nn.reversible import (
    _attn_sub_backward,
    _attn_sub_forward,
    _ff_sub_backward,
    _ff_sub_forward,
    layer_prefix,
)


def pairwise_sum_length(coords, order) -> float:
    """Tour length by plain python math.dist over explicit index pairs."""
    total = 0.0
    n = len(order)
    for i in range(n):
        a = coords[order[i]]
        b = coords[order[(i + 1) % n]]
        total += math.dist((a[0], a[1]), (b[0], b[1]))
    return total


def brute_force_optimum(coords) -> float:
    """Exhaustive (n-1)!/2-ish enumeration with node 0 fixed first."""
    n = len(coords)
    best = math.inf
    for perm in itertools.permutations(range(1, n)):
        best = min(best, pairwise_sum_length(coords, (0,) + perm))
    return best


def softmax_reference(u):
    e = [math.exp(v - max(u)) for v in u]
    s = sum(e)
    return [v / s for v in e]


def pointer_probs_reference(wq, wk, q, emb, dist_row, visited, C):
    """Slow per-node evaluation of the multi-pointer distribution."""
    n_heads, _, dk = wq.shape
    n = emb.shape[0]
    scores = []
    for j in range(n):
        pn = 0.0
        for h in range(n_heads):
            qh = q @ wq[h]
            kh = emb[j] @ wk[h]
            pn += float(qh @ kh) / math.sqrt(dk)
        pn /= n_heads
        scores.append(pn - float(dist_row[j]))
    clipped = [(-math.inf if visited[j] else C * math.tanh(scores[j])) for j in range(n)]
    finite = [v for v in clipped if v != -math.inf]
    m = max(finite)
    exps = [0.0 if v == -math.inf else math.exp(v - m) for v in clipped]
    total = sum(exps)
    return np.array([v / total for v in exps])


class StoredActivationStack:
    """Residual-stack backward that keeps every layer's activations alive.

    The memory-hungry counterpart of rev_stack_backward: same sub-function
    primitives, but gradients come from stored forward state instead of
    inverse reconstruction. ``retained`` counts activation tensors it must
    keep until the backward pass, which grows linearly with depth.
    """

    def __init__(self, store, n_layers: int, heads: int):
        self.store = store
        self.n_layers = n_layers
        self.heads = heads
        self.activations = []
        self.caches = []

    def forward(self, x1, x2):
        a1 = np.asarray(x1, dtype=np.float64)
        a2 = np.asarray(x2, dtype=np.float64)
        self.activations = [(a1, a2)]
        self.caches = []
        for i in range(self.n_layers):
            p = layer_prefix(i)
            attn_out, attn_cache = _attn_sub_forward(self.store, p, a2, self.heads)
            b1 = a1 + attn_out
            ff_out, ff_cache = _ff_sub_forward(self.store, p, b1)
            b2 = a2 + ff_out
            self.caches.append((attn_cache, ff_cache))
            a1, a2 = b1, b2
            self.activations.append((a1, a2))
        return a1, a2

    @property
    def retained(self) -> int:
        return 2 * len(self.activations)

    def backward(self, g1, g2):
        g1 = np.asarray(g1, dtype=np.float64)
        g2 = np.asarray(g2, dtype=np.float64)
        for i in reversed(range(self.n_layers)):
            p = layer_prefix(i)
            attn_cache, ff_cache = self.caches[i]
            g1 = g1 + _ff_sub_backward(self.store, p, g2, ff_cache)
            g2 = g2 + _attn_sub_backward(self.store, p, g1, attn_cache)
        return g1, g2
