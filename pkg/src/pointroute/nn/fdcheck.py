"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

from typing import Callable, Tuple

import numpy as np

from .params import ParamStore

GradFn = Callable[[ParamStore], Tuple[float, dict]]


def finite_difference_check(fn: GradFn, params: ParamStore, samples: int = 100,
                            eps: float = 1e-3, seed: int = 0) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``fn(params) -> (loss, grads)`` must be deterministic. The check runs on
    a float64 copy of the parameters so the differencing noise stays far
    below the 1e-3 tolerances asserted by callers. Relative error uses
    max(|analytic|, |numeric|, 1e-8) as the denominator.
    """
    p64 = params.astype(np.float64)
    _, grads = fn(p64)
    # snapshot: fn implementations may hand back live buffers they refill
    analytic = {name: np.array(g, copy=True) for name, g in grads.items()}

    names = sorted(p64.names())
    sizes = np.array([p64[n].size for n in names], dtype=np.float64)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        ti = int(rng.choice(len(names), p=sizes / sizes.sum()))
        name = names[ti]
        flat = p64.tensors[name].reshape(-1)
        ci = int(rng.integers(flat.size))
        orig = flat[ci]

        flat[ci] = orig + eps
        f_plus, _ = fn(p64)
        flat[ci] = orig - eps
        f_minus, _ = fn(p64)
        flat[ci] = orig

        numeric = (f_plus - f_minus) / (2.0 * eps)
        a = float(np.asarray(analytic[name]).reshape(-1)[ci])
        rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, rel)
    return worst
