"""Named parameter tensors with paired gradient accumulators."""
from __future__ import annotations

from typing import Dict, Iterator

import numpy as np

from ..errors import ParameterError, ShapeError


class ParamStore:
    """Flat name -> tensor map.

    Parameters live at single precision; each has exactly one gradient
    buffer of the same shape kept at double precision so repeated
    accumulation over a batch stays quiet enough for finite-difference
    comparisons.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.tensors: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self.tensors:
            raise ParameterError(f"duplicate parameter name {name!r}")
        arr = np.asarray(value, dtype=self.dtype)
        self.tensors[name] = arr
        self.grads[name] = np.zeros(arr.shape, dtype=np.float64)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def names(self) -> list[str]:
        return list(self.tensors)

    def num_values(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def accumulate(self, name: str, grad: np.ndarray) -> None:
        buf = self.grads[name]
        if grad.shape != buf.shape:
            raise ShapeError(
                f"gradient for {name!r} has shape {grad.shape}, parameter is {buf.shape}"
            )
        buf += grad

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def grad_norm(self) -> float:
        total = 0.0
        for g in self.grads.values():
            total += float(np.sum(g * g))
        return float(np.sqrt(total))

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore(dtype=dtype)
        for name, t in self.tensors.items():
            out.add(name, t.astype(dtype))
        return out

    def copy(self) -> "ParamStore":
        out = ParamStore(dtype=self.dtype)
        for name, t in self.tensors.items():
            out.add(name, t.copy())
        return out
