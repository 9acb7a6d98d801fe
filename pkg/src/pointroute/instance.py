"""Euclidean TSP instances, tours, symmetry transforms and instance generation.

Coordinates are kept at double precision so that geometric oracles are exact;
anything entering the neural model is cast to single precision at the model
boundary, not here.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from .errors import DegenerateInstanceError, ParameterError, TourError

# The 8 isometries of the unit square (identity, transpose, flips, rotations),
# in this fixed order everywhere: featurization, tests, and documentation.
SYMMETRIES = (
    lambda x, y: (x, y),
    lambda x, y: (y, x),
    lambda x, y: (x, 1.0 - y),
    lambda x, y: (y, 1.0 - x),
    lambda x, y: (1.0 - x, y),
    lambda x, y: (1.0 - y, x),
    lambda x, y: (1.0 - x, 1.0 - y),
    lambda x, y: (1.0 - y, 1.0 - x),
)
N_SYMMETRIES = len(SYMMETRIES)


@dataclass
class Instance:
    """A set of 2-D node coordinates.

    ``coords`` is an (N, 2) float64 array. ``source_scale`` records the
    affine frame ((offset_x, offset_y), scale) of the original coordinates
    when the instance is the output of :func:`normalize_to_unit_square`.
    """

    coords: np.ndarray
    name: Optional[str] = None
    source_scale: Optional[Tuple[Tuple[float, float], float]] = None

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 2 or self.coords.shape[1] != 2:
            raise ParameterError(f"coords must be (N, 2), got {self.coords.shape}")
        if self.coords.shape[0] < 2:
            raise ParameterError("an instance needs at least 2 nodes")
        if not np.all(np.isfinite(self.coords)):
            raise ParameterError("coordinates must be finite")

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    def distance(self, i: int, j: int) -> float:
        d = self.coords[i] - self.coords[j]
        return float(np.hypot(d[0], d[1]))

    def distance_matrix(self) -> np.ndarray:
        """Full (N, N) Euclidean distance matrix, float64.

        The single shared distance routine: the decoder's cost bias, the
        nearest-neighbor oracle and 2-opt all read from this so that
        tie-breaking compares bit-identical values.
        """
        diff = self.coords[:, None, :] - self.coords[None, :, :]
        return np.hypot(diff[..., 0], diff[..., 1])

    def to_json(self) -> str:
        return json.dumps({"name": self.name, "coords": self.coords.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "Instance":
        obj = json.loads(text)
        return cls(coords=np.asarray(obj["coords"], dtype=np.float64), name=obj.get("name"))


@dataclass
class Tour:
    """An ordered node permutation with its cached closed-walk length."""

    order: np.ndarray
    length: float

    def __post_init__(self):
        self.order = np.asarray(self.order, dtype=np.int64)

    @property
    def reward(self) -> float:
        return -self.length


def validate_tour(instance: Instance, order: Sequence[int]) -> None:
    """Raise :class:`TourError` unless ``order`` is a permutation of 0..N-1."""
    n = instance.n
    order = np.asarray(order)
    seen = np.zeros(n, dtype=bool)
    for v in order:
        v = int(v)
        if v < 0 or v >= n:
            raise TourError("out_of_range", f"node index {v} outside 0..{n - 1}", index=v)
        if seen[v]:
            raise TourError("duplicate", f"node index {v} appears more than once", index=v)
        seen[v] = True
    if not seen.all():
        missing = int(np.flatnonzero(~seen)[0])
        raise TourError("missing", f"node index {missing} never visited", index=missing)


def tour_length(instance: Instance, order: Sequence[int]) -> float:
    """Closed-tour Euclidean length: the walk returns to its first node."""
    validate_tour(instance, order)
    pts = instance.coords[np.asarray(order, dtype=np.int64)]
    diff = pts - np.roll(pts, -1, axis=0)
    return float(np.hypot(diff[:, 0], diff[:, 1]).sum())


def make_tour(instance: Instance, order: Sequence[int]) -> Tour:
    return Tour(order=np.asarray(order, dtype=np.int64), length=tour_length(instance, order))


def canonical_order(order: Sequence[int]) -> np.ndarray:
    """Canonical representative of a cyclic tour for equality tests.

    Rotates the smallest index to the front, then keeps the lexicographically
    smaller of the two traversal directions.
    """
    order = np.asarray(order, dtype=np.int64)
    k = int(np.argmin(order))
    fwd = np.roll(order, -k)
    rev = np.roll(order[::-1], -int(np.argmin(order[::-1])))
    return fwd if tuple(fwd) <= tuple(rev) else rev


def generate_instances(seed: int, n: int, count: int) -> list[Instance]:
    """``count`` instances of ``n`` i.i.d. uniform nodes on the unit square.

    Pure function of (seed, n, count); a fresh PCG64 generator per call.
    """
    if n < 2:
        raise ParameterError(f"n must be >= 2, got {n}")
    if count < 1:
        raise ParameterError(f"count must be >= 1, got {count}")
    rng = np.random.default_rng(seed)
    coords = rng.random((count, n, 2))
    return [
        Instance(coords=coords[i], name=f"uniform_n{n}_seed{seed}_{i}")
        for i in range(count)
    ]


def normalize_to_unit_square(instance: Instance):
    """Translate to the origin and scale by the larger extent.

    Both axes share one scale factor so relative distances are preserved;
    original tour lengths are recovered as normalized length times scale.
    Returns ``(normalized_instance, offset, scale)``.
    """
    lo = instance.coords.min(axis=0)
    extent = instance.coords.max(axis=0) - lo
    scale = float(extent.max())
    if scale == 0.0:
        raise DegenerateInstanceError("all nodes coincide; nothing to normalize")
    coords = (instance.coords - lo) / scale
    offset = (float(lo[0]), float(lo[1]))
    out = Instance(coords=coords, name=instance.name, source_scale=(offset, scale))
    return out, offset, scale


def apply_symmetries(coord: Tuple[float, float]) -> list[Tuple[float, float]]:
    """The 8 dihedral images of a unit-square point, in the fixed order."""
    x, y = float(coord[0]), float(coord[1])
    return [t(x, y) for t in SYMMETRIES]


def transform_instance(instance: Instance, index: int) -> Instance:
    """Apply symmetry ``index`` (0..7) to every node of a unit-square instance."""
    t = SYMMETRIES[index]
    x, y = instance.coords[:, 0], instance.coords[:, 1]
    tx, ty = t(x, y)
    return Instance(coords=np.stack([tx, ty], axis=1), name=instance.name)


def optimality_gap(length: float, opt: float) -> float:
    """Percent excess over the optimum: 100 * (length - opt) / opt."""
    if opt <= 0:
        raise ParameterError(f"opt must be positive, got {opt}")
    return 100.0 * (length - opt) / opt


def write_dataset(instances: Iterable[Instance], path) -> None:
    """JSON-lines dataset: one instance per line."""
    with open(path, "w", encoding="utf-8") as f:
        for inst in instances:
            f.write(inst.to_json() + "\n")


def read_dataset(path) -> list[Instance]:
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(Instance.from_json(line))
    return out
