"""Multi-start auto-regressive decoding.

For an N-node instance the decoder produces N trajectories, one per start
node, all sharing a single encoder evaluation. The batched path decodes
every (instance, start) pair in lockstep; its semantics are exactly the
sequential per-step :func:`pointroute.model.pointer_distribution`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from . import model as _model
from .errors import ParameterError, TourError
from .instance import Instance, Tour
from .model import ModelConfig
from .nn import ops
from .nn.params import ParamStore


@dataclass
class Trajectory:
    """One decoded route: the start node is forced (log-prob contribution 0),
    the remaining N-1 steps carry the log-probability of each choice."""

    order: np.ndarray
    step_log_probs: np.ndarray
    reward: float

    @property
    def start(self) -> int:
        return int(self.order[0])

    @property
    def length(self) -> float:
        return -self.reward


@dataclass
class RolloutBatch:
    """N trajectories for each of B instances; trajectory j starts at node j."""

    per_instance: List[List[Trajectory]]
    mode: str
    seed: Optional[int] = None

    @property
    def rewards(self) -> np.ndarray:
        return np.array([[t.reward for t in trajs] for trajs in self.per_instance])


@dataclass
class DecodeResult:
    """Array-level decode output; ``steps`` is populated when want_cache."""

    orders: np.ndarray           # (B, S, N) int64
    step_log_probs: np.ndarray   # (B, S, N-1) float64
    lengths: np.ndarray          # (B, S) float64
    embeddings: "_model.NodeEmbeddings"
    rev_pair: tuple              # final (y1, y2) of the encoder stack
    features: np.ndarray         # (B, N, 24)
    keys: Optional[np.ndarray] = None        # (B, N, H*d_k) float64, head-flattened
    dists: Optional[np.ndarray] = None       # (B, N, N) float64
    steps: Optional[list] = None             # per step: (q, p, th, chosen)


def pairwise_distances(coords: np.ndarray) -> np.ndarray:
    """(..., N, N) Euclidean distances; the same formula Instance uses."""
    diff = coords[..., :, None, :] - coords[..., None, :, :]
    return np.hypot(diff[..., 0], diff[..., 1])


def flatten_heads(w: np.ndarray) -> np.ndarray:
    """(H, d, d_k) projection stack -> (d, H*d_k) single matrix.

    With heads flattened, every decode step is a handful of large matmuls;
    summing a head-flattened product over d_k blocks is identical to
    averaging per-head dot products (up to the shared 1/(H*sqrt(d_k))).
    """
    h, d, dk = w.shape
    return w.transpose(1, 0, 2).reshape(d, h * dk)


def project_flat(x: np.ndarray, w_flat: np.ndarray) -> np.ndarray:
    """Apply a head-flattened projection to (..., d) vectors."""
    lead = x.shape[:-1]
    return (x.reshape(-1, x.shape[-1]) @ w_flat).reshape(*lead, w_flat.shape[-1])


def _sample_uniforms(seed, b: int, s: int, steps: int) -> np.ndarray:
    """One uniform stream per (instance, start) pair, spawned from the root
    seed so results do not depend on evaluation order."""
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = root.spawn(b * s)
    flat = np.stack([np.random.default_rng(c).random(steps) for c in children])
    return flat.reshape(b, s, steps)


def decode_multistart(store: ParamStore, config: ModelConfig, coords: np.ndarray,
                      mode: str = "greedy", seed=None,
                      forced_orders: Optional[np.ndarray] = None,
                      want_cache: bool = False) -> DecodeResult:
    """Decode all starts of all instances in one vectorized sweep.

    ``coords`` is (B, N, 2) inside the unit square. Modes: "greedy" takes the
    argmax each step (ties to the lowest index), "sample" draws from the
    categorical distribution, "forced" follows ``forced_orders`` and just
    scores it (teacher forcing).
    """
    coords = np.asarray(coords, dtype=np.float64)
    b, n, _ = coords.shape
    if mode == "sample" and seed is None and forced_orders is None:
        raise ParameterError("sample mode needs a seed")
    if mode not in ("greedy", "sample", "forced"):
        raise ParameterError(f"unknown decode mode {mode!r}")
    if forced_orders is not None:
        forced_orders = np.asarray(forced_orders, dtype=np.int64)
        if forced_orders.shape[0] != b or forced_orders.shape[-1] != n:
            raise ParameterError(f"forced orders shape {forced_orders.shape} does not fit (B,*,{n})")
        if not np.array_equal(np.sort(forced_orders, axis=-1),
                              np.broadcast_to(np.arange(n), forced_orders.shape)):
            raise TourError("missing", "forced orders must be permutations of 0..N-1")
        s = forced_orders.shape[1]
    else:
        s = n

    feats = _model.featurize_coords(coords, config.angle_mode)
    emb, rev_pair = _model.encode_with_state(store, config, feats)
    e64 = emb.per_node.astype(np.float64)
    hg = emb.graph.astype(np.float64)
    keys = project_flat(e64, flatten_heads(store["dec.wk"].astype(np.float64)))
    wq_flat = flatten_heads(store["dec.wq"].astype(np.float64))
    dists = pairwise_distances(coords)
    scale = 1.0 / (config.H * np.sqrt(config.d_k))

    binst = np.arange(b)[:, None]
    orders = np.empty((b, s, n), dtype=np.int64)
    orders[..., 0] = forced_orders[..., 0] if forced_orders is not None else np.arange(n)
    visited = np.zeros((b, s, n), dtype=bool)
    np.put_along_axis(visited, orders[..., :1], True, axis=-1)
    h_first = e64[binst, orders[..., 0]]
    h_last = h_first.copy()
    h_route = h_first.copy()

    uniforms = None
    if mode == "sample" and forced_orders is None:
        uniforms = _sample_uniforms(seed, b, s, n - 1)

    step_log_probs = np.empty((b, s, n - 1), dtype=np.float64)
    steps = [] if want_cache else None

    for t in range(1, n):
        q = (hg[:, None, :] + h_route) / n + h_last + h_first
        qh = project_flat(q, wq_flat)
        pn = np.matmul(qh, keys.swapaxes(-1, -2)) * scale
        last = orders[..., t - 1]
        score = pn - dists[binst, last]
        th = np.tanh(score)
        u = np.where(visited, -np.inf, config.C * th)
        p = ops.softmax_rows(u)

        if forced_orders is not None:
            chosen = forced_orders[..., t]
        elif mode == "greedy":
            chosen = np.argmax(u, axis=-1)
        else:
            cs = np.cumsum(p, axis=-1)
            ueff = np.clip(uniforms[..., t - 1], 1e-12, 1.0 - 1e-12) * cs[..., -1]
            chosen = np.argmax(cs >= ueff[..., None], axis=-1)

        step_log_probs[..., t - 1] = np.log(
            np.take_along_axis(p, chosen[..., None], axis=-1)[..., 0]
        )
        orders[..., t] = chosen
        np.put_along_axis(visited, chosen[..., None], True, axis=-1)
        h_new = e64[binst, chosen]
        h_last = h_new
        h_route = h_route + h_new
        if want_cache:
            steps.append((q, p, th, chosen))

    closing = np.roll(orders, -1, axis=-1)
    lengths = dists[np.arange(b)[:, None, None], orders, closing].sum(axis=-1)
    return DecodeResult(orders=orders, step_log_probs=step_log_probs, lengths=lengths,
                        embeddings=emb, rev_pair=rev_pair, features=feats,
                        keys=keys, dists=dists, steps=steps)


def multi_start_rollout(store: ParamStore, config: ModelConfig, instance: Instance,
                        mode: str = "greedy", seed=None) -> List[Trajectory]:
    """N trajectories for one instance, one per start node."""
    result = decode_multistart(store, config, instance.coords[None], mode=mode, seed=seed)
    return [
        Trajectory(order=result.orders[0, j].copy(),
                   step_log_probs=result.step_log_probs[0, j].copy(),
                   reward=-float(result.lengths[0, j]))
        for j in range(instance.n)
    ]


def rollout_batch(store: ParamStore, config: ModelConfig, instances: Sequence[Instance],
                  mode: str = "greedy", seed=None) -> RolloutBatch:
    coords = np.stack([inst.coords for inst in instances])
    result = decode_multistart(store, config, coords, mode=mode, seed=seed)
    per_instance = [
        [Trajectory(order=result.orders[i, j].copy(),
                    step_log_probs=result.step_log_probs[i, j].copy(),
                    reward=-float(result.lengths[i, j]))
         for j in range(coords.shape[1])]
        for i in range(len(instances))
    ]
    return RolloutBatch(per_instance=per_instance, mode=mode, seed=seed)


def best_of(trajectories: Sequence[Trajectory]) -> Tour:
    """Shortest trajectory as a Tour; ties keep the earliest (lowest start)."""
    if len(trajectories) == 0:
        raise ParameterError("best_of needs at least one trajectory")
    best = trajectories[0]
    for traj in trajectories[1:]:
        if traj.length < best.length:
            best = traj
    return Tour(order=best.order.copy(), length=best.length)


def trajectory_log_prob(traj: Trajectory) -> float:
    """Log-probability of the whole route; the forced start contributes 0."""
    return float(np.sum(traj.step_log_probs))
