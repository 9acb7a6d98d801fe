"""The pointer policy: node featurization, encoder, context query, scoring head.

The decoder scores are computed at double precision. With untrained (zero)
pointer projections the score reduces to the negative distance to the last
node, and greedy decoding must then reproduce the nearest-neighbor heuristic
tour-for-tour; float32 scoring could collapse distinct distances into ties
and break that equivalence.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    EmptyRouteError,
    NoCandidatesError,
    ParameterError,
    ShapeError,
)
from .instance import N_SYMMETRIES, SYMMETRIES, Instance
from .nn.params import ParamStore
from .nn import ops
from .nn.reversible import LAYER_SUFFIXES, layer_prefix, rev_stack_forward

N_FEATURES = 3 * N_SYMMETRIES  # (x, y, angle) under each square symmetry


@dataclass
class ModelConfig:
    d: int = 128            # embedding width
    n_t: int = 6            # encoder layers
    heads: int = 8          # attention heads per encoder layer
    H: int = 8              # pointer projections
    d_k: int = 128          # pointer projection width
    C: float = 50.0         # score clipping constant
    angle_mode: str = "atan2"

    def __post_init__(self):
        for name in ("d", "n_t", "heads", "H", "d_k"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"{name} must be positive, got {getattr(self, name)}")
        if self.C <= 0:
            raise ParameterError(f"C must be positive, got {self.C}")
        if self.d % self.heads != 0:
            raise ParameterError(f"d={self.d} not divisible by heads={self.heads}")
        if self.angle_mode not in ("atan2", "atanh"):
            raise ParameterError(f"unknown angle_mode {self.angle_mode!r}")

    def manifest(self) -> dict:
        return asdict(self)


@dataclass
class NodeEmbeddings:
    """Per-node encoder outputs plus their sum, the graph embedding."""

    per_node: np.ndarray   # (..., N, d)
    graph: np.ndarray      # (..., d)


@dataclass
class ContextState:
    """Decoder-visible summary of one partial route."""

    h_first: np.ndarray
    h_last: np.ndarray
    h_route: np.ndarray
    t: int = 0


def angle_feature(x: np.ndarray, y: np.ndarray, mode: str = "atan2") -> np.ndarray:
    """Angular coordinate of (x, y).

    Default is atan2(y, x), which is defined everywhere and maps the origin
    to 0. The "atanh" mode keeps the raw atanh(y/x) form with the ratio
    clamped into atanh's open domain; it exists for comparison only.
    """
    if mode == "atan2":
        return np.arctan2(y, x)
    if mode == "atanh":
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(x != 0.0, y / np.where(x != 0.0, x, 1.0), np.sign(y) * np.inf)
        ratio = np.clip(ratio, -1.0 + 1e-7, 1.0 - 1e-7)
        out = np.arctanh(ratio)
        return np.where((x == 0.0) & (y == 0.0), 0.0, out)
    raise ParameterError(f"unknown angle mode {mode!r}")


def featurize_coords(coords: np.ndarray, angle_mode: str = "atan2") -> np.ndarray:
    """24 features per node: (x', y', angle') under the 8 square symmetries.

    ``coords`` is (..., N, 2) in the unit square; returns (..., N, 24) float64.
    """
    coords = np.asarray(coords, dtype=np.float64)
    if np.min(coords) < -1e-9 or np.max(coords) > 1.0 + 1e-9:
        raise ParameterError("coordinates outside [0,1]^2; normalize the instance first")
    x, y = coords[..., 0], coords[..., 1]
    blocks = []
    for transform in SYMMETRIES:
        tx, ty = transform(x, y)
        tx = tx + np.zeros_like(x)  # materialize identity lambdas to arrays
        ty = ty + np.zeros_like(y)
        blocks.extend([tx, ty, angle_feature(tx, ty, angle_mode)])
    return np.stack(blocks, axis=-1)


def featurize(instance: Instance, angle_mode: str = "atan2") -> np.ndarray:
    return featurize_coords(instance.coords, angle_mode)


def _uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(config: ModelConfig, seed: int = 0) -> ParamStore:
    """Fresh parameters: uniform(+-1/sqrt(fan_in)) linears, identity norms."""
    rng = np.random.default_rng(seed)
    d, dk = config.d, config.d_k
    store = ParamStore()
    store.add("embed.w", _uniform_init(rng, (N_FEATURES, d), N_FEATURES))
    store.add("embed.b", np.zeros(d))
    for i in range(config.n_t):
        p = layer_prefix(i)
        store.add(p + "attn_ln.g", np.ones(d))
        store.add(p + "attn_ln.b", np.zeros(d))
        for w in ("wq", "wk", "wv", "wo"):
            store.add(p + f"attn.{w}", _uniform_init(rng, (d, d), d))
        store.add(p + "ff_ln.g", np.ones(d))
        store.add(p + "ff_ln.b", np.zeros(d))
        store.add(p + "ff.w1", _uniform_init(rng, (d, 4 * d), d))
        store.add(p + "ff.b1", np.zeros(4 * d))
        store.add(p + "ff.w2", _uniform_init(rng, (4 * d, d), 4 * d))
        store.add(p + "ff.b2", np.zeros(d))
    store.add("dec.wq", _uniform_init(rng, (config.H, d, dk), d))
    store.add("dec.wk", _uniform_init(rng, (config.H, d, dk), d))
    return store


def zero_pointer_params(config: ModelConfig, seed: int = 0) -> ParamStore:
    """Params whose pointer projections are zero: the policy is then exactly
    the nearest-neighbor heuristic under greedy decoding."""
    store = init_params(config, seed)
    store.tensors["dec.wq"][...] = 0.0
    store.tensors["dec.wk"][...] = 0.0
    return store


def check_params(store: ParamStore, config: ModelConfig) -> None:
    """Raise ShapeError when the store does not match the configuration."""
    expected = {"embed.w": (N_FEATURES, config.d), "embed.b": (config.d,),
                "dec.wq": (config.H, config.d, config.d_k),
                "dec.wk": (config.H, config.d, config.d_k)}
    d = config.d
    shapes = {"attn_ln.g": (d,), "attn_ln.b": (d,),
              "attn.wq": (d, d), "attn.wk": (d, d), "attn.wv": (d, d), "attn.wo": (d, d),
              "ff_ln.g": (d,), "ff_ln.b": (d,),
              "ff.w1": (d, 4 * d), "ff.b1": (4 * d,), "ff.w2": (4 * d, d), "ff.b2": (d,)}
    for i in range(config.n_t):
        for suffix in LAYER_SUFFIXES:
            expected[layer_prefix(i) + suffix] = shapes[suffix]
    for name, shape in expected.items():
        if name not in store:
            raise ShapeError(f"parameter {name!r} missing for config {config}")
        if store[name].shape != shape:
            raise ShapeError(
                f"parameter {name!r} has shape {store[name].shape}, config wants {shape}"
            )


def encode_with_state(store: ParamStore, config: ModelConfig, features: np.ndarray):
    """Run the encoder; also return the final reversible pair (y1, y2).

    The pair is all the training backward needs to reconstruct every layer's
    activations, so callers can drop everything else.
    """
    if features.shape[-1] != N_FEATURES:
        raise ShapeError(f"features must have width {N_FEATURES}, got {features.shape[-1]}")
    check_params(store, config)
    x = np.asarray(features, dtype=store.dtype)
    h = x @ store["embed.w"] + store["embed.b"]
    y1, y2 = rev_stack_forward(store, config.n_t, h, h, config.heads)
    per_node = (y1 + y2) * 0.5
    emb = NodeEmbeddings(per_node=per_node, graph=per_node.sum(axis=-2))
    return emb, (y1, y2)


def encode(store: ParamStore, config: ModelConfig, features: np.ndarray) -> NodeEmbeddings:
    return encode_with_state(store, config, features)[0]


def initial_context(embeddings: NodeEmbeddings, start: int) -> ContextState:
    h = np.asarray(embeddings.per_node[start], dtype=np.float64)
    return ContextState(h_first=h.copy(), h_last=h.copy(), h_route=h.copy(), t=1)


def advance_context(state: ContextState, embeddings: NodeEmbeddings, node: int) -> None:
    h = np.asarray(embeddings.per_node[node], dtype=np.float64)
    state.h_last = h
    state.h_route = state.h_route + h
    state.t += 1


def context_query(embeddings: NodeEmbeddings, state: ContextState, n: int) -> np.ndarray:
    """Decoder query: (graph + partial-route sum) / n + last + first."""
    if state.t < 1:
        raise EmptyRouteError("context query needs at least the start node visited")
    graph = np.asarray(embeddings.graph, dtype=np.float64)
    return (graph + state.h_route) / n + state.h_last + state.h_first


def pointer_keys(store: ParamStore, embeddings: NodeEmbeddings) -> np.ndarray:
    """Per-head key projections of the node embeddings, shape (H, N, d_k).

    Computed once per instance and shared across all decode steps and starts.
    """
    e = np.asarray(embeddings.per_node, dtype=np.float64)
    return np.einsum("nd,hdk->hnk", e, store["dec.wk"].astype(np.float64))


def pointer_scores(store: ParamStore, q: np.ndarray, keys: np.ndarray,
                   dist_from_last: np.ndarray) -> np.ndarray:
    """Raw interaction scores: averaged multi-head bilinear form minus the
    travel cost from the last visited node."""
    wq = store["dec.wq"].astype(np.float64)
    h, _, dk = wq.shape
    qh = np.einsum("d,hdk->hk", np.asarray(q, dtype=np.float64), wq)
    pn = np.einsum("hk,hnk->n", qh, keys) / (h * np.sqrt(dk))
    return pn - dist_from_last


def pointer_distribution(store: ParamStore, q: np.ndarray, embeddings: NodeEmbeddings,
                         last: int, instance: Instance, visited: np.ndarray,
                         C: float = 50.0, keys: Optional[np.ndarray] = None) -> np.ndarray:
    """Next-node probabilities for one decode step.

    Visited nodes get probability exactly 0 (their clipped score is -inf);
    the remaining probabilities sum to 1.
    """
    visited = np.asarray(visited, dtype=bool)
    if visited.all():
        raise NoCandidatesError("every node is already visited")
    if not visited[last]:
        raise ParameterError(f"last node {last} is not marked visited")
    if keys is None:
        keys = pointer_keys(store, embeddings)
    diff = instance.coords - instance.coords[last]
    dist = np.hypot(diff[:, 0], diff[:, 1])
    score = pointer_scores(store, q, keys, dist)
    u = np.where(visited, -np.inf, C * np.tanh(score))
    return ops.softmax_rows(u)
