"""REINFORCE training with a per-instance normalized multi-start baseline.

Each instance contributes N trajectories (one per start). Rewards are
centered by their per-instance mean and scaled by their per-instance spread,
so the advantage of a trajectory is unit-free: rescaling an instance's
coordinates rescales every reward but leaves advantages unchanged.
Advantages are constants with respect to the parameters; gradients flow only
through the log-probabilities.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from . import rollout as _rollout
from .errors import NumericError, ParameterError
from .model import ModelConfig
from .nn.params import ParamStore
from .nn.reversible import rev_stack_backward
from .rollout import DecodeResult, RolloutBatch, decode_multistart, trajectory_log_prob

SIGMA_FLOOR = 1e-8


@dataclass
class TrainConfig:
    n: int = 20
    batch_size: int = 64
    instances_per_epoch: int = 100_000
    epochs: int = 5
    learning_rate: float = 1e-4
    weight_decay: float = 1e-6
    seed: int = 0
    checkpoint_every: int = 1          # epochs between checkpoints
    grad_clip: float = 1.0
    advantage_denominator: str = "std"  # "variance" keeps the literal form

    def __post_init__(self):
        for name in ("n", "batch_size", "instances_per_epoch", "epochs",
                     "learning_rate", "weight_decay", "checkpoint_every", "grad_clip"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"{name} must be positive, got {getattr(self, name)}")
        if self.learning_rate >= 1:
            raise ParameterError(f"learning_rate must be < 1, got {self.learning_rate}")
        if self.n < 2:
            raise ParameterError(f"n must be >= 2, got {self.n}")
        if self.advantage_denominator not in ("std", "variance"):
            raise ParameterError(
                f"advantage_denominator must be 'std' or 'variance', got {self.advantage_denominator!r}"
            )


@dataclass
class AdvantageStats:
    mu: float
    sigma: float                # sqrt of the mean squared deviation
    advantages: np.ndarray


def normalized_advantages(rewards: Sequence[float],
                          denominator: str = "std") -> AdvantageStats:
    """Center and scale one instance's trajectory rewards.

    All-equal rewards yield all-zero advantages; otherwise the divisor is
    floored at 1e-8 so coincident trajectories never blow up.
    """
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.size < 2:
        raise ParameterError("need at least 2 rewards from one instance")
    mu = float(r.mean())
    dev = r - mu
    msd = float(np.mean(dev * dev))
    sigma = float(np.sqrt(msd))
    if msd == 0.0:
        adv = np.zeros_like(dev)
    else:
        denom = max(sigma if denominator == "std" else msd, SIGMA_FLOOR)
        adv = dev / denom
    return AdvantageStats(mu=mu, sigma=sigma, advantages=adv)


def advantages_batch(rewards: np.ndarray, denominator: str = "std") -> np.ndarray:
    """Vectorized normalized_advantages over a (B, N) reward matrix."""
    r = np.asarray(rewards, dtype=np.float64)
    mu = r.mean(axis=-1, keepdims=True)
    dev = r - mu
    msd = np.mean(dev * dev, axis=-1, keepdims=True)
    spread = np.sqrt(msd) if denominator == "std" else msd
    adv = dev / np.maximum(spread, SIGMA_FLOOR)
    return np.where(msd == 0.0, 0.0, adv)


def reinforce_loss(batch: RolloutBatch, denominator: str = "std") -> float:
    """Scalar surrogate loss over a rollout batch.

    loss = -(1 / (B*N)) * sum_ij advantage_ij * log p(trajectory_ij);
    minimizing it ascends the normalized policy-gradient objective.
    """
    total = 0.0
    count = 0
    for trajs in batch.per_instance:
        stats = normalized_advantages([t.reward for t in trajs], denominator)
        for adv, traj in zip(stats.advantages, trajs):
            total += adv * trajectory_log_prob(traj)
            count += 1
    return -total / count


def reinforce_loss_value(advantages: np.ndarray, step_log_probs: np.ndarray) -> float:
    traj_logp = step_log_probs.sum(axis=-1)
    return float(-np.sum(advantages * traj_logp) / advantages.size)


def backward_from_decode(store: ParamStore, config: ModelConfig,
                         result: DecodeResult, coeff: np.ndarray) -> Dict[str, np.ndarray]:
    """Accumulate d(sum_ijt coeff_ij * logp_ijt)/d(theta) into store.grads.

    ``result`` must come from decode_multistart(want_cache=True). Walks the
    decode steps in reverse, scattering query gradients back onto the node
    embeddings, then reverses the encoder stack (recomputing activations from
    the final reversible pair) down to the initial embedding layer.
    """
    if result.steps is None:
        raise ParameterError("decode result has no step cache; rerun with want_cache=True")
    orders = result.orders
    b, s, n = orders.shape
    e64 = result.embeddings.per_node.astype(np.float64)
    keys = result.keys                                       # (B, N, H*dk)
    nh, d, dk = store["dec.wq"].shape
    wq_flat = _rollout.flatten_heads(store["dec.wq"].astype(np.float64))
    wk_flat = _rollout.flatten_heads(store["dec.wk"].astype(np.float64))
    scale = 1.0 / (nh * np.sqrt(dk))
    coeff = np.asarray(coeff, dtype=np.float64)

    d_embed = np.zeros((b, n, d))
    d_keys = np.zeros_like(keys)
    d_wq_flat = np.zeros((d, nh * dk))
    srun = np.zeros((b, s, d))             # suffix of route-term query grads
    first_acc = np.zeros((b, s, d))
    hg_acc = np.zeros((b, d))
    binst = np.broadcast_to(np.arange(b)[:, None], (b, s))

    for t in range(n - 1, 0, -1):
        q, p, th, chosen = result.steps[t - 1]
        du = (-coeff[..., None]) * p
        at_chosen = np.take_along_axis(du, chosen[..., None], axis=-1) + coeff[..., None]
        np.put_along_axis(du, chosen[..., None], at_chosen, axis=-1)
        d_pn = du * config.C * (1.0 - th * th)

        qh = _rollout.project_flat(q, wq_flat)               # (B, S, H*dk)
        dqh = np.matmul(d_pn, keys) * scale
        d_keys += np.matmul(d_pn.swapaxes(-1, -2), qh) * scale
        dqh_flat = dqh.reshape(b * s, nh * dk)
        d_wq_flat += q.reshape(b * s, d).T @ dqh_flat
        dq = (dqh_flat @ wq_flat.T).reshape(b, s, d)

        srun += dq / n
        np.add.at(d_embed, (binst, orders[..., t - 1]), dq + srun)
        first_acc += dq
        hg_acc += dq.sum(axis=1) / n

    np.add.at(d_embed, (binst, orders[..., 0]), first_acc)
    d_embed += hg_acc[:, None, :]
    dkeys_flat = d_keys.reshape(b * n, nh * dk)
    d_wk_flat = e64.reshape(b * n, d).T @ dkeys_flat
    d_embed += (dkeys_flat @ wk_flat.T).reshape(b, n, d)

    store.accumulate("dec.wq", d_wq_flat.reshape(d, nh, dk).transpose(1, 0, 2))
    store.accumulate("dec.wk", d_wk_flat.reshape(d, nh, dk).transpose(1, 0, 2))

    # embeddings were (y1 + y2) / 2, so both halves see half the gradient
    y1, y2 = result.rev_pair
    d_half = 0.5 * d_embed
    gx1, gx2 = rev_stack_backward(store, config.n_t, y1, y2, d_half, d_half, config.heads)
    dh = gx1 + gx2
    feats = np.asarray(result.features, dtype=np.float64)
    store.accumulate("embed.w", feats.reshape(-1, feats.shape[-1]).T @ dh.reshape(-1, config.d))
    store.accumulate("embed.b", dh.reshape(-1, config.d).sum(axis=0))
    return store.grads


def policy_loss_and_grads(store: ParamStore, config: ModelConfig, coords: np.ndarray,
                          orders: np.ndarray, advantages: np.ndarray):
    """Teacher-forced REINFORCE loss and its full analytic gradient.

    The trajectories and advantages are frozen inputs; this is the function
    the finite-difference oracle probes. Zeroes and refills store.grads.
    """
    result = decode_multistart(store, config, coords, mode="forced",
                               forced_orders=orders, want_cache=True)
    adv = np.asarray(advantages, dtype=np.float64)
    loss = reinforce_loss_value(adv, result.step_log_probs)
    coeff = -adv / adv.size
    store.zero_grads()
    grads = backward_from_decode(store, config, result, coeff)
    return loss, grads


def clip_gradients(grads: Dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients so their global norm is at most max_norm.

    Returns the pre-clip norm.
    """
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    norm = float(np.sqrt(total))
    if norm > max_norm:
        factor = max_norm / norm
        for g in grads.values():
            g *= factor
    return norm


class Adam:
    """Adam with decoupled weight decay; moment buffers persist and checkpoint."""

    def __init__(self, lr: float, weight_decay: float = 0.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self, store: ParamStore, grads: Dict[str, np.ndarray]) -> None:
        for name in store.names():
            g = grads[name]
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for {name!r}; step aborted")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name in store.names():
            g = np.asarray(grads[name], dtype=np.float64)
            m = self.m.setdefault(name, np.zeros(g.shape))
            v = self.v.setdefault(name, np.zeros(g.shape))
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            theta = store.tensors[name].astype(np.float64)
            update = self.lr * ((m / bc1) / (np.sqrt(v / bc2) + self.eps)
                                + self.weight_decay * theta)
            store.tensors[name][...] = (theta - update).astype(store.dtype)

    def state_store(self) -> ParamStore:
        out = ParamStore()
        for name, m in self.m.items():
            out.add("m." + name, m)
        for name, v in self.v.items():
            out.add("v." + name, v)
        return out

    def load_state(self, state: ParamStore, step: int) -> None:
        self.t = int(step)
        self.m = {k[2:]: np.asarray(state[k], dtype=np.float64)
                  for k in state.names() if k.startswith("m.")}
        self.v = {k[2:]: np.asarray(state[k], dtype=np.float64)
                  for k in state.names() if k.startswith("v.")}


def optimizer_step(store: ParamStore, grads: Dict[str, np.ndarray],
                   lr: float, weight_decay: float = 0.0,
                   adam: Optional[Adam] = None) -> Adam:
    """One Adam update; pass the returned optimizer back in to keep moments."""
    if adam is None:
        adam = Adam(lr=lr, weight_decay=weight_decay)
    adam.step(store, grads)
    return adam


MetricsSink = Callable[[dict], None]


def train(train_cfg: TrainConfig, model_cfg: ModelConfig, store: ParamStore,
          sink: Optional[MetricsSink] = None,
          checkpoint_fn: Optional[Callable[[int, ParamStore, Adam], None]] = None,
          adam: Optional[Adam] = None, start_epoch: int = 0) -> ParamStore:
    """Policy-gradient training loop over freshly sampled instances.

    Every (epoch, batch) pair derives its own instance-generation and
    rollout seeds from train_cfg.seed, so runs are reproducible and a resumed
    run continues the exact same instance stream.
    """
    adam = adam or Adam(lr=train_cfg.learning_rate, weight_decay=train_cfg.weight_decay)
    t_start = time.perf_counter()
    for epoch in range(start_epoch, train_cfg.epochs):
        remaining = train_cfg.instances_per_epoch
        batch_idx = 0
        while remaining > 0:
            bsz = min(train_cfg.batch_size, remaining)
            remaining -= bsz
            gen_rng = np.random.default_rng(
                np.random.SeedSequence([train_cfg.seed, epoch, batch_idx, 0]))
            coords = gen_rng.random((bsz, train_cfg.n, 2))
            roll_seed = np.random.SeedSequence([train_cfg.seed, epoch, batch_idx, 1])
            result = decode_multistart(store, model_cfg, coords, mode="sample",
                                       seed=roll_seed, want_cache=True)
            rewards = -result.lengths
            adv = advantages_batch(rewards, train_cfg.advantage_denominator)
            loss = reinforce_loss_value(adv, result.step_log_probs)
            store.zero_grads()
            backward_from_decode(store, model_cfg, result, coeff=-adv / adv.size)
            grad_norm = clip_gradients(store.grads, train_cfg.grad_clip)
            adam.step(store, store.grads)
            if sink is not None:
                sink({
                    "epoch": epoch,
                    "batch": batch_idx,
                    "mean_len": float(result.lengths.mean()),
                    "loss": loss,
                    "grad_norm": grad_norm,
                    "wallclock_s": time.perf_counter() - t_start,
                })
            batch_idx += 1
        if checkpoint_fn is not None and (epoch + 1) % train_cfg.checkpoint_every == 0:
            checkpoint_fn(epoch + 1, store, adam)
    return store


def evaluate_greedy(store: ParamStore, config: ModelConfig, coords: np.ndarray,
                    batch_size: int = 256) -> np.ndarray:
    """Best-of-all-starts greedy tour length per instance, coords (B, N, 2)."""
    out = []
    for i in range(0, coords.shape[0], batch_size):
        chunk = coords[i:i + batch_size]
        result = decode_multistart(store, config, chunk, mode="greedy")
        out.append(result.lengths.min(axis=-1))
    return np.concatenate(out)
