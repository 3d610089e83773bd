"""Learning-adaptive and static imagination rollouts in latent space.

A rollout starts at a real latent state and its best-matching node. Each
step is accepted with probability ``1 - scaled error`` of the current
node's local models; accepted steps sample an on-policy action, predict the
next latent and reward with that node's models, store the imagined
transition, and re-match the predicted latent to a node. Matching never
adapts the map and imagined data never trains the local models.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .replay import LatentTransition

DEFAULT_WARMUP = 5


@dataclass
class ImaginedTransition:
    phi: np.ndarray
    a: np.ndarray
    r: float
    phi_next: np.ndarray
    depth: int
    imagined: bool = True

    def as_latent(self) -> LatentTransition:
        return LatentTransition(self.phi, self.a, self.r, self.phi_next,
                                terminal=False, imagined=True)


def scale_error(stats) -> float:
    """Current mean error over its maximum in the recent scale window."""
    if not stats.scale_history:
        return 0.0
    peak = max(stats.scale_history)
    if peak <= 0.0:
        return 0.0
    return stats.moving_average() / peak


def gate_error(stats, warmup=DEFAULT_WARMUP) -> float:
    """Scaled error, forced to 1 (gate closed) for under-trained nodes."""
    if stats.count < warmup:
        return 1.0
    return scale_error(stats)


def _sink_store(sink, t: ImaginedTransition):
    if sink is None:
        return
    if hasattr(sink, "store"):
        sink.store(t.as_latent())
    else:
        sink.append(t)


def rollout(phi_start, n_start, itm, policy, d_max, rng, sink=None,
            warmup=DEFAULT_WARMUP, adaptive=True) -> int:
    """Run one imagination rollout; returns the number of transitions stored.

    ``policy`` maps a latent to an action (exploration noise included).
    ``sink`` is a latent replay buffer (``store``), a list (``append``) or
    None. With ``adaptive=False`` every step is accepted.
    """
    if d_max <= 0:
        return 0
    phi = np.asarray(phi_start, dtype=float)
    node = n_start
    depth = 0
    while depth < d_max:
        if adaptive:
            c = rng.random()
            if not c < 1.0 - gate_error(itm.nodes[node].stats, warmup):
                break
        a = policy(phi)
        phi_next, r_hat = itm.nodes[node].models.predict(phi, a)
        if not np.all(np.isfinite(phi_next)) or not np.isfinite(r_hat):
            break
        _sink_store(sink, ImaginedTransition(phi, a, float(r_hat), phi_next, depth))
        phi = phi_next
        node = itm.find_matching(phi)[0]
        depth += 1
    return depth


def la_imagination(phi_start, n_start, itm, policy, d_max, rng, sink=None,
                   warmup=DEFAULT_WARMUP) -> int:
    return rollout(phi_start, n_start, itm, policy, d_max, rng, sink, warmup, adaptive=True)


def static_imagination(phi_start, n_start, itm, policy, d_max, rng=None, sink=None) -> int:
    return rollout(phi_start, n_start, itm, policy, d_max, rng, sink, adaptive=False)
