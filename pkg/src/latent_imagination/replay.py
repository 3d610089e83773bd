"""Proportional prioritized replay for pixel-space and latent-space transitions.

Storage is columnar: each field is a preallocated numpy array indexed by
ring slot. Every stored item gets a monotonically increasing id; the slot is
``id % capacity``, so ids of overwritten items are recognisably stale.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PRIORITY_FLOOR = 1e-5


class SumTree:
    """Binary sum tree over ``capacity`` leaves (array layout, root at 1)."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        size = 1
        while size < capacity:
            size *= 2
        self.leaf_offset = size
        self.tree = np.zeros(2 * size)

    @property
    def total(self) -> float:
        return float(self.tree[1])

    def leaves(self) -> np.ndarray:
        return self.tree[self.leaf_offset:self.leaf_offset + self.capacity]

    def set(self, slot: int, value: float) -> None:
        tree = self.tree
        i = int(slot) + self.leaf_offset
        tree[i] = value
        i //= 2
        while i >= 1:
            tree[i] = tree[2 * i] + tree[2 * i + 1]
            i //= 2

    def update(self, slots, values) -> None:
        slots = np.atleast_1d(np.asarray(slots, dtype=np.int64))
        values = np.atleast_1d(np.asarray(values, dtype=float))
        idx = slots + self.leaf_offset
        self.tree[idx] = values
        # recompute parents level by level; duplicate indices write identical sums
        while idx[0] > 1:
            idx = idx // 2
            self.tree[idx] = self.tree[2 * idx] + self.tree[2 * idx + 1]

    def find(self, values) -> np.ndarray:
        """Leaf slots whose cumulative-priority interval contains each value."""
        values = np.array(values, dtype=float)
        idx = np.ones(len(values), dtype=np.int64)
        while idx[0] < self.leaf_offset:
            left = 2 * idx
            left_sum = self.tree[left]
            go_right = values >= left_sum
            values = np.where(go_right, values - left_sum, values)
            idx = np.where(go_right, left + 1, left)
        slots = idx - self.leaf_offset
        # float round-off can land on an empty leaf at the far right
        return np.minimum(slots, self.capacity - 1)


@dataclass
class PixelTransition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    terminal: bool = False


@dataclass
class LatentTransition:
    phi: np.ndarray
    a: np.ndarray
    r: float
    phi_next: np.ndarray
    terminal: bool = False
    imagined: bool = False


class PrioritizedBuffer:
    """Ring buffer with proportional prioritized sampling.

    ``fields`` maps column name to ``(shape, dtype)``. Importance-sampling
    exponent ``beta`` is annealed linearly from ``beta0`` to 1 as
    :attr:`progress` goes from 0 to ``beta_horizon``.
    """

    def __init__(self, capacity, fields, alpha=0.6, beta0=0.4, beta_horizon=1,
                 eps=PRIORITY_FLOOR):
        self.capacity = int(capacity)
        self.alpha = float(alpha)
        self.beta0 = float(beta0)
        self.beta_horizon = max(int(beta_horizon), 1)
        self.eps = float(eps)
        self.tree = SumTree(self.capacity)
        self.data = {
            name: np.zeros((self.capacity,) + tuple(shape), dtype=dtype)
            for name, (shape, dtype) in fields.items()
        }
        self.ids = np.full(self.capacity, -1, dtype=np.int64)
        self.written = 0
        self.max_priority = 1.0
        self.progress = 0
        self.stale_updates = 0

    def __len__(self):
        return min(self.written, self.capacity)

    @property
    def beta(self) -> float:
        frac = min(self.progress / self.beta_horizon, 1.0)
        return self.beta0 + (1.0 - self.beta0) * frac

    def store_fields(self, **values) -> int:
        item_id = self.written
        slot = item_id % self.capacity
        for name, col in self.data.items():
            col[slot] = values[name]
        self.ids[slot] = item_id
        self.tree.set(slot, self.max_priority ** self.alpha)
        self.written += 1
        return item_id

    def priorities(self) -> np.ndarray:
        """Raw priorities ``p_i`` of resident items, by slot."""
        leaves = self.tree.leaves()[:len(self)]
        if self.alpha == 0:
            return np.ones(len(leaves))
        return leaves ** (1.0 / self.alpha)

    def probabilities(self) -> np.ndarray:
        leaves = self.tree.leaves()[:len(self)]
        return leaves / leaves.sum()

    def sample(self, k: int, rng):
        """Stratified proportional draw of ``k`` items.

        Returns ``(batch, ids, weights)`` where ``batch`` maps field name to
        stacked arrays and weights are max-normalised importance weights.
        """
        n = len(self)
        if n == 0:
            raise ValueError("cannot sample from an empty buffer")
        total = self.tree.total
        bounds = np.arange(k) / k
        u = (bounds + rng.random(k) / k) * total
        u = np.minimum(u, np.nextafter(total, 0.0))
        slots = self.tree.find(u)
        slots = np.minimum(slots, n - 1)
        probs = self.tree.tree[slots + self.tree.leaf_offset] / total
        w = (n * probs) ** (-self.beta)
        w /= w.max()
        batch = {name: col[slots] for name, col in self.data.items()}
        return batch, self.ids[slots].copy(), w

    def update_priorities(self, ids, abs_delta) -> None:
        ids = np.asarray(ids, dtype=np.int64)
        p = np.abs(np.asarray(abs_delta, dtype=float)) + self.eps
        slots = ids % self.capacity
        live = self.ids[slots] == ids
        self.stale_updates += int((~live).sum())
        if not live.any():
            return
        self.tree.update(slots[live], p[live] ** self.alpha)
        self.max_priority = max(self.max_priority, float(p[live].max()))


class PixelBuffer(PrioritizedBuffer):
    def __init__(self, capacity, obs_dim, action_dim, **kw):
        fields = {
            "s": ((obs_dim,), np.float32),
            "a": ((action_dim,), np.float64),
            "r": ((), np.float64),
            "s_next": ((obs_dim,), np.float32),
            "terminal": ((), np.bool_),
        }
        super().__init__(capacity, fields, **kw)

    def store(self, t: PixelTransition) -> int:
        return self.store_fields(s=t.s, a=t.a, r=t.r, s_next=t.s_next, terminal=t.terminal)


class LatentBuffer(PrioritizedBuffer):
    def __init__(self, capacity, latent_dim, action_dim, **kw):
        fields = {
            "phi": ((latent_dim,), np.float64),
            "a": ((action_dim,), np.float64),
            "r": ((), np.float64),
            "phi_next": ((latent_dim,), np.float64),
            "terminal": ((), np.bool_),
            "imagined": ((), np.bool_),
        }
        super().__init__(capacity, fields, **kw)

    def store(self, t: LatentTransition) -> int:
        return self.store_fields(
            phi=t.phi, a=t.a, r=t.r, phi_next=t.phi_next,
            terminal=t.terminal, imagined=t.imagined,
        )

    def imagined_count(self) -> int:
        return int(self.data["imagined"][:len(self)].sum())
