"""Per-region local models, prediction-error statistics and intrinsic reward.

Every ITM node owns a :class:`LocalModelPair` (next-latent and reward heads
on a shared tanh trunk) and a :class:`NodeStats` record of its recent
combined prediction errors. Learning progress is the absolute change of
the windowed mean error; the intrinsic reward adds the perception error of
the next latent against its nearest node.
"""
from __future__ import annotations

from collections import deque

import numpy as np

from .approximator import AdamState, DenseNet, adam_update, mse_and_grad


class LocalModelPair:
    """Dynamics head ``M`` and reward head ``R`` sharing one hidden layer.

    The two heads are stored as one linear output layer of width
    ``latent_dim + 1``: columns ``[:latent_dim]`` predict the next latent,
    the last column predicts the reward. Summed squared error over that
    layer is exactly the two-head loss.
    """

    def __init__(self, latent_dim=16, action_dim=2, hidden=20, lr=1e-3,
                 rng=None, zero_heads=False):
        self.latent_dim = latent_dim
        self.action_dim = action_dim
        self.net = DenseNet(
            [latent_dim + action_dim, hidden, latent_dim + 1], ["tanh", "linear"], rng=rng
        )
        if zero_heads:
            head = self.net.layers[-1]
            head.W[...] = 0.0
            head.b[...] = 0.0
        self.adam = AdamState.for_net(self.net, lr=lr)
        self.updates = 0

    def _input(self, phi, a):
        phi = np.asarray(phi, dtype=float)
        a = np.asarray(a, dtype=float)
        if phi.shape[-1] != self.latent_dim or a.shape[-1] != self.action_dim:
            raise ValueError(
                f"expected latent dim {self.latent_dim} and action dim {self.action_dim}, "
                f"got {phi.shape[-1]} and {a.shape[-1]}"
            )
        return np.concatenate([phi, a], axis=-1)

    def predict(self, phi, a):
        """``(next latent, reward)`` from one trunk evaluation."""
        out = self.net.forward(self._input(phi, a))
        return out[..., :self.latent_dim], out[..., self.latent_dim]

    def target(self, phi_next, r):
        return np.append(np.asarray(phi_next, dtype=float), float(r))

    def error(self, phi, a, r, phi_next) -> float:
        """Combined squared error of both heads on one transition."""
        pred_phi, pred_r = self.predict(phi, a)
        d = pred_phi - np.asarray(phi_next, dtype=float)
        return float(d @ d) + (float(pred_r) - float(r)) ** 2

    def loss_and_grad(self, phi, a, r, phi_next):
        return mse_and_grad(self.net, self._input(phi, a), self.target(phi_next, r))

    def fit(self, phi, a, r, phi_next, steps=1):
        x = self._input(phi, a)
        y = self.target(phi_next, r)
        for _ in range(steps):
            _, g = mse_and_grad(self.net, x, y)
            adam_update(self.net, g, self.adam)
        self.updates += steps


class NodeStats:
    """Ring buffers of one region's prediction errors.

    ``errors`` holds the last ``window`` raw errors; ``avg_history`` the last
    ``lp_window + 1`` moving averages (for learning progress);
    ``scale_history`` the last ``lp_window`` moving averages (for max-scaling).
    """

    def __init__(self, window=40, lp_window=20):
        self.window = window
        self.lp_window = lp_window
        self.errors = deque(maxlen=window)
        self.avg_history = deque(maxlen=lp_window + 1)
        self.scale_history = deque(maxlen=lp_window)
        self.count = 0

    def push(self, e: float) -> None:
        self.errors.append(float(e))
        self.count += 1
        avg = self.moving_average()
        self.avg_history.append(avg)
        self.scale_history.append(avg)

    def moving_average(self) -> float:
        if not self.errors:
            return 0.0
        return float(np.mean(self.errors))

    def learning_progress(self) -> float:
        """``|avg now - avg lp_window pushes ago|``; 0 until that far back exists."""
        if len(self.avg_history) <= self.lp_window:
            return 0.0
        return abs(self.avg_history[-1] - self.avg_history[0])


def moving_average(stats: NodeStats) -> float:
    return stats.moving_average()


def learning_progress(stats: NodeStats) -> float:
    return stats.learning_progress()


def train_local(pair: LocalModelPair, stats: NodeStats, phi, a, r, phi_next, steps=1) -> float:
    """Record the pre-update error, then fit the pair for ``steps`` Adam steps."""
    e = pair.error(phi, a, r, phi_next)
    pair.fit(phi, a, r, phi_next, steps)
    stats.push(e)
    return e


def perception_error(phi_next, itm) -> float:
    """Squared distance from ``phi_next`` to its nearest map node."""
    return itm.nearest(phi_next)[1]


SCALINGS = ("running_max", "centered", "none")


class IntrinsicReward:
    """Raw intrinsic reward ``LP + perception error`` and its [-1, 1] scaling.

    ``scaling="running_max"`` divides by the largest raw value seen so far
    and maps [0, 1] affinely onto [-1, 1]. ``scaling="none"`` returns the
    raw value clipped to [-1, 1]. ``scaling="centered"`` subtracts an
    exponential moving mean (``decay``) and divides by the largest absolute
    deviation seen so far, so the reward averages near zero.
    """

    def __init__(self, scaling="running_max", decay=0.999):
        if scaling not in SCALINGS:
            raise ValueError(f"unknown intrinsic scaling {scaling!r}")
        self.scaling = scaling
        self.running_max = 0.0
        self.decay = decay
        self.mean = None

    @staticmethod
    def raw(lp: float, phi_next, itm) -> float:
        return float(lp) + perception_error(phi_next, itm)

    def scale(self, raw: float) -> float:
        if self.scaling == "none":
            return float(np.clip(raw, -1.0, 1.0))
        if self.scaling == "centered":
            self.mean = raw if self.mean is None else self.decay * self.mean + (1 - self.decay) * raw
            dev = raw - self.mean
            self.running_max = max(self.running_max, abs(dev))
            if self.running_max == 0.0:
                return 0.0
            return float(np.clip(dev / self.running_max, -1.0, 1.0))
        self.running_max = max(self.running_max, raw)
        if self.running_max <= 0.0:
            return -1.0
        return 2.0 * float(np.clip(raw / self.running_max, 0.0, 1.0)) - 1.0

    def __call__(self, lp: float, phi_next, itm) -> float:
        return self.scale(self.raw(lp, phi_next, itm))


def intrinsic_reward(lp, phi_next, itm, scaler: IntrinsicReward | None = None) -> float:
    """Scaled intrinsic reward; a fresh scaler is used if none is given."""
    scaler = IntrinsicReward() if scaler is None else scaler
    return scaler(lp, phi_next, itm)
