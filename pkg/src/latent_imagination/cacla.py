"""Continuous Actor-Critic Learning Automaton on latent inputs.

The critic is trained on TD targets from a slowly tracking target critic.
The actor regresses toward taken actions, but only for samples whose TD
error is positive. Actions live in the box [-1, 1]^dim(A).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .approximator import AdamState, DenseNet, adam_update, mse_and_grad, soft_update


@dataclass
class TdResult:
    delta: float
    target: float


class ActorCritic:
    def __init__(self, latent_dim=16, action_dim=2, hidden=64, gamma=0.99, tau=1e-3,
                 sigma_policy=0.35, lr_critic=1e-3, lr_actor=1e-4, rng=None):
        rng = np.random.default_rng() if rng is None else rng
        self.latent_dim = latent_dim
        self.action_dim = action_dim
        self.actor = DenseNet([latent_dim, hidden, action_dim], ["relu", "tanh"], rng=rng)
        # near-zero initial mean so the untrained policy does not push the arm to a limit
        out = self.actor.layers[-1]
        out.W[...] = rng.uniform(-3e-3, 3e-3, out.W.shape)
        self.critic = DenseNet([latent_dim, hidden, 1], ["relu", "linear"], rng=rng)
        self.target_critic = self.critic.copy()
        self.gamma = float(gamma)
        self.tau = float(tau)
        self.sigma_policy = float(sigma_policy)
        self.actor_adam = AdamState.for_net(self.actor, lr=lr_actor)
        self.critic_adam = AdamState.for_net(self.critic, lr=lr_critic)

    def value(self, phi):
        return self.critic.forward(phi)[..., 0]

    def soft_update(self):
        soft_update(self.target_critic, self.critic, self.tau)


def policy_sample(ac: ActorCritic, phi, rng, clip=True):
    """Gaussian exploration around the actor mean, clipped to the action box."""
    mean = ac.actor.forward(phi)
    if ac.sigma_policy == 0:
        a = mean.copy()
    else:
        a = mean + ac.sigma_policy * rng.standard_normal(mean.shape)
    if clip:
        np.clip(a, -1.0, 1.0, out=a)
    return a


def td_targets(ac: ActorCritic, r, phi_next, terminal):
    r = np.asarray(r, dtype=float)
    boot = ac.target_critic.forward(phi_next)[..., 0]
    return r + ac.gamma * np.where(terminal, 0.0, boot)


def td_error(ac: ActorCritic, phi, a, r, phi_next, terminal=False) -> TdResult:
    """TD error of one latent transition; ``a`` is unused by the critic."""
    target = float(td_targets(ac, r, phi_next, terminal))
    return TdResult(delta=target - float(ac.value(phi)), target=target)


def critic_update(ac: ActorCritic, batch, weights=None):
    """One Adam step on the importance-weighted TD loss.

    Returns ``(pre-update loss, |delta| per sample)``; an empty batch is a
    no-op returning ``(0.0, empty)``.
    """
    phi = batch["phi"]
    if len(phi) == 0:
        return 0.0, np.zeros(0)
    targets = td_targets(ac, batch["r"], batch["phi_next"], batch["terminal"])
    loss, grads = mse_and_grad(ac.critic, phi, targets[:, None], weights=weights)
    v = ac.value(phi)
    adam_update(ac.critic, grads, ac.critic_adam)
    return loss, np.abs(targets - v)


def actor_update(ac: ActorCritic, batch):
    """CACLA step: regress toward taken actions where the TD error is positive.

    Returns ``(number of qualifying samples, mean actor loss over them)``.
    """
    phi = batch["phi"]
    if len(phi) == 0:
        return 0, 0.0
    targets = td_targets(ac, batch["r"], batch["phi_next"], batch["terminal"])
    delta = targets - ac.value(phi)
    keep = delta > 0
    n = int(keep.sum())
    if n == 0:
        return 0, 0.0
    loss, grads = mse_and_grad(ac.actor, phi[keep], batch["a"][keep])
    adam_update(ac.actor, grads, ac.actor_adam)
    return n, loss
