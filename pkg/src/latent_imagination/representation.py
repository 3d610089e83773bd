"""Latent state representation trained on reconstruction plus value prediction.

The encoder maps flattened observations to latent vectors; the decoder maps
them back. One combined step optimizes encoder and decoder on
``lambda_rec * L_rec + lambda_critic * L_critic``; the critic term bootstraps
from a target encoder and target critic and pushes gradient only into the
encoder (critic weights are held fixed here and trained elsewhere).
"""
from __future__ import annotations

import numpy as np

from .approximator import AdamState, DenseNet, adam_update, soft_update


class EncoderDecoder:
    def __init__(self, obs_dim=256, latent_dim=16, hidden=64, lambda_rec=0.1,
                 lambda_critic=1.0, lr=1e-3, rng=None):
        if lambda_rec < 0 or lambda_critic < 0:
            raise ValueError("loss weights must be non-negative")
        rng = np.random.default_rng() if rng is None else rng
        self.obs_dim = obs_dim
        self.latent_dim = latent_dim
        self.encoder = DenseNet([obs_dim, hidden, latent_dim], ["relu", "linear"], rng=rng)
        self.decoder = DenseNet([latent_dim, hidden, obs_dim], ["relu", "sigmoid"], rng=rng)
        self.target_encoder = self.encoder.copy()
        self.lambda_rec = float(lambda_rec)
        self.lambda_critic = float(lambda_critic)
        self.encoder_adam = AdamState.for_net(self.encoder, lr=lr)
        self.decoder_adam = AdamState.for_net(self.decoder, lr=lr)

    def soft_update(self, tau):
        soft_update(self.target_encoder, self.encoder, tau)


def encode(ed: EncoderDecoder, s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if s.shape[-1] != ed.obs_dim:
        raise ValueError(f"observation length {s.shape[-1]} != {ed.obs_dim}")
    return ed.encoder.forward(s)


def combined_losses_and_grads(ed: EncoderDecoder, critic, target_critic, batch,
                              gamma, weights=None):
    """Losses and gradients of the combined objective for encoder and decoder.

    Returns ``(L_rec, L_critic, L_combined, enc_grads, dec_grads, abs_delta)``.
    Per-sample terms are averaged over the batch with optional weights.
    """
    s = np.asarray(batch["s"], dtype=float)
    s_next = np.asarray(batch["s_next"], dtype=float)
    r = np.asarray(batch["r"], dtype=float)
    terminal = np.asarray(batch["terminal"], dtype=bool)
    n = len(s)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)

    phi, enc_memo = ed.encoder.forward_cached(s)
    recon, dec_memo = ed.decoder.forward_cached(phi)
    diff = recon - s
    rec_per = np.einsum("ij,ij->i", diff, diff)

    boot = target_critic.forward(ed.target_encoder.forward(s_next))[:, 0]
    y = r + gamma * np.where(terminal, 0.0, boot)
    v, crit_memo = critic.forward_cached(phi)
    delta = y - v[:, 0]

    L_rec = float(w @ rec_per) / n
    L_critic = float(w @ (delta * delta)) / n
    L_combined = ed.lambda_rec * L_rec + ed.lambda_critic * L_critic

    g_recon = (2.0 * ed.lambda_rec / n) * w[:, None] * diff
    dec_grads, g_phi_rec = ed.decoder.backward(dec_memo, g_recon, need_input_grad=True)
    g_v = (-2.0 * ed.lambda_critic / n) * (w * delta)[:, None]
    # critic parameters are not updated here; its gradient buffer is discarded
    _, g_phi_crit = critic.backward(crit_memo, g_v, need_input_grad=True)
    enc_grads, _ = ed.encoder.backward(enc_memo, g_phi_rec + g_phi_crit)
    return L_rec, L_critic, L_combined, enc_grads, dec_grads, np.abs(delta)


def combined_loss_step(ed: EncoderDecoder, critic, target_critic, batch, gamma,
                       weights=None):
    """One Adam step on encoder and decoder; returns pre-update losses.

    Returns ``(L_rec, L_critic, L_combined, abs_delta)``. An empty batch is a
    no-op reporting zero losses.
    """
    if len(batch["s"]) == 0:
        return 0.0, 0.0, 0.0, np.zeros(0)
    L_rec, L_critic, L_comb, g_enc, g_dec, abs_delta = combined_losses_and_grads(
        ed, critic, target_critic, batch, gamma, weights
    )
    adam_update(ed.encoder, g_enc, ed.encoder_adam)
    adam_update(ed.decoder, g_dec, ed.decoder_adam)
    return L_rec, L_critic, L_comb, abs_delta
