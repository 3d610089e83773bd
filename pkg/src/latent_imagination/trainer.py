"""End-to-end training loop: perception, ITM, intrinsic reward, imagination,
replay and all gradient updates, plus configuration, ablations and curves.

Per environment step the loop runs, in order: encode, ITM adaptation, owner
node lookup, action sampling, environment step, intrinsic reward, total
reward, local-model update, storage in both buffers, imagination, encoder /
decoder update, actor/critic updates and target soft updates.
"""
from __future__ import annotations

import csv
import dataclasses
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import approximator
from .cacla import ActorCritic, actor_update, critic_update, policy_sample
from .grasp_env import ACTION_DIM, OBS_DIM, GraspEnv, write_pgm
from .imagination import rollout
from .intrinsic import SCALINGS, IntrinsicReward, LocalModelPair, NodeStats, train_local
from .itm import ItmMap, write_snapshot
from .replay import LatentBuffer, LatentTransition, PixelBuffer, PixelTransition
from .representation import EncoderDecoder, combined_loss_step

log = logging.getLogger(__name__)

IMAGINATION_MODES = ("none", "static", "adaptive")
PHASES = (
    "encode", "itm_adapt", "owner", "act", "env_step", "intrinsic", "total_reward",
    "train_local", "store", "imagine", "update_repr", "update_actor_critic",
    "soft_update",
)


class ConfigError(ValueError):
    pass


class TrainingAborted(RuntimeError):
    pass


class AuditError(AssertionError):
    pass


@dataclass
class TrainConfig:
    gamma: float = 0.99
    tau: float = 1e-2
    lambda_rec: float = 0.1
    lambda_critic: float = 1.0
    sigma_window: int = 40
    lp_window: int = 20
    e_max: float = 6.0
    d_max: int = 7
    lr_critic: float = 1e-3
    lr_models: float = 1e-3
    lr_repr: float = 1e-3
    lr_actor: float = 1e-3
    batch_size: int = 64
    cap_pixel: int = 60_000
    cap_latent: int = 200_000
    alpha: float = 0.6
    beta0: float = 0.4
    sigma_policy: float = 0.35
    actor_critic_steps: int = 4
    model_steps: int = 2
    repr_steps: int = 1
    episodes: int = 600
    episode_length: int = 50
    imagination_mode: str = "adaptive"
    seed: int = 0
    warmup_steps: int = 500
    explore_steps: int = 2000
    imagination_warmup: int = 5
    latent_dim: int = 16
    hidden: int = 64
    model_hidden: int = 20
    intrinsic_scaling: str = "running_max"
    reward_model_target: str = "total"
    closure_rate: float = 0.3
    object_range: float = 0.6
    grasp_tol: float = 0.08
    topple_tol: float = 0.10

    def validate(self) -> None:
        positive = [
            "tau", "sigma_window", "lp_window", "e_max", "lr_critic", "lr_models",
            "lr_repr", "lr_actor", "batch_size", "cap_pixel", "cap_latent",
            "episodes", "episode_length", "latent_dim", "hidden", "model_hidden",
            "closure_rate", "object_range", "grasp_tol", "topple_tol",
        ]
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)!r}")
        nonneg = ["lambda_rec", "lambda_critic", "d_max", "alpha", "sigma_policy",
                  "actor_critic_steps", "model_steps", "repr_steps", "warmup_steps", "explore_steps",
                  "imagination_warmup"]
        for name in nonneg:
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative, got {getattr(self, name)!r}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")
        if not self.tau < 1.0:
            raise ConfigError("tau must be < 1")
        if not 0.0 <= self.beta0 <= 1.0:
            raise ConfigError("beta0 must lie in [0, 1]")
        if self.imagination_mode not in IMAGINATION_MODES:
            raise ConfigError(f"imagination_mode must be one of {IMAGINATION_MODES}")
        if self.intrinsic_scaling not in SCALINGS:
            raise ConfigError(f"intrinsic_scaling must be one of {SCALINGS}")
        if self.reward_model_target not in ("total", "extrinsic"):
            raise ConfigError("reward_model_target must be 'total' or 'extrinsic'")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def load_config(path, **overrides) -> TrainConfig:
    """Read a ``key = value`` text config; ``#`` starts a comment.

    Keys are :class:`TrainConfig` field names; unknown keys are rejected.
    """
    types = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = (p.strip() for p in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            kind = types[key]
            try:
                values[key] = int(raw) if kind == "int" else float(raw) if kind == "float" else raw
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: bad value {raw!r} for {key}") from None
    values.update({k: v for k, v in overrides.items() if v is not None})
    cfg = TrainConfig(**values)
    cfg.validate()
    return cfg


def save_config(cfg: TrainConfig, path) -> None:
    with open(path, "w") as fh:
        for f in dataclasses.fields(cfg):
            fh.write(f"{f.name} = {getattr(cfg, f.name)}\n")


@dataclass
class EpisodeMetrics:
    episode: int
    extrinsic_return: float
    intrinsic_return: float
    outcome: str
    steps: int
    node_count: int
    imagined: int
    rollouts: int
    mean_depth: float
    acceptance_rate: float
    critic_loss: float
    actor_gated_fraction: float
    wall_clock: float


class Trainer:
    """One training run. Iterate :meth:`run` to get per-episode metrics.

    ``audit=True`` checks the run's invariants every step and raises
    :class:`AuditError` on the first violation. ``phase_log``, if a list,
    receives ``(global step, phase)`` tags in execution order.
    """

    def __init__(self, cfg: TrainConfig, out_dir=None, audit=False, phase_log=None,
                 frame_dump=False):
        cfg.validate()
        self.cfg = cfg
        self.out_dir = out_dir
        self.audit = audit
        self.phase_log = phase_log
        self.frame_dump = frame_dump
        ss = np.random.SeedSequence(cfg.seed)
        (init_ss, env_ss, policy_ss, replay_ss, imag_ss, model_ss) = ss.spawn(6)
        init_rng = np.random.default_rng(init_ss)
        self.env_rng = np.random.default_rng(env_ss)
        self.policy_rng = np.random.default_rng(policy_ss)
        self.replay_rng = np.random.default_rng(replay_ss)
        self.imag_rng = np.random.default_rng(imag_ss)
        self.model_rng = np.random.default_rng(model_ss)

        self.env = GraspEnv(
            max_steps=cfg.episode_length,
            object_range=(-cfg.object_range, cfg.object_range),
            grasp_tol=cfg.grasp_tol,
            topple_tol=cfg.topple_tol,
            closure_rate=cfg.closure_rate,
            rng=self.env_rng,
        )
        self.ed = EncoderDecoder(OBS_DIM, cfg.latent_dim, cfg.hidden, cfg.lambda_rec,
                                 cfg.lambda_critic, cfg.lr_repr, rng=init_rng)
        self.ac = ActorCritic(cfg.latent_dim, ACTION_DIM, cfg.hidden, cfg.gamma, cfg.tau,
                              cfg.sigma_policy, cfg.lr_critic, cfg.lr_actor, rng=init_rng)
        horizon = cfg.episodes * cfg.episode_length
        per = dict(alpha=cfg.alpha, beta0=cfg.beta0, beta_horizon=horizon)
        self.pixel_buffer = PixelBuffer(cfg.cap_pixel, OBS_DIM, ACTION_DIM, **per)
        self.latent_buffer = LatentBuffer(cfg.cap_latent, cfg.latent_dim, ACTION_DIM, **per)
        self.scaler = IntrinsicReward(cfg.intrinsic_scaling)
        self.itm = None
        self._pending_phi = None
        self.total_steps = 0
        self.episode_index = 0

    # -- helpers --------------------------------------------------------------

    def _payload(self, node_id):
        cfg = self.cfg
        pair = LocalModelPair(cfg.latent_dim, ACTION_DIM, cfg.model_hidden, cfg.lr_models,
                              rng=self.model_rng)
        return NodeStats(cfg.sigma_window, cfg.lp_window), pair

    def _phase(self, name):
        if self.phase_log is not None:
            self.phase_log.append((self.total_steps, name))

    def _imagination_policy(self, phi):
        return policy_sample(self.ac, phi, self.imag_rng)

    def _check_finite(self, what, value):
        if not np.isfinite(value):
            path = self.save_checkpoint(tag="aborted") if self.out_dir else None
            raise TrainingAborted(
                f"non-finite {what} at step {self.total_steps}"
                + (f"; checkpoint in {path}" if path else "")
            )

    def _adapt_map(self, phi):
        if self.itm is None:
            if self._pending_phi is None:
                self._pending_phi = phi
                return None
            if np.array_equal(self._pending_phi, phi):
                return None
            self.itm = ItmMap.initialize(self._pending_phi, phi, self.cfg.e_max, self._payload)
        owner, _ = self.itm.adapt(phi)
        if self.audit:
            problems = self.itm.audit()
            if problems:
                raise AuditError(f"ITM audit failed at step {self.total_steps}: {problems}")
        return owner

    # -- main loop ------------------------------------------------------------

    def run(self):
        for _ in range(self.cfg.episodes):
            yield self.run_episode()

    def run_episode(self) -> EpisodeMetrics:
        cfg = self.cfg
        t0 = time.perf_counter()
        s = self.env.reset()
        if self.frame_dump and self.out_dir:
            frame_dir = os.path.join(self.out_dir, f"frames_ep{self.episode_index:05d}")
            os.makedirs(frame_dir, exist_ok=True)
        ext_ret = int_ret = 0.0
        imagined = rollouts = attempts = 0
        critic_losses, gated = [], []
        done = False
        steps = 0
        while not done:
            self._phase("encode")
            phi = self.ed.encoder.forward(s)
            self._check_finite("latent", float(phi.sum()))

            self._phase("itm_adapt")
            owner = self._adapt_map(phi)
            self._phase("owner")

            self._phase("act")
            if self.total_steps < cfg.explore_steps:
                a = self.policy_rng.uniform(-1.0, 1.0, ACTION_DIM)
            else:
                a = policy_sample(self.ac, phi, self.policy_rng)

            self._phase("env_step")
            s_next, r_ext, done = self.env.step(a)
            if self.frame_dump and self.out_dir:
                write_pgm(os.path.join(frame_dir, f"{steps:03d}.pgm"), s_next)
            terminal = done and self.env.outcome != "timeout"
            phi_next = self.ed.encoder.forward(s_next)

            self._phase("intrinsic")
            if owner is None:
                r_int = 0.0
            else:
                lp = self.itm.nodes[owner].stats.learning_progress()
                r_int = self.scaler(lp, phi_next, self.itm)

            self._phase("total_reward")
            r = r_ext + r_int
            if self.audit and r != r_ext + r_int:
                raise AuditError("total reward is not r_ext + r_int")

            self._phase("train_local")
            if owner is not None:
                node = self.itm.nodes[owner]
                r_model = r if cfg.reward_model_target == "total" else r_ext
                e = train_local(node.models, node.stats, phi, a, r_model, phi_next,
                                cfg.model_steps)
                self._check_finite("local model error", e)

            self._phase("store")
            self.pixel_buffer.store(PixelTransition(s, a, r, s_next, terminal))
            self.latent_buffer.store(LatentTransition(phi, a, r, phi_next, terminal))

            self._phase("imagine")
            if owner is not None and cfg.imagination_mode != "none" and cfg.d_max > 0:
                n = rollout(phi, owner, self.itm, self._imagination_policy, cfg.d_max,
                            self.imag_rng, self.latent_buffer, cfg.imagination_warmup,
                            adaptive=cfg.imagination_mode == "adaptive")
                if self.audit and n > cfg.d_max:
                    raise AuditError(f"rollout of {n} exceeds d_max={cfg.d_max}")
                if cfg.imagination_mode == "static" and self.audit and n != cfg.d_max:
                    raise AuditError(f"static rollout produced {n} != d_max transitions")
                imagined += n
                rollouts += 1
                attempts += n + (1 if n < cfg.d_max else 0)

            self.pixel_buffer.progress = self.total_steps + 1
            self.latent_buffer.progress = self.total_steps + 1
            learn = self.total_steps + 1 >= cfg.warmup_steps

            self._phase("update_repr")
            if learn:
                for _ in range(cfg.repr_steps):
                    batch, ids, w = self.pixel_buffer.sample(cfg.batch_size, self.replay_rng)
                    _, _, l_comb, abs_delta = combined_loss_step(
                        self.ed, self.ac.critic, self.ac.target_critic, batch, cfg.gamma, w
                    )
                    self._check_finite("combined loss", l_comb)
                    self.pixel_buffer.update_priorities(ids, abs_delta)

            self._phase("update_actor_critic")
            if learn:
                for _ in range(cfg.actor_critic_steps):
                    batch, ids, w = self.latent_buffer.sample(cfg.batch_size, self.replay_rng)
                    loss, abs_delta = critic_update(self.ac, batch, w)
                    self._check_finite("critic loss", loss)
                    self.latent_buffer.update_priorities(ids, abs_delta)
                    n_pos, _ = actor_update(self.ac, batch)
                    critic_losses.append(loss)
                    gated.append(n_pos / len(ids))

            self._phase("soft_update")
            if learn:
                self.ac.soft_update()
                self.ed.soft_update(cfg.tau)

            if self.audit and cfg.imagination_mode == "none" and self.latent_buffer.imagined_count():
                raise AuditError("imagined transitions found with imagination disabled")

            ext_ret += r_ext
            int_ret += r_int
            s = s_next
            self.total_steps += 1
            steps += 1

        m = EpisodeMetrics(
            episode=self.episode_index,
            extrinsic_return=ext_ret,
            intrinsic_return=int_ret,
            outcome=self.env.outcome,
            steps=steps,
            node_count=0 if self.itm is None else len(self.itm),
            imagined=imagined,
            rollouts=rollouts,
            mean_depth=imagined / rollouts if rollouts else 0.0,
            acceptance_rate=imagined / attempts if attempts else 0.0,
            critic_loss=float(np.mean(critic_losses)) if critic_losses else 0.0,
            actor_gated_fraction=float(np.mean(gated)) if gated else 0.0,
            wall_clock=time.perf_counter() - t0,
        )
        self.episode_index += 1
        return m

    # -- outputs --------------------------------------------------------------

    def save_checkpoint(self, tag="final") -> str:
        path = os.path.join(self.out_dir, f"checkpoint_{tag}")
        os.makedirs(path, exist_ok=True)
        nets = {
            "encoder": self.ed.encoder, "decoder": self.ed.decoder,
            "target_encoder": self.ed.target_encoder, "actor": self.ac.actor,
            "critic": self.ac.critic, "target_critic": self.ac.target_critic,
        }
        for name, net in nets.items():
            approximator.save_net(net, os.path.join(path, f"{name}.txt"))
        if self.itm is not None:
            write_snapshot(self.itm, os.path.join(path, "itm_snapshot.txt"))
        return path


def run_training(cfg: TrainConfig, out_dir=None, audit=False, phase_log=None):
    """Generator of :class:`EpisodeMetrics`, one per episode.

    With ``out_dir`` set, also writes ``itm_snapshot.txt`` and a final
    checkpoint when the run completes.
    """
    trainer = Trainer(cfg, out_dir=out_dir, audit=audit, phase_log=phase_log)
    for m in trainer.run():
        yield m
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        if trainer.itm is not None:
            write_snapshot(trainer.itm, os.path.join(out_dir, "itm_snapshot.txt"))
        trainer.save_checkpoint()


def _collect(args):
    cfg, out_dir = args
    return list(run_training(cfg, out_dir=out_dir))


def run_many(configs, out_dirs=None, workers=1):
    """Run independent configurations, optionally in separate processes."""
    out_dirs = out_dirs or [None] * len(configs)
    jobs = list(zip(configs, out_dirs))
    if workers <= 1:
        return [_collect(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_collect, jobs))


def run_ablation(cfg: TrainConfig, depths, seeds, workers=1):
    """Adaptive imagination at each maximum depth, once per seed.

    Returns ``{depth: [metrics list per seed]}``. Depth 0 generates no
    imagined transitions and matches a run without imagination.
    """
    depths = [int(d) for d in depths]
    if any(d < 0 for d in depths):
        raise ConfigError("depths must be non-negative")
    configs = [
        cfg.replace(imagination_mode="adaptive", d_max=d, seed=s)
        for d in depths for s in seeds
    ]
    for c in configs:
        c.validate()
    results = run_many(configs, workers=workers)
    out = {}
    for i, d in enumerate(depths):
        out[d] = results[i * len(seeds):(i + 1) * len(seeds)]
    return out


def default_window(episodes: int) -> int:
    """Smoothing window matching 250 of 10,000 episodes, scaled to run length."""
    return max(1, int(round(250 * episodes / 10_000)))


def smooth(values, window: int) -> np.ndarray:
    """Trailing moving average; early points average what is available."""
    x = np.asarray(values, dtype=float)
    c = np.cumsum(np.insert(x, 0, 0.0))
    idx = np.arange(1, len(x) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def curve_stats(streams, window: int, key="extrinsic_return"):
    """Cross-seed mean and std (population) of smoothed per-seed curves."""
    if not streams or any(len(s) == 0 for s in streams):
        raise ValueError("curve statistics need non-empty metric streams")
    length = min(len(s) for s in streams)
    curves = np.array([
        smooth([getattr(m, key) if not isinstance(m, (int, float)) else m for m in s[:length]], window)
        for s in streams
    ])
    return curves.mean(axis=0), curves.std(axis=0)


def emit_curves(streams, out_dir, window=None, label=None):
    """Write per-seed raw CSVs and the smoothed cross-seed mean/std curve.

    ``streams`` is a list (one per seed) of :class:`EpisodeMetrics` lists.
    File names are ``metrics_seed<k>.csv`` and ``curve_mean.csv``, or with
    ``label``, ``metrics_<label>_seed<k>.csv`` and ``curve_<label>.csv``.
    Returns the written paths.
    """
    if not streams or any(len(s) == 0 for s in streams):
        raise ValueError("emit_curves needs non-empty metric streams")
    window = default_window(len(streams[0])) if window is None else int(window)
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    names = [f.name for f in dataclasses.fields(EpisodeMetrics)]
    for k, stream in enumerate(streams):
        name = f"metrics_seed{k}.csv" if label is None else f"metrics_{label}_seed{k}.csv"
        path = os.path.join(out_dir, name)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for m in stream:
                w.writerow([getattr(m, n) for n in names])
        paths.append(path)
    mean, std = curve_stats(streams, window)
    name = "curve_mean.csv" if label is None else f"curve_{label}.csv"
    path = os.path.join(out_dir, name)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "mean", "std"])
        for i, (mu, sd) in enumerate(zip(mean, std)):
            w.writerow([i, repr(float(mu)), repr(float(sd))])
    paths.append(path)
    return paths


def final_mean(stream, last=100, key="extrinsic_return") -> float:
    vals = [getattr(m, key) for m in stream[-last:]]
    return float(np.mean(vals))
