"""Sparse-reward toy grasping task rendered as 16x16 grayscale images.

A single arm pivots at the bottom centre of the image; a hand at its tip
opens and closes. An object sits on an arc at a random angle each episode.
Closing the hand (closure crossing 0.8 upward) aligned with the object is a
success (+10); closing it slightly off is a topple (-10); anything else
gives 0. Episodes also end after ``max_steps`` steps.

Learner actions are in [-1, 1]^2. The first component scales to an arm
increment of at most 20 degrees per step, the second to a change of hand
closure of at most ``closure_rate``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SIZE = 16
OBS_DIM = SIZE * SIZE
ACTION_DIM = 2
MAX_ARM_STEP = np.deg2rad(20.0)
ARM_LIMIT = np.pi / 2
CLOSE_THRESHOLD = 0.8

_BASE = np.array([7.5, 14.5])  # (x, y) in pixel coordinates, y grows downward
_ARM_LEN = 6.5
_OBJECT_RADIUS = 8.5
_ys, _xs = np.mgrid[0:SIZE, 0:SIZE].astype(float)


@dataclass
class EnvState:
    arm_angle: float = 0.0
    hand_closure: float = 0.0
    object_angle: float = 0.0
    step_count: int = 0
    done: bool = False


def _polar(angle, radius):
    # angle 0 points straight up from the base
    return _BASE + radius * np.array([np.sin(angle), -np.cos(angle)])


def render(state: EnvState) -> np.ndarray:
    """Anti-aliased image of the scene, flattened row-major, values in [0, 1]."""
    tip = _polar(state.arm_angle, _ARM_LEN)
    # distance of every pixel centre to the arm segment
    seg = tip - _BASE
    px = np.stack([_xs - _BASE[0], _ys - _BASE[1]], axis=-1)
    t = np.clip(px @ seg / (seg @ seg), 0.0, 1.0)
    d_arm = np.linalg.norm(px - t[..., None] * seg, axis=-1)
    arm = 0.5 * np.clip(1.0 - d_arm / 0.9, 0.0, 1.0)

    c = state.hand_closure
    d_hand = np.hypot(_xs - tip[0], _ys - tip[1])
    hand_radius = 2.2 - 1.2 * c
    hand = (0.55 + 0.2 * c) * np.clip(1.0 - np.abs(d_hand - hand_radius) / 0.8, 0.0, 1.0)

    obj = _polar(state.object_angle, _OBJECT_RADIUS)
    d_obj = np.hypot(_xs - obj[0], _ys - obj[1])
    blob = np.clip(1.6 - d_obj, 0.0, 1.0)

    img = np.maximum(np.maximum(arm, hand), blob)
    return img.reshape(-1)


class GraspEnv:
    def __init__(self, max_steps=50, object_range=(-0.6, 0.6), grasp_tol=0.08,
                 topple_tol=0.10, closure_rate=0.3, rng=None):
        self.max_steps = max_steps
        self.object_range = object_range
        self.grasp_tol = grasp_tol
        self.topple_tol = topple_tol
        self.closure_rate = closure_rate
        self.rng = np.random.default_rng() if rng is None else rng
        self.state = EnvState(done=True)
        self.outcome = None

    obs_dim = OBS_DIM
    action_dim = ACTION_DIM

    def reset(self, rng=None) -> np.ndarray:
        rng = self.rng if rng is None else rng
        lo, hi = self.object_range
        self.state = EnvState(object_angle=float(rng.uniform(lo, hi)))
        self.outcome = None
        return render(self.state)

    def step(self, a):
        st = self.state
        if st.done:
            raise RuntimeError("step() called on a finished episode; call reset()")
        a = np.clip(np.asarray(a, dtype=float), -1.0, 1.0)
        st.arm_angle = float(np.clip(st.arm_angle + MAX_ARM_STEP * a[0], -ARM_LIMIT, ARM_LIMIT))
        before = st.hand_closure
        st.hand_closure = float(np.clip(before + self.closure_rate * a[1], 0.0, 1.0))
        st.step_count += 1

        r = 0.0
        if before < CLOSE_THRESHOLD <= st.hand_closure:
            miss = abs(st.arm_angle - st.object_angle)
            if miss < self.grasp_tol:
                r, self.outcome = 10.0, "success"
            elif miss < self.topple_tol:
                r, self.outcome = -10.0, "topple"
        if r != 0.0:
            st.done = True
        elif st.step_count >= self.max_steps:
            st.done = True
            self.outcome = "timeout"
        return render(st), r, st.done


def scripted_action(state: EnvState, align_tol=0.05) -> np.ndarray:
    """Oracle controller: swing toward the object with the hand open, then close."""
    diff = state.object_angle - state.arm_angle
    if abs(diff) > align_tol:
        return np.array([np.clip(diff / MAX_ARM_STEP, -1.0, 1.0), -1.0])
    return np.array([0.0, 1.0])


def run_policy(env: GraspEnv, policy, episodes, rng):
    """Outcome counts of ``policy(env) -> action`` over many episodes."""
    counts = {"success": 0, "topple": 0, "timeout": 0}
    for _ in range(episodes):
        env.reset(rng)
        done = False
        while not done:
            _, _, done = env.step(policy(env, rng))
        counts[env.outcome] += 1
    return counts


def write_pgm(path, obs) -> None:
    """Write one observation as an 8-bit binary PGM image."""
    img = np.clip(np.round(np.asarray(obs).reshape(SIZE, SIZE) * 255), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{SIZE} {SIZE}\n255\n".encode())
        fh.write(img.tobytes())
