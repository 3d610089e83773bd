"""
The grasping scene
==================

A one-joint arm swings over a table; a hand at its tip opens and closes.
The agent only ever sees the 16x16 image below.
"""

import numpy as np
from latent_imagination.grasp_env import GraspEnv, render, run_policy, scripted_action

rng = np.random.default_rng(0)
env = GraspEnv()
obs = env.reset(rng)
print("observation", obs.shape, "range", obs.min(), obs.max())

# crude text rendering of the first frame
side = int(np.sqrt(obs.size))
img = obs.reshape(side, side)
for row in img:
    print("".join(" .:-=+*#%@"[int(v * 9.99)] for v in row))

# %%
# Closing the hand counts only when it crosses the closure threshold.
# Aligned with the object that is a success (+10); slightly off, the object
# topples (-10); further off nothing happens and the episode goes on.

print(env.state)
for _ in range(4):
    obs, r, done = env.step([0.0, 1.0])
    print(f"closure {env.state.hand_closure:.1f} reward {r} done {done} outcome {env.outcome}")

# %%
# A scripted controller that knows the object angle always succeeds.
# Uniform random actions succeed a little over one time in ten.

oracle = lambda e, _: scripted_action(e.state)
uniform = lambda e, g: g.uniform(-1, 1, 2)
print("scripted", run_policy(GraspEnv(), oracle, 200, rng))
print("random  ", run_policy(GraspEnv(), uniform, 1000, rng))
