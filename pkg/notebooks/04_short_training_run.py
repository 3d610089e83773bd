"""
A short training run
====================

The full agent: autoencoder, map with local models, intrinsic reward,
CACLA actor-critic and adaptive imagination, all trained from pixels. A
few hundred episodes already show whether the three imagination modes
differ; the acceptance runs use 600 episodes over five seeds.
"""

import numpy as np
from latent_imagination.trainer import TrainConfig, run_training, smooth

episodes = 200
for mode in ("none", "static", "adaptive"):
    cfg = TrainConfig(episodes=episodes, imagination_mode=mode, seed=0)
    stream = list(run_training(cfg))
    ret = np.array([m.extrinsic_return for m in stream])
    succ = np.mean([m.outcome == "success" for m in stream[-50:]])
    imagined = sum(m.imagined for m in stream)
    print(f"{mode:9s} last-50 return {ret[-50:].mean():5.2f}  success {succ:.0%}  "
          f"imagined {imagined:6d}  nodes {stream[-1].node_count}")

# %%
# Smoothed learning curve of the last run, every 20 episodes.

curve = smooth(ret, 20)
print(np.round(curve[::20], 2))
