"""
How deep does the agent imagine?
================================

Before each imagined step the rollout draws c ~ U(0, 1) and continues only
if c < 1 - e, where e is the matched node's mean prediction error divided
by the largest mean it showed recently. A region whose model has just
improved a lot lets rollouts run deeper; a region whose error has stopped
falling closes the gate.
"""

import numpy as np
from latent_imagination.intrinsic import LocalModelPair, NodeStats
from latent_imagination.itm import ItmMap
from latent_imagination.imagination import gate_error, la_imagination

latent_dim = 2


def payload(_):
    return NodeStats(), LocalModelPair(latent_dim, 2, rng=rng)


rng = np.random.default_rng(0)
itm = ItmMap.initialize(np.zeros(latent_dim), np.ones(latent_dim) * 10, e_max=6.0,
                        payload_factory=payload)
policy = lambda phi: rng.uniform(-1, 1, 2)


def depths(err_pattern, n=2000):
    # fill every node's error history with the same pattern
    for node in itm.nodes.values():
        node.stats = NodeStats()
        for e in err_pattern:
            node.stats.push(e)
    return np.array([la_imagination(np.zeros(latent_dim), 0, itm, policy, 7, rng)
                     for _ in range(n)])


patterns = [("sharp drop", np.r_[np.full(40, 1.0), np.full(20, 0.02)]),
            ("slow decline", np.linspace(1.0, 0.02, 60)),
            ("flat error", np.full(60, 0.5)),
            ("getting worse", np.linspace(0.02, 1.0, 60))]
for label, pattern in patterns:
    d = depths(pattern)
    e = gate_error(itm.nodes[0].stats)
    print(f"{label:14s} scaled error {e:.2f}  mean depth {d.mean():.2f}  "
          f"full depth {np.mean(d == 7):.0%}")

# %%
# Even the sharpest drop only halves the scaled error here, because the
# 40-sample error window still holds old errors while the 20-step maximum
# remembers the high point. Deep rollouts need a model that keeps improving.
