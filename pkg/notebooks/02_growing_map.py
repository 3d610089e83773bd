"""
Growing a topological map
=========================

The instantaneous topological map places nodes wherever a stimulus lands
farther than ``e_max`` from its two nearest nodes. Each node later owns a
local dynamics model. Here we feed it points from a noisy circle.
"""

import numpy as np
from latent_imagination.itm import ItmMap

rng = np.random.default_rng(1)
theta = rng.uniform(0, 2 * np.pi, 3000)
points = np.c_[np.cos(theta), np.sin(theta)] * 3 + rng.normal(scale=0.1, size=(3000, 2))

itm = ItmMap.initialize(points[0], points[1], e_max=1.0)
sizes = []
for p in points[2:]:
    itm.adapt(p)
    sizes.append(len(itm))

print("nodes after 10, 100, 1000, all stimuli:", sizes[8], sizes[98], sizes[998], sizes[-1])
print("edges:", len(itm.edges()))
print("invariant violations:", itm.audit())

# %%
# Node positions sit on the ring, roughly e_max apart.

w = np.array([n.w for n in itm.nodes.values()])
print("node radii: mean %.2f, std %.2f" % (np.linalg.norm(w, axis=1).mean(),
                                          np.linalg.norm(w, axis=1).std()))

# %%
# Winner lookup returns the nearest and second nearest node ids.

print("nearest two to (3, 0):", itm.find_matching(np.array([3.0, 0.0])))
