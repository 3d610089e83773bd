"""Instantaneous Topological Map over the latent space.

The map grows nodes where stimuli land far from existing nodes and prunes
edges with Thales-sphere tests. Node weights never move after creation.
Each node can carry a ``stats`` and ``models`` payload (the region's error
statistics and local model pair); the map only creates and drops them.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np


@dataclass
class ItmNode:
    id: int
    w: np.ndarray
    neighbors: set = field(default_factory=set)
    stats: Any = None
    models: Any = None


def thales_inside(a, b, x) -> bool:
    """True iff ``x`` lies strictly inside the sphere with diameter ``ab``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    x = np.asarray(x, dtype=float)
    return float((x - a) @ (x - b)) < 0.0


class ItmMap:
    """Incremental SOM with the three-step ITM adaptation.

    ``payload_factory``, if given, is called with a new node id and must
    return ``(stats, models)`` for that node.
    """

    def __init__(self, e_max: float, payload_factory: Callable[[int], tuple] | None = None):
        self.e_max = float(e_max)
        self.payload_factory = payload_factory
        self.nodes: dict[int, ItmNode] = {}
        self.next_id = 0
        self.created = 0
        self.removed = 0
        self._ids = None
        self._W = None

    def __len__(self):
        return len(self.nodes)

    @classmethod
    def initialize(cls, phi1, phi2, e_max: float = 6.0, payload_factory=None) -> "ItmMap":
        m = cls(e_max, payload_factory)
        a = m._add_node(phi1)
        b = m._add_node(phi2)
        m._connect(a, b)
        return m

    # -- graph primitives ----------------------------------------------------

    def _add_node(self, w) -> int:
        w = np.array(w, dtype=float)
        if not np.all(np.isfinite(w)):
            raise ValueError("node weight must be finite")
        nid = self.next_id
        self.next_id += 1
        node = ItmNode(nid, w)
        if self.payload_factory is not None:
            node.stats, node.models = self.payload_factory(nid)
        self.nodes[nid] = node
        self.created += 1
        self._ids = None
        return nid

    def _remove_node(self, nid: int) -> None:
        node = self.nodes.pop(nid)
        for j in node.neighbors:
            self.nodes[j].neighbors.discard(nid)
        self.removed += 1
        self._ids = None

    def _connect(self, i: int, j: int) -> None:
        if i == j:
            return
        self.nodes[i].neighbors.add(j)
        self.nodes[j].neighbors.add(i)

    def _disconnect(self, i: int, j: int) -> None:
        self.nodes[i].neighbors.discard(j)
        self.nodes[j].neighbors.discard(i)

    def _matrix(self):
        if self._ids is None:
            self._ids = np.array(sorted(self.nodes), dtype=int)
            self._W = np.stack([self.nodes[i].w for i in self._ids])
        return self._ids, self._W

    def edges(self) -> list[tuple[int, int]]:
        return sorted(
            (i, j) for i, node in self.nodes.items() for j in node.neighbors if i < j
        )

    # -- operations ----------------------------------------------------------

    def distances(self, phi):
        """Squared distances from ``phi`` to every node, in ascending id order."""
        ids, W = self._matrix()
        d = W - np.asarray(phi, dtype=float)
        return ids, np.einsum("ij,ij->i", d, d)

    def find_matching(self, phi):
        """Nearest and second-nearest node ids (ties to the smaller id)."""
        if not self.nodes:
            raise ValueError("find_matching on an empty map")
        ids, d = self.distances(phi)
        k = int(np.argmin(d))
        if len(ids) == 1:
            return int(ids[0]), None
        best = int(ids[k])
        d[k] = np.inf
        return best, int(ids[int(np.argmin(d))])

    def nearest(self, phi):
        """``(node id, squared distance)`` of the nearest node."""
        if not self.nodes:
            raise ValueError("nearest on an empty map")
        ids, d = self.distances(phi)
        k = int(np.argmin(d))
        return int(ids[k]), float(d[k])

    def adapt(self, phi):
        """Present one stimulus; returns ``(owner node id, created)``."""
        if not self.nodes:
            raise ValueError("adapt on an empty map")
        phi = np.asarray(phi, dtype=float)
        n, n2 = self.find_matching(phi)
        if n2 is None:
            if float((phi - self.nodes[n].w) @ (phi - self.nodes[n].w)) > self.e_max:
                v = self._add_node(phi)
                self._connect(v, n)
                return v, True
            return n, False

        # edge adaptation
        self._connect(n, n2)
        w_n = self.nodes[n].w
        w_n2 = self.nodes[n2].w
        for m in sorted(self.nodes[n].neighbors):
            w_m = self.nodes[m].w
            if float((w_m - w_n2) @ (w_m - w_n)) < 0.0:
                self._disconnect(n, m)
                if not self.nodes[m].neighbors:
                    self._remove_node(m)

        # node adaptation
        if n in self.nodes and n2 in self.nodes:
            w_n = self.nodes[n].w
            w_n2 = self.nodes[n2].w
            outside = float((w_n - phi) @ (w_n2 - phi)) > 0.0
            if outside and float((phi - w_n) @ (phi - w_n)) > self.e_max:
                v = self._add_node(phi)
                self._connect(v, n)
                return v, True
        if n in self.nodes:
            return n, False
        return self.find_matching(phi)[0], False

    # -- inspection ----------------------------------------------------------

    def audit(self) -> list[str]:
        """List of invariant violations; empty when the graph is consistent."""
        problems = []
        if not self.nodes:
            problems.append("map is empty")
        else:
            ids, W = self._matrix()
            for i in ids[~np.isfinite(W).all(axis=1)]:
                problems.append(f"non-finite weight at node {i}")
        for i, node in self.nodes.items():
            if node.id != i:
                problems.append(f"node {i} stored under wrong id {node.id}")
            if i in node.neighbors:
                problems.append(f"self-edge at node {i}")
            for j in node.neighbors:
                if j not in self.nodes:
                    problems.append(f"edge {i}-{j} points at missing node")
                elif i not in self.nodes[j].neighbors:
                    problems.append(f"asymmetric edge {i}-{j}")
        return problems

    def fingerprint(self) -> tuple:
        """Hashable summary of nodes, weights and edges."""
        return (
            tuple((i, self.nodes[i].w.tobytes()) for i in sorted(self.nodes)),
            tuple(self.edges()),
        )


def write_snapshot(itm: ItmMap, path) -> None:
    """Write a plain-text snapshot of the map.

    Format (version 1)::

        ITM 1
        e_max <value>
        nodes <N>
        node <id> <count> <mean_error> <learning_progress> <w_0> ... <w_d-1>
        edges <E>
        edge <i> <j>

    ``count`` is the number of recorded prediction errors; the three stat
    columns are 0 for nodes without a stats payload.
    """
    lines = ["ITM 1", f"e_max {itm.e_max!r}", f"nodes {len(itm.nodes)}"]
    for i in sorted(itm.nodes):
        node = itm.nodes[i]
        st = node.stats
        if st is not None:
            count, avg, lp = st.count, st.moving_average(), st.learning_progress()
        else:
            count, avg, lp = 0, 0.0, 0.0
        w = " ".join(repr(float(x)) for x in node.w)
        lines.append(f"node {i} {count} {avg!r} {lp!r} {w}")
    edges = itm.edges()
    lines.append(f"edges {len(edges)}")
    lines.extend(f"edge {i} {j}" for i, j in edges)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_snapshot(path) -> dict:
    """Parse a snapshot into ``{"e_max", "nodes": {id: {...}}, "edges"}``."""
    with open(path) as fh:
        rows = [r.split() for r in fh.read().splitlines() if r.strip()]
    if rows[0] != ["ITM", "1"]:
        raise ValueError(f"{path}: not an ITM version-1 snapshot")
    out = {"e_max": float(rows[1][1]), "nodes": {}, "edges": []}
    for r in rows:
        if r[0] == "node":
            out["nodes"][int(r[1])] = {
                "count": int(r[2]),
                "mean_error": float(r[3]),
                "learning_progress": float(r[4]),
                "w": np.array([float(x) for x in r[5:]]),
            }
        elif r[0] == "edge":
            out["edges"].append((int(r[1]), int(r[2])))
    return out
