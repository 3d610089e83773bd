"""Invariant suites runnable outside the test runner.

Each ``check_*`` function builds its own fixtures, compares the library
against an independent oracle (finite differences, brute-force scans, a
reference ITM, closed-form statistics, dynamic programming) and returns a
:class:`CheckResult`. :func:`run_all` runs every suite.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from .approximator import mse_and_grad
from .cacla import ActorCritic, actor_update, critic_update, td_targets
from .grasp_env import GraspEnv, run_policy, scripted_action
from .imagination import la_imagination
from .intrinsic import LocalModelPair
from .itm import ItmMap
from .replay import PrioritizedBuffer
from .representation import EncoderDecoder, combined_losses_and_grads


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _timed(fn):
    def wrapper(*args, **kw):
        t0 = time.perf_counter()
        res = fn(*args, **kw)
        res.seconds = time.perf_counter() - t0
        return res
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# -- finite differences -------------------------------------------------------

def _fd_coords(f, params, coords, h=1e-5):
    out = np.empty(len(coords))
    for k, i in enumerate(coords):
        old = params[i]
        params[i] = old + h
        up = f()
        params[i] = old - h
        down = f()
        params[i] = old
        out[k] = (up - down) / (2 * h)
    return out


def _rel_err(a, b, floor=1e-6):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def _sum_sq(y, t):
    d = y - t
    return float(np.sum(d * d)) / (len(d) if d.ndim > 1 else 1)


@_timed
def check_gradients(cases=100, coords=12, tol=1e-4, seed=0) -> CheckResult:
    """Analytic gradients of every trained network against central differences."""
    rng = np.random.default_rng(seed)
    worst = {}

    def record(name, analytic, net_params, f):
        idx = rng.choice(net_params.size, size=min(coords, net_params.size), replace=False)
        worst[name] = max(worst.get(name, 0.0), _rel_err(analytic[idx], _fd_coords(f, net_params, idx)))

    for _ in range(cases):
        ac = ActorCritic(rng=rng)
        phi = rng.normal(size=(4, 16))
        a = rng.uniform(-1, 1, size=(4, 2))
        _, g = mse_and_grad(ac.actor, phi, a)
        record("actor", g, ac.actor.params, lambda: _sum_sq(ac.actor.forward(phi), a))

        y = td_targets(ac, rng.normal(size=4), rng.normal(size=(4, 16)), rng.random(4) < 0.3)[:, None]
        _, g = mse_and_grad(ac.critic, phi, y)
        record("critic", g, ac.critic.params, lambda: _sum_sq(ac.critic.forward(phi), y))

        pair = LocalModelPair(rng=rng)
        p, act, r, p2 = rng.normal(size=16), rng.uniform(-1, 1, 2), rng.normal(), rng.normal(size=16)
        _, g = pair.loss_and_grad(p, act, r, p2)
        record("local_models", g, pair.net.params, lambda: pair.error(p, act, r, p2))

        ed = EncoderDecoder(rng=rng)
        batch = {
            "s": rng.uniform(size=(3, 256)), "s_next": rng.uniform(size=(3, 256)),
            "r": rng.normal(size=3), "terminal": rng.random(3) < 0.3,
        }
        w = rng.uniform(0.2, 1.0, size=3)
        *_, g_enc, g_dec, _ = combined_losses_and_grads(ed, ac.critic, ac.target_critic, batch,
                                                        0.99, w)

        def combined():
            s, s2 = batch["s"], batch["s_next"]
            z = ed.encoder.forward(s)
            rec = np.sum((ed.decoder.forward(z) - s) ** 2, axis=1)
            boot = ac.target_critic.forward(ed.target_encoder.forward(s2))[:, 0]
            yv = batch["r"] + 0.99 * np.where(batch["terminal"], 0.0, boot)
            crit = (yv - ac.critic.forward(z)[:, 0]) ** 2
            return (ed.lambda_rec * np.sum(w * rec) + ed.lambda_critic * np.sum(w * crit)) / len(s)

        record("encoder", g_enc, ed.encoder.params, combined)
        record("decoder", g_dec, ed.decoder.params, combined)

    ok = all(v < tol for v in worst.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    return CheckResult("gradients", ok, f"{cases} cases each; max rel err {detail}")


# -- ITM ----------------------------------------------------------------------

def _scan_two(ids, W, phi):
    """Nearest and second-nearest by a full distance scan (ties to the smaller id)."""
    ids = np.asarray(ids)
    d = np.sum((np.asarray(W) - phi) ** 2, axis=1)
    order = np.lexsort((ids, d))
    return int(ids[order[0]]), int(ids[order[1]])


class ReferenceItm:
    """Plain-dict ITM used as an oracle for :class:`ItmMap`."""

    def __init__(self, e_max, w1, w2):
        self.e_max = e_max
        self.w = {0: np.array(w1, float), 1: np.array(w2, float)}
        self.adj = {0: {1}, 1: {0}}
        self.next_id = 2
        self.pruned = 0

    def adapt(self, phi):
        ids = sorted(self.w)
        n, n2 = _scan_two(ids, [self.w[i] for i in ids], phi)
        self.adj[n].add(n2)
        self.adj[n2].add(n)
        for m in sorted(self.adj[n]):
            if np.dot(self.w[m] - self.w[n2], self.w[m] - self.w[n]) < 0:
                self.adj[n].discard(m)
                self.adj[m].discard(n)
                self.pruned += 1
                if not self.adj[m]:
                    del self.w[m], self.adj[m]
        if n in self.w and n2 in self.w:
            outside = np.dot(self.w[n] - phi, self.w[n2] - phi) > 0
            if outside and np.sum((phi - self.w[n]) ** 2) > self.e_max:
                v = self.next_id
                self.next_id += 1
                self.w[v] = np.array(phi, float)
                self.adj[v] = {n}
                self.adj[n].add(v)

    def fingerprint(self):
        nodes = tuple((i, self.w[i].tobytes()) for i in sorted(self.w))
        edges = tuple(sorted((i, j) for i, js in self.adj.items() for j in js if i < j))
        return nodes, edges

    @classmethod
    def mirror(cls, itm):
        ref = cls(itm.e_max, np.zeros(1), np.zeros(1))
        ref.w = {i: n.w.copy() for i, n in itm.nodes.items()}
        ref.adj = {i: set(n.neighbors) for i, n in itm.nodes.items()}
        ref.next_id = itm.next_id
        return ref


@_timed
def check_itm(queries=10_000, max_nodes=500, stream=10_000, dim=4, seed=0) -> CheckResult:
    """find_matching against a linear scan; adaptation against a reference map."""
    rng = np.random.default_rng(seed)
    m = ItmMap(e_max=1.0)
    for w in rng.normal(size=(max_nodes, dim)):
        m._add_node(w)
    ids, W = m._matrix()
    mismatches = 0
    for phi in rng.normal(size=(queries, dim)):
        if m.find_matching(phi) != _scan_two(ids, W, phi):
            mismatches += 1

    e_max = 0.5
    # a drifting stimulus stream, as produced by continuous trajectories,
    # reflected into a box so the map stays a few hundred nodes large
    path = np.cumsum(rng.normal(scale=0.25, size=(stream, dim)), axis=0)
    path = 2.0 - np.abs(np.mod(path + 2.0, 8.0) - 4.0)
    itm = ItmMap.initialize(path[0], path[1], e_max=e_max)
    ref = ReferenceItm(e_max, path[0], path[1])
    graph_problems = diverged = pruned = 0
    for phi in path[2:]:
        itm.adapt(phi)
        ref.adapt(phi)
        graph_problems += bool(itm.audit())
        pruned += ref.pruned
        ref.pruned = 0
        if itm.fingerprint() != ref.fingerprint():
            diverged += 1
            ref = ReferenceItm.mirror(itm)
    ok = mismatches == 0 and graph_problems == 0 and diverged == 0 and pruned > 0
    detail = (f"{queries} queries on {max_nodes} nodes, {mismatches} mismatches; "
              f"{stream} stimuli, {len(itm)} nodes, {pruned} edges pruned, {itm.removed} nodes removed, "
              f"{graph_problems} graph faults, {diverged} divergences from reference")
    return CheckResult("itm", ok, detail)


# -- prioritized replay --------------------------------------------------------

@_timed
def check_per(samples=200_000, ops=10_000, alpha=0.6, p_min=0.01, seed=0) -> CheckResult:
    """Sampling frequencies vs ``p^alpha / sum``; sum-tree root vs brute force."""
    rng = np.random.default_rng(seed)
    sets = {"{1,3}": [1.0, 3.0], "{1,1,1,1}": [1.0] * 4,
            "random100": list(rng.uniform(0.1, 5.0, size=100))}
    pvals = {}
    for name, pri in sets.items():
        buf = PrioritizedBuffer(len(pri), {"x": ((), np.float64)}, alpha=alpha, eps=0.0)
        ids = [buf.store_fields(x=float(i)) for i in range(len(pri))]
        buf.update_priorities(ids, pri)
        counts = np.zeros(len(pri))
        for _ in range(samples // 1000):
            _, got, _ = buf.sample(1000, rng)
            np.add.at(counts, np.asarray(got) % len(pri), 1)
        expected = np.asarray(pri) ** alpha
        expected = expected / expected.sum() * counts.sum()
        pvals[name] = float(sps.chisquare(counts, expected).pvalue)

    cap = 256
    buf = PrioritizedBuffer(cap, {"x": ((), np.float64)}, alpha=alpha)
    shadow = {}
    worst = 0.0
    for k in range(ops):
        if k % 3 == 0 or not shadow:
            i = buf.store_fields(x=0.0)
            shadow = {j: p for j, p in shadow.items() if j % cap != i % cap}
            shadow[i] = buf.max_priority ** alpha
        else:
            live = rng.choice(list(shadow), size=min(4, len(shadow)), replace=False)
            d = rng.exponential(size=len(live))
            buf.update_priorities(live, d)
            for j, v in zip(live, d):
                shadow[int(j)] = (abs(v) + buf.eps) ** alpha
        worst = max(worst, abs(buf.tree.total - sum(shadow.values())) / max(sum(shadow.values()), 1e-12))
    ok = all(p > p_min for p in pvals.values()) and worst < 1e-9
    detail = ", ".join(f"{k} p={v:.3f}" for k, v in pvals.items()) + f"; root rel err {worst:.1e}"
    return CheckResult("per", ok, detail)


# -- imagination gate ----------------------------------------------------------

class _FixedStats:
    def __init__(self, scaled):
        self.scaled = scaled
        self.count = 10**6
        self.scale_history = [1.0]

    def moving_average(self):
        return self.scaled


class _HalfRng:
    def random(self):
        return 0.5


def _gate_map(scaled, rng, dim=4, n=6):
    m = ItmMap(e_max=1.0)
    for _ in range(n):
        m._add_node(rng.normal(scale=2.0, size=dim))
    for node in m.nodes.values():
        node.stats = _FixedStats(scaled)
        node.models = LocalModelPair(latent_dim=dim, action_dim=2, rng=rng)
    return m


@_timed
def check_gate(trials=10_000, d_max=7, seed=0) -> CheckResult:
    """Rollout stop rule at scaled errors 1, 0 and 0.5."""
    rng = np.random.default_rng(seed)
    policy = lambda phi: np.zeros(2)
    phi0 = np.zeros(4)
    closed = la_imagination(phi0, 0, _gate_map(1.0, rng), policy, d_max, rng)
    full = la_imagination(phi0, 0, _gate_map(0.0, rng), policy, d_max, _HalfRng())
    half = _gate_map(0.5, rng)
    mean = float(np.mean([la_imagination(phi0, 0, half, policy, d_max, rng) for _ in range(trials)]))
    expected = sum(0.5 ** k for k in range(1, d_max + 1))
    ok = closed == 0 and full == d_max and abs(mean - expected) <= 0.05 * expected
    detail = f"e=1 -> {closed}, e=0 -> {full}, e=0.5 mean {mean:.4f} vs {expected:.4f}"
    return CheckResult("gate", ok, detail)


# -- CACLA ---------------------------------------------------------------------

@_timed
def check_cacla(seed=0) -> CheckResult:
    """Actor untouched when no TD error is positive; otherwise only positive ones count."""
    rng = np.random.default_rng(seed)
    ac = ActorCritic(latent_dim=4, action_dim=2, hidden=8, gamma=0.0, rng=rng)
    for net in (ac.critic, ac.target_critic):
        net.params[:] = 0.0
        net.layers[-1].b[...] = 5.0
    batch = {"phi": rng.normal(size=(16, 4)), "a": rng.uniform(-1, 1, (16, 2)),
             "r": rng.uniform(-3, 5, 16), "phi_next": rng.normal(size=(16, 4)),
             "terminal": np.zeros(16, bool)}
    before = hash(ac.actor.params.tobytes())
    n0, _ = actor_update(ac, batch)
    untouched = n0 == 0 and hash(ac.actor.params.tobytes()) == before

    batch["r"] = rng.uniform(0, 10, 16)
    keep = batch["r"] > 5.0
    per_sample = []
    for i in np.flatnonzero(keep):
        out = ac.actor.forward(batch["phi"][i])
        _, g = mse_and_grad(ac.actor, batch["phi"][i], batch["a"][i])
        per_sample.append(g)
    ref_grad = np.mean(per_sample, axis=0)
    ref = ac.actor.copy()
    from .approximator import AdamState, adam_update
    state = AdamState.for_net(ref, lr=ac.actor_adam.lr)
    adam_update(ref, ref_grad, state)
    n1, _ = actor_update(ac, batch)
    mixed = n1 == int(keep.sum()) and np.allclose(ac.actor.params, ref.params, rtol=0, atol=1e-12)
    detail = f"all delta<=0: {'unchanged' if untouched else 'CHANGED'}; mixed: {n1} of 16 used, " \
             f"{'matches' if mixed else 'differs from'} per-sample reference"
    return CheckResult("cacla", untouched and mixed, detail)


# -- tabular chain -------------------------------------------------------------

def chain_values(p_right, gamma, n=5):
    """Exact state values of the chain by solving (I - gamma P) V = R."""
    P = np.zeros((n, n))
    R = np.zeros(n)
    for s in range(n - 1):
        right, left = s + 1, max(s - 1, 0)
        if right != n - 1:
            P[s, right] += p_right
        else:
            R[s] = p_right
        P[s, left] += 1 - p_right
    return np.linalg.solve(np.eye(n) - gamma * P, R)


@_timed
def check_chain(updates=20_000, p_right=0.7, gamma=0.9, tol=0.05, seed=0) -> CheckResult:
    """Critic on a 5-state chain (one-hot inputs) against the DP oracle."""
    rng = np.random.default_rng(seed)
    n = 5
    ac = ActorCritic(latent_dim=n, action_dim=1, hidden=32, gamma=gamma, tau=0.01,
                     lr_critic=1e-3, rng=rng)
    eye = np.eye(n)
    truth = chain_values(p_right, gamma, n)[:n - 1]
    err = np.inf
    used = updates
    for k in range(1, updates + 1):
        s = rng.integers(0, n - 1, size=32)
        right = rng.random(32) < p_right
        s2 = np.where(right, s + 1, np.maximum(s - 1, 0))
        batch = {"phi": eye[s], "a": np.zeros((32, 1)), "r": (s2 == n - 1).astype(float),
                 "phi_next": eye[s2], "terminal": s2 == n - 1}
        critic_update(ac, batch)
        ac.soft_update()
        if k % 500 == 0:
            err = float(np.max(np.abs(ac.value(eye[:n - 1]) - truth)))
            if err <= tol:
                used = k
                break
    return CheckResult("chain", err <= tol,
                       f"max |V - V_dp| = {err:.4f} after {used} updates (limit {updates})")


# -- environment ---------------------------------------------------------------

@_timed
def check_env(episodes=1000, seed=0) -> CheckResult:
    """Scripted controller mostly succeeds; uniform random actions mostly do not."""
    env = GraspEnv(rng=np.random.default_rng(seed))
    rng = np.random.default_rng(seed + 1)
    scripted = run_policy(env, lambda e, r: scripted_action(e.state), episodes, rng)
    rand = run_policy(env, lambda e, r: r.uniform(-1, 1, 2), episodes, rng)
    s_rate = scripted["success"] / episodes
    r_rate = rand["success"] / episodes
    ok = s_rate >= 0.95 and r_rate < 0.15
    return CheckResult("env", ok, f"scripted success {s_rate:.3f}, random success {r_rate:.3f}")


SUITES = {
    "gradients": check_gradients,
    "itm": check_itm,
    "per": check_per,
    "gate": check_gate,
    "cacla": check_cacla,
    "chain": check_chain,
    "env": check_env,
}


def run_all(names=None):
    """Run the named suites (all by default); returns the results in order."""
    names = list(SUITES) if names is None else names
    return [SUITES[name]() for name in names]
