"""Independent oracles shared by the test modules."""
import numpy as np


def central_difference(f, params, h=1e-5):
    """Gradient of scalar ``f()`` w.r.t. the array ``params`` (perturbed in place)."""
    grad = np.zeros_like(params)
    flat = params.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        g[i] = (up - down) / (2 * h)
    return grad


def max_relative_error(a, b, floor=1e-6):
    """Max of ``|a-b| / max(|a|, |b|, floor)`` elementwise."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def brute_matching(weights: dict, phi):
    """Nearest and second-nearest ids by a plain loop over ``{id: w}``."""
    best = second = None
    best_d = second_d = np.inf
    for i in sorted(weights):
        d = float(np.sum((np.asarray(weights[i]) - phi) ** 2))
        if d < best_d:
            second, second_d = best, best_d
            best, best_d = i, d
        elif d < second_d:
            second, second_d = i, d
    return best, second


def sq_loss(net_forward, x, target, weights=None):
    y = net_forward(x)
    d = y - target
    if d.ndim == 1:
        return float(d @ d)
    per = np.sum(d * d, axis=1)
    w = np.ones(len(per)) if weights is None else weights
    return float(np.sum(w * per) / len(per))


def chain_dp_values(p_right, gamma, n=5):
    """Exact values of the chain under a fixed policy by solving (I - gamma P) V = R."""
    P = np.zeros((n, n))
    R = np.zeros(n)
    for s in range(n - 1):
        right, left = s + 1, max(s - 1, 0)
        P[s, right] += p_right
        P[s, left] += 1 - p_right
        R[s] = p_right * (1.0 if right == n - 1 else 0.0)
        if right == n - 1:
            P[s, right] = 0.0  # terminal: no bootstrap
    return np.linalg.solve(np.eye(n) - gamma * P, R)
