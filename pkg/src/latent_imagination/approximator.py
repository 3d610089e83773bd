"""Small dense feedforward networks with exact reverse-mode gradients and Adam.

Every learned component in the package (encoder, decoder, critic, actor,
local dynamics/reward models) is a :class:`DenseNet`. Parameters live in one
flat float64 vector; each layer's weight matrix and bias are views into it,
so optimizer steps and soft target updates are single vector operations.

Shapes follow the row-vector convention: a layer maps ``x @ W + b`` with
``W`` of shape ``(n_in, n_out)``. Inputs may be a single vector ``(n_in,)``
or a batch ``(batch, n_in)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "tanh", "linear", "sigmoid")

FORMAT_MAGIC = "DENSENET"
FORMAT_VERSION = 1


class NumericalError(FloatingPointError):
    """A forward or backward pass produced a non-finite value."""

    def __init__(self, layer: int, where: str = "forward"):
        super().__init__(f"non-finite value in {where} pass at layer {layer}")
        self.layer = layer
        self.where = where


def _activate(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    if kind == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    return z


def _activation_grad(z, y, kind):
    # derivative expressed through pre-activation z or output y, whichever is cheaper
    if kind == "relu":
        return (z > 0.0).astype(z.dtype)
    if kind == "tanh":
        return 1.0 - y * y
    if kind == "sigmoid":
        return y * (1.0 - y)
    return None


@dataclass
class Layer:
    W: np.ndarray
    b: np.ndarray
    activation: str

    @property
    def n_in(self) -> int:
        return self.W.shape[0]

    @property
    def n_out(self) -> int:
        return self.W.shape[1]


class DenseNet:
    """Feedforward net built from ``sizes`` and one activation per layer.

    >>> net = DenseNet([3, 4, 1], ["tanh", "linear"], rng=np.random.default_rng(0))
    >>> net.forward(np.zeros(3)).shape
    (1,)
    """

    def __init__(self, sizes, activations, rng=None, init="glorot"):
        sizes = [int(s) for s in sizes]
        activations = list(activations)
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if len(activations) != len(sizes) - 1:
            raise ValueError(
                f"{len(sizes) - 1} layers but {len(activations)} activations"
            )
        for a in activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        self.sizes = sizes
        self.activations = activations
        n = sum(i * o + o for i, o in zip(sizes[:-1], sizes[1:]))
        self.params = np.zeros(n)
        self.layers = _bind_layers(self.params, sizes, activations)
        if init == "glorot":
            rng = np.random.default_rng() if rng is None else rng
            for layer in self.layers:
                limit = np.sqrt(6.0 / (layer.n_in + layer.n_out))
                layer.W[...] = rng.uniform(-limit, limit, size=layer.W.shape)
        elif init != "zeros":
            raise ValueError(f"unknown init {init!r}")

    @property
    def n_in(self) -> int:
        return self.sizes[0]

    @property
    def n_out(self) -> int:
        return self.sizes[-1]

    @property
    def param_count(self) -> int:
        return self.params.size

    def copy(self) -> "DenseNet":
        other = DenseNet.__new__(DenseNet)
        other.sizes = list(self.sizes)
        other.activations = list(self.activations)
        other.params = self.params.copy()
        other.layers = _bind_layers(other.params, other.sizes, other.activations)
        return other

    def zeros_like_params(self) -> np.ndarray:
        return np.zeros_like(self.params)

    def grad_views(self, grads: np.ndarray):
        """Per-layer ``(dW, db)`` views into a flat gradient vector."""
        return [(g.W, g.b) for g in _bind_layers(grads, self.sizes, self.activations)]

    def _check_input(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim not in (1, 2) or x.shape[-1] != self.n_in:
            raise ValueError(
                f"input has shape {x.shape}, network expects last dim {self.n_in}"
            )
        return x

    def forward(self, x):
        x = self._check_input(x)
        for layer in self.layers:
            x = _activate(x @ layer.W + layer.b, layer.activation)
        return x

    __call__ = forward

    def forward_cached(self, x):
        """Forward pass that keeps what :meth:`backward` needs."""
        x = self._check_input(x)
        cache = [x]
        pre = []
        for i, layer in enumerate(self.layers):
            z = x @ layer.W + layer.b
            x = _activate(z, layer.activation)
            if not np.all(np.isfinite(x)):
                raise NumericalError(i)
            pre.append(z)
            cache.append(x)
        return x, (cache, pre)

    def backward(self, memo, grad_out, grads=None, need_input_grad=False):
        """Accumulate dLoss/dparams into ``grads`` given dLoss/doutput.

        Returns ``(grads, grad_input)``; ``grad_input`` is None unless asked for.
        """
        cache, pre = memo
        if grads is None:
            grads = self.zeros_like_params()
        views = self.grad_views(grads)
        g = np.asarray(grad_out, dtype=float)
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            d = _activation_grad(pre[i], cache[i + 1], layer.activation)
            if d is not None:
                g = g * d
            x_in = cache[i]
            dW, db = views[i]
            if g.ndim == 1:
                dW += np.outer(x_in, g)
                db += g
            else:
                dW += x_in.T @ g
                db += g.sum(axis=0)
            if i > 0 or need_input_grad:
                g = g @ layer.W.T
            if not np.all(np.isfinite(g)):
                raise NumericalError(i, "backward")
        return grads, (g if need_input_grad else None)


def _bind_layers(flat, sizes, activations):
    layers = []
    pos = 0
    for n_in, n_out, act in zip(sizes[:-1], sizes[1:], activations):
        W = flat[pos:pos + n_in * n_out].reshape(n_in, n_out)
        pos += n_in * n_out
        b = flat[pos:pos + n_out]
        pos += n_out
        layers.append(Layer(W, b, act))
    return layers


def forward(net: DenseNet, x) -> np.ndarray:
    return net.forward(x)


def mse_and_grad(net: DenseNet, x, target, weights=None):
    """Squared L2 error and its exact gradient w.r.t. every parameter.

    For a single input the loss is ``sum((net(x) - target)**2)``. For a batch
    it is the (optionally weighted) mean over samples of that per-sample sum.
    """
    target = np.asarray(target, dtype=float)
    y, memo = net.forward_cached(x)
    if target.shape != y.shape:
        raise ValueError(f"target shape {target.shape} != output shape {y.shape}")
    diff = y - target
    if y.ndim == 1:
        loss = float(diff @ diff)
        grad_out = 2.0 * diff
    else:
        per = np.einsum("ij,ij->i", diff, diff)
        w = np.ones(len(per)) if weights is None else np.asarray(weights, dtype=float)
        n = len(per)
        loss = float(w @ per) / n
        grad_out = (2.0 / n) * w[:, None] * diff
    grads, _ = net.backward(memo, grad_out)
    return loss, grads


@dataclass
class AdamState:
    """Bias-corrected Adam accumulators for one network."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    t: int = 0

    @classmethod
    def for_net(cls, net: DenseNet, lr: float = 1e-3, **kw) -> "AdamState":
        return cls(lr=lr, m=np.zeros(net.param_count), v=np.zeros(net.param_count), **kw)


def adam_update(net: DenseNet, grads: np.ndarray, state: AdamState) -> None:
    """One Adam step on ``net`` in place; increments ``state.t``."""
    grads = np.asarray(grads, dtype=float)
    if grads.shape != net.params.shape:
        raise ValueError(
            f"gradient shape {grads.shape} != parameter shape {net.params.shape}"
        )
    if state.m is None:
        state.m = np.zeros_like(net.params)
        state.v = np.zeros_like(net.params)
    elif state.m.shape != net.params.shape:
        raise ValueError("Adam state does not match network")
    state.t += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grads
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    net.params -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def soft_update(target: DenseNet, source: DenseNet, tau: float) -> None:
    """``target <- tau * source + (1 - tau) * target``."""
    if target.params.shape != source.params.shape:
        raise ValueError("target and source networks differ in shape")
    target.params *= 1.0 - tau
    target.params += tau * source.params


# --- persistence -----------------------------------------------------------
#
# Text format, version 1:
#
#   DENSENET 1
#   layers <L>
#   <n_in> <n_out> <activation>        (L lines)
#   <P parameter values, one per line, repr precision>
#
# Parameters are the flat vector: per layer, W row-major then b.

def save_net(net: DenseNet, path) -> None:
    lines = [f"{FORMAT_MAGIC} {FORMAT_VERSION}", f"layers {len(net.layers)}"]
    for layer in net.layers:
        lines.append(f"{layer.n_in} {layer.n_out} {layer.activation}")
    lines.extend(repr(float(p)) for p in net.params)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_net(path) -> DenseNet:
    with open(path) as fh:
        lines = fh.read().split("\n")
    magic, version = lines[0].split()
    if magic != FORMAT_MAGIC or int(version) != FORMAT_VERSION:
        raise ValueError(f"{path}: not a version-{FORMAT_VERSION} network file")
    n_layers = int(lines[1].split()[1])
    sizes, acts = [], []
    for row in lines[2:2 + n_layers]:
        n_in, n_out, act = row.split()
        if not sizes:
            sizes.append(int(n_in))
        elif sizes[-1] != int(n_in):
            raise ValueError(f"{path}: layer sizes are not chain-compatible")
        sizes.append(int(n_out))
        acts.append(act)
    net = DenseNet(sizes, acts, init="zeros")
    values = [float(v) for v in lines[2 + n_layers:] if v.strip()]
    if len(values) != net.param_count:
        raise ValueError(f"{path}: expected {net.param_count} parameters, got {len(values)}")
    net.params[:] = values
    return net
