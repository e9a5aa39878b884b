"""Minimal reverse-mode automatic differentiation and the Adam optimizer.

The tape is a graph of Node objects holding numpy array values at vector
granularity (whole-layer affines, whole-vector activations), so the node
count scales with network depth and tree size rather than block length.
Forward values are computed by the same numpy expressions as the plain
implementations, so taped and untaped results agree bit for bit.

Gradients flow only through nodes reachable from a ``var``; subgraphs built
purely from ``const`` inputs are skipped during the backward pass.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .decoding import lse as lse_values
from .decoding import stable_sigmoid

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772


class Node:
    """One tape entry: a value, its parents and the vector-Jacobian pullback."""

    __slots__ = ("value", "parents", "vjp", "requires", "grad")

    def __init__(self, value, parents=(), vjp=None, requires=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = tuple(parents)
        self.vjp = vjp
        self.requires = requires
        self.grad = None

    @property
    def shape(self):
        return self.value.shape


def var(value) -> Node:
    """A leaf that accumulates a gradient (a trainable parameter)."""
    return Node(value, requires=True)


def const(value) -> Node:
    """A leaf with no gradient (inputs, noise, fixed parameters)."""
    return Node(value)


def _op(value, parents, vjp) -> Node:
    requires = any(p.requires for p in parents)
    return Node(value, parents, vjp if requires else None, requires)


def custom_op(value, parents, vjp) -> Node:
    """Build a fused operation node from a precomputed value and pullback."""
    return _op(value, parents, vjp)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a: Node, b: Node) -> Node:
    return _op(a.value + b.value, (a, b),
               lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Node, b: Node) -> Node:
    return _op(a.value - b.value, (a, b),
               lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Node, b: Node) -> Node:
    return _op(a.value * b.value, (a, b),
               lambda g: (_unbroadcast(g * b.value, a.shape),
                          _unbroadcast(g * a.value, b.shape)))


def neg(a: Node) -> Node:
    return _op(-a.value, (a,), lambda g: (-g,))


def scale(a: Node, c: float) -> Node:
    return _op(c * a.value, (a,), lambda g: (c * g,))


def matmul(a: Node, b: Node) -> Node:
    return _op(a.value @ b.value, (a, b),
               lambda g: (g @ b.value.T, a.value.T @ g))


def dense_affine(x: Node, w: Node, b: Node) -> Node:
    """x @ w + b for a (batch, in) input, (in, out) weight and (out,) bias."""
    return add(matmul(x, w), b)


def selu(a: Node) -> Node:
    x = a.value
    pos = x > 0
    ex = np.exp(np.minimum(x, 0.0))
    val = np.where(pos, SELU_LAMBDA * x, SELU_LAMBDA * SELU_ALPHA * (ex - 1.0))
    dx = np.where(pos, SELU_LAMBDA, SELU_LAMBDA * SELU_ALPHA * ex)
    return _op(val, (a,), lambda g: (g * dx,))


def sigmoid(a: Node) -> Node:
    s = stable_sigmoid(a.value)
    return _op(s, (a,), lambda g: (g * s * (1.0 - s),))


def lse_pair(a: Node, b: Node) -> Node:
    """Elementwise LSE(a, b), the LLR-of-XOR rule, with exact gradients."""
    av, bv = a.value, b.value
    val = lse_values(av, bv)

    def vjp(g):
        s_sum = stable_sigmoid(av + bv)
        return (g * (s_sum - stable_sigmoid(av - bv)),
                g * (s_sum - stable_sigmoid(bv - av)))

    return _op(val, (a, b), vjp)


def concat_cols(nodes: list[Node]) -> Node:
    widths = [nd.value.shape[1] for nd in nodes]
    bounds = np.cumsum([0] + widths)
    val = np.concatenate([nd.value for nd in nodes], axis=1)
    return _op(val, tuple(nodes),
               lambda g: tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(nodes))))


def slice_cols(a: Node, lo: int, hi: int) -> Node:
    def vjp(g):
        out = np.zeros_like(a.value)
        out[:, lo:hi] = g
        return (out,)

    return _op(a.value[:, lo:hi], (a,), vjp)


def reshape(a: Node, shape) -> Node:
    return _op(a.value.reshape(shape), (a,),
               lambda g: (g.reshape(a.value.shape),))


def stack_last(nodes: list[Node]) -> Node:
    val = np.stack([nd.value for nd in nodes], axis=-1)
    return _op(val, tuple(nodes),
               lambda g: tuple(g[..., i] for i in range(len(nodes))))


def row_normalize(a: Node, energy: float) -> Node:
    """Scale each row x to sqrt(energy) * x / ||x|| (energy-n codewords)."""
    x = a.value
    r = np.linalg.norm(x, axis=1, keepdims=True)
    c = np.sqrt(energy)
    val = c * x / r

    def vjp(g):
        dot = np.sum(g * x, axis=1, keepdims=True)
        return (c * (g / r - x * dot / r**3),)

    return _op(val, (a,), vjp)


def sum_all(a: Node) -> Node:
    return _op(a.value.sum(), (a,),
               lambda g: (np.broadcast_to(g, a.value.shape).copy(),))


def mean_all(a: Node) -> Node:
    size = a.value.size
    return _op(a.value.mean(), (a,),
               lambda g: (np.broadcast_to(g / size, a.value.shape).copy(),))


def inner_product(a: Node, b: Node) -> Node:
    val = np.sum(a.value * b.value)
    return _op(val, (a, b), lambda g: (g * b.value, g * a.value))


def bce_with_logits(llr: Node, targets) -> Node:
    """Mean binary cross entropy where sigmoid(llr) is the bit-0 probability.

    Computed through the softplus identity, which is the numerically stable
    form of clamping the sigmoid away from 0 and 1: each element costs
    (1-m)*softplus(-L) + m*softplus(L), with gradient sigmoid(L) - (1-m).
    """
    t = np.asarray(targets, dtype=np.float64)
    x = llr.value
    val = np.mean((1.0 - t) * np.logaddexp(0.0, -x) + t * np.logaddexp(0.0, x))

    def vjp(g):
        return (g * (stable_sigmoid(x) - (1.0 - t)) / x.size,)

    return _op(val, (llr,), vjp)


def backward(loss: Node) -> None:
    """Reverse accumulation from a scalar loss into every reachable var.

    Populates node.grad for each node on a path from a var to the loss;
    vars not reachable keep grad None (treated as zero by the optimizer).
    """
    if loss.value.size != 1:
        raise ValueError("backward() needs a scalar loss node")
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node.grad is None or node.vjp is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(node.grad)):
            if not parent.requires:
                continue
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.value)
            parent.grad += pg


def grad_or_zero(node: Node) -> np.ndarray:
    return np.zeros_like(node.value) if node.grad is None else node.grad


# ---------------------------------------------------------------------------
# Dense blocks
# ---------------------------------------------------------------------------

@dataclass
class DenseBlock:
    """Fully connected stack with SeLU between layers and a linear output."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @classmethod
    def zeros(cls, widths: list[int]) -> "DenseBlock":
        ws = [np.zeros((widths[i], widths[i + 1])) for i in range(len(widths) - 1)]
        bs = [np.zeros(widths[i + 1]) for i in range(len(widths) - 1)]
        return cls(ws, bs)

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def apply(self, x: Node, params: list[Node]) -> Node:
        h = x
        layers = len(self.weights)
        for i in range(layers):
            h = dense_affine(h, params[2 * i], params[2 * i + 1])
            if i < layers - 1:
                h = selu(h)
        return h


def init_weights(block: DenseBlock, rng: np.random.Generator, std: float = 0.02) -> DenseBlock:
    """Fresh block with every weight and bias drawn i.i.d. from N(0, std^2)."""
    ws = [rng.normal(0.0, std, size=w.shape) for w in block.weights]
    bs = [rng.normal(0.0, std, size=b.shape) for b in block.biases]
    return DenseBlock(ws, bs)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Adam moments for a fixed list of parameter arrays."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: list[np.ndarray], lr: float) -> "AdamState":
        return cls(lr=lr, m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params])


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
    """One bias-corrected Adam update, applied to the arrays in place."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**state.t)
        v_hat = v / (1.0 - b2**state.t)
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


# ---------------------------------------------------------------------------
# Finite-difference validation harness
# ---------------------------------------------------------------------------

def finite_diff_check(f, params: list[np.ndarray], h: float = 1e-6,
                      floor: float = 1e-3) -> dict:
    """Compare backward() gradients of f against central finite differences.

    f maps a list of parameter Nodes to a scalar Node. The relative error of
    each coordinate is |analytic - fd| / max(|analytic|, |fd|, floor); the
    floor keeps roundoff on near-zero gradients from registering as error.
    Returns {"max_rel_err", "per_param"}.
    """
    if not 1e-8 <= h <= 1e-4:
        raise ValueError("h must be in [1e-8, 1e-4]")
    nodes = [var(p.copy()) for p in params]
    loss = f(nodes)
    backward(loss)
    analytic = [grad_or_zero(nd) for nd in nodes]

    def value_at(ps):
        out = f([const(p) for p in ps])
        return float(out.value)

    per_param = []
    for idx, p in enumerate(params):
        fd = np.zeros_like(p, dtype=np.float64)
        flat = fd.reshape(-1)
        base = [q.copy() for q in params]
        pb = base[idx].reshape(-1)
        for j in range(flat.size):
            orig = pb[j]
            pb[j] = orig + h
            up = value_at(base)
            pb[j] = orig - h
            down = value_at(base)
            pb[j] = orig
            flat[j] = (up - down) / (2.0 * h)
        an = analytic[idx]
        denom = np.maximum(np.maximum(np.abs(an), np.abs(fd)), floor)
        per_param.append(float(np.max(np.abs(an - fd) / denom)) if fd.size else 0.0)
    return {"max_rel_err": max(per_param) if per_param else 0.0, "per_param": per_param}
