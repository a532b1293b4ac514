"""Minimal reverse-mode autodiff over dense float64 numpy arrays.

Graphs are built define-by-run: every op eagerly computes its value and
records a forward closure (so the graph can be re-evaluated after leaf
mutation, which is what `finite_diff` does) and a backward closure.

Stop-gradient nodes (`stop_gradient`) block reverse accumulation and are
*frozen* during re-evaluation: `finite_diff` differentiates the function
with every stop-gradient subtree held at its captured value, which is the
same function the reverse pass differentiates.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ContractError, DimensionError

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_GELU_CUBIC = 0.044715


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


class Node:
    """One vertex of the computation graph.

    `grad_enabled` is False only for stop-gradient nodes: they contribute
    zero to every gradient accumulation routed through them and keep their
    captured value across re-evaluations.
    """

    __slots__ = ("op", "inputs", "value", "grad_enabled", "needs_grad",
                 "_forward", "_backward")

    def __init__(self, op, inputs, value, forward=None, backward=None,
                 grad_enabled=True, needs_grad=None):
        self.op = op
        self.inputs = tuple(inputs)
        self.value = value
        self.grad_enabled = grad_enabled
        if needs_grad is None:
            needs_grad = grad_enabled and any(i.needs_grad for i in self.inputs)
        self.needs_grad = needs_grad
        self._forward = forward
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape})"

    # Small sugar so loss builders read naturally.
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __neg__(self):
        return scale(self, -1.0)


def leaf(value) -> Node:
    """Differentiable leaf (a parameter)."""
    return Node("leaf", (), _as_array(value), needs_grad=True)


def constant(value) -> Node:
    """Non-differentiable leaf (data, masks, frozen references)."""
    return Node("const", (), _as_array(value), needs_grad=False)


def _lift(x):
    if isinstance(x, Node):
        return x
    return constant(x)


def _node(op, inputs, forward, backward) -> Node:
    values = [i.value for i in inputs]
    return Node(op, inputs, forward(*values), forward=forward, backward=backward)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum `g` down to `shape` (inverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Topological traversal, evaluation, gradients
# ---------------------------------------------------------------------------


def _topo_order(root: Node):
    """Iterative post-order: inputs before consumers."""
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for inp in node.inputs:
            if id(inp) not in seen:
                stack.append((inp, False))
    return order


def evaluate(root: Node) -> np.ndarray:
    """Re-evaluate the graph bottom-up and return the root value.

    Leaves contribute their current (possibly mutated) values; stop-gradient
    nodes keep their frozen value and are not recomputed.
    """
    for node in _topo_order(root):
        if node._forward is not None and node.grad_enabled:
            node.value = node._forward(*[i.value for i in node.inputs])
    return root.value


def grad(root: Node, wrt) -> list[np.ndarray]:
    """Reverse accumulation of d(root)/d(node) for each node in `wrt`.

    The root must be scalar-valued. `wrt` entries may be differentiable
    leaves or interior nodes (e.g. a logits node). Paths through
    stop-gradient nodes contribute zero; nodes unreachable from the root
    get zero gradients.
    """
    if root.value.size != 1:
        raise ContractError(
            f"grad requires a scalar root, got shape {root.value.shape}")
    wrt = list(wrt)
    wanted = {id(n) for n in wrt}
    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.value)}
    saved: dict[int, np.ndarray] = {}
    for node in reversed(_topo_order(root)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if id(node) in wanted:
            saved[id(node)] = g
        if not node.grad_enabled or node._backward is None:
            continue
        for inp, gi in zip(node.inputs, node._backward(node, g)):
            if gi is None or not inp.needs_grad:
                continue
            acc = grads.get(id(inp))
            grads[id(inp)] = gi if acc is None else acc + gi
    out = []
    for n in wrt:
        g = saved.get(id(n))
        out.append(np.zeros_like(n.value) if g is None else np.asarray(g))
    return out


def finite_diff(root: Node, wrt: Node, epsilon: float) -> np.ndarray:
    """Central-difference estimate of d(root)/d(wrt), component by component.

    Stop-gradient subtrees are held at their captured values, matching what
    reverse accumulation differentiates.
    """
    if epsilon <= 0:
        raise ContractError("epsilon must be > 0")
    if root.value.size != 1:
        raise ContractError("finite_diff requires a scalar root")
    base = wrt.value.copy()
    est = np.zeros_like(base)
    flat = wrt.value.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + epsilon
        hi = float(evaluate(root))
        flat[j] = orig - epsilon
        lo = float(evaluate(root))
        flat[j] = orig
        est.reshape(-1)[j] = (hi - lo) / (2.0 * epsilon)
    wrt.value[...] = base
    evaluate(root)
    return est


# ---------------------------------------------------------------------------
# Op library
# ---------------------------------------------------------------------------


def add(a: Node, b: Node) -> Node:
    def fwd(x, y):
        return x + y

    def bwd(node, g):
        return (_unbroadcast(g, node.inputs[0].shape),
                _unbroadcast(g, node.inputs[1].shape))

    return _node("add", (a, b), fwd, bwd)


def sub(a: Node, b: Node) -> Node:
    def fwd(x, y):
        return x - y

    def bwd(node, g):
        return (_unbroadcast(g, node.inputs[0].shape),
                _unbroadcast(-g, node.inputs[1].shape))

    return _node("sub", (a, b), fwd, bwd)


def mul(a: Node, b: Node) -> Node:
    def fwd(x, y):
        return x * y

    def bwd(node, g):
        x, y = node.inputs[0].value, node.inputs[1].value
        ga = _unbroadcast(g * y, x.shape) if node.inputs[0].needs_grad else None
        gb = _unbroadcast(g * x, y.shape) if node.inputs[1].needs_grad else None
        return ga, gb

    return _node("mul", (a, b), fwd, bwd)


def div(a: Node, b: Node) -> Node:
    def fwd(x, y):
        return x / y

    def bwd(node, g):
        x, y = node.inputs[0].value, node.inputs[1].value
        return (_unbroadcast(g / y, x.shape),
                _unbroadcast(-g * x / (y * y), y.shape))

    return _node("div", (a, b), fwd, bwd)


def scale(a: Node, c: float) -> Node:
    c = float(c)

    def fwd(x):
        return x * c

    def bwd(node, g):
        return (g * c,)

    return _node("scale", (a,), fwd, bwd)


def matmul(a: Node, b: Node) -> Node:
    if a.value.ndim < 2 or b.value.ndim < 2:
        raise DimensionError("matmul operands must have ndim >= 2")
    if a.value.shape[-1] != b.value.shape[-2]:
        raise DimensionError(
            f"matmul inner dims differ: {a.value.shape} @ {b.value.shape}")

    def fwd(x, y):
        return x @ y

    def bwd(node, g):
        x, y = node.inputs[0].value, node.inputs[1].value
        ga = gb = None
        if node.inputs[0].needs_grad:
            ga = _unbroadcast(g @ np.swapaxes(y, -1, -2), x.shape)
        if node.inputs[1].needs_grad:
            gb = _unbroadcast(np.swapaxes(x, -1, -2) @ g, y.shape)
        return ga, gb

    return _node("matmul", (a, b), fwd, bwd)


def reshape(a: Node, shape) -> Node:
    shape = tuple(shape)

    def fwd(x):
        return x.reshape(shape)

    def bwd(node, g):
        return (g.reshape(node.inputs[0].shape),)

    return _node("reshape", (a,), fwd, bwd)


def transpose(a: Node, axes) -> Node:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def fwd(x):
        return np.transpose(x, axes)

    def bwd(node, g):
        return (np.transpose(g, inv),)

    return _node("transpose", (a,), fwd, bwd)


def take_rows(table: Node, ids: np.ndarray) -> Node:
    """Embedding lookup: out[...] = table[ids[...]]."""
    ids = np.asarray(ids)

    def fwd(t):
        return t[ids]

    def bwd(node, g):
        gt = np.zeros_like(node.inputs[0].value)
        np.add.at(gt, ids, g)
        return (gt,)

    return _node("take_rows", (table,), fwd, bwd)


def gather_positions(a: Node, pos: np.ndarray) -> Node:
    """Per-batch row gather: a [B, T, ...], pos [B, R] -> out [B, R, ...]."""
    pos = np.asarray(pos)
    bidx = np.arange(pos.shape[0])[:, None]

    def fwd(x):
        return x[bidx, pos]

    def bwd(node, g):
        gx = np.zeros_like(node.inputs[0].value)
        np.add.at(gx, (bidx, pos), g)
        return (gx,)

    return _node("gather_positions", (a,), fwd, bwd)


def take_last(a: Node, idx: np.ndarray) -> Node:
    """Gather one element per row along the last axis: out = a[..., idx]."""
    idx = np.asarray(idx)[..., None]

    def fwd(x):
        return np.take_along_axis(x, idx, axis=-1)[..., 0]

    def bwd(node, g):
        gx = np.zeros_like(node.inputs[0].value)
        np.put_along_axis(gx, idx, g[..., None], axis=-1)
        return (gx,)

    return _node("take_last", (a,), fwd, bwd)


def element(a: Node, index) -> Node:
    """Extract a single element as a scalar node."""
    index = tuple(index)

    def fwd(x):
        return np.asarray(x[index])

    def bwd(node, g):
        gx = np.zeros_like(node.inputs[0].value)
        gx[index] = g
        return (gx,)

    return _node("element", (a,), fwd, bwd)


def sum_all(a: Node) -> Node:
    def fwd(x):
        return np.asarray(x.sum())

    def bwd(node, g):
        return (np.broadcast_to(g, node.inputs[0].shape).copy(),)

    return _node("sum", (a,), fwd, bwd)


def sum_axis(a: Node, axis: int, keepdims: bool = False) -> Node:
    def fwd(x):
        return x.sum(axis=axis, keepdims=keepdims)

    def bwd(node, g):
        x = node.inputs[0].value
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _node("sum_axis", (a,), fwd, bwd)


def mean_all(a: Node) -> Node:
    def fwd(x):
        return np.asarray(x.mean())

    def bwd(node, g):
        x = node.inputs[0].value
        return (np.broadcast_to(g / x.size, x.shape).copy(),)

    return _node("mean", (a,), fwd, bwd)


def softmax(a: Node) -> Node:
    """Stable softmax over the last axis."""

    def fwd(x):
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)

    def bwd(node, g):
        p = node.value
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _node("softmax", (a,), fwd, bwd)


def log_softmax(a: Node) -> Node:
    """Stable log-softmax over the last axis (computed directly)."""

    def fwd(x):
        z = x - x.max(axis=-1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))

    def bwd(node, g):
        p = np.exp(node.value)
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _node("log_softmax", (a,), fwd, bwd)


def layer_norm(x: Node, gain: Node, bias: Node, eps: float = 1e-5) -> Node:
    """Normalize the last axis to zero mean / unit variance, then affine."""

    def _stats(v):
        mu = v.mean(axis=-1, keepdims=True)
        xc = v - mu
        inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
        return xc, inv

    def fwd(v, w, b):
        xc, inv = _stats(v)
        return xc * inv * w + b

    def bwd(node, g):
        v, w, _ = (i.value for i in node.inputs)
        xc, inv = _stats(v)
        xhat = xc * inv
        dxhat = g * w
        gx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        gw = (g * xhat).sum(axis=lead) if node.inputs[1].needs_grad else None
        gb = g.sum(axis=lead) if node.inputs[2].needs_grad else None
        return gx, gw, gb

    return _node("layer_norm", (x, gain, bias), fwd, bwd)


def gelu(a: Node) -> Node:
    """Tanh-approximation GELU."""

    def fwd(x):
        u = _SQRT_2_OVER_PI * (x + _GELU_CUBIC * (x * x * x))
        return 0.5 * x * (1.0 + np.tanh(u))

    def bwd(node, g):
        x = node.inputs[0].value
        x2 = x * x
        u = _SQRT_2_OVER_PI * (x + _GELU_CUBIC * (x2 * x))
        t = np.tanh(u)
        du = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_CUBIC * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du),)

    return _node("gelu", (a,), fwd, bwd)


def softplus(a: Node) -> Node:
    """log(1 + exp(x)), overflow-safe."""

    def fwd(x):
        return np.logaddexp(0.0, x)

    def bwd(node, g):
        x = node.inputs[0].value
        return (g * 0.5 * (1.0 + np.tanh(0.5 * x)),)

    return _node("softplus", (a,), fwd, bwd)


def exp(a: Node) -> Node:
    def fwd(x):
        return np.exp(x)

    def bwd(node, g):
        return (g * node.value,)

    return _node("exp", (a,), fwd, bwd)


def log(a: Node) -> Node:
    def fwd(x):
        return np.log(x)

    def bwd(node, g):
        return (g / node.inputs[0].value,)

    return _node("log", (a,), fwd, bwd)


def stop_gradient(a: Node) -> Node:
    """Freeze `a`: eval is unchanged, gradient contribution becomes zero."""
    return Node("stop_gradient", (a,), a.value, forward=None, backward=None,
                grad_enabled=False, needs_grad=False)
