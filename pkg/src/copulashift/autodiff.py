"""Reverse-mode automatic differentiation on dense 2-D float64 arrays.

The graph is built eagerly: every operation allocates a :class:`Node`
holding its value, its parents, and a closure mapping the output gradient
to parent gradients. ``backward`` sweeps the reachable graph in decreasing
creation order, which is a valid reverse topological order because parents
always exist before their children, and accumulates in that fixed order so
repeated runs are bit-identical.

Subgradient conventions at kinks: relu'(0) = 0, abs'(0) = 0, sqrt'(0) = 0,
and clamp passes gradient only strictly inside the interval.

The elementwise helpers (``exp``, ``log``, ``sqrt``, ``tanh``, ``sin``,
``absolute``, ``clamp``) dispatch on their argument, so a formula written
with them works both on plain numpy values and inside the graph.
"""

from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

from .errors import ContractViolation, DomainError, ShapeError

_counter = itertools.count()


def tensor(values) -> np.ndarray:
    """Validate and normalize ``values`` into a read-only 2-D float64 array.

    Scalars become (1, 1), 1-D arrays become column vectors, 2-D arrays are
    kept as-is. Rank > 2 or non-finite entries are rejected.
    """
    arr = np.array(values, dtype=np.float64, order="C")
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise ContractViolation(f"tensor: rank must be <= 2, got shape {arr.shape}")
    if arr.size == 0:
        raise ContractViolation("tensor: empty arrays are not admitted")
    if not np.all(np.isfinite(arr)):
        raise DomainError("tensor: NaN/Inf entries are not admitted")
    arr.setflags(write=False)
    return arr


def _seal(arr: np.ndarray) -> np.ndarray:
    # internal results are freshly allocated; just freeze them
    arr.setflags(write=False)
    return arr


class Node:
    """A value in the computation graph plus its gradient accumulator."""

    __slots__ = ("value", "op", "parents", "index", "_backward", "_grad")

    # make `ndarray <op> Node` defer to our reflected operators instead of
    # broadcasting into an object array
    __array_ufunc__ = None

    def __init__(self, value: np.ndarray, op: str, parents: tuple = (),
                 backward: Callable | None = None):
        self.value = value
        self.op = op
        self.parents = parents
        self.index = next(_counter)
        self._backward = backward
        self._grad = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def grad(self) -> np.ndarray:
        """Gradient accumulated by the last ``backward`` call (zeros before)."""
        if self._grad is None:
            return np.zeros_like(self.value)
        return self._grad

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise ContractViolation(f"item: node has shape {self.value.shape}, not (1, 1)")
        return float(self.value[0, 0])

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape}, index={self.index})"

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)


def leaf(values) -> Node:
    """Create an input node (a differentiation target)."""
    return Node(tensor(values), "leaf")


def constant(values) -> Node:
    """Create a data node. Gradients still flow into it but it marks intent."""
    if isinstance(values, Node):
        return values
    return Node(tensor(values), "constant")


def _pair(op: str, a, b) -> tuple[Node, Node]:
    a, b = constant(a), constant(b)
    if a.shape != b.shape and a.shape != (1, 1) and b.shape != (1, 1):
        raise ShapeError(op, a.shape, b.shape)
    return a, b


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    # only scalar (1,1) broadcasting exists in this engine
    if g.shape == shape:
        return g
    return g.sum().reshape(1, 1)


# -- arithmetic --------------------------------------------------------------

def add(a, b) -> Node:
    a, b = _pair("add", a, b)
    out = _seal(a.value + b.value)
    return Node(out, "add", (a, b),
                lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Node:
    a, b = _pair("sub", a, b)
    out = _seal(a.value - b.value)
    return Node(out, "sub", (a, b),
                lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Node:
    # plain-number factors become a single-parent scale, skipping the wasted
    # gradient computation into a throwaway constant
    if isinstance(a, Node) and isinstance(b, (int, float, np.integer, np.floating)):
        s = float(b)
        if not np.isfinite(s):
            raise DomainError("mul: non-finite scalar factor")
        return Node(_seal(a.value * s), "scale", (a,), lambda g: (g * s,))
    if isinstance(b, Node) and isinstance(a, (int, float, np.integer, np.floating)):
        return mul(b, a)
    a, b = _pair("mul", a, b)
    out = _seal(a.value * b.value)
    return Node(out, "mul", (a, b),
                lambda g: (_unbroadcast(g * b.value, a.shape),
                           _unbroadcast(g * a.value, b.shape)))


def div(a, b) -> Node:
    a, b = _pair("div", a, b)
    if np.any(b.value == 0.0):
        raise DomainError("div: denominator contains zero")
    out = _seal(a.value / b.value)
    return Node(out, "div", (a, b),
                lambda g: (_unbroadcast(g / b.value, a.shape),
                           _unbroadcast(-g * a.value / (b.value * b.value), b.shape)))


def neg(a) -> Node:
    a = constant(a)
    return Node(_seal(-a.value), "neg", (a,), lambda g: (-g,))


def matmul(a, b) -> Node:
    a, b = constant(a), constant(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    out = _seal(a.value @ b.value)
    return Node(out, "matmul", (a, b),
                lambda g: (g @ b.value.T, a.value.T @ g))


def transpose(a) -> Node:
    a = constant(a)
    out = _seal(np.ascontiguousarray(a.value.T))
    return Node(out, "transpose", (a,), lambda g: (np.ascontiguousarray(g.T),))


def add_bias(x, b) -> Node:
    """Add a (1, m) bias row to every row of an (n, m) matrix."""
    x, b = constant(x), constant(b)
    if b.shape != (1, x.shape[1]):
        raise ShapeError("add_bias", x.shape, b.shape)
    out = _seal(x.value + b.value)
    return Node(out, "add_bias", (x, b),
                lambda g: (g, g.sum(axis=0, keepdims=True)))


# -- elementwise nonlinearities ----------------------------------------------

def _exp_node(a: Node) -> Node:
    out = _seal(np.exp(a.value))
    if not np.all(np.isfinite(out)):
        raise DomainError("exp: overflow to non-finite value")
    return Node(out, "exp", (a,), lambda g: (g * out,))


def _log_node(a: Node) -> Node:
    if np.any(a.value <= 0.0):
        raise DomainError("log: operand must be strictly positive")
    out = _seal(np.log(a.value))
    return Node(out, "log", (a,), lambda g: (g / a.value,))


def _sqrt_node(a: Node) -> Node:
    if np.any(a.value < 0.0):
        raise DomainError("sqrt: operand must be nonnegative")
    out = _seal(np.sqrt(a.value))

    def back(g):
        # subgradient 0 at the origin
        d = np.zeros_like(out)
        np.divide(0.5, out, out=d, where=out > 0.0)
        return (g * d,)

    return Node(out, "sqrt", (a,), back)


def _tanh_node(a: Node) -> Node:
    out = _seal(np.tanh(a.value))
    return Node(out, "tanh", (a,), lambda g: (g * (1.0 - out * out),))


def _sin_node(a: Node) -> Node:
    out = _seal(np.sin(a.value))
    return Node(out, "sin", (a,), lambda g: (g * np.cos(a.value),))


def _abs_node(a: Node) -> Node:
    out = _seal(np.abs(a.value))
    return Node(out, "abs", (a,), lambda g: (g * np.sign(a.value),))


def relu(a) -> Node:
    a = constant(a)
    out = _seal(np.maximum(a.value, 0.0))
    return Node(out, "relu", (a,), lambda g: (g * (a.value > 0.0),))


def _clamp_node(a: Node, lo, hi) -> Node:
    out = _seal(np.clip(a.value, lo, hi))
    inside = np.ones_like(a.value, dtype=bool)
    if lo is not None:
        inside &= a.value > lo
    if hi is not None:
        inside &= a.value < hi
    return Node(out, "clamp", (a,), lambda g: (g * inside,))


def exp(x):
    return _exp_node(x) if isinstance(x, Node) else np.exp(x)


def log(x):
    return _log_node(x) if isinstance(x, Node) else np.log(x)


def sqrt(x):
    return _sqrt_node(x) if isinstance(x, Node) else np.sqrt(x)


def tanh(x):
    return _tanh_node(x) if isinstance(x, Node) else np.tanh(x)


def sin(x):
    return _sin_node(x) if isinstance(x, Node) else np.sin(x)


def absolute(x):
    return _abs_node(x) if isinstance(x, Node) else np.abs(x)


def clamp(x, lo=None, hi=None):
    if lo is None and hi is None:
        raise ContractViolation("clamp: at least one bound is required")
    if lo is not None and hi is not None and lo > hi:
        raise ContractViolation(f"clamp: lo={lo} exceeds hi={hi}")
    if isinstance(x, Node):
        return _clamp_node(x, lo, hi)
    return np.clip(x, lo, hi)


# -- reductions and structure --------------------------------------------------

def total(a) -> Node:
    """Sum of all entries, as a (1, 1) node."""
    a = constant(a)
    out = _seal(np.array([[a.value.sum()]]))
    shape = a.shape
    return Node(out, "total", (a,),
                lambda g: (np.full(shape, g[0, 0]),))


def mean(a) -> Node:
    """Mean of all entries, as a (1, 1) node."""
    a = constant(a)
    out = _seal(np.array([[a.value.mean()]]))
    shape, size = a.shape, a.value.size
    return Node(out, "mean", (a,),
                lambda g: (np.full(shape, g[0, 0] / size),))


def sum_rows(a) -> Node:
    """Column sums: (n, m) -> (1, m)."""
    a = constant(a)
    out = _seal(a.value.sum(axis=0, keepdims=True))
    n = a.shape[0]
    return Node(out, "sum_rows", (a,),
                lambda g: (np.repeat(g, n, axis=0),))


def mean_rows(a) -> Node:
    """Column means: (n, m) -> (1, m)."""
    a = constant(a)
    out = _seal(a.value.mean(axis=0, keepdims=True))
    n = a.shape[0]
    return Node(out, "mean_rows", (a,),
                lambda g: (np.repeat(g / n, n, axis=0),))


def pairwise_diff(x, y) -> Node:
    """All pairwise differences of two column vectors: (n,1),(m,1) -> (n,m)."""
    x, y = constant(x), constant(y)
    if x.shape[1] != 1 or y.shape[1] != 1:
        raise ShapeError("pairwise_diff", x.shape, y.shape)
    out = _seal(x.value - y.value.T)
    return Node(out, "pairwise_diff", (x, y),
                lambda g: (g.sum(axis=1, keepdims=True),
                           -g.sum(axis=0).reshape(-1, 1)))


def take_rows(a, indices) -> Node:
    """Gather rows by index; duplicate indices scatter-add in the backward pass."""
    a = constant(a)
    idx = np.asarray(indices, dtype=np.intp).ravel()
    if idx.size == 0:
        raise ContractViolation("take_rows: empty index list")
    if idx.min() < 0 or idx.max() >= a.shape[0]:
        raise ContractViolation(
            f"take_rows: index out of range for {a.shape[0]} rows")
    out = _seal(a.value[idx, :])

    def back(g):
        z = np.zeros_like(a.value)
        np.add.at(z, idx, g)
        return (z,)

    return Node(out, "take_rows", (a,), back)


def take_cols(a, indices) -> Node:
    """Gather columns by index; duplicates scatter-add in the backward pass."""
    a = constant(a)
    idx = np.asarray(indices, dtype=np.intp).ravel()
    if idx.size == 0:
        raise ContractViolation("take_cols: empty index list")
    if idx.min() < 0 or idx.max() >= a.shape[1]:
        raise ContractViolation(
            f"take_cols: index out of range for {a.shape[1]} columns")
    out = _seal(a.value[:, idx])

    def back(g):
        z = np.zeros_like(a.value)
        np.add.at(z, (slice(None), idx), g)
        return (z,)

    return Node(out, "take_cols", (a,), back)


def softmax_rows(a) -> Node:
    """Row-wise softmax with the usual max-shift stabilization."""
    a = constant(a)
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = _seal(e / e.sum(axis=1, keepdims=True))

    def back(g):
        dot = (g * out).sum(axis=1, keepdims=True)
        return (out * (g - dot),)

    return Node(out, "softmax_rows", (a,), back)


# -- backward ------------------------------------------------------------------

def _reachable(out: Node) -> list[Node]:
    seen = {out}
    stack = [out]
    while stack:
        node = stack.pop()
        for p in node.parents:
            if p not in seen:
                seen.add(p)
                stack.append(p)
    return sorted(seen, key=lambda n: n.index, reverse=True)


def backward(out: Node) -> None:
    """Populate ``grad`` on every node reachable from the scalar ``out``.

    Gradients are reset first, so calling this twice on the same node gives
    bit-identical results. Accumulation never mutates an array in place, so
    gradient buffers may be shared between nodes and are safe to read.
    """
    if out.shape != (1, 1):
        raise ContractViolation(
            f"backward: output must be scalar (1, 1), got shape {out.shape}")
    order = _reachable(out)
    for node in order:
        node._grad = None
    out._grad = np.ones((1, 1))
    for node in order:
        if node._backward is None or node._grad is None:
            continue
        for parent, g in zip(node.parents, node._backward(node._grad)):
            parent._grad = g if parent._grad is None else parent._grad + g


def finite_difference_check(loss_builder: Callable[..., Node],
                            leaves: Sequence, step: float = 1e-6) -> float:
    """Compare engine gradients with central finite differences.

    Parameters
    ----------
    loss_builder : callable mapping fresh leaf Nodes (one per entry of
        ``leaves``) to a scalar Node. It is re-invoked for every perturbed
        evaluation, so it must be a pure function of its inputs.
    leaves : the base values to differentiate at.
    step : finite-difference step, must be positive.

    Returns
    -------
    float, the maximum over all leaf entries of
    ``|auto - central| / (|central| + 1e-12)``.
    """
    if not np.isfinite(step) or step <= 0.0:
        raise ContractViolation(f"finite_difference_check: step must be positive, got {step}")
    bases = [tensor(x) for x in leaves]
    if not bases:
        raise ContractViolation("finite_difference_check: at least one leaf is required")

    inputs = [leaf(b) for b in bases]
    out = loss_builder(*inputs)
    if not isinstance(out, Node) or out.shape != (1, 1):
        raise ContractViolation("finite_difference_check: loss_builder must return a scalar Node")
    backward(out)
    autos = [node.grad.copy() for node in inputs]

    def eval_at(k, pos, delta):
        probe = [b.copy() for b in bases]
        probe[k][pos] += delta
        val = loss_builder(*[leaf(p) for p in probe]).item()
        if not np.isfinite(val):
            raise DomainError(
                f"finite_difference_check: loss non-finite at leaf {k} entry {pos}")
        return val

    worst = 0.0
    for k, base in enumerate(bases):
        for pos in np.ndindex(base.shape):
            fp = eval_at(k, pos, step)
            fm = eval_at(k, pos, -step)
            central = (fp - fm) / (2.0 * step)
            rel = abs(autos[k][pos] - central) / (abs(central) + 1e-12)
            worst = max(worst, rel)
    return worst


def as_array(x) -> np.ndarray:
    """Value of a Node, or the input coerced to float64 ndarray."""
    if isinstance(x, Node):
        return x.value
    return np.asarray(x, dtype=np.float64)
