"""Reverse-mode automatic differentiation on an explicit tape.

A :class:`Tape` records every primitive operation eagerly: each node caches
its value (a float64 scalar, vector, or matrix), the indices of its parent
nodes, and a vector-Jacobian closure. Nodes are appended in execution
order, so the node list is already topologically sorted and
:func:`backward` is a single reverse sweep with additive adjoint
accumulation across fan-out. Accumulation order is fixed by node index,
which makes repeated backward calls bitwise identical.

The op set is exactly what the unrolled recursions and their losses need:
add, sub, matmul (matrix/matrix, matrix/vector and vector/vector inner
product), transpose, the elementwise maps tanh/relu/cube, division and
multiplication by a tape scalar, multiplication by a Python constant,
outer product, trace, and squared Frobenius norm.

Values on the tape are never mutated; leaf values are copied at record
time so callers may freely reuse their parameter buffers afterwards.
"""

from __future__ import annotations

import numpy as np

from .errors import CrossTapeError, DimensionError, TapeLimitError

_DEFAULT_LIMIT = 10_000_000


class _Node:
    __slots__ = ("value", "parents", "vjp", "grad")

    def __init__(self, value, parents, vjp, grad):
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.grad = grad  # True if any differentiable leaf feeds this node


class TapeValue:
    """Handle to one tape node; ``value`` is the cached float64 array."""

    __slots__ = ("tape", "index", "value")

    def __init__(self, tape, index, value):
        self.tape = tape
        self.index = index
        self.value = value

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"TapeValue(index={self.index}, shape={self.value.shape})"


class Tape:
    """Append-only record of one differentiable computation."""

    __slots__ = ("nodes", "limit")

    def __init__(self, limit: int = _DEFAULT_LIMIT):
        self.nodes: list[_Node] = []
        self.limit = limit

    def _emit(self, value, parents, vjp, grad) -> TapeValue:
        if len(self.nodes) >= self.limit:
            raise TapeLimitError(f"tape exceeded its limit of {self.limit} nodes")
        self.nodes.append(_Node(value, parents, vjp, grad))
        return TapeValue(self, len(self.nodes) - 1, value)

    def leaf(self, value) -> TapeValue:
        """Differentiable leaf (parameter or input); the value is copied."""
        return self._emit(np.array(value, dtype=float), (), None, True)

    def constant(self, value) -> TapeValue:
        """Non-differentiable leaf; gradients never propagate into it."""
        return self._emit(np.asarray(value, dtype=float), (), None, False)


def _check(a: TapeValue, b: TapeValue) -> Tape:
    if a.tape is not b.tape:
        raise CrossTapeError("operands were recorded on different tapes")
    return a.tape


def add(a: TapeValue, b: TapeValue) -> TapeValue:
    tape = _check(a, b)
    if a.value.shape != b.value.shape:
        raise DimensionError(f"add: shapes {a.value.shape} vs {b.value.shape}")
    na, nb = tape.nodes[a.index].grad, tape.nodes[b.index].grad

    def vjp(g):
        return (g if na else None, g if nb else None)

    return tape._emit(a.value + b.value, (a.index, b.index), vjp, na or nb)


def sub(a: TapeValue, b: TapeValue) -> TapeValue:
    tape = _check(a, b)
    if a.value.shape != b.value.shape:
        raise DimensionError(f"sub: shapes {a.value.shape} vs {b.value.shape}")
    na, nb = tape.nodes[a.index].grad, tape.nodes[b.index].grad

    def vjp(g):
        return (g if na else None, -g if nb else None)

    return tape._emit(a.value - b.value, (a.index, b.index), vjp, na or nb)


def matmul(a: TapeValue, b: TapeValue) -> TapeValue:
    """Matrix product following numpy 1-D/2-D semantics.

    matrix @ matrix -> matrix, matrix @ vector -> vector, and
    vector @ vector -> scalar inner product.
    """
    tape = _check(a, b)
    av, bv = a.value, b.value
    if av.ndim == 0 or bv.ndim == 0:
        raise DimensionError("matmul does not accept scalars")
    if av.shape[-1] != bv.shape[0]:
        raise DimensionError(f"matmul: shapes {av.shape} vs {bv.shape}")
    na, nb = tape.nodes[a.index].grad, tape.nodes[b.index].grad

    if av.ndim == 2 and bv.ndim == 2:
        def vjp(g):
            return (g @ bv.T if na else None, av.T @ g if nb else None)
    elif av.ndim == 2 and bv.ndim == 1:
        def vjp(g):
            return (g[:, None] * bv if na else None, av.T @ g if nb else None)
    elif av.ndim == 1 and bv.ndim == 2:
        def vjp(g):
            return (bv @ g if na else None, av[:, None] * g if nb else None)
    else:  # inner product
        def vjp(g):
            return (g * bv if na else None, g * av if nb else None)

    return tape._emit(av @ bv, (a.index, b.index), vjp, na or nb)


def transpose(a: TapeValue) -> TapeValue:
    tape = a.tape
    if a.value.ndim != 2:
        raise DimensionError("transpose expects a matrix")
    n = tape.nodes[a.index].grad

    def vjp(g):
        return (g.T,)

    return tape._emit(a.value.T, (a.index,), vjp if n else None, n)


def tanh(a: TapeValue) -> TapeValue:
    tape = a.tape
    out = np.tanh(a.value)
    n = tape.nodes[a.index].grad

    def vjp(g):
        return (g * (1.0 - out * out),)

    return tape._emit(out, (a.index,), vjp if n else None, n)


def relu(a: TapeValue) -> TapeValue:
    """Rectifier; the subgradient at exactly zero is taken as zero."""
    tape = a.tape
    av = a.value
    n = tape.nodes[a.index].grad

    def vjp(g):
        return (np.where(av > 0, g, 0.0),)

    return tape._emit(np.maximum(av, 0.0), (a.index,), vjp if n else None, n)


def cube(a: TapeValue) -> TapeValue:
    """Elementwise s^3; first-class so the classical EASI nonlinearity is
    differentiable without an MLP stand-in."""
    tape = a.tape
    av = a.value
    n = tape.nodes[a.index].grad

    def vjp(g):
        return (g * (3.0 * av * av),)

    return tape._emit(av**3, (a.index,), vjp if n else None, n)


def div_scalar(a: TapeValue, s: TapeValue) -> TapeValue:
    """Divide an array by a tape scalar."""
    tape = _check(a, s)
    if s.value.ndim != 0:
        raise DimensionError("div_scalar needs a scalar divisor")
    av, sv = a.value, s.value
    out = av / sv
    na, ns = tape.nodes[a.index].grad, tape.nodes[s.index].grad

    def vjp(g):
        return (g / sv if na else None,
                -(g * out).sum() / sv if ns else None)

    return tape._emit(out, (a.index, s.index), vjp, na or ns)


def mul_scalar(s: TapeValue, a: TapeValue) -> TapeValue:
    """Multiply an array by a tape scalar."""
    tape = _check(s, a)
    if s.value.ndim != 0:
        raise DimensionError("mul_scalar needs a scalar multiplier")
    av, sv = a.value, s.value
    na, ns = tape.nodes[a.index].grad, tape.nodes[s.index].grad

    def vjp(g):
        return ((g * av).sum() if ns else None, sv * g if na else None)

    return tape._emit(sv * av, (s.index, a.index), vjp, na or ns)


def scale(a: TapeValue, c: float) -> TapeValue:
    """Multiply by a non-differentiable Python constant."""
    tape = a.tape
    n = tape.nodes[a.index].grad

    def vjp(g):
        return (c * g,)

    return tape._emit(c * a.value, (a.index,), vjp if n else None, n)


def outer(u: TapeValue, v: TapeValue) -> TapeValue:
    tape = _check(u, v)
    uv, vv = u.value, v.value
    if uv.ndim != 1 or vv.ndim != 1:
        raise DimensionError("outer expects two vectors")
    nu, nv = tape.nodes[u.index].grad, tape.nodes[v.index].grad

    def vjp(g):
        return (g @ vv if nu else None, g.T @ uv if nv else None)

    return tape._emit(uv[:, None] * vv, (u.index, v.index), vjp, nu or nv)


def trace(a: TapeValue) -> TapeValue:
    tape = a.tape
    av = a.value
    if av.ndim != 2 or av.shape[0] != av.shape[1]:
        raise DimensionError(f"trace expects a square matrix, got {av.shape}")
    n = tape.nodes[a.index].grad
    eye = np.eye(av.shape[0])

    def vjp(g):
        return (g * eye,)

    return tape._emit(av.trace(), (a.index,), vjp if n else None, n)


def sqnorm(a: TapeValue) -> TapeValue:
    """Sum of squared entries (squared Frobenius/Euclidean norm)."""
    tape = a.tape
    av = a.value
    n = tape.nodes[a.index].grad

    def vjp(g):
        return (2.0 * g * av,)

    return tape._emit((av * av).sum(), (a.index,), vjp if n else None, n)


class Gradients:
    """Adjoints keyed by node index; absent entries read as zeros."""

    __slots__ = ("tape", "_adjoints")

    def __init__(self, tape: Tape, adjoints: list):
        self.tape = tape
        self._adjoints = adjoints

    def get(self, value: TapeValue) -> np.ndarray:
        if value.tape is not self.tape:
            raise CrossTapeError("value belongs to a different tape")
        adj = self._adjoints[value.index] if value.index < len(self._adjoints) else None
        if adj is None:
            return np.zeros_like(value.value)
        return np.asarray(adj, dtype=float)


def backward(tape: Tape, root: TapeValue) -> Gradients:
    """Reverse sweep from a scalar root; returns adjoints for every node.

    Leaves created with :meth:`Tape.leaf` carry total derivatives;
    contributions across fan-out accumulate additively in fixed
    (descending node index) order.
    """
    if root.tape is not tape:
        raise CrossTapeError("root belongs to a different tape")
    if root.value.ndim != 0:
        raise DimensionError(f"backward needs a scalar root, got shape {root.value.shape}")
    nodes = tape.nodes
    adjoints: list = [None] * (root.index + 1)
    adjoints[root.index] = np.float64(1.0)
    for i in range(root.index, -1, -1):
        g = adjoints[i]
        if g is None:
            continue
        node = nodes[i]
        if node.vjp is None or not node.grad:
            continue
        for pidx, pg in zip(node.parents, node.vjp(g)):
            if pg is None:
                continue
            if adjoints[pidx] is None:
                adjoints[pidx] = pg
            else:
                adjoints[pidx] = adjoints[pidx] + pg
    return Gradients(tape, adjoints)
