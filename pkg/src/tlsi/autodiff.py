"""Dense float64 arrays with tape-style reverse-mode differentiation.

Every model equation is composed from the operations below. A graph is built
fresh for each batch; calling :func:`backward` on a scalar node walks the graph
once in reverse topological order and accumulates gradients into the leaves
(normally the ``Node`` owned by a :class:`Parameter`).
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

DTYPE = np.float64

# names of ops whose backward rule is sign-flipped (fault injection for gradcheck)
_FLIPPED: set[str] = set()


class ShapeError(ValueError):
    pass


class _Scatter:
    """Gradient that only touches ``key`` of the parent array."""

    __slots__ = ("key", "values", "unique")

    def __init__(self, key, values, unique=True):
        self.key = key
        self.values = values
        self.unique = unique


class Node:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad", "op")

    def __init__(self, value, parents=(), backward_fn=None, requires_grad=False, op="const"):
        self.value = value
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def __repr__(self):
        return f"Node(op={self.op}, shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter:
    """Named trainable (or bookkeeping) array with a persistent gradient."""

    def __init__(self, name: str, value, trainable: bool = True):
        value = np.array(value, dtype=DTYPE)
        if value.ndim == 0:
            value = value.reshape(1)
        self.name = name
        self.trainable = trainable
        self.node = Node(value, requires_grad=trainable, op=f"param:{name}")
        self.node.zero_grad()
        # set when backward deposits a gradient; cleared by zero_grad
        self.touched = False

    @property
    def value(self) -> np.ndarray:
        return self.node.value

    @value.setter
    def value(self, new):
        new = np.asarray(new, dtype=DTYPE)
        if new.shape != self.node.value.shape:
            raise ShapeError(f"parameter {self.name!r} has shape {self.node.value.shape}, got {new.shape}")
        self.node.value = new

    @property
    def grad(self) -> np.ndarray:
        return self.node.grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.node.value.shape

    def zero_grad(self):
        self.node.grad = np.zeros_like(self.node.value)
        self.touched = False

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, trainable={self.trainable})"


def as_node(x) -> Node:
    if isinstance(x, Node):
        return x
    if isinstance(x, Parameter):
        return x.node
    return Node(np.asarray(x, dtype=DTYPE))


def const(x) -> Node:
    return Node(np.array(x, dtype=DTYPE))


def _make(value, parents: Sequence[Node], backward_fn: Callable, op: str) -> Node:
    if any(p.requires_grad for p in parents):
        if op in _FLIPPED:
            inner = backward_fn

            def backward_fn(g, _inner=inner):
                return tuple(_negate(r) for r in _inner(g))

        return Node(value, tuple(parents), backward_fn, True, op)
    return Node(value, op=op)


def _negate(r):
    if r is None:
        return None
    if isinstance(r, _Scatter):
        return _Scatter(r.key, -r.values, r.unique)
    return -r


@contextlib.contextmanager
def flipped_backward(*ops: str):
    """Negate the backward rule of the named ops while the context is active."""
    before = set(_FLIPPED)
    _FLIPPED.update(ops)
    try:
        yield
    finally:
        _FLIPPED.clear()
        _FLIPPED.update(before)


# ---------------------------------------------------------------------------
# binary pointwise


def _check_broadcast(op, a, b):
    sa, sb = a.shape, b.shape
    if sa == sb:
        return sa
    try:
        out = np.broadcast_shapes(sa, sb)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {sa} and {sb}") from None
    # one operand must already have the output shape (bias / mask broadcasting only)
    if out != sa and out != sb:
        raise ShapeError(f"{op}: incompatible shapes {sa} and {sb}")
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape

    def bw(g):
        return (_unbroadcast(g, sa) if a.requires_grad else None,
                _unbroadcast(g, sb) if b.requires_grad else None)

    return _make(a.value + b.value, (a, b), bw, "add")


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape

    def bw(g):
        return (_unbroadcast(g, sa) if a.requires_grad else None,
                _unbroadcast(-g, sb) if b.requires_grad else None)

    return _make(a.value - b.value, (a, b), bw, "sub")


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _check_broadcast("mul", a, b)
    av, bv = a.value, b.value

    def bw(g):
        return (_unbroadcast(g * bv, av.shape) if a.requires_grad else None,
                _unbroadcast(g * av, bv.shape) if b.requires_grad else None)

    return _make(av * bv, (a, b), bw, "mul")


def div(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _check_broadcast("div", a, b)
    av, bv = a.value, b.value
    out = av / bv

    def bw(g):
        return (_unbroadcast(g / bv, av.shape) if a.requires_grad else None,
                _unbroadcast(-g * out / bv, bv.shape) if b.requires_grad else None)

    return _make(out, (a, b), bw, "div")


# ---------------------------------------------------------------------------
# unary pointwise


def _sigmoid(x):
    return expit(x)


def sigmoid(a) -> Node:
    a = as_node(a)
    s = _sigmoid(a.value)
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def tanh(a) -> Node:
    a = as_node(a)
    t = np.tanh(a.value)
    return _make(t, (a,), lambda g: (g * (1.0 - t * t),), "tanh")


def exp(a) -> Node:
    a = as_node(a)
    e = np.exp(a.value)
    return _make(e, (a,), lambda g: (g * e,), "exp")


def log(a) -> Node:
    a = as_node(a)
    v = a.value
    return _make(np.log(v), (a,), lambda g: (g / v,), "log")


def sqrt(a) -> Node:
    a = as_node(a)
    r = np.sqrt(a.value)
    return _make(r, (a,), lambda g: (0.5 * g / r,), "sqrt")


def abs_(a) -> Node:
    a = as_node(a)
    # np.sign(0) == 0 gives the zero subgradient at the kink
    sgn = np.sign(a.value)
    return _make(np.abs(a.value), (a,), lambda g: (g * sgn,), "abs")


def neg(a) -> Node:
    a = as_node(a)
    return _make(-a.value, (a,), lambda g: (-g,), "neg")


def clip(a, lo: float, hi: float) -> Node:
    a = as_node(a)
    inside = (a.value >= lo) & (a.value <= hi)
    return _make(np.clip(a.value, lo, hi), (a,), lambda g: (g * inside,), "clip")


_UNARY = {"sigmoid": sigmoid, "tanh": tanh, "exp": exp, "abs": abs_, "log": log,
          "sqrt": sqrt, "neg": neg}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def pointwise(op: str, a, b=None) -> Node:
    if op in _UNARY:
        if b is not None:
            raise ValueError(f"{op} is unary")
        return _UNARY[op](a)
    if op in _BINARY:
        if b is None:
            raise ValueError(f"{op} needs two operands")
        return _BINARY[op](a, b)
    raise ValueError(f"unknown pointwise op {op!r}")


# ---------------------------------------------------------------------------
# linear algebra and shape plumbing


def _swap(x):
    return np.swapaxes(x, -1, -2)


def matmul(a, b) -> Node:
    """Matrix product with numpy batching semantics over leading axes."""
    a, b = as_node(a), as_node(b)
    av, bv = a.value, b.value
    if av.ndim < 2 or bv.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {av.shape} and {bv.shape}")
    if av.shape[-1] != bv.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions disagree for {av.shape} and {bv.shape}")
    try:
        out = np.matmul(av, bv)
    except ValueError:
        raise ShapeError(f"matmul: batch dimensions disagree for {av.shape} and {bv.shape}") from None

    def bw(g):
        ga = _unbroadcast(np.matmul(g, _swap(bv)), av.shape) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if bv.ndim == 2 and av.ndim > 2:
                # fold the batch axes into one product instead of summing B products
                gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.matmul(_swap(av), g), bv.shape)
        return ga, gb

    return _make(out, (a, b), bw, "matmul")


def linear(x, w, b=None) -> Node:
    """``x @ w.T (+ b)`` for a weight stored as [out, in]."""
    y = matmul(x, transpose(w))
    return y if b is None else add(y, b)


def transpose(a) -> Node:
    a = as_node(a)
    if a.value.ndim < 2:
        raise ShapeError(f"transpose needs >=2-d input, got {a.shape}")
    return _make(_swap(a.value), (a,), lambda g: (_swap(g),), "transpose")


def permute(a, axes) -> Node:
    a = as_node(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(np.ascontiguousarray(a.value.transpose(axes)), (a,),
                 lambda g: (g.transpose(inverse),), "permute")


def reshape(a, shape) -> Node:
    a = as_node(a)
    old = a.shape
    return _make(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def sum_(a, axis=None, keepdims=False) -> Node:
    a = as_node(a)
    shape = a.shape
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(out, dtype=DTYPE), (a,), bw, "sum")


def mean(a, axis=None, keepdims=False) -> Node:
    a = as_node(a)
    n = a.value.size if axis is None else a.shape[axis]
    return mul(sum_(a, axis, keepdims), 1.0 / n)


def index(a, key) -> Node:
    """Basic (slice/integer) indexing; gradient is scattered back into ``key``."""
    a = as_node(a)
    out = a.value[key]
    return _make(out, (a,), lambda g: (_Scatter(key, g),), "index")


def take_slice(a, axis: int, start: int, stop: int) -> Node:
    a = as_node(a)
    key = [slice(None)] * a.value.ndim
    key[axis] = slice(start, stop)
    return index(a, tuple(key))


def concat(parts: Sequence, axis: int = -1) -> Node:
    parts = [as_node(p) for p in parts]
    if not parts:
        raise ShapeError("concat of nothing")
    nd = parts[0].value.ndim
    ax = axis % nd
    for p in parts[1:]:
        if p.value.ndim != nd or any(p.shape[i] != parts[0].shape[i] for i in range(nd) if i != ax):
            raise ShapeError(f"concat: shapes {[q.shape for q in parts]} disagree off axis {axis}")
    if len(parts) == 1:
        return parts[0]
    bounds = np.cumsum([0] + [p.shape[ax] for p in parts])
    out = np.concatenate([p.value for p in parts], axis=ax)

    def bw(g):
        res = []
        for i, p in enumerate(parts):
            if p.requires_grad:
                key = [slice(None)] * nd
                key[ax] = slice(bounds[i], bounds[i + 1])
                res.append(g[tuple(key)])
            else:
                res.append(None)
        return tuple(res)

    return _make(out, parts, bw, "concat")


def stack(parts: Sequence, axis: int = 0) -> Node:
    parts = [as_node(p) for p in parts]
    if not parts:
        raise ShapeError("stack of nothing")
    if any(p.shape != parts[0].shape for p in parts):
        raise ShapeError(f"stack: shapes {[p.shape for p in parts]} disagree")
    out = np.stack([p.value for p in parts], axis=axis)

    def bw(g):
        return tuple(np.take(g, i, axis=axis) if p.requires_grad else None for i, p in enumerate(parts))

    return _make(out, parts, bw, "stack")


def softmax(scores, mask=None) -> Node:
    """Softmax over the last axis; ``mask`` (0/1, same shape) excludes entries."""
    s = as_node(scores)
    v = s.value
    if v.ndim == 0 or v.shape[-1] == 0:
        raise ShapeError("softmax of an empty vector")
    if mask is None:
        z = v - v.max(axis=-1, keepdims=True)
        e = np.exp(z)
    else:
        m = np.asarray(mask, dtype=bool)
        if m.shape != v.shape:
            raise ShapeError(f"softmax: mask shape {m.shape} != scores shape {v.shape}")
        if not m.any(axis=-1).all():
            raise ShapeError("softmax: a row has no unmasked entries")
        top = np.where(m, v, -np.inf).max(axis=-1, keepdims=True)
        e = np.where(m, np.exp(np.where(m, v - top, 0.0)), 0.0)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (s,), bw, "softmax")


def gather_embedding(table, index) -> Node:
    """Rows ``table[index]``; the gradient is added only to those rows."""
    t = as_node(table)
    if t.value.ndim != 2:
        raise ShapeError(f"embedding table must be 2-d, got {t.shape}")
    idx = np.asarray(index)
    if not np.issubdtype(idx.dtype, np.integer):
        raise TypeError("embedding index must be integer")
    n = t.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"embedding index out of range for table with {n} rows")
    out = t.value[idx]
    return _make(out, (t,), lambda g: (_Scatter(idx, g, unique=False),), "gather")


# ---------------------------------------------------------------------------
# reverse pass


def _toposort(root: Node) -> list[Node]:
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, done = stack_.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def _accumulate(node: Node, g, owned: set):
    # A first dense gradient is stored by reference (backward rules may hand the
    # same array to several parents); it is only mutated in place once this
    # pass has made a private copy, tracked in ``owned``.
    key = id(node)
    if isinstance(g, _Scatter):
        if node.grad is None:
            node.grad = np.zeros_like(node.value)
            owned.add(key)
        elif key not in owned:
            node.grad = node.grad.copy()
            owned.add(key)
        if g.unique:
            node.grad[g.key] += g.values
        else:
            np.add.at(node.grad, g.key, g.values)
        return
    if node.grad is None:
        node.grad = g
    elif key in owned:
        node.grad += g
    else:
        node.grad = node.grad + g
        owned.add(key)


def backward(loss: Node, params: Iterable[Parameter] = ()) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf gradient.

    ``params`` only serves bookkeeping: each listed parameter that received a
    gradient is marked ``touched``.
    """
    if loss.value.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _toposort(loss)
    for node in order:
        if node.parents:
            node.grad = None
    owned: set = set()
    _accumulate(loss, np.ones_like(loss.value), owned)
    reached = set()
    for node in reversed(order):
        if not node.parents:
            reached.add(id(node))
            continue
        if node.grad is None:
            continue
        grads = node.backward_fn(node.grad)
        for p, g in zip(node.parents, grads):
            if g is not None and p.requires_grad:
                _accumulate(p, g, owned)
        node.grad = None
    for prm in params:
        if id(prm.node) in reached:
            prm.touched = True
