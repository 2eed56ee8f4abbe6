"""Tape-based reverse-mode differentiation over numpy arrays.

Every operation on a :class:`Var` appends one node to the active
:class:`Tape`; creation order is therefore a valid topological order and the
backward pass is a single reverse sweep.  Values are numpy arrays and the
primitives broadcast like numpy, so a whole replica batch is one node.

Random draws never enter the tape: noise is passed in as plain arrays and is
treated as a constant (pathwise gradients).
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tape",
    "Var",
    "NonFiniteError",
    "grad",
    "value_and_grad",
    "value",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "scale",
    "matmul",
    "tanh",
    "softplus",
    "exp",
    "log",
    "square",
    "sum",
    "mean",
    "logsumexp",
    "concat",
    "take",
    "broadcast_to",
    "reshape",
    "swapaxes",
]


class NonFiniteError(FloatingPointError):
    """Raised when a primitive produces NaN or inf."""

    def __init__(self, index: int, op: str):
        self.index = index
        self.op = op
        super().__init__(f"non-finite value produced at node {index} ({op})")


class Tape:
    """Records nodes in evaluation order.

    Use as a context manager; nested tapes are allowed and the innermost one
    receives new nodes.
    """

    _stack: list["Tape"] = []

    def __init__(self, check_finite: bool = True):
        self.nodes: list[Var] = []
        self.check_finite = check_finite

    def __enter__(self) -> "Tape":
        Tape._stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._stack.pop()

    @classmethod
    def current(cls) -> "Tape | None":
        return cls._stack[-1] if cls._stack else None

    def leaf(self, x) -> "Var":
        return Var(np.asarray(x, dtype=float), (), None, "leaf", tape=self)

    def backward(self, root: "Var") -> None:
        """Accumulate d(root)/d(node) into ``node.grad`` for every node."""
        if root.value.size != 1:
            raise ValueError("backward requires a scalar root")
        for node in self.nodes:
            node.grad = None
        root.grad = np.ones_like(root.value)
        for node in reversed(self.nodes[: root.index + 1]):
            if node.grad is None or node.backward_fn is None:
                continue
            grads = node.backward_fn(node.grad)
            for parent, g in zip(node.parents, grads):
                if not isinstance(parent, Var) or g is None:
                    continue
                g = _unbroadcast(g, parent.value.shape)
                parent.grad = g if parent.grad is None else parent.grad + g


class Var:
    __slots__ = ("value", "parents", "backward_fn", "op", "grad", "index", "__weakref__")

    __array_priority__ = 100.0

    def __init__(self, value, parents, backward_fn, op, tape: Tape | None = None):
        tape = tape if tape is not None else Tape.current()
        if tape is None:
            raise RuntimeError("Var created outside of a Tape context")
        self.value = value
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.grad = None
        self.index = len(tape.nodes)
        tape.nodes.append(self)
        if tape.check_finite and op != "leaf" and not np.all(np.isfinite(value)):
            raise NonFiniteError(self.index, op)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def gradient(self) -> np.ndarray:
        return np.zeros_like(self.value) if self.grad is None else self.grad

    def __repr__(self):
        return f"Var({self.op}, shape={self.value.shape})"

    __add__ = lambda a, b: add(a, b)
    __radd__ = lambda a, b: add(b, a)
    __sub__ = lambda a, b: sub(a, b)
    __rsub__ = lambda a, b: sub(b, a)
    __mul__ = lambda a, b: mul(a, b)
    __rmul__ = lambda a, b: mul(b, a)
    __truediv__ = lambda a, b: div(a, b)
    __rtruediv__ = lambda a, b: div(b, a)
    __neg__ = lambda a: neg(a)
    __matmul__ = lambda a, b: matmul(a, b)
    __rmatmul__ = lambda a, b: matmul(b, a)

    def __getitem__(self, idx):
        return take(self, idx)


def value(x):
    """Underlying array of a Var, or the argument itself."""
    return x.value if isinstance(x, Var) else x


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _any_var(*xs) -> bool:
    return any(isinstance(x, Var) for x in xs)


def _node(val, parents, backward_fn, op):
    return Var(np.asarray(val, dtype=float), parents, backward_fn, op)


# ---------------------------------------------------------------- primitives


def add(a, b):
    if not _any_var(a, b):
        return value(a) + value(b)
    return _node(value(a) + value(b), (a, b), lambda g: (g, g), "add")


def sub(a, b):
    if not _any_var(a, b):
        return value(a) - value(b)
    return _node(value(a) - value(b), (a, b), lambda g: (g, -g), "sub")


def mul(a, b):
    av, bv = value(a), value(b)
    if not _any_var(a, b):
        return av * bv
    return _node(av * bv, (a, b), lambda g: (g * bv, g * av), "mul")


def div(a, b):
    av, bv = value(a), value(b)
    if not _any_var(a, b):
        return av / bv
    out = av / bv
    return _node(out, (a, b), lambda g: (g / bv, -g * out / bv), "div")


def neg(a):
    if not isinstance(a, Var):
        return -a
    return _node(-a.value, (a,), lambda g: (-g,), "neg")


def scale(a, c: float):
    """Multiply by a constant scalar."""
    if not isinstance(a, Var):
        return a * c
    return _node(a.value * c, (a,), lambda g: (g * c,), "scale")


def matmul(a, b):
    """``np.matmul`` semantics, including batch dimensions and 1-d operands."""
    av, bv = value(a), value(b)
    if not _any_var(a, b):
        return av @ bv

    def back(g):
        a2 = av[None, :] if av.ndim == 1 else av
        b2 = bv[:, None] if bv.ndim == 1 else bv
        g2 = g
        if av.ndim == 1:
            g2 = np.expand_dims(g2, -2)
        if bv.ndim == 1:
            g2 = np.expand_dims(g2, -1)
        ga = g2 @ np.swapaxes(b2, -1, -2)
        gb = np.swapaxes(a2, -1, -2) @ g2
        if av.ndim == 1:
            ga = ga.reshape(ga.shape[:-2] + ga.shape[-1:])
            ga = _unbroadcast(ga, av.shape)
        if bv.ndim == 1:
            gb = gb.reshape(gb.shape[:-1])
            gb = _unbroadcast(gb, bv.shape)
        return ga, gb

    return _node(av @ bv, (a, b), back, "matmul")


def tanh(a):
    out = np.tanh(value(a))
    if not isinstance(a, Var):
        return out
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def _softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def softplus(a):
    x = value(a)
    out = _softplus(x)
    if not isinstance(a, Var):
        return out
    # d/dx softplus = sigmoid(x), written to avoid overflow
    sig = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return _node(out, (a,), lambda g: (g * sig,), "softplus")


def exp(a):
    out = np.exp(value(a))
    if not isinstance(a, Var):
        return out
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    x = value(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x)
    if not isinstance(a, Var):
        return out
    return _node(out, (a,), lambda g: (g / x,), "log")


def square(a):
    x = value(a)
    if not isinstance(a, Var):
        return x * x
    return _node(x * x, (a,), lambda g: (2.0 * g * x,), "square")


def sum(a, axis=None):  # noqa: A001 - mirrors numpy naming
    x = value(a)
    out = np.sum(x, axis=axis)
    if not isinstance(a, Var):
        return out

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape),)

    return _node(out, (a,), back, "sum")


def mean(a, axis=None):
    x = value(a)
    n = x.size if axis is None else np.prod([x.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum(a, axis=axis), 1.0 / n)


def logsumexp(a, axis=-1):
    x = value(a)
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    s = np.sum(e, axis=axis, keepdims=True)
    out = np.squeeze(m + np.log(s), axis=axis)
    if not isinstance(a, Var):
        return out
    soft = e / s
    return _node(out, (a,), lambda g: (np.expand_dims(g, axis) * soft,), "logsumexp")


def concat(xs, axis=-1):
    vals = [value(x) for x in xs]
    out = np.concatenate(vals, axis=axis)
    if not _any_var(*xs):
        return out
    bounds = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(out, tuple(xs), back, "concat")


def take(a, idx):
    """Basic or advanced indexing; gradients scatter-add back."""
    x = value(a)
    out = x[idx]
    if not isinstance(a, Var):
        return out
    parts = idx if isinstance(idx, tuple) else (idx,)
    basic = all(isinstance(p, (slice, int, type(Ellipsis))) for p in parts)

    def back(g):
        full = np.zeros_like(x)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _node(out, (a,), back, "take")


def broadcast_to(a, shape):
    x = value(a)
    out = np.broadcast_to(x, shape)
    if not isinstance(a, Var):
        return out
    return _node(np.array(out), (a,), lambda g: (g,), "broadcast")


def reshape(a, shape):
    x = value(a)
    if not isinstance(a, Var):
        return x.reshape(shape)
    return _node(x.reshape(shape), (a,), lambda g: (g.reshape(x.shape),), "reshape")


def swapaxes(a, i, j):
    x = value(a)
    if not isinstance(a, Var):
        return np.swapaxes(x, i, j)
    return _node(np.swapaxes(x, i, j), (a,), lambda g: (np.swapaxes(g, i, j),), "swapaxes")


# ---------------------------------------------------------------- drivers


def value_and_grad(f, *args, check_finite: bool = True):
    """Evaluate scalar ``f(*args)`` and its gradient w.r.t. every argument."""
    with Tape(check_finite=check_finite) as tape:
        leaves = [tape.leaf(a) for a in args]
        out = f(*leaves)
        if not isinstance(out, Var):
            val = float(np.asarray(out))
            return val, tuple(np.zeros_like(leaf.value) for leaf in leaves)
        if not np.isfinite(out.value).all():
            raise NonFiniteError(out.index, out.op)
        tape.backward(out)
    grads = tuple(leaf.gradient() for leaf in leaves)
    return float(out.value), grads


def grad(f, x):
    """Gradient of scalar ``f`` at ``x`` (same shape as ``x``)."""
    return value_and_grad(f, x)[1][0]
