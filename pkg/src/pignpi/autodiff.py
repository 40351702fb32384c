"""Array-valued reverse-mode automatic differentiation.

Every operation creates a :class:`Value` node carrying a float64 array, the
ids of its parents and a backward rule.  Node ids come from a global counter,
so creation order is a valid topological order of the tape.  Backward rules
are themselves written with ``Value`` operations, which means a backward pass
run with ``create_graph=True`` is recorded and can be differentiated again
(needed for training on input gradients).
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

from .activations import ActivationKind, activation_d1, activation_d2, activation_value
from .errors import ContractViolation

_ids = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable recording; ops return constant nodes."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def _grad_mode(enabled: bool):
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = enabled
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Value:
    """A node on the tape.

    ``forward`` recomputes ``data`` from the parents' data and is kept so the
    tape can be replayed; ``backward`` maps the output cotangent to one
    cotangent (or None) per parent.
    """

    __slots__ = ("data", "parents", "op", "id", "requires_grad", "forward", "backward", "name")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.parents: tuple[Value, ...] = ()
        self.op = "leaf"
        self.id = next(_ids)
        self.requires_grad = requires_grad
        self.forward: Callable | None = None
        self.backward: Callable | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> Value:
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> Value:
        return Value(self.data)

    def __repr__(self):
        return f"Value(op={self.op}, shape={self.shape}, requires_grad={self.requires_grad})"

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

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return vsum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)


def as_value(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


def _record(data, parents: Sequence[Value], op: str, forward: Callable, backward: Callable) -> Value:
    out = Value(data)
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.parents = tuple(parents)
        out.requires_grad = True
        out.forward = forward
        out.backward = backward
    return out


# ---------------------------------------------------------------- broadcasting

def _reduced_axes(shape, target):
    lead = len(shape) - len(target)
    axes = list(range(lead))
    for i, n in enumerate(target):
        if n == 1 and shape[lead + i] != 1:
            axes.append(lead + i)
    return tuple(axes)


def sum_to(x: Value, shape: tuple[int, ...]) -> Value:
    if x.shape == tuple(shape):
        return x

    def fwd(a):
        return np.sum(a, axis=_reduced_axes(a.shape, shape)).reshape(shape)

    src = x.shape
    return _record(fwd(x.data), [x], "sum_to", fwd, lambda g: [broadcast_to(g, src)])


def broadcast_to(x: Value, shape: tuple[int, ...]) -> Value:
    if x.shape == tuple(shape):
        return x
    src = x.shape

    def fwd(a):
        return np.broadcast_to(a, shape).copy()

    return _record(fwd(x.data), [x], "broadcast_to", fwd, lambda g: [sum_to(g, src)])


# ---------------------------------------------------------------- arithmetic

def add(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, [a, b], "add", np.add,
                   lambda g: [sum_to(g, sa), sum_to(g, sb)])


def sub(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    sa, sb = a.shape, b.shape
    return _record(a.data - b.data, [a, b], "sub", np.subtract,
                   lambda g: [sum_to(g, sa), sum_to(neg(g), sb)])


def neg(a) -> Value:
    a = as_value(a)
    return _record(-a.data, [a], "neg", np.negative, lambda g: [neg(g)])


def mul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    sa, sb = a.shape, b.shape
    return _record(a.data * b.data, [a, b], "mul", np.multiply,
                   lambda g: [sum_to(g * b, sa), sum_to(g * a, sb)])


def div(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    sa, sb = a.shape, b.shape

    def bwd(g):
        ga = g / b
        return [sum_to(ga, sa), sum_to(neg(ga * a / b), sb)]

    return _record(a.data / b.data, [a, b], "div", np.divide, bwd)


def power(a, p: float) -> Value:
    a = as_value(a)
    p = float(p)

    def fwd(x):
        return x**p

    return _record(fwd(a.data), [a], "pow", fwd, lambda g: [g * (p * power(a, p - 1.0))])


def square(a) -> Value:
    return power(a, 2.0)


def exp(a) -> Value:
    a = as_value(a)
    out = None

    def bwd(g):
        return [g * out]

    out = _record(np.exp(a.data), [a], "exp", np.exp, bwd)
    return out


def log(a) -> Value:
    a = as_value(a)
    return _record(np.log(a.data), [a], "log", np.log, lambda g: [g / a])


def sqrt(a) -> Value:
    a = as_value(a)
    out = None

    def bwd(g):
        return [g * 0.5 / out]

    out = _record(np.sqrt(a.data), [a], "sqrt", np.sqrt, bwd)
    return out


def vabs(a) -> Value:
    a = as_value(a)
    return _record(np.abs(a.data), [a], "abs", np.abs, lambda g: [g * np.sign(a.data)])


# ---------------------------------------------------------------- linear algebra / shape

def matmul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ContractViolation(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        from .errors import ConfigurationError

        raise ConfigurationError(f"dimension mismatch in matmul: {a.shape} @ {b.shape}")
    return _record(a.data @ b.data, [a, b], "matmul", np.matmul,
                   lambda g: [g @ transpose(b), transpose(a) @ g])


def transpose(a) -> Value:
    a = as_value(a)
    return _record(a.data.T.copy(), [a], "transpose", lambda x: x.T.copy(), lambda g: [transpose(g)])


def reshape(a, shape) -> Value:
    a = as_value(a)
    src = a.shape

    def fwd(x):
        return x.reshape(shape)

    return _record(fwd(a.data), [a], "reshape", fwd, lambda g: [reshape(g, src)])


def vsum(a, axis=None, keepdims=False) -> Value:
    a = as_value(a)
    src = a.shape

    def fwd(x):
        return np.sum(x, axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is not None and not keepdims:
            axes = (axis,) if np.isscalar(axis) else tuple(axis)
            axes = tuple(ax % len(src) for ax in axes)
            kept = tuple(1 if i in axes else n for i, n in enumerate(src))
            g = reshape(g, kept)
        elif axis is None and not keepdims:
            g = reshape(g, (1,) * len(src))
        return [broadcast_to(g, src)]

    return _record(fwd(a.data), [a], "sum", fwd, bwd)


def mean(a, axis=None) -> Value:
    a = as_value(a)
    n = a.size if axis is None else a.shape[axis]
    return vsum(a, axis=axis) / float(n)


def getitem(a, key) -> Value:
    """Basic (slice) indexing; advanced integer indexing goes through ``gather_rows``."""
    a = as_value(a)
    src = a.shape

    def fwd(x):
        return np.array(x[key])

    return _record(fwd(a.data), [a], "getitem", fwd, lambda g: [_embed(g, key, src)])


def _embed(g: Value, key, shape) -> Value:
    def fwd(x):
        out = np.zeros(shape)
        out[key] = x
        return out

    return _record(fwd(g.data), [g], "embed", fwd, lambda h: [getitem(h, key)])


def concat(values: Sequence, axis: int = -1) -> Value:
    vals = [as_value(v) for v in values]
    axis_ = axis % vals[0].ndim
    sizes = [v.shape[axis_] for v in vals]
    bounds = np.cumsum([0] + sizes)

    def fwd(*xs):
        return np.concatenate(xs, axis=axis_)

    def bwd(g):
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            key = [slice(None)] * g.ndim
            key[axis_] = slice(int(lo), int(hi))
            out.append(getitem(g, tuple(key)))
        return out

    return _record(fwd(*[v.data for v in vals]), vals, "concat", fwd, bwd)


def gather_rows(a, index: np.ndarray) -> Value:
    """``a[index]`` along axis 0; the adjoint is :func:`segment_sum`."""
    a = as_value(a)
    index = np.asarray(index, dtype=np.int64)
    n = a.shape[0]

    def fwd(x):
        return x[index]

    return _record(fwd(a.data), [a], "gather", fwd, lambda g: [segment_sum(g, index, n)])


def segment_sum(a, segment_ids: np.ndarray, num_segments: int) -> Value:
    """Sum rows of ``a`` into ``num_segments`` buckets."""
    a = as_value(a)
    segment_ids = np.asarray(segment_ids, dtype=np.int64)

    def fwd(x):
        out = np.zeros((num_segments,) + x.shape[1:])
        np.add.at(out, segment_ids, x)
        return out

    return _record(fwd(a.data), [a], "segment_sum", fwd, lambda g: [gather_rows(g, segment_ids)])


# ---------------------------------------------------------------- activations

def activation(a, kind: ActivationKind) -> Value:
    a = as_value(a)
    kind = ActivationKind(kind)

    def fwd(x):
        return activation_value(kind, x)

    return _record(fwd(a.data), [a], f"act[{kind.value}]", fwd,
                   lambda g: [g * activation_grad(a, kind)])


def activation_grad(a, kind: ActivationKind) -> Value:
    a = as_value(a)

    def fwd(x):
        return activation_d1(kind, x)

    return _record(fwd(a.data), [a], f"dact[{kind.value}]", fwd,
                   lambda g: [g * _activation_grad2(a, kind)])


def _activation_grad2(a: Value, kind: ActivationKind) -> Value:
    def fwd(x):
        return activation_d2(kind, x)

    def bwd(g):
        raise NotImplementedError("third-order derivatives of activations are not supported")

    return _record(fwd(a.data), [a], f"d2act[{kind.value}]", fwd, bwd)


# ---------------------------------------------------------------- reverse sweep

def _reachable(output: Value) -> list[Value]:
    seen: dict[int, Value] = {}
    stack = [output]
    while stack:
        node = stack.pop()
        if node.id in seen or not node.requires_grad:
            continue
        seen[node.id] = node
        stack.extend(node.parents)
    return sorted(seen.values(), key=lambda v: v.id, reverse=True)


def grad(output: Value, inputs: Iterable[Value], grad_output=None,
         create_graph: bool = False) -> list[Value]:
    """Cotangents of ``output`` with respect to ``inputs``.

    With ``create_graph`` the backward sweep is recorded, so the returned
    values can be differentiated again.  Inputs not reached get zeros.
    """
    inputs = list(inputs)
    if grad_output is None:
        if output.size != 1:
            raise ContractViolation(f"grad of non-scalar output with shape {output.shape} "
                                    "needs an explicit grad_output")
        grad_output = np.ones(output.shape)
    wanted = {v.id for v in inputs}
    found: dict[int, Value] = {}
    with _grad_mode(create_graph and _grad_enabled):
        grads: dict[int, Value] = {output.id: as_value(grad_output)}
        for node in _reachable(output):
            g = grads.pop(node.id, None)
            if g is None:
                continue
            if node.id in wanted:
                found[node.id] = g
            if node.backward is None:
                continue
            for parent, pg in zip(node.parents, node.backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = grads.get(parent.id)
                grads[parent.id] = pg if prev is None else prev + pg
    return [found.get(v.id, Value(np.zeros(v.shape))) for v in inputs]


def replay(output: Value) -> np.ndarray:
    """Recompute ``output`` from its leaves by walking the tape in creation order."""
    nodes = sorted(_reachable_all(output), key=lambda v: v.id)
    vals: dict[int, np.ndarray] = {}
    for node in nodes:
        if node.forward is None:
            vals[node.id] = node.data
        else:
            vals[node.id] = node.forward(*[vals[p.id] for p in node.parents])
    return vals[output.id]


def _reachable_all(output: Value) -> list[Value]:
    seen: dict[int, Value] = {}
    stack = [output]
    while stack:
        node = stack.pop()
        if node.id in seen:
            continue
        seen[node.id] = node
        stack.extend(node.parents)
    return list(seen.values())
