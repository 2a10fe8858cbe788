"""Reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tape` records every primitive applied to :class:`Tensor` values.
Calling :func:`backward` walks the tape once in reverse and accumulates
vector-Jacobian products into a gradient map keyed by node id.

Constants (plain numbers, numpy arrays, tensors created with
:meth:`Tape.const`) are never recorded and receive no gradient.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class NonFiniteError(FloatingPointError):
    """Raised when a primitive produces NaN or Inf."""


@dataclass
class Node:
    inputs: tuple          # node ids (None for constants)
    value: np.ndarray
    vjp: Callable | None   # g -> tuple of input grads (same order as inputs)
    op: str = ""


@dataclass
class Tape:
    nodes: list[Node] = field(default_factory=list)
    check_finite: bool = True
    _watched: dict = field(default_factory=dict)

    def var(self, value, name: str = "var") -> "Tensor":
        """Register a differentiable leaf."""
        value = np.array(value, dtype=np.float64)
        self._check(value, name)
        self.nodes.append(Node((), value, None, name))
        return Tensor(value, self, len(self.nodes) - 1)

    def const(self, value) -> "Tensor":
        return Tensor(np.asarray(value, dtype=np.float64), self, None)

    def watch(self, key, arrays: Sequence[np.ndarray]) -> list["Tensor"]:
        """Leaves for a parameter set, created once per tape and reused."""
        k = id(key)
        if k not in self._watched:
            self._watched[k] = (key, [self.var(a, "param") for a in arrays])
        return self._watched[k][1]

    def watched(self, key) -> list["Tensor"] | None:
        hit = self._watched.get(id(key))
        return None if hit is None else hit[1]

    def _check(self, value: np.ndarray, op: str) -> None:
        if self.check_finite and not np.all(np.isfinite(value)):
            raise NonFiniteError(f"non-finite values produced by '{op}'")

    def record(self, op: str, value: np.ndarray, parents: Sequence["Tensor"], vjp) -> "Tensor":
        self._check(value, op)
        ids = tuple(p.id for p in parents)
        if all(i is None for i in ids):
            return Tensor(value, self, None)
        self.nodes.append(Node(ids, value, vjp, op))
        return Tensor(value, self, len(self.nodes) - 1)


class Tensor:
    __slots__ = ("value", "tape", "id")
    __array_priority__ = 1000  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, value: np.ndarray, tape: Tape, id_: int | None):
        self.value = value
        self.tape = tape
        self.id = id_

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def requires_grad(self) -> bool:
        return self.id is not None

    def detach(self) -> "Tensor":
        return Tensor(self.value, self.tape, None)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, id={self.id})"

    __add__ = lambda s, o: add(s, o)
    __radd__ = lambda s, o: add(o, s)
    __sub__ = lambda s, o: sub(s, o)
    __rsub__ = lambda s, o: sub(o, s)
    __mul__ = lambda s, o: mul(s, o)
    __rmul__ = lambda s, o: mul(o, s)
    __truediv__ = lambda s, o: div(s, o)
    __rtruediv__ = lambda s, o: div(o, s)
    __matmul__ = lambda s, o: matmul(s, o)
    __rmatmul__ = lambda s, o: matmul(o, s)
    __neg__ = lambda s: neg(s)
    __pow__ = lambda s, k: power(s, k)
    __getitem__ = lambda s, idx: getitem(s, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)


# --------------------------------------------------------------------------
# helpers

def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Tensor):
            return x.tape
    raise TypeError("at least one operand must be a Tensor")


def _lift(x, tape: Tape) -> Tensor:
    if isinstance(x, Tensor):
        if x.tape is not tape:
            raise ValueError("operands live on different tapes")
        return x
    return Tensor(np.asarray(x, dtype=np.float64), tape, None)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _binary(op, a, b, fwd, ga, gb):
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    out = fwd(a.value, b.value)
    sa, sb = a.shape, b.shape

    def vjp(g):
        return (_unbroadcast(ga(g, a.value, b.value, out), sa) if a.id is not None else None,
                _unbroadcast(gb(g, a.value, b.value, out), sb) if b.id is not None else None)
    return tape.record(op, out, (a, b), vjp)


def _unary(op, x, fwd, gx):
    tape = x.tape
    out = fwd(x.value)

    def vjp(g):
        return (gx(g, x.value, out),)
    return tape.record(op, out, (x,), vjp)


# --------------------------------------------------------------------------
# primitives

def add(a, b):
    return _binary("add", a, b, np.add, lambda g, x, y, o: g, lambda g, x, y, o: g)


def sub(a, b):
    return _binary("sub", a, b, np.subtract, lambda g, x, y, o: g, lambda g, x, y, o: -g)


def mul(a, b):
    return _binary("mul", a, b, np.multiply, lambda g, x, y, o: g * y, lambda g, x, y, o: g * x)


def div(a, b):
    return _binary("div", a, b, np.divide,
                   lambda g, x, y, o: g / y, lambda g, x, y, o: -g * o / y)


def neg(x):
    return _unary("neg", x, np.negative, lambda g, v, o: -g)


def power(x, k: float):
    k = float(k)
    return _unary("pow", x, lambda v: v ** k, lambda g, v, o: g * k * v ** (k - 1.0))


def exp(x):
    return _unary("exp", x, np.exp, lambda g, v, o: g * o)


def log(x):
    return _unary("log", x, np.log, lambda g, v, o: g / v)


def sqrt(x):
    return _unary("sqrt", x, np.sqrt, lambda g, v, o: g * 0.5 / o)


def relu(x):
    return _unary("relu", x, lambda v: np.maximum(v, 0.0), lambda g, v, o: g * (v > 0))


def identity(x):
    return x


def matmul(a, b):
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    out = np.matmul(a.value, b.value)

    def vjp(g):
        av, bv = a.value, b.value
        ga = gb = None
        if a.id is not None:
            if bv.ndim == 1:
                ga = np.multiply.outer(g, bv)
            else:
                ga = _unbroadcast(np.matmul(g, np.swapaxes(bv, -1, -2)), av.shape)
        if b.id is not None:
            if av.ndim == 1:
                gb = np.multiply.outer(av, g)
            elif bv.ndim == 1:
                gb = np.einsum("...i,...ij->j", g, av) if av.ndim > 1 else av * g
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(av, -1, -2), g), bv.shape)
        return ga, gb
    return tape.record("matmul", out, (a, b), vjp)


def tsum(x, axis=None, keepdims=False):
    shape = x.shape
    out = np.sum(x.value, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)
    return x.tape.record("sum", np.asarray(out, dtype=np.float64), (x,), vjp)


def mean(x, axis=None, keepdims=False):
    n = x.value.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return tsum(x, axis, keepdims) * (1.0 / n)


def _extreme(name, x, axis, keepdims, pick):
    v = x.value
    if axis is None:
        flat = pick(v.reshape(-1))
        out = v.reshape(-1)[flat]
        mask = np.zeros(v.size)
        mask[flat] = 1.0
        mask = mask.reshape(v.shape)
        out = np.asarray(out if not keepdims else np.full([1] * v.ndim, out), dtype=np.float64)
    else:
        idx = np.expand_dims(pick(v, axis), axis)
        out = np.take_along_axis(v, idx, axis)
        mask = np.zeros_like(v)
        np.put_along_axis(mask, idx, 1.0, axis)
        if not keepdims:
            out = np.squeeze(out, axis)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (mask * g,)
    return x.tape.record(name, out, (x,), vjp)


def amax(x, axis=None, keepdims=False):
    """Maximum; the gradient goes to the first maximising entry."""
    return _extreme("max", x, axis, keepdims, lambda v, *a: np.argmax(v, *a))


def amin(x, axis=None, keepdims=False):
    """Minimum; the gradient goes to the first minimising entry."""
    return _extreme("min", x, axis, keepdims, lambda v, *a: np.argmin(v, *a))


def softmax(x, axis=-1):
    z = x.value - x.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
    return x.tape.record("softmax", out, (x,), vjp)


def reshape(x, shape):
    old = x.shape
    return x.tape.record("reshape", x.value.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x, axes=None):
    inv = None if axes is None else np.argsort(axes)
    return x.tape.record("transpose", np.transpose(x.value, axes), (x,),
                         lambda g: (np.transpose(g, inv),))


def broadcast_to(x, shape):
    old = x.shape
    return x.tape.record("broadcast", np.broadcast_to(x.value, shape).copy(), (x,),
                         lambda g: (_unbroadcast(g, old),))


def getitem(x, idx):
    shape = x.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)
    return x.tape.record("getitem", np.array(x.value[idx], dtype=np.float64), (x,), vjp)


def concat(xs: Sequence, axis=-1):
    tape = _tape_of(*xs)
    xs = [_lift(x, tape) for x in xs]
    out = np.concatenate([x.value for x in xs], axis=axis)
    sizes = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def vjp(g):
        parts = np.split(g, sizes, axis=axis)
        return tuple(p if x.id is not None else None for p, x in zip(parts, xs))
    return tape.record("concat", out, xs, vjp)


def stack(xs: Sequence, axis=0):
    tape = _tape_of(*xs)
    xs = [_lift(x, tape) for x in xs]
    out = np.stack([x.value for x in xs], axis=axis)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) if x.id is not None else None
                     for i, x in enumerate(xs))
    return tape.record("stack", out, xs, vjp)


# --------------------------------------------------------------------------

class Gradients(dict):
    """Map from node id to gradient array; unseen leaves have zero gradient."""

    def wrt(self, t: Tensor) -> np.ndarray:
        if t.id is None or t.id not in self:
            return np.zeros_like(t.value)
        return self[t.id]


def backward(tape: Tape, output: Tensor, seed=None) -> Gradients:
    """Accumulate d(seed . output)/d(node) for every recorded node.

    ``seed`` defaults to ones (so a scalar output yields its plain gradient).
    Each node is visited once, in reverse recording order.
    """
    if not tape.nodes:
        raise ValueError("cannot run backward on an empty tape")
    if output.tape is not tape:
        raise ValueError("output does not belong to this tape")
    seed = np.ones_like(output.value) if seed is None else np.asarray(seed, dtype=np.float64)
    if seed.shape != output.shape:
        raise ValueError(f"seed shape {seed.shape} does not match output shape {output.shape}")
    grads = Gradients()
    if output.id is None:
        return grads
    grads[output.id] = seed.copy()
    for nid in range(output.id, -1, -1):
        g = grads.get(nid)
        node = tape.nodes[nid]
        if g is None or node.vjp is None:
            continue
        for pid, pg in zip(node.inputs, node.vjp(g)):
            if pid is None or pg is None:
                continue
            if pid in grads:
                grads[pid] = grads[pid] + pg
            else:
                grads[pid] = np.array(pg, dtype=np.float64)
    return grads
