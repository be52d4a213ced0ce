"""Float64 arrays with a small tape-based reverse-mode autodiff.

Every op accepts plain ``numpy`` arrays, Python floats, or :class:`Node`
objects.  With plain arrays the op just computes its value; as soon as one
input is a ``Node`` the result is recorded on that node's :class:`Graph` and
a ``Node`` is returned.  Both paths run the same numpy kernel, so the taped
and untaped forward values are bit-identical.

Broadcasting is limited to scalar-with-array on purpose::

    >>> g = Graph()
    >>> x = g.leaf([1.0, 2.0])
    >>> loss = sum_(mul(x, x))
    >>> g.backward(loss)[x.id]
    array([2., 4.])
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

__all__ = [
    "Graph",
    "Node",
    "ShapeError",
    "NonFiniteError",
    "as_array",
    "value_of",
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "concat",
    "reshape",
    "tanh",
    "silu",
    "sum_",
    "mean",
    "sq_l2",
    "finite_difference",
]


class ShapeError(ValueError):
    """Operand shapes do not conform for an op."""


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf."""


def as_array(x) -> np.ndarray:
    """Coerce to a read-only contiguous float64 array."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr is x and arr.flags.writeable:
        arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass
class _Record:
    kind: str
    inputs: tuple[int, ...]
    value: np.ndarray
    vjp: Callable[[np.ndarray], tuple] | None
    needs_grad: bool


class Node:
    """Handle to a value recorded on a :class:`Graph`."""

    __slots__ = ("graph", "id")

    def __init__(self, graph: "Graph", id: int):
        self.graph = graph
        self.id = id

    @property
    def value(self) -> np.ndarray:
        return self.graph.nodes[self.id].value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self):
        rec = self.graph.nodes[self.id]
        return f"Node(id={self.id}, kind={rec.kind!r}, shape={self.shape})"


@dataclass
class Graph:
    """Append-only tape of computation records.

    Records only ever reference earlier records, so reverse insertion order
    is a valid topological order for the backward sweep.
    """

    nodes: list[_Record] = field(default_factory=list)
    leaves: set[int] = field(default_factory=set)

    def _push(self, kind, inputs, value, vjp, needs_grad) -> Node:
        self.nodes.append(_Record(kind, tuple(inputs), value, vjp, needs_grad))
        return Node(self, len(self.nodes) - 1)

    def leaf(self, value) -> Node:
        """Register a differentiable input."""
        arr = as_array(value)
        _check_finite("leaf", arr)
        node = self._push("leaf", (), arr, None, True)
        self.leaves.add(node.id)
        return node

    def constant(self, value) -> Node:
        arr = as_array(value)
        _check_finite("constant", arr)
        return self._push("constant", (), arr, None, False)

    def backward(self, loss: Node) -> dict[int, np.ndarray]:
        """Gradient of a scalar ``loss`` with respect to every leaf.

        Leaves the loss does not depend on get a zero array.
        """
        if not isinstance(loss, Node) or loss.graph is not self:
            raise ValueError("loss must be a node recorded on this graph")
        if loss.value.shape != ():
            raise ShapeError(f"loss must be a scalar, got shape {loss.value.shape}")

        grads: dict[int, np.ndarray] = {loss.id: np.ones((), dtype=np.float64)}
        for nid in range(loss.id, -1, -1):
            g = grads.get(nid)
            rec = self.nodes[nid]
            if g is None or rec.vjp is None:
                continue
            in_grads = rec.vjp(g)
            for iid, ig in zip(rec.inputs, in_grads):
                if ig is None or not self.nodes[iid].needs_grad:
                    continue
                if iid in grads:
                    grads[iid] = grads[iid] + ig
                else:
                    grads[iid] = ig
        return {
            lid: grads.get(lid, np.zeros_like(self.nodes[lid].value))
            for lid in sorted(self.leaves)
        }


Operand = Union[Node, np.ndarray, float]


def value_of(x: Operand) -> np.ndarray:
    if isinstance(x, Node):
        return x.value
    return np.asarray(x, dtype=np.float64)


def _check_finite(kind: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{kind} produced non-finite values")


def _apply(kind: str, fwd, vjp_factory, *args):
    graph = None
    for a in args:
        if isinstance(a, Node):
            if graph is not None and a.graph is not graph:
                raise ValueError(f"{kind}: operands come from different graphs")
            graph = a.graph
    vals = [value_of(a) for a in args]
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):  # reported below instead
        out = np.asarray(fwd(*vals), dtype=np.float64)
    _check_finite(kind, out)
    if graph is None:
        return out
    ids = []
    needs = False
    for a in args:
        if not isinstance(a, Node):
            a = graph.constant(a)
        ids.append(a.id)
        needs = needs or graph.nodes[a.id].needs_grad
    out.flags.writeable = False
    vjp = vjp_factory(*vals, out) if needs else None
    return graph._push(kind, ids, out, vjp, needs)


def _same_or_scalar(kind, a, b):
    sa, sb = np.shape(value_of(a)), np.shape(value_of(b))
    if sa != sb and sa != () and sb != ():
        raise ShapeError(f"{kind}: shapes {sa} and {sb} do not conform")


def _unbroadcast(g, shape):
    return g.sum() if shape == () and g.shape != () else g


def add(a: Operand, b: Operand):
    _same_or_scalar("add", a, b)
    return _apply(
        "add",
        np.add,
        lambda x, y, out: lambda g: (_unbroadcast(g, x.shape), _unbroadcast(g, y.shape)),
        a,
        b,
    )


def sub(a: Operand, b: Operand):
    _same_or_scalar("sub", a, b)
    return _apply(
        "sub",
        np.subtract,
        lambda x, y, out: lambda g: (_unbroadcast(g, x.shape), _unbroadcast(-g, y.shape)),
        a,
        b,
    )


def mul(a: Operand, b: Operand):
    """Elementwise product."""
    _same_or_scalar("mul", a, b)
    return _apply(
        "mul",
        np.multiply,
        lambda x, y, out: lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)),
        a,
        b,
    )


def scale(a: Operand, s: float):
    """Multiply by a non-differentiable Python scalar."""
    s = float(s)
    return _apply("scale", lambda x: x * s, lambda x, out: lambda g: (g * s,), a)


def matmul(a: Operand, b: Operand):
    sa, sb = np.shape(value_of(a)), np.shape(value_of(b))
    if len(sa) != 2 or len(sb) != 2 or sa[1] != sb[0]:
        raise ShapeError(f"matmul: shapes {sa} and {sb} do not conform")
    return _apply(
        "matmul",
        np.matmul,
        lambda x, y, out: lambda g: (g @ y.T, x.T @ g),
        a,
        b,
    )


def concat(arrays: Sequence[Operand], axis: int = 0):
    shapes = [np.shape(value_of(a)) for a in arrays]
    if not shapes:
        raise ShapeError("concat: no operands")
    nd = len(shapes[0])
    ax = axis % nd if nd else 0
    for s in shapes[1:]:
        if len(s) != nd or any(s[i] != shapes[0][i] for i in range(nd) if i != ax):
            raise ShapeError(f"concat: shapes {shapes[0]} and {s} do not conform on axis {axis}")
    bounds = np.cumsum([s[ax] for s in shapes])[:-1]

    def vjp_factory(*vals_out):
        return lambda g: tuple(np.split(g, bounds, axis=ax))

    return _apply("concat", lambda *xs: np.concatenate(xs, axis=ax), vjp_factory, *arrays)


def reshape(a: Operand, shape: Sequence[int]):
    shape = tuple(int(d) for d in shape)
    src = np.shape(value_of(a))
    if int(np.prod(src, dtype=np.int64)) != int(np.prod(shape, dtype=np.int64)):
        raise ShapeError(f"reshape: cannot reshape {src} to {shape}")
    return _apply(
        "reshape",
        lambda x: np.reshape(x, shape),
        lambda x, out: lambda g: (np.reshape(g, x.shape),),
        a,
    )


def tanh(a: Operand):
    return _apply("tanh", np.tanh, lambda x, out: lambda g: (g * (1.0 - out * out),), a)


def _sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def silu(a: Operand):
    """x * sigmoid(x)."""

    def fwd(x):
        return x * _sigmoid(x)

    def vjp_factory(x, out):
        sig = _sigmoid(x)
        return lambda g: (g * (sig + x * sig * (1.0 - sig)),)

    return _apply("silu", fwd, vjp_factory, a)


def sum_(a: Operand):
    return _apply(
        "sum",
        lambda x: np.sum(x),
        lambda x, out: lambda g: (np.full(x.shape, float(g)),),
        a,
    )


def mean(a: Operand):
    def vjp_factory(x, out):
        n = x.size
        return lambda g: (np.full(x.shape, float(g) / n),)

    return _apply("mean", lambda x: np.mean(x), vjp_factory, a)


def sq_l2(a: Operand):
    """Squared Euclidean norm over all elements."""
    return _apply(
        "sq_l2",
        lambda x: np.sum(x * x),
        lambda x, out: lambda g: (2.0 * float(g) * x,),
        a,
    )


def finite_difference(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``."""
    if not h > 0:
        raise ValueError(f"step h must be positive, got {h}")
    x = np.array(x, dtype=np.float64)
    grad = np.empty_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x.copy()))
        flat[i] = orig - h
        fm = float(f(x.copy()))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError(f"f is not finite near coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad
