"""Define-by-run reverse-mode automatic differentiation over float64 arrays.

Every primitive builds a new :class:`Tensor` that remembers its parents and
a backward rule. :func:`backward` walks the recorded graph from a scalar
output and returns gradients for an explicit set of tensors only; nothing
is accumulated on the tensors themselves, so leaves that are not asked for
are left untouched.

Shape rules (violations raise :class:`ShapeError`):

* ``add``/``sub``/``mul``: numpy broadcasting.
* ``matmul``: ``(n, k) @ (k, m) -> (n, m)``; both operands 2-D.
* ``log_softmax``: 2-D input, normalised over the last axis.
* ``gather``: ``x`` of shape ``(n, c)`` and integer ``indices`` of shape
  ``(n,)`` with entries in ``[0, c)``; picks ``x[i, indices[i]]``.
* ``concat``: equal extents on every axis except ``axis``.
* ``reshape``: same number of elements.
* ``sum``/``mean``: ``axis`` must exist.
* Elementwise unary ops accept any shape.

Non-smooth points use fixed subgradients: ``relu'(0) = 0``,
``leaky_relu'(0) = slope``, and ``clamp`` passes gradient only strictly
inside ``(lo, hi)``.
"""
from __future__ import annotations

import threading
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from dvge import kernels


class ShapeError(ValueError):
    """An operand shape is incompatible with the primitive."""


_recording = threading.local()


def _active_nodes():
    return getattr(_recording, "nodes", None)


def _node_label(op: str) -> str:
    nodes = _active_nodes()
    if nodes is None:
        return op
    return f"node #{len(nodes)} ({op})"


def _shape_error(op: str, message: str) -> ShapeError:
    return ShapeError(f"{_node_label(op)}: {message}")


class Tensor:
    """A float64 array plus the bookkeeping needed for reverse mode."""

    __slots__ = ("data", "requires_grad", "op", "name", "_parents", "_backward")

    # make numpy defer to our reflected operators
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag}, requires_grad={self.requires_grad})"

    # operator sugar
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(op: str, data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.op = op
    out.name = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    nodes = _active_nodes()
    if nodes is not None:
        nodes.append(out)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise _shape_error(op, f"cannot broadcast {a.shape} with {b.shape}") from None


# ---------------------------------------------------------------------------
# binary primitives


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def backward(g, needs):
        return (
            _unbroadcast(g, a.shape) if needs[0] else None,
            _unbroadcast(g, b.shape) if needs[1] else None,
        )

    return _make("add", a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def backward(g, needs):
        return (
            _unbroadcast(g, a.shape) if needs[0] else None,
            _unbroadcast(-g, b.shape) if needs[1] else None,
        )

    return _make("sub", a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def backward(g, needs):
        return (
            _unbroadcast(g * b.data, a.shape) if needs[0] else None,
            _unbroadcast(g * a.data, b.shape) if needs[1] else None,
        )

    return _make("mul", a.data * b.data, (a, b), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise _shape_error("matmul", f"operands must be 2-D, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise _shape_error("matmul", f"inner extents differ: {a.shape} @ {b.shape}")

    def backward(g, needs):
        return (
            g @ b.data.T if needs[0] else None,
            a.data.T @ g if needs[1] else None,
        )

    return _make("matmul", a.data @ b.data, (a, b), backward)


# ---------------------------------------------------------------------------
# elementwise unary primitives


def leaky_relu(x, slope: float = 0.01) -> Tensor:
    x = as_tensor(x)
    slope = float(slope)

    def backward(g, needs):
        return (kernels.leaky_relu_backward(x.data, g, slope),)

    return _make("leaky_relu", kernels.leaky_relu_forward(x.data, slope), (x,), backward)


def relu(x) -> Tensor:
    x = as_tensor(x)

    def backward(g, needs):
        return (kernels.leaky_relu_backward(x.data, g, 0.0),)

    return _make("relu", kernels.leaky_relu_forward(x.data, 0.0), (x,), backward)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    d = x.data
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def backward(g, needs):
        return (g * out * (1.0 - out),)

    return _make("sigmoid", out, (x,), backward)


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)

    def backward(g, needs):
        return (g * out,)

    return _make("exp", out, (x,), backward)


def log(x) -> Tensor:
    x = as_tensor(x)

    def backward(g, needs):
        return (g / x.data,)

    return _make("log", np.log(x.data), (x,), backward)


def clamp(x, lo: float, hi: float) -> Tensor:
    x = as_tensor(x)
    if lo > hi:
        raise ValueError(f"clamp bounds reversed: lo={lo} > hi={hi}")

    def backward(g, needs):
        inside = (x.data > lo) & (x.data < hi)
        return (np.where(inside, g, 0.0),)

    return _make("clamp", np.clip(x.data, lo, hi), (x,), backward)


def reverse_grad(x, scale: float = 1.0) -> Tensor:
    """Identity on the forward pass; multiplies the incoming gradient by ``-scale``."""
    x = as_tensor(x)
    scale = float(scale)

    def backward(g, needs):
        return (-scale * g,)

    return _make("reverse_grad", x.data.copy(), (x,), backward)


# ---------------------------------------------------------------------------
# reductions and shape manipulation


def _check_axis(op: str, x: Tensor, axis) -> None:
    if axis is None:
        return
    axes = axis if isinstance(axis, tuple) else (axis,)
    for ax in axes:
        if not -x.ndim <= ax < x.ndim:
            raise _shape_error(op, f"axis {ax} out of range for shape {x.shape}")


def sum_(x, axis=None) -> Tensor:
    x = as_tensor(x)
    _check_axis("sum", x, axis)

    def backward(g, needs):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make("sum", np.asarray(x.data.sum(axis=axis)), (x,), backward)


def mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    _check_axis("mean", x, axis)
    if axis is None:
        count = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([x.shape[a] for a in axes]))

    def backward(g, needs):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return _make("mean", np.asarray(x.data.mean(axis=axis)), (x,), backward)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    shape = tuple(int(s) for s in shape)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise _shape_error("reshape", f"cannot reshape {x.shape} into {shape}") from None

    def backward(g, needs):
        return (g.reshape(x.shape),)

    return _make("reshape", out, (x,), backward)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    if not tensors:
        raise _shape_error("concat", "nothing to concatenate")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except (ValueError, np.exceptions.AxisError) as exc:
        shapes = [t.shape for t in tensors]
        raise _shape_error("concat", f"incompatible shapes {shapes} on axis {axis}: {exc}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g, needs):
        return tuple(np.split(g, bounds, axis=axis))

    return _make("concat", out, tensors, backward)


def slice_(x, index) -> Tensor:
    """Index ``x`` with basic slices or integer arrays (``x[index]``)."""
    x = as_tensor(x)
    try:
        out = x.data[index]
    except IndexError as exc:
        raise _shape_error("slice", f"{exc} (shape {x.shape})") from None

    def backward(g, needs):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _make("slice", np.array(out, dtype=np.float64), (x,), backward)


def log_softmax(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 2:
        raise _shape_error("log_softmax", f"expected a 2-D input, got {x.shape}")
    out = kernels.log_softmax_forward(x.data)

    def backward(g, needs):
        return (kernels.log_softmax_backward(out, g),)

    return _make("log_softmax", out, (x,), backward)


def gather(x, indices) -> Tensor:
    x = as_tensor(x)
    idx = np.asarray(indices)
    if x.ndim != 2:
        raise _shape_error("gather", f"expected a 2-D input, got {x.shape}")
    if idx.ndim != 1 or idx.shape[0] != x.shape[0]:
        raise _shape_error("gather", f"indices shape {idx.shape} does not match rows {x.shape[0]}")
    if not np.issubdtype(idx.dtype, np.integer):
        raise _shape_error("gather", f"indices must be integers, got {idx.dtype}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[1]):
        raise _shape_error("gather", f"indices outside [0, {x.shape[1]})")
    rows = np.arange(x.shape[0])

    def backward(g, needs):
        full = np.zeros_like(x.data)
        full[rows, idx] = g
        return (full,)

    return _make("gather", x.data[rows, idx], (x,), backward)


# ---------------------------------------------------------------------------
# reverse pass


def _topological(output: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(output: Tensor, wrt: Iterable[Tensor]) -> dict[Tensor, np.ndarray]:
    """Gradients of the scalar ``output`` with respect to each tensor in ``wrt``.

    Tensors that do not influence ``output`` get a zero gradient. Only the
    part of the graph lying between ``wrt`` and ``output`` is traversed.
    """
    wrt = list(wrt)
    if output.shape != ():
        raise ShapeError(f"backward needs a scalar (shape ()) output, got {output.shape}")
    for t in wrt:
        if not t.requires_grad:
            raise ValueError(f"{t!r} does not have requires_grad set")

    targets = {id(t) for t in wrt}
    order = _topological(output)
    needed: dict[int, bool] = {}
    for node in order:
        needed[id(node)] = id(node) in targets or any(needed.get(id(p), False) for p in node._parents)

    grads: dict[int, np.ndarray] = {id(output): np.ones((), dtype=np.float64)}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None or node._backward is None or not needed[id(node)]:
            continue
        needs = tuple(needed.get(id(p), False) for p in node._parents)
        parent_grads = node._backward(g, needs)
        for parent, pg, need in zip(node._parents, parent_grads, needs):
            if not need or pg is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg

    return {t: np.array(grads.get(id(t), np.zeros_like(t.data)), dtype=np.float64) for t in wrt}


def grad(output: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
    """Like :func:`backward` but returns gradients as a list in ``wrt`` order."""
    result = backward(output, wrt)
    return [result[t] for t in wrt]


class Graph:
    """A named computation recorded by running ``fn`` (define-by-run).

    ``fn`` receives the bound input tensors as keyword arguments and returns
    either a tensor or a mapping of output names to tensors. Each call to
    :meth:`forward` re-records the node list, so ``nodes`` always reflects
    the latest pass in topological (creation) order.
    """

    def __init__(self, fn: Callable[..., Tensor | Mapping[str, Tensor]], inputs: Sequence[str]):
        self.fn = fn
        self.inputs = tuple(inputs)
        self.nodes: list[Tensor] = []
        self.outputs: dict[str, Tensor] = {}

    def forward(self, bindings: Mapping[str, Tensor]) -> dict[str, Tensor]:
        missing = [name for name in self.inputs if name not in bindings]
        if missing:
            raise ValueError(f"unbound graph inputs: {missing}")
        bound = {name: as_tensor(bindings[name]) for name in self.inputs}
        previous = _active_nodes()
        _recording.nodes = []
        try:
            result = self.fn(**bound)
            self.nodes = _recording.nodes
        finally:
            _recording.nodes = previous
        if isinstance(result, Tensor):
            result = {"output": result}
        self.outputs = dict(result)
        return self.outputs

    def backward(self, output: str, wrt: Iterable[Tensor]) -> dict[Tensor, np.ndarray]:
        return backward(self.outputs[output], wrt)
