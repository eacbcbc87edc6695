"""Reverse-mode automatic differentiation over numpy arrays.

Every backward rule is itself written with differentiable ``Tensor`` ops, so
gradients can be differentiated again (``grad(..., create_graph=True)``).
That is what the gradient penalty of a Wasserstein critic needs.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

_state = threading.local()


class GraphError(RuntimeError):
    """Raised for misuse of the computation graph."""


class NonFiniteError(FloatingPointError):
    """Raised when a value that must be finite is NaN or infinite."""


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def set_grad_enabled(flag: bool):
    prev = is_grad_enabled()
    _state.enabled = flag
    try:
        yield
    finally:
        _state.enabled = prev


def no_grad():
    return set_grad_enabled(False)


@contextmanager
def record_branches():
    """Collect the branch taken per element by every piecewise op run inside.

    Used by finite-difference checks to tell when a perturbation crosses a kink.
    """
    prev = getattr(_state, "branches", None)
    _state.branches = log = []
    try:
        yield log
    finally:
        _state.branches = prev


def _note_branch(selector: np.ndarray) -> None:
    log = getattr(_state, "branches", None)
    if log is not None:
        log.append(selector)


BackwardFn = Callable[["Tensor", Sequence[bool]], Sequence["Tensor | None"]]


class Tensor:
    """Dense array with an optional gradient and a recorded history."""

    __array_priority__ = 100
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_consumed", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self._consumed = False
        self.op = "leaf"

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None and not self._consumed

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def astype(self, dtype) -> Tensor:
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def zero_grad(self) -> None:
        self.grad = None

    def check_finite(self, name: str = "tensor") -> Tensor:
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteError(f"{name} contains NaN or Inf")
        return self

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag}, op={self.op})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- autograd ---------------------------------------------------------
    def backward(self, retain_graph: bool = False, create_graph: bool = False) -> None:
        """Accumulate d(self)/d(leaf) into every ``requires_grad`` leaf's ``.grad``."""
        if self.size != 1:
            raise GraphError(f"backward() needs a scalar, got shape {self.shape}")
        if self._consumed:
            raise GraphError("graph already consumed; pass retain_graph=True to reuse it")
        if not self.requires_grad:
            raise GraphError("tensor does not require grad")
        _run_backward([self], [_ones_like(self)], None, retain_graph or create_graph, create_graph)

    # -- operators ----------------------------------------------------------
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        return mean(self, axis, keepdims)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> Tensor:
        return transpose(self, axes or None)

    @property
    def T(self) -> Tensor:
        return transpose(self, None)

    def exp(self) -> Tensor:
        return exp(self)

    def log(self) -> Tensor:
        return log(self)

    def abs(self) -> Tensor:
        return tabs(self)

    def sqrt(self) -> Tensor:
        return sqrt(self)

    def tanh(self) -> Tensor:
        return tanh(self)


def _raise_item(t: Tensor):
    raise ValueError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _ones_like(t: Tensor) -> Tensor:
    return Tensor(np.ones_like(t.data))


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward: BackwardFn, op: str) -> Tensor:
    out = Tensor(data)
    out.op = op
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


# -- graph traversal ----------------------------------------------------------

def _toposort(roots: Iterable[Tensor]) -> list[Tensor]:
    """Nodes reachable from ``roots`` that require grad, parents before children."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(r, False) for r in roots]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _run_backward(
    roots: Sequence[Tensor],
    seeds: Sequence[Tensor],
    inputs: Sequence[Tensor] | None,
    retain_graph: bool,
    create_graph: bool,
) -> dict[int, Tensor]:
    order = _toposort(roots)
    wanted = set() if inputs is None else {id(t) for t in inputs}
    if inputs is None:
        relevant = None
    else:
        # only propagate along paths that end in one of the requested inputs
        relevant = set()
        for node in order:
            if id(node) in wanted or any(id(p) in relevant for p in node._parents):
                relevant.add(id(node))

    grads: dict[int, Tensor] = {}
    for r, s in zip(roots, seeds):
        grads[id(r)] = grads[id(r)] + s if id(r) in grads else s

    with set_grad_enabled(create_graph):
        for node in reversed(order):
            g = grads.get(id(node))
            if node._consumed:
                raise GraphError("graph already consumed; pass retain_graph=True to reuse it")
            if node._backward is None:
                if inputs is None and g is not None:
                    node.grad = g.data.copy() if node.grad is None else node.grad + g.data
                continue
            if g is None:
                continue
            if relevant is None:
                needs = tuple(p.requires_grad for p in node._parents)
            else:
                needs = tuple(id(p) in relevant for p in node._parents)
            if any(needs):
                parent_grads = node._backward(g, needs)
                for p, pg, need in zip(node._parents, parent_grads, needs):
                    if not need or pg is None:
                        continue
                    prev = grads.get(id(p))
                    grads[id(p)] = pg if prev is None else prev + pg
            if id(node) not in wanted:
                grads.pop(id(node), None)
            if not retain_graph:
                node._backward = None
                node._parents = ()
                node._consumed = True
    return grads


def grad(
    outputs: Tensor | Sequence[Tensor],
    inputs: Sequence[Tensor],
    create_graph: bool = False,
    retain_graph: bool | None = None,
    allow_unused: bool = False,
) -> list[Tensor | None]:
    """Return d(sum of outputs)/d(input) for each input without touching ``.grad``."""
    outs = [outputs] if isinstance(outputs, Tensor) else list(outputs)
    for o in outs:
        if o.size != 1:
            raise GraphError(f"grad() needs scalar outputs, got shape {o.shape}")
        if o._consumed:
            raise GraphError("graph already consumed; pass retain_graph=True to reuse it")
    if retain_graph is None:
        retain_graph = create_graph
    grads = _run_backward(outs, [_ones_like(o) for o in outs], list(inputs), retain_graph, create_graph)
    result = []
    for t in inputs:
        g = grads.get(id(t))
        if g is None and not allow_unused:
            g = Tensor(np.zeros_like(t.data))
        result.append(g)
    return result


# -- broadcasting helpers -----------------------------------------------------

def _reduce_axes(src_shape: tuple[int, ...], dst_shape: tuple[int, ...]) -> tuple[tuple[int, ...], int]:
    lead = len(src_shape) - len(dst_shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, d in enumerate(dst_shape) if d == 1 and src_shape[i + lead] != 1
    )
    return axes, lead


def sum_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Sum ``x`` down to a shape it was broadcast from."""
    shape = tuple(shape)
    if x.shape == shape:
        return x
    axes, lead = _reduce_axes(x.shape, shape)
    data = x.data.sum(axis=axes, keepdims=True)
    if lead:
        data = data.reshape(data.shape[lead:])
    src = x.shape

    def backward(g, needs):
        return (broadcast_to(g, src),)

    return _result(data.reshape(shape), (x,), backward, "sum_to")


def broadcast_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    shape = tuple(shape)
    if x.shape == shape:
        return x
    src = x.shape

    def backward(g, needs):
        return (sum_to(g, src),)

    return _result(np.ascontiguousarray(np.broadcast_to(x.data, shape)), (x,), backward, "broadcast_to")


# -- elementwise --------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g, needs):
        return (sum_to(g, a.shape) if needs[0] else None, sum_to(g, b.shape) if needs[1] else None)

    return _result(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g, needs):
        return (sum_to(g, a.shape) if needs[0] else None, sum_to(-g, b.shape) if needs[1] else None)

    return _result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g, needs):
        return (
            sum_to(g * b, a.shape) if needs[0] else None,
            sum_to(g * a, b.shape) if needs[1] else None,
        )

    return _result(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g, needs):
        return (
            sum_to(g / b, a.shape) if needs[0] else None,
            sum_to(-g * a / (b * b), b.shape) if needs[1] else None,
        )

    return _result(a.data / b.data, (a, b), backward, "div")


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g, needs: (-g,), "neg")


def power(a: Tensor, exponent: float) -> Tensor:
    exponent = float(exponent)

    def backward(g, needs):
        return (g * exponent * power(a, exponent - 1.0),)

    return _result(a.data ** a.dtype.type(exponent), (a,), backward, "pow")


def exp(a: Tensor) -> Tensor:
    def backward(g, needs):
        return (g * out,)

    out = _result(np.exp(a.data), (a,), backward, "exp")
    return out


def log(a: Tensor) -> Tensor:
    return _result(np.log(a.data), (a,), lambda g, needs: (g / a,), "log")


def tanh(a: Tensor) -> Tensor:
    def backward(g, needs):
        return (g * (1.0 - out * out),)

    out = _result(np.tanh(a.data), (a,), backward, "tanh")
    return out


def clamp_max_zero(a: Tensor) -> Tensor:
    """min(a, 0)."""
    mask = Tensor((a.data < 0).astype(a.dtype))
    _note_branch(a.data < 0)
    return _result(np.minimum(a.data, 0), (a,), lambda g, needs: (g * mask,), "min0")


def elu(a: Tensor) -> Tensor:
    """Exponential linear unit with unit scale.

    The derivative is ``exp(min(a, 0))``, which stays differentiable.
    """
    data = np.where(a.data > 0, a.data, np.expm1(np.minimum(a.data, 0)))
    _note_branch(a.data > 0)

    def backward(g, needs):
        return (g * exp(clamp_max_zero(a)),)

    return _result(data, (a,), backward, "elu")


def tabs(a: Tensor) -> Tensor:
    sign = Tensor(np.sign(a.data))
    _note_branch(sign.data)
    return _result(np.abs(a.data), (a,), lambda g, needs: (g * sign,), "abs")


def reciprocal_or_zero(a: Tensor) -> Tensor:
    """1/a where a != 0, else 0."""
    nz = a.data != 0
    data = np.zeros_like(a.data)
    np.divide(1, a.data, out=data, where=nz)

    def backward(g, needs):
        return (-g * out * out,)

    out = _result(data, (a,), backward, "recip0")
    return out


def sqrt(a: Tensor) -> Tensor:
    """Square root whose gradient at 0 is taken as 0 instead of inf."""

    def backward(g, needs):
        return (g * 0.5 * reciprocal_or_zero(out),)

    out = _result(np.sqrt(a.data), (a,), backward, "sqrt")
    return out


def where(cond, a, b) -> Tensor:
    """Select ``a`` where ``cond`` else ``b``; ``cond`` is a constant boolean array."""
    a, b = _pair(a, b)
    cond = np.asarray(cond.data if isinstance(cond, Tensor) else cond).astype(bool)
    shape = np.broadcast_shapes(cond.shape, a.shape, b.shape)

    def backward(g, needs):
        zero = Tensor(np.zeros((), dtype=g.dtype))
        return (
            sum_to(where(cond, g, zero), a.shape) if needs[0] else None,
            sum_to(where(cond, zero, g), b.shape) if needs[1] else None,
        )

    data = np.where(cond, a.data, b.data)
    return _result(np.broadcast_to(data, shape).copy() if data.shape != shape else data, (a, b), backward, "where")


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, a)
    if isinstance(b, Tensor):
        return as_tensor(a, b), b
    return Tensor(a), Tensor(b)


# -- reductions and shape ops -------------------------------------------------

def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    kept = tuple(1 if i in axes else d for i, d in enumerate(a.shape))

    def backward(g, needs):
        return (broadcast_to(reshape(g, kept), a.shape),)

    return _result(np.asarray(a.data.sum(axis=axes, keepdims=keepdims)), (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return tsum(a, axis, keepdims) * (1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g, needs: (reshape(g, src),), "reshape")


def flatten(a: Tensor) -> Tensor:
    return reshape(a, (a.shape[0], -1))


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _result(
        np.ascontiguousarray(a.data.transpose(axes)), (a,), lambda g, needs: (transpose(g, inverse),), "transpose"
    )


def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")

    def backward(g, needs):
        return (
            matmul(g, transpose(b)) if needs[0] else None,
            matmul(transpose(a), g) if needs[1] else None,
        )

    return _result(a.data @ b.data, (a, b), backward, "matmul")


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % tensors[0].ndim
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g, needs):
        out = []
        for i, need in enumerate(needs):
            if not need:
                out.append(None)
                continue
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(int(bounds[i]), int(bounds[i + 1]))
            out.append(getitem(g, tuple(idx)))
        return out

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward, "concat")


def _check_basic_index(index) -> tuple:
    if not isinstance(index, tuple):
        index = (index,)
    for part in index:
        if not isinstance(part, (slice, int, type(Ellipsis))):
            raise TypeError("only basic slicing is supported")
    return index


def getitem(a: Tensor, index) -> Tensor:
    index = _check_basic_index(index)
    src = a.shape

    def backward(g, needs):
        return (scatter_slice(g, src, index),)

    return _result(np.ascontiguousarray(a.data[index]), (a,), backward, "getitem")


def scatter_slice(g: Tensor, shape: tuple[int, ...], index) -> Tensor:
    """Zeros of ``shape`` with ``g`` written at ``index``; adjoint of slicing."""
    data = np.zeros(shape, dtype=g.dtype)
    data[index] = g.data
    return _result(data, (g,), lambda a, needs: (getitem(a, index),), "scatter_slice")
