"""Dense-array numerics with a small tape-based reverse-mode autodiff engine.

Values are float64 numpy arrays. A :class:`Node` is created eagerly: its value
is computed when the op is applied, and the forward closure is kept so that
:func:`forward_eval` can recompute the whole graph after input values change
(that is how :func:`finite_diff_grad` style checks drive a fixed graph).

Broadcasting is limited to the right operand of ``add``/``mul`` (row-vector
bias and per-row scaling); everything else requires matching shapes.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""

    def __init__(self, op: str, a: tuple, b: tuple):
        super().__init__(f"{op}: incompatible shapes {a} and {b}")
        self.op = op
        self.shapes = (a, b)


class ContractError(ValueError):
    """A documented precondition was violated."""


class NumericError(ArithmeticError):
    """An op produced (or would produce) a non-finite value."""


def as_matrix(x) -> np.ndarray:
    arr = np.array(x, dtype=DTYPE)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    return arr


class Node:
    __slots__ = ("op", "parents", "value", "adjoint", "requires_grad", "_fwd", "_bwd", "name")

    def __init__(self, op, parents, value, fwd=None, bwd=None, requires_grad=False, name=None):
        self.op = op
        self.parents = tuple(parents)
        self.value = value
        self.adjoint = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self._fwd = fwd
        self._bwd = bwd
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"<Node {self.op}{label} shape={self.value.shape}>"

    # operator sugar
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return add(self, neg(_lift(other)))

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, _lift(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, _lift(other))

    def __neg__(self):
        return neg(self)

    def __getitem__(self, idx):
        return slice_(self, idx)

    @property
    def T(self):
        return transpose(self)


def _lift(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


def _check_finite(op: str, value: np.ndarray) -> np.ndarray:
    if not np.isfinite(value).all():
        raise NumericError(f"{op}: produced non-finite values")
    return value


def _make(op, parents, fwd, bwd) -> Node:
    value = _check_finite(op, fwd(*[p.value for p in parents]))
    return Node(op, parents, value, fwd, bwd)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _broadcastable_into(big: tuple, small: tuple) -> bool:
    if len(small) > len(big):
        return False
    for b, s in zip(big[::-1], small[::-1]):
        if s != b and s != 1:
            return False
    return True


# ---------------------------------------------------------------------------
# leaves


def input(value, name: str | None = None, requires_grad: bool = True) -> Node:  # noqa: A001
    """Leaf node holding a trainable (or probe) value."""
    return Node("input", (), np.array(value, dtype=DTYPE), requires_grad=requires_grad, name=name)


def constant(value, name: str | None = None) -> Node:
    return Node("input", (), np.array(value, dtype=DTYPE), requires_grad=False, name=name)


# ---------------------------------------------------------------------------
# elementwise


def add(a: Node, b: Node) -> Node:
    if a.shape != b.shape and not _broadcastable_into(a.shape, b.shape):
        raise ShapeError("add", a.shape, b.shape)
    sb = b.shape
    return _make("add", (a, b), np.add, lambda g, av, bv, out: (g, _unbroadcast(g, sb)))


def mul(a: Node, b: Node) -> Node:
    if a.shape != b.shape and not _broadcastable_into(a.shape, b.shape):
        raise ShapeError("mul", a.shape, b.shape)
    sb = b.shape
    return _make("mul", (a, b), np.multiply, lambda g, av, bv, out: (g * bv, _unbroadcast(g * av, sb)))


def neg(a: Node) -> Node:
    return _make("neg", (a,), np.negative, lambda g, av, out: (-g,))


def scale(a: Node, c: float) -> Node:
    c = float(c)
    return _make("scale", (a,), lambda av: av * c, lambda g, av, out: (g * c,))


def exp(a: Node) -> Node:
    return _make("exp", (a,), np.exp, lambda g, av, out: (g * out,))


def log(a: Node) -> Node:
    if (a.value <= 0).any():
        raise NumericError("log: input must be strictly positive")

    def fwd(av):
        if (av <= 0).any():
            raise NumericError("log: input must be strictly positive")
        return np.log(av)

    return _make("log", (a,), fwd, lambda g, av, out: (g / av,))


def relu(a: Node) -> Node:
    return _make("relu", (a,), lambda av: np.maximum(av, 0.0), lambda g, av, out: (g * (av > 0),))


def sqrt(a: Node) -> Node:
    if (a.value <= 0).any():
        raise NumericError("sqrt: input must be strictly positive")
    return _make("sqrt", (a,), np.sqrt, lambda g, av, out: (g * 0.5 / out,))


# ---------------------------------------------------------------------------
# structural


def matmul(a: Node, b: Node) -> Node:
    """Matrix product; a may carry leading batch axes, b is 2-D or batched alike."""
    if a.value.ndim < 2 or b.value.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    if b.value.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError("matmul", a.shape, b.shape)

    def bwd(g, av, bv, out):
        ga = g @ np.swapaxes(bv, -1, -2)
        if bv.ndim == 2 and av.ndim > 2:
            gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(av, -1, -2) @ g
        return ga, gb

    return _make("matmul", (a, b), np.matmul, bwd)


def transpose(a: Node) -> Node:
    """Swap the last two axes."""
    if a.value.ndim < 2:
        raise ShapeError("transpose", a.shape, ())
    return _make(
        "transpose",
        (a,),
        lambda av: np.swapaxes(av, -1, -2),
        lambda g, av, out: (np.swapaxes(g, -1, -2),),
    )


def _is_basic(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, type(Ellipsis))) for i in items)


def slice_(a: Node, idx) -> Node:
    basic = _is_basic(idx)

    def bwd(g, av, out):
        full = np.zeros_like(av)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make("slice", (a,), lambda av: np.array(av[idx], dtype=DTYPE), bwd)


def reshape(a: Node, shape: Sequence[int]) -> Node:
    shape = tuple(shape)
    try:
        np.empty(a.shape).reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, shape) from None
    return _make("reshape", (a,), lambda av: av.reshape(shape), lambda g, av, out: (g.reshape(av.shape),))


def swapaxes(a: Node, ax1: int, ax2: int) -> Node:
    return _make(
        "swapaxes",
        (a,),
        lambda av: np.swapaxes(av, ax1, ax2),
        lambda g, av, out: (np.swapaxes(g, ax1, ax2),),
    )


def expand(a: Node, n: int) -> Node:
    """Repeat ``a`` along a new leading axis of length ``n``."""
    return _make(
        "expand",
        (a,),
        lambda av: np.broadcast_to(av, (n,) + av.shape).copy(),
        lambda g, av, out: (g.sum(axis=0),),
    )


def concat(nodes: Sequence[Node], axis: int = 0) -> Node:
    nodes = tuple(nodes)
    for n in nodes[1:]:
        other = list(n.shape)
        ref = list(nodes[0].shape)
        if len(other) != len(ref):
            raise ShapeError("concat", nodes[0].shape, n.shape)
        other[axis] = ref[axis] = 0
        if other != ref:
            raise ShapeError("concat", nodes[0].shape, n.shape)

    def fwd(*vals):
        return np.concatenate(vals, axis=axis)

    def bwd(g, *args):
        vals = args[:-1]
        bounds = np.cumsum([v.shape[axis] for v in vals])[:-1]
        return tuple(np.split(g, bounds, axis=axis))

    return _make("concat", nodes, fwd, bwd)


# ---------------------------------------------------------------------------
# reductions and row-wise ops


def sum(a: Node, axis: int | None = None, keepdims: bool = False) -> Node:  # noqa: A001
    """Sum all entries (to a 1x1 matrix) or along one axis."""
    if axis is None:
        return _make(
            "sum",
            (a,),
            lambda av: np.array([[av.sum()]], dtype=DTYPE),
            lambda g, av, out: (np.full_like(av, g.reshape(())),),
        )

    def bwd(g, av, out):
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, av.shape).copy(),)

    return _make("sum", (a,), lambda av: av.sum(axis=axis, keepdims=keepdims), bwd)


def mean(a: Node, axis: int | None = None, keepdims: bool = False) -> Node:
    n = a.value.size if axis is None else a.shape[axis]
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def _softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_rows(a: Node) -> Node:
    """Softmax over the last axis with per-row max subtraction."""

    def bwd(g, av, out):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _make("softmax-row", (a,), _softmax, bwd)


def layer_norm(a: Node, eps: float = 1e-5) -> Node:
    """Normalize the last axis to zero mean, unit variance (no affine part)."""

    def fwd(av):
        mu = av.mean(axis=-1, keepdims=True)
        var = ((av - mu) ** 2).mean(axis=-1, keepdims=True)
        return (av - mu) / np.sqrt(var + eps)

    def bwd(g, av, out):
        n = av.shape[-1]
        var = ((av - av.mean(axis=-1, keepdims=True)) ** 2).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * out).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - out * gx),)

    return _make("layer-norm", (a,), fwd, bwd)


def l2_normalize_rows(a: Node) -> Node:
    """Scale every row (last axis) to unit L2 norm; zero rows are an error."""

    def fwd(av):
        nrm = np.sqrt((av * av).sum(axis=-1, keepdims=True))
        if (nrm == 0).any():
            raise NumericError("l2_normalize_rows: zero-norm row")
        return av / nrm

    def bwd(g, av, out):
        nrm = np.sqrt((av * av).sum(axis=-1, keepdims=True))
        return ((g - out * (g * out).sum(axis=-1, keepdims=True)) / nrm,)

    return _make("l2-normalize", (a,), fwd, bwd)


def custom(op: str, parents: Sequence[Node], value, grads: Sequence[np.ndarray | None]) -> Node:
    """Scalar node whose parent gradients were computed in closed form elsewhere.

    The node cannot be re-evaluated by :func:`forward_eval`.
    """
    value = _check_finite(op, as_matrix(value))
    if value.shape != (1, 1):
        raise ContractError(f"{op}: custom nodes must be scalar")
    frozen = tuple(None if gr is None else np.asarray(gr, dtype=DTYPE) for gr in grads)
    for p, gr in zip(parents, frozen):
        if gr is not None and gr.shape != p.shape:
            raise ShapeError(op, p.shape, gr.shape)

    def fwd(*_):
        raise ContractError(f"{op}: closed-form node cannot be re-evaluated")

    def bwd(g, *args):
        s = float(g.reshape(()))
        return tuple(None if gr is None else gr * s for gr in frozen)

    return Node(op, parents, value, fwd, bwd)


# ---------------------------------------------------------------------------
# graph traversal


def _topo(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node.parents):
            if id(p) not in seen:
                stack.append((p, False))
    return order


def forward_eval(root: Node) -> np.ndarray:
    """Recompute every node value from the current input values."""
    for node in _topo(root):
        if node.op == "input":
            if node.value is None:
                raise ContractError(f"input {node.name!r} has no value")
            continue
        node.value = _check_finite(node.op, node._fwd(*[p.value for p in node.parents]))
    return root.value


def backward(root: Node) -> None:
    """Populate ``adjoint`` on every node reachable from a scalar ``root``."""
    if root.value.size != 1:
        raise ContractError(f"backward requires a scalar root, got shape {root.shape}")
    order = _topo(root)
    for node in order:
        node.adjoint = None
    root.adjoint = np.ones_like(root.value)
    for node in reversed(order):
        g = node.adjoint
        if g is None or node.op == "input" or not node.requires_grad:
            continue
        grads = node._bwd(g, *[p.value for p in node.parents], node.value)
        for p, gp in zip(node.parents, grads):
            if gp is None or not p.requires_grad:
                continue
            if p.adjoint is None:
                p.adjoint = gp
            else:
                p.adjoint = p.adjoint + gp
    for node in order:
        if node.adjoint is None:
            node.adjoint = np.zeros_like(node.value)


def grad(root: Node, inputs: Iterable[Node]) -> list[np.ndarray]:
    backward(root)
    return [n.adjoint for n in inputs]


def finite_diff_grad(f: Callable[[np.ndarray], float], x, eps: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``."""
    if eps <= 0:
        raise ContractError("eps must be positive")
    x = np.array(x, dtype=DTYPE)
    out = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = out.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + eps
        fp = float(f(x))
        flat[k] = orig - eps
        fm = float(f(x))
        flat[k] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError("finite_diff_grad: f returned a non-finite value")
        gflat[k] = (fp - fm) / (2.0 * eps)
    return out


def relative_error(a, b, floor: float = 1e-12) -> float:
    """max |a-b| / max(max|a|, max|b|, floor), a scale-aware error measure."""
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), floor)
    return float(np.abs(a - b).max(initial=0.0) / denom)
