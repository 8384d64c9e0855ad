"""Dense tensors with reverse-mode autodiff and an Adam optimizer.

Every differentiable primitive records a node carrying its parents and a
backward rule. Backward rules are written with the same primitives, so a
backward pass run with ``create_graph=True`` is itself recorded and can be
differentiated again (needed by the gradient penalty).
"""

from __future__ import annotations

import contextlib
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "DimensionError",
    "NonFiniteError",
    "UsageError",
    "no_grad",
    "is_grad_enabled",
    "tensor",
    "matmul",
    "activation",
    "leaky_relu",
    "relu",
    "tanh",
    "concat",
    "softmax",
    "softmax_cross_entropy",
    "grad_norm",
    "tape",
    "grad",
    "backward",
    "AdamState",
    "adam_init",
    "adam_step",
    "gaussian_sample",
    "interpolate",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class NonFiniteError(FloatingPointError):
    """A primitive produced NaN or Inf."""


class UsageError(RuntimeError):
    """The autodiff API was called incorrectly."""


_seq = itertools.count()
_grad_enabled = True


def is_grad_enabled() -> bool:
    return _grad_enabled


@contextlib.contextmanager
def _grad_mode(enabled: bool) -> Iterator[None]:
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = enabled
    try:
        yield
    finally:
        _grad_enabled = prev


def no_grad():
    """Context manager that stops recording operations."""
    return _grad_mode(False)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_seq", "_op")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._seq = -1
        self._op = ""

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_scalar()

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def requires_grad_(self, flag: bool = True) -> Tensor:
        if not self.is_leaf:
            raise UsageError("requires_grad_ only applies to leaf tensors")
        self.requires_grad = flag
        return self

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_lift(other, self)))

    def __rsub__(self, other):
        return add(_lift(other, self), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise UsageError("division is only defined by constants")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _raise_scalar():
    raise UsageError("item() requires a single-element tensor")


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _lift(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _record(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    # a single reduction catches NaN/Inf; the sum itself overflowing is the rare slow path
    if not math.isfinite(data.sum()) and not np.isfinite(data).all():
        raise NonFiniteError(f"non-finite value produced by {op}")
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out._seq = next(_seq)
        out._op = op
    return out


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def _unbroadcast_axes(src: tuple[int, ...], dst: tuple[int, ...]) -> tuple[tuple[int, ...], int]:
    lead = len(src) - len(dst)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, d in enumerate(dst) if d == 1 and src[i + lead] != 1
    )
    return axes, lead


def sum_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Reduce a broadcast result back to ``shape``."""
    shape = tuple(shape)
    if x.shape == shape:
        return x
    axes, lead = _unbroadcast_axes(x.shape, shape)
    out = x.data.sum(axis=axes, keepdims=True)
    if lead:
        out = out.reshape(out.shape[lead:])
    src_shape = x.shape
    return _record(out, (x,), lambda g: (broadcast_to(g, src_shape),), "sum_to")


def broadcast_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    shape = tuple(shape)
    if x.shape == shape:
        return x
    src_shape = x.shape
    out = np.broadcast_to(x.data, shape).copy()
    return _record(out, (x,), lambda g: (sum_to(g, src_shape),), "broadcast_to")


def add(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}") from exc
    sa, sb = a.shape, b.shape
    return _record(out, (a, b), lambda g: (sum_to(g, sa), sum_to(g, sb)), "add")


def neg(a: Tensor) -> Tensor:
    return _record(-a.data, (a,), lambda g: (neg(g),), "neg")


def mul(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}") from exc
    sa, sb = a.shape, b.shape

    def back(g):
        ga = sum_to(mul(g, b), sa) if a.requires_grad else None
        gb = sum_to(mul(g, a), sb) if b.requires_grad else None
        return ga, gb

    return _record(out, (a, b), back, "mul")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product."""
    a, b = _lift(a), _lift(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} and {b.shape} do not align")

    def back(g):
        ga = matmul(g, transpose(b)) if a.requires_grad else None
        gb = matmul(transpose(a), g) if b.requires_grad else None
        return ga, gb

    return _record(a.data @ b.data, (a, b), back, "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError("transpose expects a 2-D tensor")
    return _record(a.data.T.copy(), (a,), lambda g: (transpose(g),), "transpose")


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc
    return _record(out, (a,), lambda g: (reshape(g, src),), "reshape")


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    src = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)
    if axis is None:
        kshape = (1,) * a.ndim
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(ax % a.ndim for ax in axes)
        kshape = tuple(1 if i in axes else d for i, d in enumerate(src))
    return _record(
        np.asarray(out), (a,), lambda g: (broadcast_to(reshape(g, kshape), src),), "sum"
    )


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def getitem(a: Tensor, idx) -> Tensor:
    src = a.shape
    out = np.array(a.data[idx], copy=True)
    return _record(out, (a,), lambda g: (_scatter(g, idx, src),), "getitem")


def _scatter(g: Tensor, idx, shape) -> Tensor:
    """Adjoint of ``getitem``: place ``g`` at ``idx`` inside zeros of ``shape``."""
    out = np.zeros(shape, dtype=g.dtype)
    np.add.at(out, idx, g.data)
    return _record(out, (g,), lambda h: (getitem(h, idx),), "scatter")


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])
    ndim = out.ndim

    def back(g):
        parts = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl = [slice(None)] * ndim
            sl[axis] = slice(int(lo), int(hi))
            parts.append(getitem(g, tuple(sl)))
        return tuple(parts)

    return _record(out, tensors, back, "concat")


def square(a: Tensor) -> Tensor:
    return _record(a.data * a.data, (a,), lambda g: (mul(g, mul(a, 2.0)),), "square")


def _masked(a: Tensor, mask: np.ndarray, op: str) -> Tensor:
    m = Tensor(mask.astype(a.dtype))
    return _record(a.data * m.data, (a,), lambda g: (mul(g, m),), op)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError("leaky_relu slope must lie in (0, 1)")
    return _masked(x, np.where(x.data > 0, 1.0, slope), "leaky_relu")


def relu(x: Tensor) -> Tensor:
    return _masked(x, (x.data > 0).astype(np.float64), "relu")


def tanh(x: Tensor) -> Tensor:
    y_data = np.tanh(x.data)

    def back(g):
        y = tanh(x)  # re-evaluated so the derivative stays on the graph
        return (mul(g, add(1.0, neg(mul(y, y)))),)

    return _record(y_data, (x,), back, "tanh")


def activation(x: Tensor, kind: str, slope: float = 0.2) -> Tensor:
    if kind == "leaky_relu":
        return leaky_relu(x, slope)
    if kind == "relu":
        return relu(x)
    if kind == "tanh":
        return tanh(x)
    raise ValueError(f"unknown activation {kind!r}")


def _safe_reciprocal(a: Tensor) -> Tensor:
    """1/a where a > 0, zero elsewhere."""
    pos = a.data > 0
    out = np.where(pos, 1.0 / np.where(pos, a.data, 1.0), 0.0).astype(a.dtype)

    def back(g):
        r = _safe_reciprocal(a)
        return (neg(mul(g, mul(r, r))),)

    return _record(out, (a,), back, "reciprocal")


def grad_norm(g: Tensor) -> Tensor:
    """Per-row Euclidean norm of a ``b x d`` tensor; differentiable.

    The derivative at a zero row is taken as zero.
    """
    if g.ndim != 2:
        raise DimensionError("grad_norm expects a 2-D tensor")
    norms = np.sqrt((g.data * g.data).sum(axis=1))

    def back(h):
        n = grad_norm(g)
        scale = reshape(mul(h, _safe_reciprocal(n)), (-1, 1))
        return (mul(g, scale),)

    return _record(norms, (g,), back, "grad_norm")


def softmax(x: Tensor) -> Tensor:
    """Row-wise softmax of a 2-D tensor."""
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s_data = e / e.sum(axis=1, keepdims=True)

    def back(g):
        s = softmax(x)
        inner = sum_(mul(g, s), axis=1, keepdims=True)
        return (mul(s, add(g, neg(inner))),)

    return _record(s_data, (x,), back, "softmax")


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of ``-log softmax(logits)[label]``."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError("logits must be b x c with one label per row")
    b, c = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"labels must lie in [0, {c})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    loss = np.asarray((lse - z[np.arange(b), labels]).mean(), dtype=logits.dtype)
    onehot = np.zeros((b, c), dtype=logits.dtype)
    onehot[np.arange(b), labels] = 1.0
    target = Tensor(onehot)

    def back(g):
        diff = add(softmax(logits), neg(target))
        return (mul(diff, mul(g, 1.0 / b)),)

    return _record(loss, (logits,), back, "softmax_cross_entropy")


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------


def tape(root: Tensor) -> list[Tensor]:
    """Recorded nodes reachable from ``root``, in reverse recording order."""
    seen: set[int] = set()
    nodes: list[Tensor] = []
    stack = [root]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        if t._backward is not None:
            nodes.append(t)
            stack.extend(t._parents)
    nodes.sort(key=lambda t: t._seq, reverse=True)
    return nodes


def _run_backward(root: Tensor, create_graph: bool) -> dict[int, tuple[Tensor, Tensor]]:
    if root.size != 1:
        raise UsageError(f"backward needs a scalar root, got shape {root.shape}")
    grads: dict[int, Tensor] = {id(root): Tensor(np.ones_like(root.data))}
    leaves: dict[int, tuple[Tensor, Tensor]] = {}
    with _grad_mode(create_graph):
        if root.is_leaf:
            leaves[id(root)] = (root, grads[id(root)])
        for node in tape(root):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if parent.is_leaf:
                    prev = leaves.get(key)
                    leaves[key] = (parent, pg if prev is None else add(prev[1], pg))
                else:
                    prev = grads.get(key)
                    grads[key] = pg if prev is None else add(prev, pg)
    return leaves


def grad(root: Tensor, inputs: Sequence[Tensor], create_graph: bool = False) -> list[Tensor]:
    """Gradients of scalar ``root`` w.r.t. each leaf in ``inputs``.

    Inputs the root does not depend on get a zero gradient. With
    ``create_graph`` the returned tensors are themselves differentiable.
    """
    leaves = _run_backward(root, create_graph)
    out = []
    for x in inputs:
        hit = leaves.get(id(x))
        out.append(hit[1] if hit is not None else Tensor(np.zeros_like(x.data)))
    return out


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    for leaf, g in _run_backward(root, create_graph=False).values():
        leaf.grad = g.data.copy() if leaf.grad is None else leaf.grad + g.data


# ---------------------------------------------------------------------------
# optimizer and sampling
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_init(params: Sequence[Tensor], lr=1e-4, beta1=0.5, beta2=0.9, eps=1e-8) -> AdamState:
    return AdamState(
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
        m=[np.zeros_like(p.data) for p in params],
        v=[np.zeros_like(p.data) for p in params],
    )


def adam_step(params: Sequence[Tensor], grads: Sequence, state: AdamState):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionError("params, grads and optimizer state differ in length")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for i, (p, g) in enumerate(zip(params, grads)):
        g = g.data if isinstance(g, Tensor) else np.asarray(g)
        if g.shape != p.shape:
            raise DimensionError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m = state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        v = state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * (g * g)
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data - update).astype(p.dtype, copy=False)
        if not np.all(np.isfinite(p.data)):
            raise NonFiniteError("non-finite parameter after Adam step")
    return params, state


def gaussian_sample(rng: np.random.Generator, shape, dtype=np.float64) -> Tensor:
    return Tensor(rng.standard_normal(shape).astype(dtype, copy=False))


def interpolate(real, fake, rng: np.random.Generator | None = None, eps=None) -> Tensor:
    """Per-row convex combination ``eps * real + (1 - eps) * fake``.

    ``eps`` is drawn from U(0, 1) per row unless given. The result is a fresh
    leaf that requires grad, ready for a gradient penalty.
    """
    r = real.data if isinstance(real, Tensor) else np.asarray(real)
    f = fake.data if isinstance(fake, Tensor) else np.asarray(fake)
    if r.shape != f.shape or r.ndim != 2:
        raise DimensionError(f"interpolate needs equal 2-D shapes, got {r.shape} and {f.shape}")
    if eps is None:
        eps = rng.random((r.shape[0], 1))
    eps = np.broadcast_to(np.asarray(eps, dtype=r.dtype).reshape(-1, 1), (r.shape[0], 1))
    return Tensor(eps * r + (1.0 - eps) * f, requires_grad=True)
