"""Dense row-major arrays with tape-based reverse-mode differentiation.

Gradients are recorded only while a :class:`Tape` is active on the current
thread::

    with Tape() as tape:
        loss = smooth_l1(model(x), y)
    tape.backward(loss)          # fills .grad on leaf tensors

Broadcasting is deliberately narrow: two operands must have equal shapes, or
one shape must be a suffix of the other (leading-axis expansion), or one of
them must be a scalar. Everything else goes through :func:`broadcast`.
"""
from __future__ import annotations

import contextlib
import math
import threading
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import DimensionError

__all__ = [
    "Tensor", "Tape", "tensor", "default_dtype", "get_default_dtype",
    "add", "sub", "mul", "div", "neg", "matmul", "affine", "layer_norm",
    "softmax", "gelu", "sum", "mean", "mean_pool", "scaled_dot_attention",
    "smooth_l1", "l2_norm", "concat", "reshape", "transpose", "broadcast",
    "rope", "square",
]

_state = threading.local()
_DEFAULT_DTYPE = [np.float32]

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


def get_default_dtype() -> type:
    return _DEFAULT_DTYPE[-1]


@contextlib.contextmanager
def default_dtype(dtype) -> Iterator[None]:
    """Temporarily change the dtype used for new parameters and constants."""
    _DEFAULT_DTYPE.append(np.dtype(dtype).type)
    try:
        yield
    finally:
        _DEFAULT_DTYPE.pop()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = _state.tapes = []
    return stack


class Tensor:
    """A real-valued array plus the bookkeeping needed for backprop."""

    __slots__ = ("data", "grad", "requires_grad", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype.kind == "f":
                dtype = data.dtype
            else:
                dtype = get_default_dtype()
        arr = np.ascontiguousarray(data, dtype=dtype)
        if 0 in arr.shape:
            raise DimensionError(f"array extents must be positive, got shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    # construction without validation, used by ops on freshly computed data
    @classmethod
    def _wrap(cls, data: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = data
        t.grad = None
        t.requires_grad = False
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __truediv__ = lambda self, other: div(self, other)
    __neg__ = lambda self: neg(self)
    __matmul__ = lambda self, other: matmul(self, other)

    def __getitem__(self, index) -> "Tensor":
        return _slice(self, index)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis, keepdims)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


class Tape:
    """Ordered record of the primitive operations executed while active.

    Each entry holds the output node, its input nodes and a closure over the
    values saved for the backward rule. Entries are appended in execution
    order, which is a topological order, so :meth:`backward` simply walks the
    record in reverse.
    """

    def __init__(self) -> None:
        self.entries: list[tuple[Tensor, tuple[Tensor, ...], BackwardFn]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        else:  # pragma: no cover - misuse across threads
            raise RuntimeError("tape exited out of order")

    def __len__(self) -> int:
        return len(self.entries)

    def record(self, out: Tensor, parents: tuple[Tensor, ...], backward: BackwardFn) -> None:
        self.entries.append((out, parents, backward))

    def backward(self, output: Tensor, grad: np.ndarray | None = None) -> list[int]:
        """Accumulate d(output)/d(leaf) into ``leaf.grad`` for every leaf requiring grad.

        Returns the tape indices visited, in visiting order (useful for tests).
        """
        if grad is None:
            if output.size != 1:
                raise DimensionError(f"backward needs a scalar output or explicit grad, got {output.shape}")
            grad = np.ones_like(output.data)
        grads: dict[int, np.ndarray] = {id(output): np.asarray(grad, dtype=output.dtype)}
        produced = {id(out) for out, _, _ in self.entries}
        visited: list[int] = []
        for idx in range(len(self.entries) - 1, -1, -1):
            out, parents, fn = self.entries[idx]
            g = grads.pop(id(out), None)
            if g is None:
                continue
            visited.append(idx)
            parent_grads = fn(g)
            for p, pg in zip(parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                if key in produced:
                    prev = grads.get(key)
                    grads[key] = pg if prev is None else prev + pg
                else:
                    p.grad = pg.copy() if p.grad is None else p.grad + pg
        # output itself may be a leaf (no entries)
        if id(output) in grads and id(output) not in produced and output.requires_grad:
            g = grads[id(output)]
            output.grad = g.copy() if output.grad is None else output.grad + g
        return visited


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward: BackwardFn) -> Tensor:
    out = Tensor._wrap(data)
    stack = getattr(_state, "tapes", None)
    if stack:
        for p in parents:
            if p.requires_grad:
                out.requires_grad = True
                stack[-1].record(out, parents, backward)
                break
    return out


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else get_default_dtype()
    return Tensor._wrap(np.asarray(x, dtype=dtype))


def _check_binary(a: Tensor, b: Tensor, op: str) -> None:
    sa, sb = a.shape, b.shape
    if sa == sb or a.ndim == 0 or b.ndim == 0:
        return
    if b.ndim < a.ndim and sa[a.ndim - b.ndim:] == sb:
        return
    if a.ndim < b.ndim and sb[b.ndim - a.ndim:] == sa:
        return
    raise DimensionError(f"{op}: incompatible shapes {sa} and {sb} (only leading-axis expansion is allowed)")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.asarray(g.sum(), dtype=g.dtype)
    return g.reshape((-1,) + shape).sum(axis=0)


def add(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _check_binary(a, b, "add")
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _result(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _check_binary(a, b, "sub")
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _result(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _check_binary(a, b, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return _result(ad * bd, (a, b), backward)


def div(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    _check_binary(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        ga = _unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _result(ad * ad, (a,), lambda g: (2.0 * ad * g,))


def _swap_last(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    ``a`` is (..., m, k). ``b`` is either (k, n), shared across a's leading
    axes, or (..., k, n) with leading axes identical to a's.
    """
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: leading axes differ for {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ _swap_last(bd) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if bd.ndim == 2 and ad.ndim > 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _swap_last(ad) @ g
        return ga, gb

    return _result(ad @ bd, (a, b), backward)


def affine(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` over the last axis of ``x``; w is (k, n), b is (n,)."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"affine: input {x.shape} does not match weight {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise DimensionError(f"affine: bias {b.shape} does not match weight {w.shape}")
    xd, wd = x.data, w.data
    out = xd @ wd
    if b is not None:
        out = out + b.data
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        gx = g @ wd.T if x.requires_grad else None
        g2 = g.reshape(-1, g.shape[-1])
        gw = xd.reshape(-1, xd.shape[-1]).T @ g2 if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _result(out, parents, backward)


def layer_norm(x: Tensor, weight: Tensor | None = None, bias: Tensor | None = None,
               eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis; optional elementwise affine of width D."""
    d = x.shape[-1]
    for p, nm in ((weight, "weight"), (bias, "bias")):
        if p is not None and p.shape != (d,):
            raise DimensionError(f"layer_norm: {nm} {p.shape} does not match width {d}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat
    if weight is not None:
        out = out * weight.data
    if bias is not None:
        out = out + bias.data
    parents = tuple(p for p in (x, weight, bias) if p is not None)

    def backward(g):
        grads = []
        gh = g * weight.data if weight is not None else g
        if x.requires_grad:
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        else:
            gx = None
        grads.append(gx)
        if weight is not None:
            grads.append((g * xhat).reshape(-1, d).sum(axis=0))
        if bias is not None:
            grads.append(g.reshape(-1, d).sum(axis=0))
        return grads

    return _result(out, parents, backward)


def _norm_axis(axis: int, ndim: int, op: str) -> int:
    if not -ndim <= axis < ndim:
        raise DimensionError(f"{op}: axis {axis} out of range for rank {ndim}")
    return axis % ndim


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _norm_axis(axis, x.ndim, "softmax")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (x,), backward)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximated GELU."""
    xd = x.data
    inner = _GELU_C * (xd + 0.044715 * xd ** 3)
    t = np.tanh(inner)
    out = 0.5 * xd * (1.0 + t)

    def backward(g):
        d = 0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * xd * xd)
        return (g * d,)

    return _result(out, (x,), backward)


def _axes(axis, ndim: int, op: str) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(_norm_axis(a, ndim, op) for a in axis))


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _axes(axis, x.ndim, "sum")
    shape = x.shape
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(np.asarray(out), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _axes(axis, x.ndim, "mean")
    shape = x.shape
    count = 1
    for a in axes:
        count *= shape[a]
    out = x.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, shape).copy(),)

    return _result(np.asarray(out), (x,), backward)


def mean_pool(x: Tensor, axis: int) -> Tensor:
    """Average over one axis, dropping it."""
    return mean(x, axis=axis)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, scale: float | None = None) -> Tensor:
    """softmax(q k^T * scale) v over the last two axes.

    q is (..., n, d), k is (..., m, d), v is (..., m, e); leading axes equal.
    """
    if q.ndim < 2 or k.ndim != q.ndim or v.ndim != q.ndim:
        raise DimensionError(f"attention: ranks differ for q{q.shape} k{k.shape} v{v.shape}")
    if q.shape[:-2] != k.shape[:-2] or k.shape[:-1] != v.shape[:-1] or q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"attention: incompatible q{q.shape} k{k.shape} v{v.shape}")
    if scale is None:
        scale = 1.0 / math.sqrt(q.shape[-1])
    qd, kd, vd = q.data, k.data, v.data
    s = (qd @ _swap_last(kd)) * scale
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    p = e / e.sum(axis=-1, keepdims=True)
    out = p @ vd

    def backward(g):
        gv = _swap_last(p) @ g if v.requires_grad else None
        gp = g @ _swap_last(vd)
        gs = p * (gp - (gp * p).sum(axis=-1, keepdims=True)) * scale
        gq = gs @ kd if q.requires_grad else None
        gk = _swap_last(gs) @ qd if k.requires_grad else None
        return gq, gk, gv

    return _result(out, (q, k, v), backward)


def smooth_l1(x: Tensor, y, beta: float = 1.0, reduction: str = "mean") -> Tensor:
    """Elementwise Huber-style loss: 0.5 d^2/beta inside |d| < beta, |d| - beta/2 outside."""
    y = _as_tensor(y, x)
    if x.shape != y.shape:
        raise DimensionError(f"smooth_l1: shapes {x.shape} and {y.shape} differ")
    if beta <= 0:
        raise DimensionError("smooth_l1: beta must be positive")
    d = x.data - y.data
    ad = np.abs(d)
    inside = ad < beta
    elem = np.where(inside, 0.5 * d * d / beta, ad - 0.5 * beta)
    dl = np.where(inside, d / beta, np.sign(d))
    if reduction == "none":
        out = elem
    elif reduction == "sum":
        out = np.asarray(elem.sum())
    elif reduction == "mean":
        out = np.asarray(elem.mean())
    else:
        raise ValueError(f"unknown reduction {reduction!r}")
    n = d.size

    def backward(g):
        if reduction == "mean":
            gd = dl * (g / n)
        else:
            gd = dl * g
        return gd, -gd

    return _result(out, (x, y), backward)


def l2_norm(x: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    axis = _norm_axis(axis, x.ndim, "l2_norm")
    xd = x.data
    n = np.sqrt((xd * xd).sum(axis=axis, keepdims=True))

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        safe = np.where(n > 0, n, 1.0)
        return (np.where(n > 0, xd / safe, 0.0) * g,)

    out = n if keepdims else np.squeeze(n, axis=axis)
    return _result(np.asarray(out), (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise DimensionError("concat: empty input list")
    ndim = tensors[0].ndim
    axis = _norm_axis(axis, ndim, "concat")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != ndim or t.shape[:axis] != ref[:axis] or t.shape[axis + 1:] != ref[axis + 1:]:
            raise DimensionError(f"concat: shape {t.shape} incompatible with {ref} along axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)

    def backward(g):
        return np.split(g, bounds, axis=axis)

    return _result(out, tuple(tensors), backward)


def _slice(x: Tensor, index) -> Tensor:
    if not isinstance(index, tuple):
        index = (index,)
    for item in index:
        if not (isinstance(item, (slice, int, np.integer)) or item is Ellipsis):
            raise DimensionError(f"slice: only basic indexing is supported, got {type(item).__name__}")
    try:
        out = x.data[index]
    except IndexError as exc:
        raise DimensionError(f"slice: {exc}") from None
    if 0 in out.shape:
        raise DimensionError(f"slice: empty result from shape {x.shape}")
    shape, dtype = x.shape, x.dtype

    def backward(g):
        gx = np.zeros(shape, dtype=dtype)
        gx[index] = g
        return (gx,)

    return _result(np.ascontiguousarray(out), (x,), backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot reshape {x.shape} into {shape}") from None
    orig = x.shape
    return _result(out, (x,), lambda g: (g.reshape(orig),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(a % x.ndim for a in axes) != list(range(x.ndim)) or len(axes) != x.ndim:
        raise DimensionError(f"transpose: {axes} is not a permutation for rank {x.ndim}")
    inv = tuple(np.argsort([a % x.ndim for a in axes]))
    out = np.ascontiguousarray(x.data.transpose(axes))
    return _result(out, (x,), lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def broadcast(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Explicit numpy-style expansion of size-1 and missing leading axes."""
    shape = tuple(int(s) for s in shape)
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError:
        raise DimensionError(f"broadcast: cannot expand {x.shape} to {shape}") from None
    orig = x.shape
    lead = len(shape) - len(orig)
    expanded = tuple(i + lead for i, s in enumerate(orig) if s == 1 and shape[i + lead] != 1)

    def backward(g):
        if lead:
            g = g.sum(axis=tuple(range(lead)))
        if expanded:
            g = g.sum(axis=tuple(a - lead for a in expanded), keepdims=True)
        return (g.reshape(orig),)

    return _result(np.ascontiguousarray(out), (x,), backward)


def rope(x: Tensor, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    """Rotate consecutive channel pairs of ``x`` (..., n, d) by per-position angles.

    ``cos`` and ``sin`` are constant (n, d/2) arrays.
    """
    n, d = x.shape[-2], x.shape[-1]
    if d % 2 or cos.shape != (n, d // 2) or sin.shape != cos.shape:
        raise DimensionError(f"rope: table {cos.shape} does not fit input {x.shape}")
    xd = x.data
    x1, x2 = xd[..., 0::2], xd[..., 1::2]
    out = np.empty_like(xd)
    out[..., 0::2] = x1 * cos - x2 * sin
    out[..., 1::2] = x1 * sin + x2 * cos

    def backward(g):
        g1, g2 = g[..., 0::2], g[..., 1::2]
        gx = np.empty_like(g)
        gx[..., 0::2] = g1 * cos + g2 * sin
        gx[..., 1::2] = -g1 * sin + g2 * cos
        return (gx,)

    return _result(out, (x,), backward)
