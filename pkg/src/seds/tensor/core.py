"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array. Operations on tensors that require
gradients record their parents and a backward closure; :func:`backward`
replays the recorded graph in reverse creation order, which is a valid
topological order because a node can only be created after its parents.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import special

from seds import _kernels

_counter = itertools.count()
_default_dtype = np.dtype(np.float32)
_grad_enabled = True


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class NonFiniteError(FloatingPointError):
    """Raised when NaN or Inf shows up where finite values are required."""


def get_default_dtype() -> np.dtype:
    return _default_dtype


def set_default_dtype(dtype) -> None:
    global _default_dtype
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dt}; use float32 or float64")
    _default_dtype = dt


@contextlib.contextmanager
def default_dtype(dtype):
    prev = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """N-dimensional float array that can take part in a gradient tape."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            arr = np.asarray(data)
            dtype = arr.dtype if arr.dtype.kind == "f" else _default_dtype
        self.data = np.asarray(data, dtype=dtype, order="C")
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self._seq = next(_counter)

    @property
    def shape(self) -> tuple:
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
        return Tensor(self.data, dtype=self.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def is_finite(self) -> bool:
        ok = bool(np.all(np.isfinite(self.data)))
        if self.grad is not None:
            ok = ok and bool(np.all(np.isfinite(self.grad)))
        return ok

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def backward(self) -> None:
        backward(self)

    # arithmetic sugar
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

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, a, b):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))


class Parameter(Tensor):
    """Leaf tensor that always requires a gradient."""

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _as_tensor(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


def _make(data: np.ndarray, parents: Sequence[Tensor], fn: Callable) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = fn
    return out


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if root.ndim != 0:
        raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        raise ValueError("root does not require grad")

    nodes = {}
    stack = [root]
    while stack:
        node = stack.pop()
        if id(node) in nodes:
            continue
        nodes[id(node)] = node
        stack.extend(p for p in node._parents if p.requires_grad)

    grads = {id(root): np.ones_like(root.data)}
    for node in sorted(nodes.values(), key=lambda n: n._seq, reverse=True):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            g = g.astype(node.dtype, copy=False)
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def _reduce_to(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_elementwise(a: Tensor, b: Tensor, op: str) -> None:
    sa, sb = a.shape, b.shape
    if sa == sb or a.ndim == 0 or b.ndim == 0:
        return
    short, long_ = (sa, sb) if len(sa) <= len(sb) else (sb, sa)
    if long_[len(long_) - len(short):] != short:
        raise ShapeError(f"{op}: shapes {sa} and {sb} differ beyond leading batch dims")


# elementwise binary ops

def add(a, b) -> Tensor:
    a, b = _as_tensor(a, b if isinstance(b, Tensor) else None), _as_tensor(b, a if isinstance(a, Tensor) else None)
    _check_elementwise(a, b, "add")

    def fn(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _make(a.data + b.data, (a, b), fn)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a, b if isinstance(b, Tensor) else None), _as_tensor(b, a if isinstance(a, Tensor) else None)
    _check_elementwise(a, b, "sub")

    def fn(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return _make(a.data - b.data, (a, b), fn)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a, b if isinstance(b, Tensor) else None), _as_tensor(b, a if isinstance(a, Tensor) else None)
    _check_elementwise(a, b, "mul")

    def fn(g):
        return _reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), fn)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a, b if isinstance(b, Tensor) else None), _as_tensor(b, a if isinstance(a, Tensor) else None)
    _check_elementwise(a, b, "div")
    out = a.data / b.data

    def fn(g):
        return _reduce_to(g / b.data, a.shape), _reduce_to(-g * out / b.data, b.shape)

    return _make(out, (a, b), fn)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def power(a: Tensor, exponent: float) -> Tensor:
    p = float(exponent)

    def fn(g):
        return (g * p * a.data ** (p - 1.0),)

    return _make(a.data**p, (a,), fn)


# elementwise unary ops

def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return _make(np.where(pos, a.data, 0.0).astype(a.dtype), (a,), lambda g: (g * pos,))


_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


def gelu(a: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    x = a.data
    cdf = 0.5 * (1.0 + special.erf(x * _INV_SQRT2))

    def fn(g):
        return (g * (cdf + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)),)

    return _make((x * cdf).astype(a.dtype), (a,), fn)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def remainder(a: Tensor, modulus) -> Tensor:
    """Floating-point ``a mod modulus`` mapped into [0, modulus).

    The derivative is taken as 1 everywhere (the jump points have measure
    zero). ``modulus`` is a constant array broadcastable to ``a``.
    """
    m = np.asarray(modulus, dtype=a.dtype)
    out = np.mod(a.data, m)
    out = np.where(out >= m, out - m, out)
    out = np.where(out < 0, 0.0, out).astype(a.dtype)
    return _make(out, (a,), lambda g: (g,))


# reductions and shape ops

def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(out, dtype=a.dtype), (a,), fn)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([a.shape[i] for i in axes]))
    return sum_(a, axis, keepdims) * (1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def getitem(a: Tensor, index) -> Tensor:
    out = a.data[index]

    def fn(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(np.array(out, dtype=a.dtype), (a,), fn)


def take(a: Tensor, indices, axis: int = 0) -> Tensor:
    """Gather slices along ``axis`` with an integer index array of any shape."""
    idx = np.asarray(indices, dtype=np.int64)
    axis = axis % a.ndim
    out = np.take(a.data, idx, axis=axis)

    def fn(g):
        moved = np.moveaxis(np.zeros_like(a.data), axis, 0)
        gm = np.moveaxis(g, tuple(range(axis, axis + idx.ndim)), tuple(range(idx.ndim)))
        gm = gm.reshape((idx.size,) + moved.shape[1:])
        np.add.at(moved, idx.ravel(), gm)
        return (np.moveaxis(moved, 0, axis),)

    return _make(out, (a,), fn)


def take_along(a: Tensor, indices, axis: int = 1) -> Tensor:
    """Batched gather: ``out[b, m] = a[b, indices[b, m]]`` along ``axis``.

    ``indices`` has the leading dims of ``a`` up to and including ``axis``;
    remaining dims of ``a`` ride along.
    """
    idx = np.asarray(indices, dtype=np.int64)
    axis = axis % a.ndim
    if idx.ndim != axis + 1 or idx.shape[:axis] != a.shape[:axis]:
        raise ShapeError(f"take_along: index shape {idx.shape} does not match {a.shape} at axis {axis}")
    trail = a.ndim - axis - 1
    full_idx = idx.reshape(idx.shape + (1,) * trail)
    out = np.take_along_axis(a.data, full_idx, axis=axis)
    out = np.broadcast_to(out, idx.shape + a.shape[axis + 1:])
    lead = int(np.prod(a.shape[:axis], dtype=np.int64))
    n = a.shape[axis]

    def fn(g):
        flat = np.zeros((lead * n,) + a.shape[axis + 1:], dtype=a.dtype)
        offs = (np.arange(lead) * n).reshape(a.shape[:axis] + (1,))
        np.add.at(flat, (idx + offs).ravel(), g.reshape((-1,) + a.shape[axis + 1:]))
        return (flat.reshape(a.shape),)

    return _make(np.ascontiguousarray(out), (a,), fn)


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [_as_tensor(x) for x in xs]
    axis = axis % xs[0].ndim
    for x in xs[1:]:
        if x.ndim != xs[0].ndim or any(
            s != t for i, (s, t) in enumerate(zip(x.shape, xs[0].shape)) if i != axis
        ):
            raise ShapeError(f"concat: shapes {xs[0].shape} and {x.shape} differ off axis {axis}")
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(np.concatenate([x.data for x in xs], axis=axis), xs, fn)


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [_as_tensor(x) for x in xs]
    shape = xs[0].shape
    axis = axis % (len(shape) + 1)
    return concat([reshape(x, shape[:axis] + (1,) + shape[axis:]) for x in xs], axis=axis)


def pad(a: Tensor, widths: Sequence[tuple]) -> Tensor:
    """Zero padding; ``widths`` is one (before, after) pair per dimension."""
    widths = tuple(tuple(w) for w in widths)
    sl = tuple(slice(b, b + n) for (b, _), n in zip(widths, a.shape))
    return _make(np.pad(a.data, widths), (a,), lambda g: (g[sl],))


def diagonal(a: Tensor) -> Tensor:
    """Main diagonal of the last two (square) axes."""
    if a.shape[-1] != a.shape[-2]:
        raise ShapeError(f"diagonal needs square trailing dims, got {a.shape}")
    n = a.shape[-1]
    idx = np.arange(n)

    def fn(g):
        full = np.zeros_like(a.data)
        full[..., idx, idx] = g
        return (full,)

    return _make(np.ascontiguousarray(a.data[..., idx, idx]), (a,), fn)


# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading batch dims broadcast."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} x {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from exc

    def fn(g):
        ga = gb = None
        if a.requires_grad:
            ga = _reduce_to(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _reduce_to(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _make(out, (a, b), fn)


# normalisations

def _mask_for(x: np.ndarray, mask) -> Optional[np.ndarray]:
    if mask is None:
        return None
    m = np.asarray(mask, dtype=bool)
    try:
        return np.broadcast_to(m, x.shape)
    except ValueError as exc:
        raise ShapeError(f"mask shape {m.shape} does not broadcast to {x.shape}") from exc


def softmax(a: Tensor, axis: int = -1, mask=None, allow_empty: bool = False) -> Tensor:
    """Max-stabilised softmax; masked entries get probability 0.

    A slice with every entry masked raises unless ``allow_empty`` is set, in
    which case the whole slice is 0.
    """
    m = _mask_for(a.data, mask)
    x = a.data
    if m is None:
        z = x - np.max(x, axis=axis, keepdims=True)
        e = np.exp(z)
        out = e / e.sum(axis=axis, keepdims=True)
    else:
        any_valid = m.any(axis=axis, keepdims=True)
        if not allow_empty and not np.all(any_valid):
            raise ValueError("softmax: a slice has every entry masked")
        neg = np.where(m, x, -np.inf)
        mx = np.max(neg, axis=axis, keepdims=True)
        mx = np.where(any_valid, mx, 0.0)
        e = np.where(m, np.exp(neg - mx), 0.0)
        s = e.sum(axis=axis, keepdims=True)
        out = e / np.where(s > 0, s, 1.0)
    out = out.astype(a.dtype, copy=False)

    def fn(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _make(out, (a,), fn)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    z = x - np.max(x, axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    sm = np.exp(out)

    def fn(g):
        return (g - sm * g.sum(axis=axis, keepdims=True),)

    return _make(out, (a,), fn)


def layer_norm(a: Tensor, gain: Optional[Tensor] = None, bias: Optional[Tensor] = None, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis. Constant slices map to exactly zero."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (xc * rstd).astype(a.dtype, copy=False)

    def fn(g):
        gx = rstd * (g - g.mean(axis=-1, keepdims=True) - xhat * (g * xhat).mean(axis=-1, keepdims=True))
        return (gx,)

    out = _make(xhat, (a,), fn)
    if gain is not None:
        out = out * gain
    if bias is not None:
        out = out + bias
    return out


def l2_normalize(a: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    x = a.data
    norm = np.sqrt((x * x).sum(axis=axis, keepdims=True))
    big = norm > eps
    denom = np.where(big, norm, eps)
    out = (x / denom).astype(a.dtype, copy=False)

    def fn(g):
        proj = np.where(big, (g * out).sum(axis=axis, keepdims=True), 0.0)
        return ((g - out * proj) / denom,)

    return _make(out, (a,), fn)


# sequence sampling

def interp_gather(seq: Tensor, pos: Tensor, length=None) -> Tensor:
    """Circular linear-interpolation gather.

    ``seq`` is [..., T, D] and ``pos`` is [..., T, N] with positions already
    wrapped into [0, length). ``length`` (default T) is the ring size and may
    vary over the leading dims; it must not exceed T. Returns [..., T, N, D].
    """
    seq, pos = _as_tensor(seq), _as_tensor(pos, seq)
    if seq.ndim < 2 or pos.shape[:-1] != seq.shape[:-1]:
        raise ShapeError(f"interp_gather: seq {seq.shape} and pos {pos.shape} disagree")
    t = seq.shape[-2]
    lead = seq.shape[:-2]
    ln = np.asarray(t if length is None else length, dtype=np.int64)
    try:
        ln_b = np.broadcast_to(ln, lead) if lead else ln.reshape(())
    except ValueError as exc:
        raise ShapeError(f"interp_gather: length {ln.shape} does not fit {lead}") from exc
    if np.any(ln_b < 1) or np.any(ln_b > t):
        raise ValueError(f"interp_gather: ring length must be in [1, {t}]")
    lim = ln_b.reshape(lead + (1, 1)) if lead else ln_b
    p = pos.data
    if not np.all(np.isfinite(p)) or np.any(p < 0) or np.any(p >= lim):
        raise ValueError("interp_gather: positions must lie in [0, length)")
    ln_c = np.array(ln_b, dtype=np.int64)
    out = _kernels.interp_gather_forward(seq.data, p, ln_c)

    def fn(g):
        return _kernels.interp_gather_backward(seq.data, p, ln_c, np.ascontiguousarray(g))

    return _make(out, (seq, pos), fn)


def fine_grained_scores(sim: Tensor, clip_mask, word_mask) -> Tensor:
    """Fused masked column/row softmax-weighted reduction.

    ``sim`` is [..., T, L]. Returns [..., 2] holding the word-side score
    (mean over valid words of sum_i sim * colsoftmax) and the clip-side score
    (mean over valid clips of sum_j sim * rowsoftmax).
    """
    cm = np.ascontiguousarray(np.broadcast_to(np.asarray(clip_mask, bool), sim.shape[:-1]))
    wm = np.ascontiguousarray(np.broadcast_to(np.asarray(word_mask, bool), sim.shape[:-2] + sim.shape[-1:]))
    x = np.ascontiguousarray(sim.data)
    scores, cache = _kernels.fine_grained_forward(x, cm, wm)

    def fn(g):
        return (_kernels.fine_grained_backward(x, cm, wm, cache, np.ascontiguousarray(g)),)

    return _make(scores, (sim,), fn)


def check_finite(t: Tensor, what: str = "tensor") -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise NonFiniteError(f"{what} contains NaN or Inf")
    return t
