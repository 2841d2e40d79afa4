"""Reverse-mode autodiff on float64 numpy arrays.

Ops executed under an active ``Tape`` append one record each; ``backward``
replays the records in reverse, so gradient accumulation order is the exact
reverse of execution order and reruns are bit-identical. Outside a tape the
same functions are plain numpy computations.
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from .errors import DegenerateInputError, ShapeMismatchError

_TAPES: list["Tape"] = []


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "is_leaf")

    # keep numpy from consuming Tensor operands in mixed expressions; Python
    # then falls back to the reflected operators below
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.is_leaf = True

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(_coerce(other), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_coerce(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(_coerce(other), self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_coerce(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


class Tape:
    """Execution-order op record; context manager activates it."""

    def __init__(self):
        self._entries = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPES.pop()
        assert popped is self
        return False

    def record(self, out, inputs, backward_fn):
        self._entries.append((out, inputs, backward_fn))

    def backward(self, root, seed=None):
        if seed is None:
            if root.data.size != 1:
                raise ShapeMismatchError(
                    f"backward root must be scalar, got shape {root.shape}")
            seed = np.ones_like(root.data)
        grads = {id(root): np.asarray(seed, dtype=np.float64)}
        for out, inputs, fn in reversed(self._entries):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for inp, gi in zip(inputs, fn(g)):
                if gi is None or not inp.requires_grad:
                    continue
                if inp.is_leaf:
                    if inp.grad is None:
                        inp.grad = np.zeros_like(inp.data)
                    inp.grad += gi
                else:
                    key = id(inp)
                    if key in grads:
                        grads[key] = grads[key] + gi
                    else:
                        grads[key] = gi
        self._entries.clear()


def _coerce(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _active(*tensors):
    if not _TAPES:
        return None
    if any(t.requires_grad for t in tensors):
        return _TAPES[-1]
    return None


def _make(data, inputs, backward_fn):
    out = Tensor(data)
    tape = _active(*inputs)
    if tape is not None:
        out.requires_grad = True
        out.is_leaf = False
        tape.record(out, inputs, backward_fn)
    return out


def _unbroadcast(g, shape):
    # collapse a broadcast gradient back to the operand's shape
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b):
    a, b = _coerce(a), _coerce(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = _coerce(a), _coerce(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape),
                            _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = _coerce(a), _coerce(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = _coerce(a), _coerce(b)
    return _make(a.data / b.data, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * a.data / b.data ** 2, b.shape)))


def neg(a):
    a = _coerce(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def exp(a):
    a = _coerce(a)
    out_data = np.exp(a.data)
    return _make(out_data, (a,), lambda g: (g * out_data,))


def log(a):
    a = _coerce(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a):
    a = _coerce(a)
    out_data = np.sqrt(a.data)
    return _make(out_data, (a,), lambda g: (g / (2.0 * out_data),))


def relu(a):
    a = _coerce(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def matmul(a, b):
    a, b = _coerce(a), _coerce(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeMismatchError(
            f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    return _make(a.data @ b.data, (a, b),
                 lambda g: (g @ b.data.T, a.data.T @ g))


def transpose(a):
    a = _coerce(a)
    return _make(a.data.T, (a,), lambda g: (g.T,))


def reshape(a, shape):
    a = _coerce(a)
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def tsum(a, axis=None, keepdims=False):
    a = _coerce(a)
    shape = a.shape

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        if not keepdims:
            ax = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw)


def tmean(a, axis=None, keepdims=False):
    a = _coerce(a)
    if axis is None:
        n = a.data.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        n = 1
        for i in ax:
            n *= a.shape[i]
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def concat(tensors, axis=0):
    tensors = [_coerce(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.ascontiguousarray(p)
                     for p in np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis),
                 tuple(tensors), bw)


def gather_rows(a, idx):
    a = _coerce(a)
    idx = np.asarray(idx, dtype=np.intp)
    shape = a.shape

    def bw(g):
        ga = np.zeros(shape)
        np.add.at(ga, idx, g)
        return (ga,)

    return _make(a.data[idx], (a,), bw)


def pick(a, idx):
    """Row-wise entry selection from a 2-D tensor: out[i] = a[i, idx[i]]."""
    a = _coerce(a)
    idx = np.asarray(idx, dtype=np.intp)
    n = a.shape[0]
    rows = np.arange(n)

    def bw(g):
        ga = np.zeros(a.shape)
        ga[rows, idx] = g
        return (ga,)

    return _make(a.data[rows, idx], (a,), bw)


def conv2d(x, w, pad=0):
    x, w = _coerce(x), _coerce(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeMismatchError(
            f"conv2d expects NCHW input and OIHW weight, got {x.shape}, {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeMismatchError(
            f"conv2d channel mismatch: input {x.shape[1]}, weight {w.shape[1]}")
    n, _, h, wd = x.shape
    kh, kw = w.shape[2], w.shape[3]

    def bw(g):
        g = np.ascontiguousarray(g)
        return (_kernels.conv2d_grad_input(w.data, g, pad, h, wd),
                _kernels.conv2d_grad_weight(x.data, g, pad, kh, kw))

    return _make(_kernels.conv2d_forward(x.data, w.data, pad), (x, w), bw)


# ---- composites -----------------------------------------------------------

def logsumexp(a, axis, keepdims=False):
    """Stable log-sum-exp; the max shift is a detached constant, which still
    yields the exact softmax gradient."""
    a = _coerce(a)
    m = a.data.max(axis=axis, keepdims=True)
    out = log(tsum(exp(a - m), axis=axis, keepdims=True)) + m
    if not keepdims:
        out = reshape(out, np.squeeze(out.data, axis=axis).shape)
    return out


def masked_logsumexp(a, mask, axis):
    """log sum of exp(a) over entries where mask == 1.

    Entries must be finite and every reduced slice needs at least one
    included entry. The shift is the included max and excluded entries are
    zeroed before the exp, so nothing outside the mask can overflow or
    underflow the slice.
    """
    a = _coerce(a)
    mask = np.asarray(mask, dtype=np.float64)
    if not np.all(mask.sum(axis=axis) > 0):
        raise DegenerateInputError("masked reduction over an empty slice")
    m = np.where(mask > 0, a.data, -np.inf).max(axis=axis, keepdims=True)
    s = tsum(exp((a - m) * mask) * mask, axis=axis, keepdims=True)
    out = log(s) + m
    return reshape(out, np.squeeze(out.data, axis=axis).shape)


def log_softmax(a, axis=-1):
    a = _coerce(a)
    return a - logsumexp(a, axis=axis, keepdims=True)


def softmax(a, axis=-1):
    return exp(log_softmax(a, axis=axis))


def row_normalize(a, name="input"):
    """Scale each row of a 2-D tensor to unit L2 norm."""
    a = _coerce(a)
    norms = np.sqrt((a.data ** 2).sum(axis=1))
    if not np.all(norms > 0.0):
        bad = int(np.argmin(norms))
        raise DegenerateInputError(
            f"{name} row {bad} has zero norm, cosine undefined")
    sq = tsum(a * a, axis=1, keepdims=True)
    return a / sqrt(sq)


def cosine_matrix(a, b):
    """Pairwise cosine similarity, out[i, j] = cos(a_i, b_j).

    Backward touches only the rows that actually appear in upstream grads,
    so a loss term over row k contributes exactly zero to every other row.
    """
    return matmul(row_normalize(a, "left"), transpose(row_normalize(b, "right")))


def global_avg_pool(a):
    a = _coerce(a)
    if a.ndim != 4:
        raise ShapeMismatchError(f"expected NCHW, got {a.shape}")
    return tmean(a, axis=(2, 3))


def channel_stats(a, eps=0.0):
    """Per-channel spatial mean and std of an NCHW map, population variance.

    Returns (mu, sigma) with shape (N, C, 1, 1); ``eps`` is added under the
    square root.
    """
    a = _coerce(a)
    if a.ndim != 4:
        raise ShapeMismatchError(f"expected NCHW, got {a.shape}")
    mu = tmean(a, axis=(2, 3), keepdims=True)
    var = tmean((a - mu) * (a - mu), axis=(2, 3), keepdims=True)
    return mu, sqrt(var + eps)


def finite_difference_grad(f, x, step=1e-5):
    """Central-difference gradient of scalar f at numpy array x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(x)
        flat[i] = orig - step
        lo = f(x)
        flat[i] = orig
        gf[i] = (hi - lo) / (2.0 * step)
    return g


def gradcheck_rel_err(analytic, fd):
    """max over entries of |a - f| / max(1, |a|, |f|)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    fd = np.asarray(fd, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(fd)))
    return float((np.abs(analytic - fd) / denom).max())
