"""Differentiable operators.

Binary elementwise ops follow numpy broadcasting; the backward rule sums the
upstream gradient back down to each operand's shape.  Everything else checks
shapes explicitly and raises :class:`ShapeError` naming the op.
"""
import builtins

import numpy as np
from scipy.special import expit

from .. import _kernels as K
from ..errors import ShapeError
from .core import Tensor, as_tensor, record


def _pair(a, b):
    if isinstance(a, Tensor):
        b = as_tensor(b, dtype=a.dtype)
    elif isinstance(b, Tensor):
        a = as_tensor(a, dtype=b.dtype)
    else:
        a, b = as_tensor(a), as_tensor(b)
    return a, b


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = _pair(a, b)
    _broadcast_shape("add", a, b)
    return record("add", (a, b), a.data + b.data,
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = _pair(a, b)
    _broadcast_shape("sub", a, b)
    return record("sub", (a, b), a.data - b.data,
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    """Hadamard product (with broadcasting)."""
    a, b = _pair(a, b)
    _broadcast_shape("mul", a, b)
    return record("mul", (a, b), a.data * b.data,
                  lambda g: (_unbroadcast(g * b.data, a.shape),
                             _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = _pair(a, b)
    _broadcast_shape("div", a, b)
    out = a.data / b.data
    return record("div", (a, b), out,
                  lambda g: (_unbroadcast(g / b.data, a.shape),
                             _unbroadcast(-g * out / b.data, b.shape)))


def neg(a):
    return record("neg", (a,), -a.data, lambda g: (-g,))


def square(a):
    return record("square", (a,), a.data * a.data, lambda g: (2.0 * a.data * g,))


def abs(a):  # noqa: A001 - mirrors numpy naming
    return record("abs", (a,), np.abs(a.data), lambda g: (np.sign(a.data) * g,))


def sigmoid(a):
    y = expit(a.data)
    return record("sigmoid", (a,), y, lambda g: (g * y * (1.0 - y),))


def tanh(a):
    y = np.tanh(a.data)
    return record("tanh", (a,), y, lambda g: (g * (1.0 - y * y),))


def gelu(a):
    """GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    x = a.data
    out, t = K.gelu_fwd(x)
    return record("gelu", (a,), out, lambda g: (K.gelu_bwd(x, t, g),))


# ---------------------------------------------------------------- linear algebra

def matmul(a, b):
    """``a @ b`` with numpy batching rules (both operands at least 2-D)."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb
    return record("matmul", (a, b), out, bw)


def linear(x, W, b=None):
    """``x @ W + b`` over the last axis; ``W`` is (in, out)."""
    if W.ndim != 2 or x.shape[-1] != W.shape[0]:
        raise ShapeError("linear", x.shape, W.shape)
    if b is not None and b.shape != (W.shape[1],):
        raise ShapeError("linear", W.shape, b.shape, detail="bias must be (out,)")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, W.shape[0])
    out = x2 @ W.data
    if b is not None:
        out += b.data
    out = out.reshape(lead + (W.shape[1],))
    inputs = (x, W) if b is None else (x, W, b)

    def bw(g):
        g2 = g.reshape(-1, W.shape[1])
        gx = (g2 @ W.data.T).reshape(x.shape) if x.requires_grad else None
        gW = x2.T @ g2 if W.requires_grad else None
        if b is None:
            return gx, gW
        return gx, gW, g2.sum(axis=0)
    return record("linear", inputs, out, bw)


# ---------------------------------------------------------------- shape ops

def reshape(a, shape):
    shape = tuple(int(s) for s in shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, shape) from None
    return record("reshape", (a,), out, lambda g: (g.reshape(a.shape),))


def permute(a, axes):
    axes = tuple(int(ax) for ax in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError("permute", a.shape, axes, detail="axes must be a permutation")
    inv = tuple(np.argsort(axes))
    out = np.ascontiguousarray(a.data.transpose(axes))
    return record("permute", (a,), out,
                  lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0]
    axis = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(
                t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != axis):
            raise ShapeError("concat", ref.shape, t.shape, detail=f"axis={axis}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def bw(g):
        idx = [slice(None)] * g.ndim
        res = []
        for i in range(len(tensors)):
            idx[axis] = slice(bounds[i], bounds[i + 1])
            res.append(g[tuple(idx)])
        return tuple(res)
    return record("concat", tuple(tensors), out, bw)


def split(a, sections, axis=0):
    """Split into equal ``sections`` (int) or at the given sizes (list)."""
    axis = axis % a.ndim
    n = a.shape[axis]
    if isinstance(sections, int):
        if n % sections:
            raise ShapeError("split", a.shape, (sections,), detail=f"axis {axis} not divisible")
        sizes = [n // sections] * sections
    else:
        sizes = list(sections)
        if builtins.sum(sizes) != n:
            raise ShapeError("split", a.shape, tuple(sizes), detail="sizes must sum to extent")
    out = []
    start = 0
    for s in sizes:
        idx = [slice(None)] * a.ndim
        idx[axis] = slice(start, start + s)
        out.append(getitem(a, tuple(idx)))
        start += s
    return out


def getitem(a, idx):
    out = a.data[idx]
    if not isinstance(out, np.ndarray):
        out = np.asarray(out, dtype=a.dtype)
    basic = not _is_advanced(idx)
    if basic:
        out = np.ascontiguousarray(out)

    def bw(g):
        ga = np.zeros_like(a.data)
        if basic:
            ga[idx] += g
        else:
            np.add.at(ga, idx, g)
        return (ga,)
    return record("getitem", (a,), out, bw)


def _is_advanced(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray, Tensor)) for i in items)


def gather(table, index):
    """Rows of ``table`` selected by an integer array (repeats allowed)."""
    index = np.asarray(index)
    if index.size and (index.min() < 0 or index.max() >= table.shape[0]):
        raise ShapeError("gather", table.shape, index.shape, detail="index out of range")
    out = table.data[index]

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, index, g)
        return (gt,)
    return record("gather", (table,), out, bw)


def roll(a, shift, axes):
    """Cyclic roll; element at i moves to (i + shift) mod n along each axis."""
    if isinstance(axes, int):
        axes, shift = (axes,), (shift,)
    elif isinstance(shift, int):
        shift = (shift,) * len(axes)
    shift, axes = tuple(shift), tuple(axes)
    out = np.roll(a.data, shift, axis=axes)
    back = tuple(-s for s in shift)
    return record("roll", (a,), out, lambda g: (np.roll(g, back, axis=axes),))


# ---------------------------------------------------------------- reductions

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a, axis=None, keepdims=False):  # noqa: A001
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)
    out = np.asarray(out, dtype=a.dtype)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)
    return record("sum", (a,), out, bw)


def mean(a, axis=None, keepdims=False):
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    out = np.asarray(a.data.mean(axis=axes, keepdims=keepdims), dtype=a.dtype)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape).astype(a.dtype),)
    return record("mean", (a,), out, bw)


# ---------------------------------------------------------------- normalisation

def softmax(a, axis=-1):
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError("softmax", a.shape, (axis,), detail="axis out of range")
    axis = axis % a.ndim
    moved = np.moveaxis(a.data, axis, -1)
    shp = moved.shape
    y2 = K.softmax_fwd(np.ascontiguousarray(moved).reshape(-1, shp[-1]))
    out = np.ascontiguousarray(np.moveaxis(y2.reshape(shp), -1, axis))

    def bw(g):
        g2 = np.ascontiguousarray(np.moveaxis(g, axis, -1)).reshape(-1, shp[-1])
        dx = K.softmax_bwd(y2, g2).reshape(shp)
        return (np.ascontiguousarray(np.moveaxis(dx, -1, axis)),)
    return record("softmax", (a,), out, bw)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalise over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    n = x.shape[-1]
    if gamma.shape != (n,) or beta.shape != (n,):
        raise ShapeError("layer_norm", x.shape, gamma.shape, beta.shape)
    x2 = np.ascontiguousarray(x.data).reshape(-1, n)
    y, xhat, rstd = K.layer_norm_fwd(x2, gamma.data, beta.data, eps)

    def bw(g):
        dx, dg, db = K.layer_norm_bwd(np.ascontiguousarray(g).reshape(-1, n),
                                      xhat, rstd, gamma.data)
        return dx.reshape(x.shape), dg, db
    return record("layer_norm", (x, gamma, beta), y.reshape(x.shape), bw)


def dropout(a, p, training, rng=None):
    """Inverted dropout; identity when ``p == 0`` or not training."""
    if not training or p == 0.0:
        return a
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    rng = rng if rng is not None else np.random.default_rng()
    keep = (rng.random(a.shape) >= p).astype(a.dtype) / (1.0 - p)
    return record("dropout", (a,), a.data * keep, lambda g: (g * keep,))


def bilinear_matrix(n_in, scale, dtype=np.float64):
    """(n_in*scale, n_in) interpolation matrix, half-pixel centres, edge clamped."""
    n_out = n_in * scale
    M = np.zeros((n_out, n_in), dtype=dtype)
    for o in range(n_out):
        src = (o + 0.5) / scale - 0.5
        src = min(max(src, 0.0), n_in - 1)
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, n_in - 1)
        w1 = src - i0
        M[o, i0] += 1.0 - w1
        M[o, i1] += w1
    return M


OP_NAMES = (
    "matmul", "add", "mul", "concat", "split", "reshape", "permute", "mean", "sum",
    "sigmoid", "tanh", "gelu", "softmax", "layer_norm", "linear", "dropout",
)
