"""Tensor value type and the reverse-mode tape."""
import contextlib
import threading

import numpy as np

from ..errors import NonFiniteError, ShapeError

_state = threading.local()
_default_dtype = [np.float32]
_check_finite = [False]
# op names whose recorded backward rule is deliberately scaled (self-check harness)
_corrupted_ops = set()


def get_default_dtype():
    return _default_dtype[0]


def set_default_dtype(dtype):
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _default_dtype[0] = dtype


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily switch the dtype used for new tensors and parameters."""
    old = _default_dtype[0]
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _default_dtype[0] = old


def set_check_finite(flag):
    _check_finite[0] = bool(flag)


@contextlib.contextmanager
def check_finite(flag=True):
    old = _check_finite[0]
    _check_finite[0] = bool(flag)
    try:
        yield
    finally:
        _check_finite[0] = old


def _tape():
    tape = getattr(_state, "tape", None)
    if tape is None:
        tape = _state.tape = []
    return tape


def _grad_enabled():
    return getattr(_state, "no_grad", 0) == 0


@contextlib.contextmanager
def no_grad():
    _state.no_grad = getattr(_state, "no_grad", 0) + 1
    try:
        yield
    finally:
        _state.no_grad -= 1


def clear_tape():
    _tape().clear()


def tape_size():
    return len(_tape())


class Node:
    __slots__ = ("op", "inputs", "out", "backward")

    def __init__(self, op, inputs, out, backward):
        self.op = op
        self.inputs = inputs
        self.out = out
        self.backward = backward


class Tensor:
    """Dense float array with an optional gradient slot.

    Leaves are tensors built directly by the user; every op output is a
    non-leaf and records a tape node when any of its inputs requires grad.
    """

    __slots__ = ("data", "requires_grad", "grad", "is_leaf", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
                dtype = data.dtype
            else:
                dtype = get_default_dtype()
        self.data = np.array(data, dtype=dtype, copy=None)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.is_leaf = True

    # -- conveniences
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data.copy())

    def __len__(self):
        return self.data.shape[0]

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{flag})"

    # -- operator sugar; implementations live in ops
    def __add__(self, other):
        return _ops().add(self, other)

    def __radd__(self, other):
        return _ops().add(other, self)

    def __sub__(self, other):
        return _ops().sub(self, other)

    def __rsub__(self, other):
        return _ops().sub(other, self)

    def __mul__(self, other):
        return _ops().mul(self, other)

    def __rmul__(self, other):
        return _ops().mul(other, self)

    def __truediv__(self, other):
        return _ops().div(self, other)

    def __neg__(self):
        return _ops().neg(self)

    def __matmul__(self, other):
        return _ops().matmul(self, other)

    def __getitem__(self, idx):
        return _ops().getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _ops().reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return _ops().permute(self, axes)

    def sum(self, axis=None, keepdims=False):
        return _ops().sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return _ops().mean(self, axis, keepdims)


def _ops():
    from . import ops
    return ops


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    if dtype is None:
        dtype = get_default_dtype()
    return Tensor(np.asarray(x, dtype=dtype))


def record(op, inputs, out_data, backward):
    """Wrap ``out_data`` in a Tensor and record a tape node if needed.

    ``backward(g)`` returns one gradient (or None) per input.
    """
    if _check_finite[0] and not np.all(np.isfinite(out_data)):
        raise NonFiniteError(op, f"output shape {out_data.shape}")
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out.is_leaf = False
    needs = _grad_enabled() and any(t.requires_grad for t in inputs)
    out.requires_grad = needs
    if needs:
        if op in _corrupted_ops:
            rule = backward

            def backward(g, _rule=rule):
                return tuple(None if r is None else 1.5 * r for r in _rule(g))
        _tape().append(Node(op, inputs, out, backward))
    return out


def backward(loss):
    """Populate ``.grad`` on every grad-requiring leaf reachable from ``loss``.

    Leaf gradients accumulate across calls (reset with ``zero_grad``); the
    tape is cleared afterwards.
    """
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        shape = loss.shape if isinstance(loss, Tensor) else np.shape(loss)
        raise ShapeError("backward", shape, (), detail="loss must be a scalar")
    tape = _tape()
    try:
        if not loss.requires_grad:
            return
        if loss.is_leaf:
            loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1
            return
        grads = {id(loss): np.ones_like(loss.data)}
        for node in reversed(tape):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                if t.is_leaf:
                    if t.grad is None:
                        t.grad = np.array(gi, dtype=t.data.dtype)
                    else:
                        t.grad = t.grad + gi
                else:
                    key = id(t)
                    prev = grads.get(key)
                    grads[key] = gi if prev is None else prev + gi
    finally:
        tape.clear()
