"""The SwinLSTM recurrent cell.

One step computes ``A = STB(LP([X_t ; H_{t-1}]))`` once and derives the
filter gate and both state updates from it::

    F_t = sigmoid(A)
    C_t = F_t * (tanh(A) + C_{t-1})
    H_t = F_t * tanh(C_t)

The filter gate is what remains of the input/forget/output gates of a
ConvLSTM once every weight and bias is removed: all three collapse to
``sigmoid(X_t + H_{t-1})``.  :func:`degenerate_gate_check` exercises that
reduction against a scalar recurrence.
"""
import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .swin import SwinStack
from .tensor import Tensor, ops


@dataclass
class CellState:
    H: Tensor
    C: Tensor

    def __post_init__(self):
        if self.H.shape != self.C.shape:
            raise ShapeError("CellState", self.H.shape, self.C.shape)

    @classmethod
    def zeros(cls, shape, dtype):
        return cls(Tensor(np.zeros(shape, dtype=dtype)), Tensor(np.zeros(shape, dtype=dtype)))


def gate_update(A, C_prev):
    """Filter-gated state update from the shared pre-activation ``A``."""
    F = ops.sigmoid(A)
    C = F * (ops.tanh(A) + C_prev)
    H = F * ops.tanh(C)
    return H, C


class SwinLSTMCell:
    def __init__(self, store, prefix, rng, grid, dim, depth, heads, window,
                 mlp_ratio=4.0, dropout=0.0, rel_pos_bias=True, dropout_rng=None):
        self.grid = tuple(grid)
        self.dim = dim
        self.lp_w = store.weight(f"{prefix}.lp.weight", rng, (2 * dim, dim))
        self.lp_b = store.zeros(f"{prefix}.lp.bias", (dim,))
        self.stb = SwinStack(store, f"{prefix}.stb", rng, grid, dim, depth, heads, window,
                             mlp_ratio, dropout, rel_pos_bias, dropout_rng)
        self.stb_calls = 0

    def preactivation(self, x, H_prev):
        self.stb_calls += 1
        return self.stb(ops.linear(ops.concat([x, H_prev], axis=-1), self.lp_w, self.lp_b))

    def __call__(self, x, state=None):
        """Returns ``(H_t, CellState(H_t, C_t))``; ``state=None`` means zero states."""
        if x.ndim != 4 or tuple(x.shape[1:]) != self.grid + (self.dim,):
            raise ShapeError("cell_step", x.shape, (None,) + self.grid + (self.dim,))
        if state is None:
            state = CellState.zeros(x.shape, x.dtype)
        A = self.preactivation(x, state.H)
        H, C = gate_update(A, state.C)
        return H, CellState(H, C)


def degenerate_gate_check(X, H_prev, C_prev, tol=1e-12):
    """Check the weight-free reduction against a scalar ConvLSTM oracle.

    With ``STB(LP(.))`` replaced by the plain sum ``X + H_prev`` the cell
    update must coincide, element by element, with the three-gate recurrence
    whose gates all equal ``sigmoid(X + H_prev)``.
    """
    X, H_prev, C_prev = (np.asarray(a, dtype=np.float64) for a in (X, H_prev, C_prev))
    H, C = gate_update(Tensor(X + H_prev), Tensor(C_prev))
    F = ops.sigmoid(Tensor(X + H_prev)).data
    ok = True
    for idx in np.ndindex(X.shape):
        s = X[idx] + H_prev[idx]
        gate = 1.0 / (1.0 + math.exp(-s)) if s >= 0 else math.exp(s) / (1.0 + math.exp(s))
        i_t = f_t = o_t = gate
        c = f_t * C_prev[idx] + i_t * math.tanh(s)
        h = o_t * math.tanh(c)
        ok &= abs(C.data[idx] - c) <= tol and abs(H.data[idx] - h) <= tol
        ok &= abs(F[idx] - gate) <= tol
    return bool(ok)
