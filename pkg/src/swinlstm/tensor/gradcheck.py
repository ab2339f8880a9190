"""Finite-difference verification of backward rules."""
import contextlib

import numpy as np

from ..errors import GradientCheckError, NonDeterministicError
from . import core
from .core import Tensor, backward, no_grad


def _scalarize(out, weights):
    if out.data.size == 1:
        return out.sum()
    return (out * Tensor(weights)).sum()


def grad_check(f, inputs, eps=1e-5, tol=None, seed=0, max_components=None, name="f"):
    """Compare the tape gradient of ``f(*inputs)`` with central differences.

    Non-scalar outputs are reduced with a fixed random projection.  Returns
    the max over checked components of ``|a - n| / max(1, |a|, |n|)``.  When
    ``max_components`` is given, that many components per input are sampled
    (seeded) instead of probing every one.  Raises ``GradientCheckError``
    when ``tol`` is given and exceeded.
    """
    if isinstance(inputs, Tensor):
        inputs = [inputs]
    inputs = list(inputs)
    for t in inputs:
        if t.dtype != np.float64:
            raise TypeError("grad_check requires float64 inputs")
    rng = np.random.default_rng(seed)

    with no_grad():
        first = f(*inputs).data.copy()
        second = f(*inputs).data
    if not np.array_equal(first, second):
        raise NonDeterministicError(f"{name}: two forward passes disagree")
    weights = rng.standard_normal(first.shape)

    saved = [(t.requires_grad, t.grad) for t in inputs]
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    try:
        core.clear_tape()
        loss = _scalarize(f(*inputs), weights)
        backward(loss)
        analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in inputs]
    finally:
        for t, (rg, g) in zip(inputs, saved):
            t.requires_grad = rg
            t.grad = g

    def value():
        with no_grad():
            return _scalarize(f(*inputs), weights).item()

    worst = 0.0
    for t, a in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        if max_components is not None and flat.size > max_components:
            comps = rng.choice(flat.size, size=max_components, replace=False)
        else:
            comps = range(flat.size)
        a_flat = a.reshape(-1)
        for i in comps:
            orig = flat[i]
            flat[i] = orig + eps
            fp = value()
            flat[i] = orig - eps
            fm = value()
            flat[i] = orig
            num = (fp - fm) / (2.0 * eps)
            an = a_flat[i]
            err = abs(an - num) / max(1.0, abs(an), abs(num))
            worst = max(worst, err)
    if tol is not None and worst > tol:
        raise GradientCheckError(name, worst, tol)
    return worst


@contextlib.contextmanager
def corrupt_backward(op):
    """Scale the recorded backward rule of ``op`` by 1.5 (self-check harness)."""
    core._corrupted_ops.add(op)
    try:
        yield
    finally:
        core._corrupted_ops.discard(op)
