import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swinlstm.cell import CellState, SwinLSTMCell, degenerate_gate_check, gate_update
from swinlstm.errors import ShapeError
from swinlstm.params import ParameterStore
from swinlstm.tensor import Tensor, grad_check, no_grad, ops


def make_cell(rng, grid=(4, 4), dim=8, depth=2, heads=2, window=2, dtype=np.float64):
    store = ParameterStore(dtype)
    return store, SwinLSTMCell(store, "c", rng, grid, dim, depth, heads, window)


def test_zero_weights_zero_state(rng):
    store, cell = make_cell(rng)
    store.fill(0.0)
    with no_grad():
        H, s = cell(Tensor(rng.standard_normal((1, 4, 4, 8))))
    assert np.all(H.data == 0) and np.all(s.C.data == 0)


def test_zero_weights_analytic_update(rng):
    store, cell = make_cell(rng)
    store.fill(0.0)
    c = rng.standard_normal((2, 4, 4, 8)) * 2
    prev = CellState(Tensor(rng.standard_normal(c.shape)), Tensor(c))
    with no_grad():
        H, s = cell(Tensor(rng.standard_normal(c.shape)), prev)
    assert np.max(np.abs(s.C.data - 0.5 * c)) <= 1e-12
    assert np.max(np.abs(H.data - 0.5 * np.tanh(0.5 * c))) <= 1e-12


def test_zero_everything_stays_zero(rng):
    store, cell = make_cell(rng)
    store.fill(0.0)
    state = None
    with no_grad():
        for _ in range(5):
            H, state = cell(Tensor(np.zeros((1, 4, 4, 8))), state)
            assert np.all(state.H.data == 0) and np.all(state.C.data == 0)


def test_cell_matches_hand_composition(rng):
    store, cell = make_cell(rng)
    x = Tensor(rng.standard_normal((2, 4, 4, 8)))
    prev = CellState(Tensor(rng.standard_normal((2, 4, 4, 8))), Tensor(rng.standard_normal((2, 4, 4, 8))))
    with no_grad():
        H, s = cell(x, prev)
        A = cell.stb(ops.linear(ops.concat([x, prev.H], axis=-1), store["c.lp.weight"], store["c.lp.bias"]))
        F = ops.sigmoid(A)
        C = ops.mul(F, ops.add(ops.tanh(A), prev.C))
        H_ref = ops.mul(F, ops.tanh(C))
    assert np.array_equal(s.C.data, C.data)
    assert np.array_equal(H.data, H_ref.data)
    assert np.array_equal(s.H.data, H.data)


def test_one_stack_pass_per_step(rng):
    _, cell = make_cell(rng)
    calls = []
    inner = cell.stb.__call__
    cell.stb = type("Counted", (), {"__call__": lambda self, x: calls.append(1) or inner(x)})()
    state = None
    with no_grad():
        for t in range(3):
            _, state = cell(Tensor(rng.standard_normal((1, 4, 4, 8))), state)
            assert len(calls) == t + 1
    assert cell.stb_calls == 3


def test_lp_input_dim(rng):
    store, _ = make_cell(rng, dim=16, heads=4)
    assert store["c.lp.weight"].shape == (32, 16)


def test_grid_mismatch_rejected(rng):
    _, cell = make_cell(rng)
    with pytest.raises(ShapeError):
        cell(Tensor(np.zeros((1, 8, 8, 8))))


def test_state_shapes_must_agree():
    with pytest.raises(ShapeError):
        CellState(Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 3))))


def test_degenerate_gate_random(rng):
    shape = (2, 3, 4)
    assert degenerate_gate_check(rng.standard_normal(shape), rng.standard_normal(shape),
                                 rng.standard_normal(shape))


def test_degenerate_gate_zero_inputs_half():
    z = np.zeros((2, 2))
    assert degenerate_gate_check(z, z, z)
    H, C = gate_update(Tensor(z), Tensor(np.ones((2, 2))))
    assert np.all(C.data == 0.5)


def test_degenerate_gate_saturation():
    big = np.full((3,), 20.0)
    c_prev = np.array([-1.0, 0.0, 2.0])
    assert degenerate_gate_check(big, big, c_prev)
    H, C = gate_update(Tensor(big + big), Tensor(c_prev))
    assert np.allclose(C.data, 1.0 + c_prev, atol=1e-12)


def test_degenerate_gate_detects_wrong_update(monkeypatch, rng):
    import swinlstm.cell as cellmod

    def two_term(A, C_prev):
        F = ops.sigmoid(A)
        C = F * ops.tanh(A) + C_prev
        return F * ops.tanh(C), C
    monkeypatch.setattr(cellmod, "gate_update", two_term)
    shape = (4,)
    assert not cellmod.degenerate_gate_check(rng.standard_normal(shape), rng.standard_normal(shape),
                                             rng.standard_normal(shape) + 3)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0.1, 4.0))
def test_hidden_state_strictly_bounded(seed, scale):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal(200) * scale
    C_prev = rng.standard_normal(200) * scale
    H, C = gate_update(Tensor(A), Tensor(C_prev))
    assert np.all(np.abs(H.data) < 1.0)


def test_cell_state_gain_bound(rng):
    # |C_t| < t + 1 from zero initial state (strict while sigmoid and tanh stay below 1)
    store, cell = make_cell(rng)
    for n in store.names():
        store[n].data[...] = rng.standard_normal(store[n].shape) * 0.3
    state = None
    with no_grad():
        for t in range(1, 7):
            _, state = cell(Tensor(rng.standard_normal((1, 4, 4, 8)) * 2), state)
            assert np.all(np.abs(state.C.data) < t + 1)
            assert np.all(np.abs(state.H.data) < 1)


def test_two_step_gradient(rng, f64):
    store, cell = make_cell(rng)
    xs = [Tensor(rng.standard_normal((1, 4, 4, 8))) for _ in range(2)]

    def f(*_):
        _, s1 = cell(xs[0])
        H, s2 = cell(xs[1], s1)
        return ops.concat([H, s2.C], -1)
    err = grad_check(f, [store[n] for n in store.names()] + xs, max_components=4)
    assert err < 1e-4


def test_gate_update_scalar_formula():
    a, c = 0.3, -0.7
    H, C = gate_update(Tensor(np.array([a])), Tensor(np.array([c])))
    f = 1 / (1 + math.exp(-a))
    assert C.data[0] == pytest.approx(f * (math.tanh(a) + c), abs=1e-15)
    assert H.data[0] == pytest.approx(f * math.tanh(f * (math.tanh(a) + c)), abs=1e-15)
