"""Acceptance criteria 1-8, each at its stated tolerance and time budget.

Every test records one PASS/FAIL line (shown in the pytest terminal summary).
"""
import time

import numpy as np
import pytest

from swinlstm import data, metrics, selfcheck
from swinlstm.cell import CellState, SwinLSTMCell, degenerate_gate_check, gate_update
from swinlstm.config import ModelConfig, TrainConfig
from swinlstm.model import SwinLSTM
from swinlstm.params import ParameterStore, stream
from swinlstm.tensor import Tensor, no_grad, ops
from swinlstm.training import StepTrace, Trainer, train_step


def test_criterion_1_gradient_integrity(verdict):
    t0 = time.perf_counter()
    results = selfcheck.run_gradient_checks(seed=0)
    secs = time.perf_counter() - t0
    ops_ = [r for r in results if r.tol == selfcheck.OP_TOL]
    comp = [r for r in results if r.tol == selfcheck.COMPOSITE_TOL]
    assert len(comp) == 3 and len(ops_) >= 20
    worst_op = max(r.value for r in ops_)
    worst_comp = {r.name: r.value for r in comp}
    ok = all(r.value < 1e-5 for r in ops_) and all(v < 1e-4 for v in worst_comp.values()) and secs < 60
    detail = (f"gradient integrity: worst op {worst_op:.2e} (<1e-5), composites "
              + ", ".join(f"{k} {v:.2e}" for k, v in worst_comp.items()) + f" (<1e-4), {secs:.1f}s (<60s)")
    assert verdict("criterion 1", ok, detail)


def test_criterion_2_shifted_window(verdict):
    t0 = time.perf_counter()
    errs = {}
    for gh in (4, 8):
        for gw in (4, 8):
            for w in (2, 4):
                errs[(gh, gw, w)] = selfcheck.masked_attention_error((gh, gw), w, seed=2)
    roundtrip = selfcheck.window_roundtrip_exact(seed=2)
    secs = time.perf_counter() - t0
    worst = max(errs.values())
    ok = worst <= 1e-6 and roundtrip and secs < 10
    detail = (f"shifted-window oracle over {len(errs)} grid/window cases, worst {worst:.2e} (<=1e-6), "
              f"roundtrip bit-exact {roundtrip}, {secs:.1f}s (<10s)")
    assert verdict("criterion 2", ok, detail)


def test_criterion_3_cell_algebra(verdict):
    rng = np.random.default_rng(3)
    store = ParameterStore(np.float64)
    cell = SwinLSTMCell(store, "c", rng, (4, 4), 8, 2, 2, 2)
    store.fill(0.0)
    C_prev = rng.standard_normal((2, 4, 4, 8)) * 3
    prev = CellState(Tensor(rng.standard_normal(C_prev.shape)), Tensor(C_prev))
    x = Tensor(rng.standard_normal(C_prev.shape))
    with no_grad():
        H, s = cell(x, prev)
        A = cell.stb(ops.linear(ops.concat([x, prev.H], axis=-1), store["c.lp.weight"],
                                store["c.lp.bias"]))
        F = ops.sigmoid(A).data
    zero_err = max(np.max(np.abs(s.C.data - 0.5 * C_prev)),
                   np.max(np.abs(H.data - 0.5 * np.tanh(0.5 * C_prev))))
    gate_ok = all(degenerate_gate_check(*(rng.standard_normal((4, 5)) * sc for _ in range(3)))
                  for sc in (0.1, 1.0, 3.0))
    # 10^4 probes of the gate update over a range of input scales
    scales = np.exp(rng.uniform(np.log(0.1), np.log(4.0), 10_000))
    A = rng.standard_normal(10_000) * scales
    Cp = rng.standard_normal(10_000) * scales
    Hp, _ = gate_update(Tensor(A), Tensor(Cp))
    bounded = bool(np.all(np.abs(Hp.data) < 1.0))
    ok = zero_err <= 1e-12 and np.all(F == 0.5) and gate_ok and bounded
    detail = (f"cell algebra: zero-weight error {zero_err:.1e} (<=1e-12), gate oracle {gate_ok}, "
              f"|H|<1 over 10^4 probes {bounded}")
    assert verdict("criterion 3", ok, detail)


def test_criterion_4_two_phase_bookkeeping(verdict):
    cfg = ModelConfig(variant="B", height=8, width=8, patch_size=2, embed_dim=8, depths=(2,),
                      window_size=2, heads=2)
    parts = []
    ok = True
    for S in (2, 4, 10):
        m = SwinLSTM(cfg, seed=S)
        tr = StepTrace()
        x = np.random.default_rng(S).random((2, 2 * S, 1, 8, 8)).astype(np.float32)
        train_step(m, x, 1e-4, S, trace=tr)
        handoff = all(np.array_equal(h1, h2) and np.array_equal(c1, c2)
                      for (h1, c1), (h2, c2) in zip(tr.phase1_final, tr.phase2_initial))
        ok &= tr.compared_frames == 2 * S - 1 and handoff and len(tr.phase2_initial) == 1
        parts.append(f"S={S}: {tr.compared_frames} pairs, handoff {handoff}")
    assert verdict("criterion 4", ok, "two-phase bookkeeping: " + "; ".join(parts))


def test_criterion_5_metric_fidelity(verdict):
    rng = np.random.default_rng(5)
    self_err = sym_err = 0.0
    for _ in range(100):
        x, y = rng.random((64, 64)), rng.random((64, 64))
        self_err = max(self_err, abs(metrics.ssim(x, x) - 1.0))
        sym_err = max(sym_err, abs(metrics.ssim(x, y) - metrics.ssim(y, x)))
    y = np.zeros((1, 1, 64, 64))
    p20 = metrics.psnr_from_mse(0.01)
    p20b = metrics.psnr(y + 0.1, y)
    p, t = rng.random((4, 3, 1, 64, 64)), rng.random((4, 3, 1, 64, 64))
    exact = metrics.mse(p, t, metrics.FRAME_SUM) == metrics.mse(p, t, metrics.PIXEL_MEAN) * 4096
    ok = self_err <= 1e-9 and sym_err <= 1e-12 and abs(p20 - 20) <= 1e-9 and abs(p20b - 20) <= 1e-9 \
        and exact
    detail = (f"metric fidelity: ssim(x,x) off by {self_err:.1e} (<=1e-9), asymmetry {sym_err:.1e} "
              f"(<=1e-12), psnr(0.01) {p20!r}, frame-sum == pixel-mean*4096 {exact}")
    assert verdict("criterion 5", ok, detail)


def test_criterion_6_desk_scale_learning(verdict):
    cfg = ModelConfig(variant="B", height=32, width=32, patch_size=2, embed_dim=64, depths=(2,),
                      window_size=4, heads=4)
    ds = data.build_dataset(7, 16, scale=2)
    t0 = time.perf_counter()
    m = SwinLSTM(cfg, seed=7)
    shuffle = stream(7, "shuffle")
    losses = []
    while len(losses) < 300:
        for b in data.iterate_batches(ds, 4, rng=shuffle):
            losses.append(train_step(m, b.frames, 1e-4, 10))
            if len(losses) == 300:
                break
    ratio = losses[-1] / losses[0]
    m = SwinLSTM(cfg, seed=7)
    single = ds.frames_data[:1]
    best, steps = float("inf"), 0
    for steps in range(1, 2001):
        best = min(best, train_step(m, single, 1e-4, 10))
        if best < 1e-3:
            break
    secs = time.perf_counter() - t0
    ok_a, ok_b, ok_t = ratio < 0.5, best < 1e-3, secs < 15 * 60
    detail = (f"desk-scale learning: loss ratio after 300 steps {ratio:.3f} (<0.5) {ok_a}; single-sequence "
              f"MSE {best:.2e} after {steps} steps (<1e-3) {ok_b}; {secs / 60:.1f} min (<15) {ok_t}")
    assert verdict("criterion 6", ok_a and ok_b and ok_t, detail)


def test_train_smoke_loss_strictly_decreases(verdict, tmp_path):
    cfg = ModelConfig(variant="B", height=32, width=32, patch_size=2, embed_dim=64, depths=(2,),
                      window_size=4, heads=4)
    tc = TrainConfig(learning_rate=1e-4, batch_size=4, epochs=5, frames_per_phase=10, seed=7)
    tr = Trainer(SwinLSTM(cfg, seed=7), tc, log_path=str(tmp_path / "m.csv"), log=None)
    hist = tr.fit(data.build_dataset(7, 16, scale=2), epochs=5)
    ok = all(a > b for a, b in zip(hist, hist[1:]))
    detail = "training smoke run, epoch losses " + ", ".join(f"{v:.5f}" for v in hist)
    assert verdict("train smoke (5 epochs strictly decreasing)", ok, detail)


def run_small(tmp_path, tag, epochs, resume=None):
    cfg = ModelConfig(variant="B", height=16, width=16, patch_size=2, embed_dim=8, depths=(2,),
                      window_size=2, heads=2)
    tc = TrainConfig(learning_rate=1e-3, batch_size=2, epochs=epochs, frames_per_phase=3, seed=7)
    ds = data.build_dataset(7, 4, frames=6, scale=4)
    val = data.build_dataset(8, 2, frames=6, scale=4)
    log = tmp_path / f"{tag}.csv"
    kw = dict(log_path=str(log), ckpt_dir=str(tmp_path / tag), log=None)
    tr = Trainer.resume(resume, tc, **kw) if resume else Trainer(SwinLSTM(cfg, seed=7), tc, **kw)
    tr.fit(ds, epochs=epochs, val=val)
    return log


def test_criterion_7_determinism_and_persistence(verdict, tmp_path):
    a = run_small(tmp_path, "a", 4).read_bytes()
    b = run_small(tmp_path, "b", 4).read_bytes()
    run_small(tmp_path, "c", 2)
    c = run_small(tmp_path, "c", 2, resume=tmp_path / "c" / "last.swls").read_bytes()
    ok = a == b and a == c
    detail = f"determinism: identical runs bit-identical {a == b}; resumed trace bit-identical {a == c}"
    assert verdict("criterion 7", ok, detail)


def test_criterion_8_generator_properties(verdict):
    rng = np.random.default_rng(8)
    pool = [data.procedural_glyph(rng) for _ in range(16)]
    inside = conserved = in_range = True
    for _ in range(1000):
        digits = [pool[i] for i in rng.integers(0, len(pool), 2)]
        frames, tracks = data.generate_sequence(rng, digits, 20, return_tracks=True)
        lo, hi = tracks[..., :2].min(), tracks[..., :2].max()
        inside &= lo >= 0 and hi + data.DIGIT <= data.CANVAS
        conserved &= bool(np.all(np.abs(tracks[..., 2:]) == np.abs(tracks[:1, :, 2:])))
        in_range &= frames.min() >= 0.0 and frames.max() <= 1.0
    ok = inside and conserved and in_range
    detail = (f"generator over 1000 sequences: on canvas {inside}, per-axis speed conserved {conserved}, "
              f"pixels in [0,1] {in_range}")
    assert verdict("criterion 8", ok, detail)
