"""Built-in verification suite behind ``swinlstm selfcheck``."""
import time
from dataclasses import dataclass

import numpy as np

from .cell import CellState, SwinLSTMCell, degenerate_gate_check
from .config import ModelConfig
from .errors import GradientCheckError, SwinLSTMError
from .model import SwinLSTM, stack_frames
from .params import ParameterStore, stream
from .swin import (SwinBlock, SwinStack, cyclic_shift, cyclic_unshift,
                   region_ids, window_partition, window_reverse)
from .tensor import Tensor, corrupt_backward, default_dtype, grad_check, no_grad, ops

OP_TOL = 1e-5
COMPOSITE_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    value: float
    tol: float
    passed: bool
    seconds: float = 0.0
    detail: str = ""

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        extra = f"  {self.detail}" if self.detail else ""
        return f"{status}  {self.name:<34s} {self.value:.3e} (tol {self.tol:.0e}){extra}"


def _t(rng, *shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, dtype=np.float64)


# ---------------------------------------------------------------- gradient checks

def op_cases(rng):
    """(name, f, inputs) for every differentiable primitive."""
    a, b = _t(rng, 3, 4), _t(rng, 3, 4)
    m1, m2 = _t(rng, 2, 3, 4), _t(rng, 2, 4, 5)
    x5 = _t(rng, 2, 3, 5)
    gamma, beta = _t(rng, 5), _t(rng, 5)
    W, bias = _t(rng, 5, 3), _t(rng, 3)
    table = _t(rng, 7, 2)
    index = np.array([0, 3, 3, 6, 1])
    pos = Tensor(rng.uniform(0.5, 2.0, (3, 4)), dtype=np.float64)
    away = Tensor(rng.uniform(0.2, 1.0, (3, 4)) * rng.choice([-1, 1], (3, 4)), dtype=np.float64)
    return [
        ("matmul", lambda p, q: ops.matmul(p, q), [m1, m2]),
        ("add", lambda p, q: ops.add(p, q[0]), [a, b]),
        ("sub", lambda p, q: ops.sub(p, q), [a, b]),
        ("mul", lambda p, q: ops.mul(p, q), [a, b]),
        ("div", lambda p, q: ops.div(p, q), [a, pos]),
        ("square", lambda p: ops.square(p), [a]),
        ("abs", lambda p: ops.abs(p), [away]),
        ("concat", lambda p, q: ops.concat([p, q], axis=1), [a, b]),
        ("split", lambda p: ops.split(p, [1, 3], axis=1)[1] * 2.0, [a]),
        ("reshape", lambda p: ops.reshape(p, (4, 3)), [a]),
        ("permute", lambda p: ops.permute(p, (2, 0, 1)), [x5]),
        ("getitem", lambda p: p[1:, ::2], [a]),
        ("roll", lambda p: ops.roll(p, (-1, 2), (0, 1)), [a]),
        ("gather", lambda p: ops.gather(p, index), [table]),
        ("mean", lambda p: ops.mean(p, axis=1), [x5]),
        ("sum", lambda p: ops.sum(p, axis=(0, 2)), [x5]),
        ("sigmoid", lambda p: ops.sigmoid(p), [a]),
        ("tanh", lambda p: ops.tanh(p), [a]),
        ("gelu", lambda p: ops.gelu(p), [a]),
        ("softmax", lambda p: ops.softmax(p, axis=-1), [x5]),
        ("layer_norm", lambda p, g, c: ops.layer_norm(p, g, c), [x5, gamma, beta]),
        ("linear", lambda p, w, c: ops.linear(p, w, c), [x5, W, bias]),
        ("dropout", lambda p: ops.dropout(p, 0.5, True, np.random.default_rng(3)), [a]),
    ]


def _param_check(name, f, store, tol, per_tensor=6, seed=0):
    inputs = [store[n] for n in store.names()]
    return grad_check(lambda *_: f(), inputs, tol=tol, max_components=per_tensor,
                      seed=seed, name=name)


def composite_cases(seed=0):
    """(name, thunk) pairs; each thunk returns the max relative gradient error."""
    def block_pair():
        rng = stream(seed, "gradcheck", 1)
        store = ParameterStore(np.float64)
        stack = SwinStack(store, "pair", rng, (4, 4), 8, 2, 2, 2)
        x = Tensor(rng.standard_normal((1, 4, 4, 8)), dtype=np.float64)
        x = store.add("input", x.data)
        return _param_check("swin_block_pair", lambda: stack(x), store, COMPOSITE_TOL)

    def two_cell_steps():
        rng = stream(seed, "gradcheck", 2)
        store = ParameterStore(np.float64)
        cell = SwinLSTMCell(store, "cell", rng, (4, 4), 8, 2, 2, 2)
        xs = [store.add(f"x{t}", rng.standard_normal((1, 4, 4, 8))) for t in range(2)]

        def f():
            _, s1 = cell(xs[0])
            H2, s2 = cell(xs[1], s1)
            return ops.concat([H2, s2.C], axis=-1)
        return _param_check("cell_step x2", f, store, COMPOSITE_TOL)

    def full_b():
        rng = stream(seed, "gradcheck", 3)
        cfg = ModelConfig(variant="B", height=8, width=8, patch_size=2, embed_dim=8,
                          depths=(2,), window_size=2, heads=2)
        model = SwinLSTM(cfg, seed=seed, dtype=np.float64)
        frames = rng.uniform(0, 1, (1, 4, 1, 8, 8))
        target = Tensor(np.concatenate([frames[:, 1:2], frames[:, 2:]], axis=1))

        def f():
            warm, preds, _ = model.unroll(Tensor(frames[:, :2]), 2)
            return ops.square(stack_frames(warm + preds) - target).mean()
        return _param_check("variant B (8x8, P=2, D=8)", f, model.params, COMPOSITE_TOL)

    return [("swin_block_pair", block_pair), ("cell_step x2", two_cell_steps),
            ("variant B (8x8, P=2, D=8)", full_b)]


def run_gradient_checks(seed=0):
    results = []
    with default_dtype(np.float64):
        for name, f, inputs in op_cases(np.random.default_rng(seed)):
            results.append(_run(f"grad {name}", OP_TOL, lambda: grad_check(f, inputs, name=name)))
        for name, thunk in composite_cases(seed):
            results.append(_run(f"grad {name}", COMPOSITE_TOL, thunk))
    return results


def _run(name, tol, thunk):
    t0 = time.perf_counter()
    try:
        value = float(thunk())
        detail = ""
    except GradientCheckError as exc:
        value, detail = exc.error, ""
    except SwinLSTMError as exc:
        value, detail = float("inf"), f"{type(exc).__name__}: {exc}"
    return CheckResult(name, value, tol, value <= tol, time.perf_counter() - t0, detail)


# ---------------------------------------------------------------- window machinery

def brute_force_shifted_attention(attn, x, window, shift):
    """Per-token attention restricted to same-window, same-region neighbours.

    Works directly on the unshifted grid: token (i, j) lands at shifted
    position ((i - s) mod G, (j - s) mod G); it attends to the tokens whose
    shifted positions share its window and its region label.
    """
    B, Gh, Gw, D = x.shape
    h = attn.heads
    dh = D // h
    wq = attn.qkv_w.data
    bq = attn.qkv_b.data
    qkv = x @ wq + bq
    q, k, v = qkv[..., :D], qkv[..., D:2 * D], qkv[..., 2 * D:]
    ids = region_ids(Gh, Gw, window, shift)
    table = attn.rel_table.data if attn.rel_table is not None else None
    out = np.zeros_like(x)
    for i in range(Gh):
        for j in range(Gw):
            si, sj = (i - shift) % Gh, (j - shift) % Gw
            peers = []
            for a in range(Gh):
                for c in range(Gw):
                    ta, tc = (a - shift) % Gh, (c - shift) % Gw
                    if (ta // window, tc // window) == (si // window, sj // window) \
                            and ids[ta, tc] == ids[si, sj]:
                        peers.append((a, c, ta % window - si % window, tc % window - sj % window))
            for head in range(h):
                hs = slice(head * dh, (head + 1) * dh)
                logits = []
                for a, c, di, dj in peers:
                    s = (q[:, i, j, hs] * k[:, a, c, hs]).sum(-1) * attn.scale
                    if table is not None:
                        # bias indexed by (query - key) offset
                        s = s + table[(-di + window - 1) * (2 * window - 1) + (-dj + window - 1), head]
                    logits.append(s)
                logits = np.stack(logits, axis=-1)
                wts = np.exp(logits - logits.max(-1, keepdims=True))
                wts /= wts.sum(-1, keepdims=True)
                vals = np.stack([v[:, a, c, hs] for a, c, _, _ in peers], axis=1)
                out[:, i, j, hs] = np.einsum("bp,bpd->bd", wts, vals)
    return out @ attn.proj_w.data + attn.proj_b.data


def masked_attention_error(grid, window, seed=0):
    """max |masked SW-MSA - brute-force oracle| for one grid/window combination.

    ``grid`` is a side length or a (rows, cols) pair.
    """
    gh, gw = (grid, grid) if np.isscalar(grid) else grid
    rng = stream(seed, "gradcheck", 10, gh, gw, window)
    store = ParameterStore(np.float64)
    s = window // 2
    blk = SwinBlock(store, "blk", rng, (gh, gw), 8, 2, window, s)
    # larger random weights so the attention pattern is far from uniform
    for n in store.names():
        if ("attn" in n and n.endswith("weight")) or n.endswith("rel_bias"):
            store[n].data[...] = rng.standard_normal(store[n].shape) * 0.5
    x = rng.standard_normal((2, gh, gw, 8))
    with no_grad():
        xt = Tensor(x)
        h = cyclic_shift(xt, s)
        h = blk.attn(window_partition(h, window), blk.mask)
        fast = cyclic_unshift(window_reverse(h, window, gh, gw), s).data
    slow = brute_force_shifted_attention(blk.attn, x, window, s)
    return float(np.max(np.abs(fast - slow)))


def window_roundtrip_exact(seed=0):
    rng = np.random.default_rng(seed)
    ok = True
    for gh, gw in ((4, 4), (4, 8), (8, 4), (8, 8)):
        for w in (2, 4):
            x = Tensor(rng.standard_normal((2, gh, gw, 3)).astype(np.float32))
            with no_grad():
                back = window_reverse(window_partition(x, w), w, gh, gw)
                ok &= np.array_equal(back.data, x.data)
                ok &= np.array_equal(cyclic_unshift(cyclic_shift(x, w // 2), w // 2).data, x.data)
    return bool(ok)


# ---------------------------------------------------------------- cell algebra

def zero_weight_cell_error(seed=0):
    rng = stream(seed, "gradcheck", 20)
    store = ParameterStore(np.float64)
    cell = SwinLSTMCell(store, "cell", rng, (4, 4), 8, 2, 2, 2)
    store.fill(0.0)
    x = Tensor(rng.standard_normal((2, 4, 4, 8)))
    C_prev = rng.standard_normal((2, 4, 4, 8)) * 3.0
    prev = CellState(Tensor(rng.standard_normal((2, 4, 4, 8))), Tensor(C_prev))
    with no_grad():
        H, state = cell(x, prev)
    C_ref = 0.5 * C_prev
    H_ref = 0.5 * np.tanh(0.5 * C_prev)
    return float(max(np.max(np.abs(state.C.data - C_ref)), np.max(np.abs(H.data - H_ref))))


def run_structural_checks(seed=0):
    res = []
    t0 = time.perf_counter()
    ok = window_roundtrip_exact(seed)
    res.append(CheckResult("window partition/shift roundtrip", 0.0 if ok else 1.0, 0.0, ok,
                           time.perf_counter() - t0))
    for gh in (4, 8):
        for gw in (4, 8):
            for w in (2, 4):
                t0 = time.perf_counter()
                err = masked_attention_error((gh, gw), w, seed)
                res.append(CheckResult(f"SW-MSA mask oracle {gh}x{gw} w={w}", err, 1e-6,
                                       err <= 1e-6, time.perf_counter() - t0))
    t0 = time.perf_counter()
    err = zero_weight_cell_error(seed)
    res.append(CheckResult("zero-weight cell", err, 1e-12, err <= 1e-12, time.perf_counter() - t0))
    rng = np.random.default_rng(seed)
    shape = (3, 4, 5)
    ok = degenerate_gate_check(rng.standard_normal(shape), rng.standard_normal(shape),
                               rng.standard_normal(shape) * 2)
    res.append(CheckResult("degenerate gate oracle", 0.0 if ok else 1.0, 1e-12, ok))
    return res


def run_all(seed=0, corrupt=None):
    """Every check; ``corrupt`` names a primitive whose backward is sabotaged."""
    if corrupt is not None:
        with corrupt_backward(corrupt):
            grads = run_gradient_checks(seed)
    else:
        grads = run_gradient_checks(seed)
    return grads + run_structural_checks(seed)


def report(results):
    lines = [r.line() for r in results]
    failed = [r.name for r in results if not r.passed]
    lines.append(f"{len(results) - len(failed)}/{len(results)} checks passed")
    if failed:
        lines.append("failed: " + ", ".join(failed))
    return "\n".join(lines)
