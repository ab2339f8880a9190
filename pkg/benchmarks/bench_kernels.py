"""Compare the numba and numpy kernel paths.

    python3 benchmarks/bench_kernels.py [--repeat N]

Times each kernel in isolation on shapes typical of a 64x64 frame with
patch size 4 and width 128, then one training step of a small model with
each backend (the step runs in a subprocess so the env flag takes effect).
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from swinlstm import _kernels as K

STEP_SNIPPET = """
import time, numpy as np
from swinlstm.config import ModelConfig
from swinlstm.model import SwinLSTM
from swinlstm.training import train_step
cfg = ModelConfig(variant="B", height=32, width=32, patch_size=2, embed_dim=32, depths=(2,),
                  window_size=4, heads=2)
m = SwinLSTM(cfg, seed=0)
x = np.random.default_rng(0).random((2, 8, 1, 32, 32)).astype(np.float32)
train_step(m, x, 1e-4, 4)
t = time.perf_counter()
for _ in range({n}):
    train_step(m, x, 1e-4, 4)
print((time.perf_counter() - t) / {n})
"""


def kernel_cases(rng):
    x = rng.standard_normal((2 * 1024, 128)).astype(np.float32)
    g = rng.standard_normal(x.shape).astype(np.float32)
    gamma, beta = np.ones(128, np.float32), np.zeros(128, np.float32)
    _, xhat, rstd = K.layer_norm_fwd_np(x, gamma, beta, 1e-5)
    att = rng.standard_normal((2 * 64 * 4 * 16, 16)).astype(np.float32)
    y = K.softmax_fwd_np(att)
    h = rng.standard_normal((2 * 1024, 512)).astype(np.float32)
    _, t = K.gelu_fwd_np(h)
    p = rng.standard_normal(200_000).astype(np.float32)
    pg = rng.standard_normal(p.shape).astype(np.float32)
    m, v = np.zeros_like(p), np.zeros_like(p)
    return {
        "layer_norm_fwd": lambda f: f(x, gamma, beta, 1e-5),
        "layer_norm_bwd": lambda f: f(g, xhat, rstd, gamma),
        "softmax_fwd": lambda f: f(att),
        "softmax_bwd": lambda f: f(y, att),
        "gelu_fwd": lambda f: f(h),
        "gelu_bwd": lambda f: f(h, t, h),
        "adam": lambda f: f(p, pg, m, v, 1e-4, 0.9, 0.999, 1e-8, 0.1, 0.001),
    }


def step_time(disable, n):
    env = dict(os.environ)
    env["SWINLSTM_DISABLE_NUMBA"] = "1" if disable else "0"
    out = subprocess.run([sys.executable, "-c", STEP_SNIPPET.format(n=n)], env=env,
                         capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--steps", type=int, default=5)
    args = ap.parse_args()
    if not K.HAS_NUMBA:
        sys.exit("numba is not installed; nothing to compare")
    cases = kernel_cases(np.random.default_rng(0))
    print(f"{'kernel':<16}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, call in cases.items():
        f_np, f_nb = getattr(K, name + "_np"), getattr(K, name + "_nb")
        call(f_nb)  # compile
        t_np = min(timeit.repeat(lambda: call(f_np), number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(lambda: call(f_nb), number=1, repeat=args.repeat)) * 1e3
        used = "numba" if name in K.NUMBA_KERNELS else "numpy"
        print(f"{name:<16}{t_np:>10.3f}{t_nb:>10.3f}{t_np / t_nb:>8.2f}x  (default: {used})")
    a, b = step_time(True, args.steps), step_time(False, args.steps)
    print(f"train step: numpy {a * 1e3:.1f} ms, numba {b * 1e3:.1f} ms, speedup {a / b:.2f}x")


if __name__ == "__main__":
    main()
