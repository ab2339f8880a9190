"""Command-line entry point: ``swinlstm {gen-data,train,eval,predict,selfcheck}``.

Exit codes: 0 success, 1 runtime or check failure, 2 usage or config error.
"""
import argparse
import os
import sys

import numpy as np

from . import config as cfgmod
from . import data
from .errors import ConfigError, SwinLSTMError

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- PGM

def write_pgm(path, image):
    """8-bit binary PGM; ``image`` holds values in [0, 1]."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"PGM needs a 2-D image, got shape {img.shape}")
    px = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5 {px.shape[1]} {px.shape[0]} 255\n".encode("ascii"))
        fh.write(px.tobytes())


def read_pgm(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, w, h, maxval, payload = raw.split(maxsplit=4)
    if magic != b"P5" or int(maxval) != 255:
        raise ValueError(f"{path}: not an 8-bit P5 image")
    return np.frombuffer(payload[:int(w) * int(h)], dtype=np.uint8).reshape(int(h), int(w))


def _normalise(img):
    lo, hi = float(img.min()), float(img.max())
    return np.zeros_like(img) if hi - lo < 1e-12 else (img - lo) / (hi - lo)


def _frame_image(frame):
    # (C, H, W) -> (H, W); multi-channel frames are averaged
    return frame.mean(axis=0)


# ---------------------------------------------------------------- commands

def cmd_gen_data(args):
    pool = None
    if args.mnist_images:
        pool = data.load_idx(args.mnist_images)
    if args.canvas % args.downsample:
        raise UsageError(f"canvas {args.canvas} not divisible by --downsample {args.downsample}")
    ds = data.build_dataset(args.seed, args.count, args.out, frames=args.frames, pool=pool,
                            canvas=args.canvas, scale=args.downsample)
    size = os.path.getsize(args.out)
    src = "procedural glyphs" if ds.procedural else "MNIST digits"
    print(f"wrote {args.out}: {ds.count} sequences x {ds.frames} frames "
          f"{ds.shape[2]}x{ds.shape[3]}x{ds.shape[4]} ({src}), {size} bytes, seed {args.seed}")
    return EXIT_OK


def _overrides(pairs):
    out = {}
    for item in pairs or ():
        if "=" not in item:
            raise ConfigError([f"--set expects key=value, got {item!r}"])
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _load_run(args):
    values = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            values = cfgmod.parse_text(fh.read())
    values.update(_overrides(args.set))
    if args.seed is not None:
        values["seed"] = str(args.seed)
    if args.epochs is not None:
        values["epochs"] = str(args.epochs)
    return cfgmod.build(values)


def cmd_train(args):
    from .model import SwinLSTM
    from .training import Trainer
    run = _load_run(args)
    train_ds = data.read_swds(args.data)
    val_ds = data.read_swds(args.val) if args.val else None
    os.makedirs(args.out_dir, exist_ok=True)
    log_path = os.path.join(args.out_dir, "metrics.csv")
    ckpt_dir = os.path.join(args.out_dir, "checkpoints")
    m = run.model
    if train_ds.shape[2:] != (m.input_channels, m.height, m.width):
        raise ConfigError([f"dataset frames {train_ds.shape[2:]} do not match the model input "
                           f"{(m.input_channels, m.height, m.width)}"])
    if args.resume:
        trainer = Trainer.resume(args.resume, run.train, log_path=log_path, ckpt_dir=ckpt_dir)
        if trainer.model.config != run.model:
            raise ConfigError(["checkpoint model config differs from the run config"])
        print(f"resumed from {args.resume} at epoch {trainer.epoch}, step {trainer.model.params.step}")
    else:
        if os.path.exists(log_path):
            os.remove(log_path)
        model = SwinLSTM(run.model, seed=run.train.seed, dtype=np.dtype(run.train.dtype))
        trainer = Trainer(model, run.train, log_path=log_path, ckpt_dir=ckpt_dir)
        print(f"model {run.model.variant}: {model.parameter_count()} parameters")
    with open(os.path.join(args.out_dir, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(cfgmod.to_text(run.model) + cfgmod.to_text(run.train))
    remaining = max(0, run.train.epochs - trainer.epoch)
    trainer.fit(train_ds, epochs=remaining, val=val_ds)
    return EXIT_OK


def _load_model(path):
    from .training import load_checkpoint
    model, _ = load_checkpoint(path)
    model.set_training(False)
    return model


def cmd_eval(args):
    from .training import evaluate
    model = _load_model(args.ckpt)
    ds = data.read_swds(args.data)
    n_input = args.n_input or ds.frames // 2
    horizon = args.horizon or ds.frames - n_input
    rep = evaluate(model, ds, n_input, horizon, batch_size=args.batch_size)
    print(rep.summary())
    if args.report:
        rep.to_csv(args.report)
        print(f"per-frame report written to {args.report}")
    return EXIT_OK


def cmd_predict(args):
    from .tensor import no_grad
    model = _load_model(args.ckpt)
    ds = data.read_swds(args.input)
    if not 0 <= args.index < ds.count:
        raise SwinLSTMError(f"index {args.index} out of range for {ds.count} sequences")
    seq = ds[args.index].astype(model.dtype)
    n_input = args.n_input or ds.frames // 2
    horizon = args.horizon or ds.frames - n_input
    os.makedirs(args.dump_dir, exist_ok=True)
    for t in range(n_input):
        write_pgm(os.path.join(args.dump_dir, f"input_{t:02d}.pgm"), _frame_image(seq[t]))
    for t, frame in enumerate(seq[n_input:n_input + horizon]):
        write_pgm(os.path.join(args.dump_dir, f"gt_{t:02d}.pgm"), _frame_image(frame))

    model.set_capture(args.dump_states)

    def keep(state, t):
        if not args.dump_states:
            return
        last = state[-1]
        write_pgm(os.path.join(args.dump_dir, f"hid_{t}.pgm"), _normalise(last.H.data[0].mean(-1)))
        write_pgm(os.path.join(args.dump_dir, f"cell_{t}.pgm"), _normalise(last.C.data[0].mean(-1)))
        for k, out in enumerate(model.last_stb):
            write_pgm(os.path.join(args.dump_dir, f"stb_{t}_{k}.pgm"), _normalise(out[0].mean(-1)))

    with no_grad():
        state = None
        for t in range(n_input - 1):
            _, state = model.step(seq[None, t], state)
            keep(state, t)
        frame = seq[None, n_input - 1]
        for k in range(horizon):
            frame, state = model.step(frame, state)
            keep(state, n_input - 1 + k)
            write_pgm(os.path.join(args.dump_dir, f"pred_{k:02d}.pgm"), _frame_image(frame.data[0]))
    print(f"wrote {horizon} predicted frames to {args.dump_dir}")
    return EXIT_OK


def cmd_selfcheck(args):
    from . import selfcheck
    results = selfcheck.run_all(seed=args.seed or 0, corrupt=args.corrupt)
    print(selfcheck.report(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


# ---------------------------------------------------------------- parser

def build_parser():
    p = _Parser(prog="swinlstm", description="Shifted-window recurrent frame predictor.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate a bouncing-digit SWDS dataset")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--frames", type=int, default=20)
    g.add_argument("--out", required=True)
    g.add_argument("--mnist-images", help="IDX image file (optionally .gz); procedural glyphs otherwise")
    g.add_argument("--canvas", type=int, default=data.CANVAS)
    g.add_argument("--downsample", type=int, default=1, help="block-mean pool factor")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train with the two-phase algorithm")
    t.add_argument("--config")
    t.add_argument("--data", required=True)
    t.add_argument("--val")
    t.add_argument("--out-dir", required=True)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score rollouts on a dataset")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--horizon", type=int)
    e.add_argument("--n-input", type=int)
    e.add_argument("--batch-size", type=int, default=8)
    e.add_argument("--report")
    e.add_argument("--seed", type=int)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("predict", help="roll out one sequence and dump PGM frames")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--input", required=True)
    r.add_argument("--index", type=int, default=0)
    r.add_argument("--horizon", type=int)
    r.add_argument("--n-input", type=int)
    r.add_argument("--dump-dir", required=True)
    r.add_argument("--dump-states", action="store_true")
    r.add_argument("--seed", type=int)
    r.set_defaults(func=cmd_predict)

    s = sub.add_parser("selfcheck", help="gradient, window, mask and cell checks")
    s.add_argument("--seed", type=int)
    s.add_argument("--corrupt", metavar="OP", help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_selfcheck)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SwinLSTMError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
