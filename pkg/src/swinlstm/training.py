"""Two-phase training loop, losses, Adam and checkpoints."""
import csv
import io
import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from . import config as cfgmod
from .errors import (CheckpointConfigError, CheckpointError, CheckpointTruncatedError,
                     CheckpointVersionError, NonFiniteError, ShapeError)
from .model import SwinLSTM, stack_frames
from .params import stream
from .tensor import Tensor, backward, clear_tape, no_grad, ops

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8

CKPT_MAGIC = b"SWLS"
CKPT_VERSION = 1
_DTYPE_TAGS = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}
_TAG_DTYPES = {v: k for k, v in _DTYPE_TAGS.items()}

CSV_HEADER = ["step", "epoch", "train_loss", "val_mse", "val_ssim"]


# ---------------------------------------------------------------- losses

def loss_fn(pred, target, mode="L2"):
    """Mean-reduced L2, or mean-absolute plus mean-squared for ``L1+L2``."""
    if not isinstance(target, Tensor):
        target = Tensor(np.asarray(target, dtype=pred.dtype))
    if pred.shape != target.shape:
        raise ShapeError("loss", pred.shape, target.shape)
    diff = pred - target
    l2 = ops.square(diff).mean()
    if mode == "L2":
        return l2
    if mode == "L1+L2":
        return ops.abs(diff).mean() + l2
    raise ValueError(f"unknown loss mode {mode!r}")


# ---------------------------------------------------------------- optimiser

def adam_update(store, lr, betas=ADAM_BETAS, eps=ADAM_EPS):
    """Bias-corrected Adam over every parameter holding a gradient.

    All gradients are checked before any parameter moves, so a non-finite
    gradient aborts the whole step.
    """
    for name, p in store.items():
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise NonFiniteError("adam_update", f"gradient of parameter {name!r}")
    store.step += 1
    b1, b2 = betas
    bc1 = 1.0 - b1 ** store.step
    bc2 = 1.0 - b2 ** store.step
    for name, p in store.items():
        if p.grad is None:
            continue
        K.adam(p.data, p.grad, store.adam_m[name], store.adam_v[name], lr, b1, b2, eps, bc1, bc2)


# ---------------------------------------------------------------- algorithm

@dataclass
class StepTrace:
    """Bookkeeping of one training step (used by tests and diagnostics)."""
    compared_frames: int = 0
    phase1_final: list = None
    phase2_initial: list = None


def sequence_loss(model, frames, S, mode, trace=None):
    """Warm-up over X_0..X_{S-2}, rollout of S frames from X_{S-1}; loss vs [X_1..X_{S-1}; Y]."""
    if not isinstance(frames, Tensor):
        frames = Tensor(np.asarray(frames, dtype=model.dtype))
    if frames.ndim != 5 or frames.shape[1] != 2 * S:
        raise ShapeError("train_step", frames.shape, ("B", 2 * S, "C", "H", "W"),
                         detail=f"each sample needs {S} input and {S} target frames")
    inputs = frames[:, :S]
    warm, preds, handoff = model.unroll(inputs, S)
    pred = stack_frames(warm + preds)
    target = Tensor(np.concatenate([frames.data[:, 1:S], frames.data[:, S:]], axis=1))
    if trace is not None:
        trace.compared_frames = pred.shape[1]
        trace.phase1_final = [(s.H.data.copy(), s.C.data.copy()) for s in handoff]
    return loss_fn(pred, target, mode)


def train_step(model, batch, lr, S=None, mode=None, trace=None):
    """One pass of the two-phase algorithm plus an Adam update; returns the loss."""
    S = S or batch.shape[1] // 2
    mode = mode or model.config.loss
    clear_tape()
    model.params.zero_grad()
    if trace is not None:
        seen = []

        def hook(frame, state):
            # step S-1 is the first prediction-phase step
            if len(seen) == S - 1:
                trace.phase2_initial = [(s.H.data.copy(), s.C.data.copy()) for s in state]
            seen.append(1)
        model.step_hook = hook
    try:
        loss = sequence_loss(model, batch, S, mode, trace)
    finally:
        model.step_hook = None
    value = float(loss.item())
    backward(loss)
    adam_update(model.params, lr)
    return value


# ---------------------------------------------------------------- checkpoints

def _write_tensor(fh, name, arr):
    arr = np.ascontiguousarray(arr)
    nb = name.encode("utf-8")
    fh.write(struct.pack("<H", len(nb)))
    fh.write(nb)
    fh.write(struct.pack("<BB", _DTYPE_TAGS[arr.dtype], arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())


def _read_exact(fh, n):
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointTruncatedError(f"checkpoint truncated: wanted {n} bytes, got {len(buf)}")
    return buf


def _read_tensor(fh):
    (ln,) = struct.unpack("<H", _read_exact(fh, 2))
    name = _read_exact(fh, ln).decode("utf-8")
    tag, rank = struct.unpack("<BB", _read_exact(fh, 2))
    if tag not in _TAG_DTYPES:
        raise CheckpointError(f"unknown dtype tag {tag} for tensor {name!r}")
    dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank))
    dt = _TAG_DTYPES[tag]
    count = int(np.prod(dims)) if rank else 1
    data = np.frombuffer(_read_exact(fh, count * dt.itemsize), dtype=dt.newbyteorder("<"))
    return name, data.astype(dt).reshape(dims)


def save_checkpoint(path, model, extra=None):
    """Write model config, parameters, Adam moments, step and ``extra`` metadata."""
    store = model.params
    meta = dict(extra or {})
    meta["step"] = store.step
    meta["param_count"] = store.count()
    meta["dtype"] = store.dtype.name
    header = cfgmod.to_text(model.config) + "# meta\n" + "".join(
        f"#! {k} = {json.dumps(v, sort_keys=True)}\n" for k, v in sorted(meta.items()))
    hb = header.encode("utf-8")
    names = store.names()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", CKPT_VERSION))
        fh.write(struct.pack("<I", len(hb)))
        fh.write(hb)
        fh.write(struct.pack("<I", 3 * len(names)))
        for n in names:
            _write_tensor(fh, f"param/{n}", store[n].data)
        for n in names:
            _write_tensor(fh, f"adam_m/{n}", store.adam_m[n])
        for n in names:
            _write_tensor(fh, f"adam_v/{n}", store.adam_v[n])
    os.replace(tmp, path)


def _parse_header(text):
    meta = {}
    body = []
    for line in text.splitlines():
        if line.startswith("#! "):
            k, v = line[3:].split(" = ", 1)
            meta[k] = json.loads(v)
        else:
            body.append(line)
    return cfgmod.model_from_text("\n".join(body)), meta


def load_checkpoint(path, expect_config=None):
    """Rebuild the model (and optimiser state) from ``path``.

    Returns ``(model, meta)``.  The parameter layout is re-derived from the
    stored config and every tensor is checked against it.
    """
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if len(magic) < 4:
            raise CheckpointTruncatedError("checkpoint truncated in header")
        if magic != CKPT_MAGIC:
            raise CheckpointError(f"bad checkpoint magic {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != CKPT_VERSION:
            raise CheckpointVersionError(f"checkpoint version {version}, expected {CKPT_VERSION}")
        (hlen,) = struct.unpack("<I", _read_exact(fh, 4))
        try:
            config, meta = _parse_header(_read_exact(fh, hlen).decode("utf-8"))
            config.validate()
        except CheckpointError:
            raise
        except Exception as exc:
            raise CheckpointConfigError(f"invalid checkpoint config: {exc}") from exc
        if expect_config is not None and expect_config != config:
            raise CheckpointConfigError("checkpoint config differs from the expected config")
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        tensors = dict(_read_tensor(fh) for _ in range(count))
        if fh.read(1):
            raise CheckpointError("trailing bytes after checkpoint payload")

    model = SwinLSTM(config, seed=0, dtype=np.dtype(meta.get("dtype", "float32")))
    store = model.params
    if meta.get("param_count") != store.count():
        raise CheckpointConfigError(
            f"parameter count {meta.get('param_count')} in header does not match "
            f"{store.count()} derived from the config")
    expected = {f"{kind}/{n}" for n in store.names() for kind in ("param", "adam_m", "adam_v")}
    if set(tensors) != expected:
        missing = sorted(expected - set(tensors))[:3]
        extra = sorted(set(tensors) - expected)[:3]
        raise CheckpointConfigError(f"tensor names differ (missing {missing}, unexpected {extra})")
    for n in store.names():
        for kind, dst in (("param", store[n].data), ("adam_m", store.adam_m[n]),
                          ("adam_v", store.adam_v[n])):
            arr = tensors[f"{kind}/{n}"]
            if arr.shape != dst.shape:
                raise CheckpointConfigError(f"{kind}/{n}: shape {arr.shape} != {dst.shape}")
            dst[...] = arr
    store.step = int(meta.get("step", 0))
    return model, meta


# ---------------------------------------------------------------- trainer

def _rng_state(gen):
    return gen.bit_generator.state


def _set_rng_state(gen, state):
    gen.bit_generator.state = state


class Trainer:
    """Epoch loop over a :class:`~swinlstm.data.SequenceDataset`.

    The shuffle order comes from the ``shuffle`` stream of ``train.seed``;
    its generator state travels in checkpoints so a resumed run replays the
    uninterrupted one exactly.
    """

    def __init__(self, model, train_cfg, log_path=None, ckpt_dir=None, log=print):
        self.model = model
        self.cfg = train_cfg
        self.epoch = 0
        self.shuffle_rng = stream(train_cfg.seed, "shuffle")
        self.dropout_rng = model.cells[0].stb.blocks[0].mlp.rng
        self.log_path = log_path
        self.ckpt_dir = ckpt_dir
        self.log = log or (lambda *a, **k: None)
        self.step_losses = []

    @classmethod
    def resume(cls, path, train_cfg, **kw):
        model, meta = load_checkpoint(path)
        tr = cls(model, train_cfg, **kw)
        tr.epoch = int(meta.get("epoch", 0))
        if "shuffle_rng" in meta:
            _set_rng_state(tr.shuffle_rng, meta["shuffle_rng"])
        if "dropout_rng" in meta and tr.dropout_rng is not None:
            _set_rng_state(tr.dropout_rng, meta["dropout_rng"])
        return tr

    def checkpoint(self, path):
        extra = {"epoch": self.epoch, "shuffle_rng": _rng_state(self.shuffle_rng)}
        if self.dropout_rng is not None:
            extra["dropout_rng"] = _rng_state(self.dropout_rng)
        save_checkpoint(path, self.model, extra)

    def _append_csv(self, row):
        if not self.log_path:
            return
        new = not os.path.exists(self.log_path) or os.path.getsize(self.log_path) == 0
        with open(self.log_path, "a", newline="") as fh:
            w = csv.writer(fh)
            if new:
                w.writerow(CSV_HEADER)
            w.writerow(row)

    def run_epoch(self, dataset):
        from .data import iterate_batches
        S = self.cfg.frames_per_phase
        self.model.set_training(True)
        losses = []
        for batch in iterate_batches(dataset, self.cfg.batch_size, rng=self.shuffle_rng):
            frames = batch.frames
            if frames.shape[1] != 2 * S:
                raise ShapeError("train_step", frames.shape, ("B", 2 * S),
                                 detail="dataset frames per sequence must equal 2 * frames_per_phase")
            loss = train_step(self.model, frames.astype(self.model.dtype, copy=False),
                              self.cfg.learning_rate, S)
            losses.append(loss)
            self.step_losses.append(loss)
        self.epoch += 1
        return float(np.mean(losses)) if losses else float("nan")

    def fit(self, dataset, epochs=None, val=None):
        epochs = self.cfg.epochs if epochs is None else epochs
        history = []
        for _ in range(epochs):
            train_loss = self.run_epoch(dataset)
            val_mse = val_ssim = ""
            msg = f"epoch {self.epoch} step {self.model.params.step} loss {train_loss:.6f}"
            if val is not None:
                rep = evaluate(self.model, val, self.cfg.frames_per_phase,
                               batch_size=self.cfg.batch_size)
                val_mse = repr(rep.averages["mse_pixel"])
                val_ssim = repr(rep.averages["ssim"])
                msg += f" val_mse {rep.averages['mse_pixel']:.6f} val_ssim {rep.averages['ssim']:.4f}"
            self._append_csv([self.model.params.step, self.epoch, repr(train_loss), val_mse, val_ssim])
            self.log(msg)
            history.append(train_loss)
            if self.ckpt_dir and self.epoch % self.cfg.checkpoint_interval == 0:
                os.makedirs(self.ckpt_dir, exist_ok=True)
                self.checkpoint(os.path.join(self.ckpt_dir, f"ckpt_{self.epoch:04d}.swls"))
                self.checkpoint(os.path.join(self.ckpt_dir, "last.swls"))
        return history


def evaluate(model, dataset, n_input, horizon=None, batch_size=8, indices=None):
    """Roll out every sequence and score the predicted horizon."""
    from .data import iterate_batches
    from .metrics import MetricReport
    horizon = horizon or dataset.frames - n_input
    if not 1 <= n_input < dataset.frames or n_input + horizon > dataset.frames:
        raise ShapeError("evaluate", (n_input, horizon), detail=f"{n_input} input + horizon within "
                         f"{dataset.frames} stored frames")
    model.set_training(False)
    preds, targets = [], []
    with no_grad():
        for batch in iterate_batches(dataset, batch_size, drop_last=False, indices=indices):
            fr = batch.frames.astype(model.dtype, copy=False)
            out = model.rollout(fr[:, :n_input], horizon)
            preds.append(out)
            targets.append(fr[:, n_input:n_input + horizon])
    model.set_training(True)
    return MetricReport.from_frames(np.concatenate(preds), np.concatenate(targets))


def read_csv_log(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(io.StringIO(fh.read())))
