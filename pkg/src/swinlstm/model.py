"""SwinLSTM-B / SwinLSTM-D predictors and autoregressive rollout."""
import numpy as np

from .cell import SwinLSTMCell
from .config import ModelConfig
from .errors import ConfigError, ShapeError
from .params import ParameterStore, stream
from .swin import PatchEmbed, PatchExpanding, PatchMerging, depatchify
from .tensor import Tensor, get_default_dtype, no_grad, ops


class Reconstruction:
    """Map the final hidden token grid back to frame logits.

    ``transposed``: per-token linear D -> C*P*P then de-patchify (a stride-P,
    kernel-P transposed convolution).  ``bilinear``: per-token linear D -> C
    then bilinear upsampling by P.  ``linear``: one dense map from the whole
    flattened grid to the whole flattened frame.
    """

    def __init__(self, store, prefix, rng, cfg):
        self.mode = cfg.reconstruction
        self.P, self.C = cfg.patch_size, cfg.input_channels
        self.H, self.W = cfg.height, cfg.width
        D = cfg.embed_dim
        Gh, Gw = cfg.grid
        if self.mode == "transposed":
            out = self.C * self.P ** 2
            self.w = store.weight(f"{prefix}.weight", rng, (D, out))
            self.b = store.zeros(f"{prefix}.bias", (out,))
        elif self.mode == "bilinear":
            self.w = store.weight(f"{prefix}.weight", rng, (D, self.C))
            self.b = store.zeros(f"{prefix}.bias", (self.C,))
            self.up_h = ops.bilinear_matrix(Gh, self.P)
            self.up_wT = ops.bilinear_matrix(Gw, self.P).T.copy()
        elif self.mode == "linear":
            n_out = self.C * self.H * self.W
            self.w = store.weight(f"{prefix}.weight", rng, (Gh * Gw * D, n_out))
            self.b = store.zeros(f"{prefix}.bias", (n_out,))
        else:
            raise ConfigError(f"unknown reconstruction mode {self.mode!r}")

    def __call__(self, H):
        B, Gh, Gw, D = H.shape
        if self.mode == "transposed":
            return depatchify(ops.linear(H, self.w, self.b), self.P, self.C)
        if self.mode == "bilinear":
            x = ops.linear(H, self.w, self.b).permute(0, 3, 1, 2)
            dt = x.dtype
            x = ops.matmul(Tensor(self.up_h.astype(dt)), x)
            return ops.matmul(x, Tensor(self.up_wT.astype(dt)))
        flat = ops.linear(H.reshape(B, Gh * Gw * D), self.w, self.b)
        return flat.reshape(B, self.C, self.H, self.W)


class SwinLSTM:
    """Frame predictor built around one (B) or four (D) SwinLSTM cells.

    B: embed -> cell -> reconstruct.
    D: embed -> cell -> merge -> cell -> cell -> expand -> cell -> reconstruct.
    Every output passes through a final sigmoid.  The state carried between
    steps is a list with one :class:`CellState` per cell.
    """

    def __init__(self, config: ModelConfig, seed=0, dtype=None):
        self.config = config.validate()
        cfg = config
        self.params = ParameterStore(dtype or get_default_dtype())
        self.dtype = self.params.dtype
        rng = stream(seed, "init")
        drng = stream(seed, "dropout")
        store = self.params
        self.embed = PatchEmbed(store, "embed", rng, cfg.input_channels, cfg.patch_size,
                                cfg.embed_dim)
        self.cells = []
        for i, (grid, dim, heads) in enumerate(cfg.stages()):
            self.cells.append(SwinLSTMCell(
                store, f"cell{i}", rng, grid, dim, cfg.depths[i], heads, cfg.window_size,
                cfg.mlp_ratio, cfg.dropout, cfg.rel_pos_bias, drng))
        if cfg.variant == "D":
            self.merge = PatchMerging(store, "merge", rng, cfg.embed_dim)
            self.expand = PatchExpanding(store, "expand", rng, 2 * cfg.embed_dim)
        self.recon = Reconstruction(store, "recon", rng, cfg)
        self.capture = False
        self.last_stb = []
        # optional callable(frame, state) invoked on entry to every step
        self.step_hook = None

    # -- bookkeeping
    def parameter_count(self):
        return self.params.count()

    def set_training(self, flag):
        for c in self.cells:
            c.stb.set_training(flag)

    def set_capture(self, flag):
        self.capture = flag
        for c in self.cells:
            c.stb.capture = flag

    def _as_frames(self, frame):
        if not isinstance(frame, Tensor):
            frame = Tensor(np.asarray(frame, dtype=self.dtype))
        cfg = self.config
        want = (cfg.input_channels, cfg.height, cfg.width)
        if frame.ndim != 4 or tuple(frame.shape[1:]) != want:
            raise ShapeError("forward_step", frame.shape, (None,) + want)
        return frame

    # -- forward
    def reconstruct(self, H):
        return ops.sigmoid(self.recon(H))

    def step(self, frame, state=None):
        """One network step: returns ``(next_frame, new_state)``."""
        frame = self._as_frames(frame)
        if state is not None and len(state) != len(self.cells):
            raise ShapeError("forward_step", (len(state),), (len(self.cells),),
                             detail="state must hold one entry per cell")
        if self.step_hook is not None:
            self.step_hook(frame, state)
        prev = state or [None] * len(self.cells)
        new = []
        x = self.embed(frame)
        if self.config.variant == "B":
            x, s = self.cells[0](x, prev[0])
            new.append(s)
        else:
            x, s = self.cells[0](x, prev[0])
            new.append(s)
            x = self.merge(x)
            x, s = self.cells[1](x, prev[1])
            new.append(s)
            x, s = self.cells[2](x, prev[2])
            new.append(s)
            x = self.expand(x)
            x, s = self.cells[3](x, prev[3])
            new.append(s)
        if self.capture:
            self.last_stb = [blk for c in self.cells for blk in c.stb.captured]
        return self.reconstruct(x), new

    forward_step = step

    def unroll(self, inputs, horizon):
        """Warm-up over ``inputs[:, :-1]`` then autoregressive rollout.

        Returns ``(warmup_preds, rollout_preds, handoff_state)``: warm-up
        predictions for frames 1..S-1, ``horizon`` rollout predictions seeded
        by the last input frame, and the state passed across the boundary.
        """
        if not isinstance(inputs, Tensor):
            inputs = Tensor(np.asarray(inputs, dtype=self.dtype))
        if inputs.ndim != 5 or inputs.shape[1] < 1:
            raise ShapeError("rollout", inputs.shape, ("B", "S>=1", "C", "H", "W"))
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        S = inputs.shape[1]
        state = None
        warm = []
        for t in range(S - 1):
            pred, state = self.step(inputs[:, t], state)
            warm.append(pred)
        handoff = state
        frame = inputs[:, S - 1]
        preds = []
        for _ in range(horizon):
            frame, state = self.step(frame, state)
            preds.append(frame)
        return warm, preds, handoff

    def rollout(self, inputs, horizon):
        """Predicted frames ``(B, horizon, C, H, W)`` as a numpy array (no tape)."""
        with no_grad():
            _, preds, _ = self.unroll(inputs, horizon)
        return np.stack([p.data for p in preds], axis=1)


def stack_frames(frames):
    """List of (B, C, H, W) tensors -> (B, T, C, H, W) tensor."""
    return ops.concat([f.reshape((f.shape[0], 1) + f.shape[1:]) for f in frames], axis=1)


def parameter_count(config, dtype=np.float32):
    return SwinLSTM(config, seed=0, dtype=dtype).parameter_count()
