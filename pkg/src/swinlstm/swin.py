"""Patch embedding, window machinery and Swin Transformer blocks.

Token grids are laid out ``(B, Gh, Gw, D)``; a window set is the
``(B * nW, w * w, D)`` tensor produced by :func:`window_partition`, windows
in row-major order over the grid and tokens row-major inside each window.
"""
import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor, ops

MASK_VALUE = -1.0e4


# ---------------------------------------------------------------- patches

def patchify(frames, P):
    """(B, C, H, W) -> (B, H/P, W/P, C*P*P); features ordered (c, py, px)."""
    B, C, H, W = frames.shape
    if H % P or W % P:
        raise ShapeError("patchify", (H, W), (P, P),
                         detail=f"height {H} and width {W} must be divisible by patch size {P}")
    x = frames.reshape(B, C, H // P, P, W // P, P)
    x = x.permute(0, 2, 4, 1, 3, 5)
    return x.reshape(B, H // P, W // P, C * P * P)


def depatchify(tokens, P, C):
    """Inverse of :func:`patchify`."""
    B, Gh, Gw, F = tokens.shape
    if F != C * P * P:
        raise ShapeError("depatchify", tokens.shape, (C, P, P))
    x = tokens.reshape(B, Gh, Gw, C, P, P)
    x = x.permute(0, 3, 1, 4, 2, 5)
    return x.reshape(B, C, Gh * P, Gw * P)


class PatchEmbed:
    """Split frames into P x P patches and project each to ``dim`` channels."""

    def __init__(self, store, prefix, rng, in_channels, patch_size, dim):
        self.P = patch_size
        self.C = in_channels
        self.W = store.weight(f"{prefix}.weight", rng, (in_channels * patch_size ** 2, dim))
        self.b = store.zeros(f"{prefix}.bias", (dim,))

    def __call__(self, frames):
        return ops.linear(patchify(frames, self.P), self.W, self.b)


# ---------------------------------------------------------------- windows

def _check_window(op, Gh, Gw, w):
    if w < 1 or Gh % w or Gw % w:
        raise ShapeError(op, (Gh, Gw), (w,), detail="grid must be divisible by window size")


def window_partition(x, w):
    B, Gh, Gw, D = x.shape
    _check_window("window_partition", Gh, Gw, w)
    x = x.reshape(B, Gh // w, w, Gw // w, w, D).permute(0, 1, 3, 2, 4, 5)
    return x.reshape(B * (Gh // w) * (Gw // w), w * w, D)


def window_reverse(windows, w, Gh, Gw):
    _check_window("window_reverse", Gh, Gw, w)
    nW = (Gh // w) * (Gw // w)
    n, D = windows.shape[1], windows.shape[2]
    if n != w * w or windows.shape[0] % nW:
        raise ShapeError("window_reverse", windows.shape, (nW, w * w))
    B = windows.shape[0] // nW
    x = windows.reshape(B, Gh // w, Gw // w, w, w, D).permute(0, 1, 3, 2, 4, 5)
    return x.reshape(B, Gh, Gw, D)


def cyclic_shift(x, s):
    """out[i, j] = in[(i + s) mod Gh, (j + s) mod Gw]."""
    if s == 0:
        return x
    return ops.roll(x, (-s, -s), (1, 2))


def cyclic_unshift(x, s):
    if s == 0:
        return x
    return ops.roll(x, (s, s), (1, 2))


def region_ids(Gh, Gw, w, s):
    """Region label per grid cell of the shifted grid (axis slices [0,G-w), [G-w,G-s), [G-s,G))."""
    img = np.zeros((Gh, Gw), dtype=np.int64)
    if s == 0:
        return img
    h_slices = (slice(0, Gh - w), slice(Gh - w, Gh - s), slice(Gh - s, Gh))
    w_slices = (slice(0, Gw - w), slice(Gw - w, Gw - s), slice(Gw - s, Gw))
    cnt = 0
    for hs in h_slices:
        for ws in w_slices:
            img[hs, ws] = cnt
            cnt += 1
    return img


def build_shift_mask(Gh, Gw, w, s, dtype=np.float64):
    """Additive attention masks, shape (nW, w*w, w*w): 0 within a region, MASK_VALUE across."""
    _check_window("build_shift_mask", Gh, Gw, w)
    if not 0 <= s < w:
        raise ShapeError("build_shift_mask", (w,), (s,), detail="shift must satisfy 0 <= s < w")
    ids = region_ids(Gh, Gw, w, s)
    win = ids.reshape(Gh // w, w, Gw // w, w).transpose(0, 2, 1, 3).reshape(-1, w * w)
    same = win[:, :, None] == win[:, None, :]
    return np.where(same, 0.0, MASK_VALUE).astype(dtype)


def relative_position_index(w):
    """(w*w, w*w) index into a ((2w-1)**2,) bias table."""
    coords = np.stack(np.meshgrid(np.arange(w), np.arange(w), indexing="ij")).reshape(2, -1)
    rel = coords[:, :, None] - coords[:, None, :] + (w - 1)
    return rel[0] * (2 * w - 1) + rel[1]


# ---------------------------------------------------------------- attention

class WindowAttention:
    """Multi-head self-attention inside each window, optional relative bias."""

    def __init__(self, store, prefix, rng, dim, heads, window, rel_pos_bias=True):
        if dim % heads:
            raise ConfigError(f"embed dim {dim} not divisible by heads {heads}")
        self.dim, self.heads, self.window = dim, heads, window
        self.scale = (dim // heads) ** -0.5
        self.qkv_w = store.weight(f"{prefix}.qkv.weight", rng, (dim, 3 * dim))
        self.qkv_b = store.zeros(f"{prefix}.qkv.bias", (3 * dim,))
        self.proj_w = store.weight(f"{prefix}.proj.weight", rng, (dim, dim))
        self.proj_b = store.zeros(f"{prefix}.proj.bias", (dim,))
        self.rel_table = None
        if rel_pos_bias:
            self.rel_table = store.weight(f"{prefix}.rel_bias", rng, ((2 * window - 1) ** 2, heads))
            self.rel_index = relative_position_index(window).reshape(-1)
        self.keep_attention = False
        self.last_attention = None

    def __call__(self, windows, mask=None):
        nB, n, D = windows.shape
        h, dh = self.heads, D // self.heads
        # slicing the weights keeps the backward scatter at parameter size
        q, k, v = (
            ops.linear(windows, self.qkv_w[:, i * D:(i + 1) * D], self.qkv_b[i * D:(i + 1) * D])
            .reshape(nB, n, h, dh).permute(0, 2, 1, 3)
            for i in range(3)
        )
        scores = ops.matmul(q * self.scale, k.permute(0, 1, 3, 2))
        if self.rel_table is not None:
            bias = ops.gather(self.rel_table, self.rel_index).reshape(n, n, h).permute(2, 0, 1)
            scores = scores + bias
        if mask is not None:
            nW = mask.shape[0]
            m = Tensor(mask[None, :, None].astype(scores.dtype, copy=False))
            scores = (scores.reshape(nB // nW, nW, h, n, n) + m).reshape(nB, h, n, n)
        attn = ops.softmax(scores, axis=-1)
        if self.keep_attention:
            self.last_attention = attn.data
        out = ops.matmul(attn, v).permute(0, 2, 1, 3).reshape(nB, n, D)
        return ops.linear(out, self.proj_w, self.proj_b)


class LayerNorm:
    def __init__(self, store, prefix, dim, eps=1e-5):
        self.gamma = store.ones(f"{prefix}.weight", (dim,))
        self.beta = store.zeros(f"{prefix}.bias", (dim,))
        self.eps = eps

    def __call__(self, x):
        return ops.layer_norm(x, self.gamma, self.beta, self.eps)


class Mlp:
    def __init__(self, store, prefix, rng, dim, hidden, dropout=0.0, dropout_rng=None):
        self.w1 = store.weight(f"{prefix}.fc1.weight", rng, (dim, hidden))
        self.b1 = store.zeros(f"{prefix}.fc1.bias", (hidden,))
        self.w2 = store.weight(f"{prefix}.fc2.weight", rng, (hidden, dim))
        self.b2 = store.zeros(f"{prefix}.fc2.bias", (dim,))
        self.p = dropout
        self.rng = dropout_rng
        self.training = True

    def __call__(self, x):
        x = ops.gelu(ops.linear(x, self.w1, self.b1))
        x = ops.dropout(x, self.p, self.training, self.rng)
        x = ops.linear(x, self.w2, self.b2)
        return ops.dropout(x, self.p, self.training, self.rng)


class SwinBlock:
    """LN -> (S)W-MSA -> residual, LN -> MLP -> residual."""

    def __init__(self, store, prefix, rng, grid, dim, heads, window, shift,
                 mlp_ratio=4.0, dropout=0.0, rel_pos_bias=True, dropout_rng=None):
        Gh, Gw = grid
        _check_window("SwinBlock", Gh, Gw, window)
        self.grid, self.window, self.shift = (Gh, Gw), window, shift
        self.norm1 = LayerNorm(store, f"{prefix}.norm1", dim)
        self.attn = WindowAttention(store, f"{prefix}.attn", rng, dim, heads, window, rel_pos_bias)
        self.norm2 = LayerNorm(store, f"{prefix}.norm2", dim)
        self.mlp = Mlp(store, f"{prefix}.mlp", rng, dim, int(dim * mlp_ratio), dropout, dropout_rng)
        self.mask = build_shift_mask(Gh, Gw, window, shift) if shift else None

    def attention_branch(self, x):
        Gh, Gw = self.grid
        h = cyclic_shift(self.norm1(x), self.shift)
        h = self.attn(window_partition(h, self.window), self.mask)
        return cyclic_unshift(window_reverse(h, self.window, Gh, Gw), self.shift)

    def __call__(self, x):
        if tuple(x.shape[1:3]) != self.grid:
            raise ShapeError("SwinBlock", x.shape, self.grid)
        x = x + self.attention_branch(x)
        return x + self.mlp(self.norm2(x))


class SwinStack:
    """Even-depth stack of blocks alternating W-MSA and SW-MSA (shift = w // 2)."""

    def __init__(self, store, prefix, rng, grid, dim, depth, heads, window,
                 mlp_ratio=4.0, dropout=0.0, rel_pos_bias=True, dropout_rng=None):
        if depth < 2 or depth % 2:
            raise ConfigError(f"{prefix}: block depth must be a positive even number, got {depth}")
        self.blocks = [
            SwinBlock(store, f"{prefix}.{i}", rng, grid, dim, heads, window,
                      0 if i % 2 == 0 else window // 2, mlp_ratio, dropout, rel_pos_bias,
                      dropout_rng)
            for i in range(depth)
        ]
        self.capture = False
        self.captured = []

    def __call__(self, x):
        if self.capture:
            self.captured = []
        for blk in self.blocks:
            x = blk(x)
            if self.capture:
                self.captured.append(x.data.copy())
        return x

    def set_training(self, flag):
        for blk in self.blocks:
            blk.mlp.training = flag


# ---------------------------------------------------------------- resampling

class PatchMerging:
    """(B, Gh, Gw, D) -> (B, Gh/2, Gw/2, 2D): gather 2x2 neighbours, LN, project."""

    def __init__(self, store, prefix, rng, dim):
        self.norm = LayerNorm(store, f"{prefix}.norm", 4 * dim)
        self.reduction = store.weight(f"{prefix}.reduction", rng, (4 * dim, 2 * dim))

    def __call__(self, x):
        B, Gh, Gw, D = x.shape
        if Gh % 2 or Gw % 2:
            raise ShapeError("patch_merging", x.shape, (2, 2), detail="grid extents must be even")
        # neighbour order (0,0), (1,0), (0,1), (1,1)
        x = x.reshape(B, Gh // 2, 2, Gw // 2, 2, D).permute(0, 1, 3, 4, 2, 5)
        x = x.reshape(B, Gh // 2, Gw // 2, 4 * D)
        return ops.linear(self.norm(x), self.reduction)


class PatchExpanding:
    """(B, Gh, Gw, D) -> (B, 2Gh, 2Gw, D/2): project to 2D, unfold into 2x2 blocks, LN."""

    def __init__(self, store, prefix, rng, dim):
        if dim % 2:
            raise ConfigError(f"{prefix}: patch expanding needs an even dim, got {dim}")
        self.expand = store.weight(f"{prefix}.expand", rng, (dim, 2 * dim))
        self.norm = LayerNorm(store, f"{prefix}.norm", dim // 2)

    def __call__(self, x):
        B, Gh, Gw, D = x.shape
        if D % 2:
            raise ShapeError("patch_expanding", x.shape, (2,), detail="channel dim must be even")
        c = D // 2
        x = ops.linear(x, self.expand)
        x = x.reshape(B, Gh, Gw, 2, 2, c).permute(0, 1, 3, 2, 4, 5)
        return self.norm(x.reshape(B, 2 * Gh, 2 * Gw, c))
