"""Moving-digit sequence synthesis, MNIST IDX ingestion and the SWDS file format.

SWDS layout (little-endian)::

    magic  b"SWDS"
    u32    version
    u32    count        sequences
    u16    frames       per sequence
    u16    C, H, W
    u8     dtype tag    low 7 bits: 0 = uint8 (/255), 1 = float32, 2 = float64
                        bit 7 set: sprites were procedural glyphs, not MNIST
    payload count * frames * C * H * W values, row-major
"""
import gzip
import math
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError, TruncatedDataError
from .params import stream

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

SWDS_MAGIC = b"SWDS"
SWDS_VERSION = 1
_SWDS_HEADER = struct.Struct("<4sIIHHHHB")
SWDS_PROCEDURAL_FLAG = 0x80
_SWDS_DTYPES = {0: np.dtype(np.uint8), 1: np.dtype(np.float32), 2: np.dtype(np.float64)}

CANVAS = 64
DIGIT = 28
SPEED_RANGE = (3.0, 5.0)


# ---------------------------------------------------------------- IDX

def _open(path):
    return gzip.open(path, "rb") if str(path).endswith(".gz") else open(path, "rb")


def _read_idx(path, magic, ndim):
    with _open(path) as fh:
        head = fh.read(4 + 4 * ndim)
        if len(head) < 4 + 4 * ndim:
            raise TruncatedDataError(f"{path}: IDX header truncated")
        got = struct.unpack(">I", head[:4])[0]
        if got != magic:
            raise DataFormatError(f"{path}: bad IDX magic 0x{got:08x}, expected 0x{magic:08x}")
        dims = struct.unpack(f">{ndim}I", head[4:])
        need = int(np.prod(dims))
        payload = fh.read(need)
    if len(payload) < need:
        raise TruncatedDataError(f"{path}: IDX payload has {len(payload)} of {need} bytes")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def load_idx(images_path, labels_path=None):
    """Digit bitmaps scaled to [0, 1] (and labels when a label file is given)."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3).astype(np.float32) / 255.0
    if labels_path is None:
        return images
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if len(labels) != len(images):
        raise DataFormatError(f"{len(labels)} labels for {len(images)} images")
    return images, labels


def write_idx_images(path, images):
    """Write uint8 images (N, rows, cols) as an IDX file (testing / interchange)."""
    images = np.asarray(images, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape))
        fh.write(images.tobytes())


# ---------------------------------------------------------------- sprites

def procedural_glyph(rng, size=DIGIT):
    """Filled ellipse of random eccentricity and orientation, values in {0, 1}."""
    a = rng.uniform(0.25, 0.45) * size
    b = rng.uniform(0.12, 0.30) * size
    theta = rng.uniform(0.0, math.pi)
    yy, xx = np.mgrid[0:size, 0:size] - (size - 1) / 2.0
    c, s = math.cos(theta), math.sin(theta)
    u = xx * c + yy * s
    v = -xx * s + yy * c
    return ((u / a) ** 2 + (v / b) ** 2 <= 1.0).astype(np.float32)


@dataclass
class DigitSprite:
    bitmap: np.ndarray
    x: float
    y: float
    vx: float
    vy: float


def reflect(pos, vel, bound):
    """Advance one frame; positions past [0, bound] are mirrored and velocity negated."""
    pos = pos + vel
    while pos < 0.0 or pos > bound:
        if pos < 0.0:
            pos = -pos
        else:
            pos = 2.0 * bound - pos
        vel = -vel
    return pos, vel


def render(sprites, canvas=CANVAS):
    frame = np.zeros((canvas, canvas), dtype=np.float32)
    for sp in sprites:
        h, w = sp.bitmap.shape
        r = int(math.floor(sp.y + 0.5))
        c = int(math.floor(sp.x + 0.5))
        np.maximum(frame[r:r + h, c:c + w], sp.bitmap, out=frame[r:r + h, c:c + w])
    return frame


def generate_sequence(rng, digits, length=20, canvas=CANVAS, speed_range=SPEED_RANGE,
                      return_tracks=False):
    """Frames ``(length, 1, canvas, canvas)`` of digits bouncing at fixed speed.

    Each digit starts uniformly inside the canvas with a uniform direction
    and a speed drawn from ``speed_range``; overlapping pixels take the max.
    """
    sprites = []
    for bmp in digits:
        bmp = np.asarray(bmp, dtype=np.float32)
        bound = canvas - bmp.shape[0]
        speed = rng.uniform(*speed_range)
        angle = rng.uniform(0.0, 2.0 * math.pi)
        sprites.append(DigitSprite(bmp, rng.uniform(0, bound), rng.uniform(0, bound),
                                   speed * math.cos(angle), speed * math.sin(angle)))
    frames = np.zeros((length, 1, canvas, canvas), dtype=np.float32)
    tracks = np.zeros((length, len(sprites), 4))
    for t in range(length):
        if t:
            for sp in sprites:
                bound = canvas - sp.bitmap.shape[0]
                sp.x, sp.vx = reflect(sp.x, sp.vx, bound)
                sp.y, sp.vy = reflect(sp.y, sp.vy, bound)
        frames[t, 0] = render(sprites, canvas)
        tracks[t] = [(sp.x, sp.y, sp.vx, sp.vy) for sp in sprites]
    return (frames, tracks) if return_tracks else frames


def downsample(frames, k):
    """Block-mean pool the last two axes by ``k``."""
    if k == 1:
        return frames
    *lead, H, W = frames.shape
    return frames.reshape(*lead, H // k, k, W // k, k).mean(axis=(-3, -1))


def sequence_for_index(seed, index, pool=None, length=20, canvas=CANVAS, speed_range=SPEED_RANGE,
                       scale=1):
    """Sequence ``index`` of the dataset seeded by ``seed`` (independent of all others)."""
    rng = stream(seed, "data", index)
    if pool is not None:
        picks = rng.integers(0, len(pool), size=2)
        digits = [pool[i] for i in picks]
    else:
        digits = [procedural_glyph(rng) for _ in range(2)]
    frames = generate_sequence(rng, digits, length, canvas, speed_range)
    return downsample(frames, scale)


# ---------------------------------------------------------------- SWDS

@dataclass
class SequenceDataset:
    frames_data: np.ndarray  # (count, frames, C, H, W) float
    procedural: bool = False

    @property
    def count(self):
        return self.frames_data.shape[0]

    @property
    def frames(self):
        return self.frames_data.shape[1]

    @property
    def shape(self):
        return self.frames_data.shape

    def __len__(self):
        return self.count

    def __getitem__(self, i):
        return self.frames_data[i]


@dataclass
class SequenceBatch:
    """``frames`` is (B, T, C, H, W); the first ``n_input`` frames are inputs."""
    frames: np.ndarray
    n_input: int
    indices: np.ndarray

    @property
    def inputs(self):
        return self.frames[:, :self.n_input]

    @property
    def targets(self):
        return self.frames[:, self.n_input:]


def write_swds(path, frames, procedural=False, dtype=np.float32):
    frames = np.asarray(frames)
    if frames.ndim != 5:
        raise DataFormatError(f"SWDS payload must be 5-D, got shape {frames.shape}")
    dt = np.dtype(dtype)
    tag = {v: k for k, v in _SWDS_DTYPES.items()}[dt]
    if procedural:
        tag |= SWDS_PROCEDURAL_FLAG
    if dt == np.uint8:
        payload = np.rint(np.clip(frames, 0.0, 1.0) * 255.0).astype(np.uint8)
    else:
        payload = frames.astype(dt.newbyteorder("<"))
    n, t, c, h, w = frames.shape
    try:
        with open(path, "wb") as fh:
            fh.write(_SWDS_HEADER.pack(SWDS_MAGIC, SWDS_VERSION, n, t, c, h, w, tag))
            fh.write(payload.tobytes())
    except OSError as exc:
        raise DataFormatError(f"cannot write {path}: {exc}") from exc
    return os.path.getsize(path)


def read_swds(path):
    try:
        with open(path, "rb") as fh:
            head = fh.read(_SWDS_HEADER.size)
            if len(head) < _SWDS_HEADER.size:
                raise TruncatedDataError(f"{path}: SWDS header truncated")
            magic, version, n, t, c, h, w, tag = _SWDS_HEADER.unpack(head)
            if magic != SWDS_MAGIC:
                raise DataFormatError(f"{path}: bad SWDS magic {magic!r}")
            if version != SWDS_VERSION:
                raise DataFormatError(f"{path}: unsupported SWDS version {version}")
            dt = _SWDS_DTYPES.get(tag & ~SWDS_PROCEDURAL_FLAG)
            if dt is None:
                raise DataFormatError(f"{path}: unknown dtype tag {tag}")
            need = n * t * c * h * w * dt.itemsize
            payload = fh.read(need)
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc
    if len(payload) < need:
        raise TruncatedDataError(f"{path}: payload has {len(payload)} of {need} bytes")
    arr = np.frombuffer(payload, dtype=dt.newbyteorder("<")).reshape(n, t, c, h, w)
    if dt == np.uint8:
        arr = arr.astype(np.float32) / 255.0
    else:
        arr = arr.astype(dt)
    return SequenceDataset(arr, procedural=bool(tag & SWDS_PROCEDURAL_FLAG))


def build_dataset(seed, count, out=None, frames=20, pool=None, canvas=CANVAS,
                  speed_range=SPEED_RANGE, scale=1):
    """Generate ``count`` sequences (sequence i uses the stream (seed, i)); optionally write SWDS."""
    seqs = np.stack([
        sequence_for_index(seed, i, pool, frames, canvas, speed_range, scale)
        for i in range(count)
    ])
    ds = SequenceDataset(seqs, procedural=pool is None)
    if out is not None:
        write_swds(out, seqs, procedural=ds.procedural)
    return ds


def iterate_batches(dataset, m, split=None, rng=None, drop_last=True, indices=None):
    """Yield :class:`SequenceBatch` of ``m`` sequences; shuffled when ``rng`` is given."""
    if m < 1:
        raise ValueError("batch size must be >= 1")
    data = dataset.frames_data if isinstance(dataset, SequenceDataset) else np.asarray(dataset)
    order = np.arange(len(data)) if indices is None else np.asarray(indices)
    if rng is not None:
        order = rng.permutation(order)
    split = data.shape[1] // 2 if split is None else split
    stop = len(order) - (len(order) % m if drop_last else 0)
    for start in range(0, stop, m):
        idx = order[start:start + m]
        yield SequenceBatch(data[idx], split, idx)
