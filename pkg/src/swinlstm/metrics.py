"""Frame-quality metrics: MSE / MAE (two conventions), PSNR and SSIM."""
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

PIXEL_MEAN = "pixel-mean"
FRAME_SUM = "frame-sum"
CONVENTIONS = (PIXEL_MEAN, FRAME_SUM)

PSNR_CAP = 120.0
PSNR_MIN_MSE = 1e-12

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03


def _pair(pred, target, op):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(op, pred.shape, target.shape)
    return pred, target


def _reduce(err, convention):
    # frames are the trailing (C, H, W); anything in front counts as frames.
    # Both conventions share the per-frame sums, so for power-of-two frame
    # sizes frame-sum is exactly pixel-mean times the pixel count.
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown convention {convention!r}; expected one of {CONVENTIONS}")
    npix = int(np.prod(err.shape[-3:])) if err.ndim >= 3 else err.size
    frame_sum = float(err.reshape(-1, npix).sum(axis=1).mean())
    return frame_sum if convention == FRAME_SUM else frame_sum / npix


def mse(pred, target, convention=PIXEL_MEAN):
    pred, target = _pair(pred, target, "mse")
    return _reduce((pred - target) ** 2, convention)


def mae(pred, target, convention=PIXEL_MEAN):
    pred, target = _pair(pred, target, "mae")
    return _reduce(np.abs(pred - target), convention)


def psnr_from_mse(m, max_val=1.0):
    if m < PSNR_MIN_MSE:
        return PSNR_CAP
    return 10.0 * math.log10(max_val * max_val / m)


def psnr(pred, target, max_val=1.0):
    return psnr_from_mse(mse(pred, target), max_val)


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    """Normalised 1-D Gaussian taps; the 2-D window is their outer product."""
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img, g):
    k = len(g)
    rows = sliding_window_view(img, k, axis=-2) @ g
    return sliding_window_view(rows, k, axis=-1) @ g


def ssim_map(x, y, data_range=1.0, size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    """Local SSIM over every valid window position of the last two axes."""
    x, y = _pair(x, y, "ssim")
    if x.ndim < 2 or x.shape[-1] < size or x.shape[-2] < size:
        raise ShapeError("ssim", x.shape, ("H>=%d" % size, "W>=%d" % size),
                         detail="frame smaller than the SSIM window")
    g = gaussian_window(size, sigma)
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    num = (2.0 * mx * my + c1) * (2.0 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return num / den


def ssim_frames(pred, target, data_range=1.0):
    """SSIM per frame: mean over window positions, then over channels."""
    m = ssim_map(pred, target, data_range)
    if m.ndim == 2:
        return np.array([m.mean()])
    per_channel = m.mean(axis=(-2, -1))
    if per_channel.ndim == 1:
        return np.array([per_channel.mean()])
    return per_channel.mean(axis=-1).reshape(-1)


def ssim(pred, target, data_range=1.0):
    """SSIM averaged over frames.  Inputs are (H, W), (C, H, W) or (..., C, H, W)."""
    return float(ssim_frames(pred, target, data_range).mean())


@dataclass
class MetricReport:
    """Per-horizon-step metrics and their averages over the horizon."""
    per_frame: dict = field(default_factory=dict)
    averages: dict = field(default_factory=dict)
    conventions: dict = field(default_factory=lambda: {
        "mse_pixel": PIXEL_MEAN, "mae_pixel": PIXEL_MEAN,
        "mse_frame": FRAME_SUM, "mae_frame": FRAME_SUM})

    KEYS = ("mse_pixel", "mse_frame", "mae_pixel", "mae_frame", "psnr", "ssim")

    @classmethod
    def from_frames(cls, preds, targets):
        """``preds`` / ``targets`` are (B, T, C, H, W); entry t scores horizon step t."""
        preds, targets = _pair(preds, targets, "metrics")
        if preds.ndim != 5:
            raise ShapeError("metrics", preds.shape, ("B", "T", "C", "H", "W"))
        per = {k: [] for k in cls.KEYS}
        for t in range(preds.shape[1]):
            p, y = preds[:, t], targets[:, t]
            per["mse_pixel"].append(mse(p, y, PIXEL_MEAN))
            per["mse_frame"].append(mse(p, y, FRAME_SUM))
            per["mae_pixel"].append(mae(p, y, PIXEL_MEAN))
            per["mae_frame"].append(mae(p, y, FRAME_SUM))
            # PSNR per sample, then averaged, as is usual for video metrics
            per["psnr"].append(float(np.mean([psnr(p[b], y[b]) for b in range(len(p))])))
            per["ssim"].append(ssim(p, y))
        per = {k: np.array(v) for k, v in per.items()}
        return cls(per, {k: float(v.mean()) for k, v in per.items()})

    @property
    def horizon(self):
        return len(self.per_frame.get("mse_pixel", ()))

    def rows(self):
        """CSV rows: header then one row per horizon step then the average."""
        out = [["frame", *self.KEYS]]
        for t in range(self.horizon):
            out.append([str(t), *(repr(float(self.per_frame[k][t])) for k in self.KEYS)])
        out.append(["mean", *(repr(self.averages[k]) for k in self.KEYS)])
        return out

    def to_csv(self, path):
        import csv
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerows(self.rows())

    def summary(self):
        a = self.averages
        lines = [
            f"horizon {self.horizon}",
            f"MSE  {a['mse_pixel']:.6f} ({PIXEL_MEAN})  {a['mse_frame']:.3f} ({FRAME_SUM})",
            f"MAE  {a['mae_pixel']:.6f} ({PIXEL_MEAN})  {a['mae_frame']:.3f} ({FRAME_SUM})",
            f"PSNR {a['psnr']:.3f} dB",
            f"SSIM {a['ssim']:.5f}",
        ]
        return "\n".join(lines)
