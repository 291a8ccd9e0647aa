"""RLNE, PSNR and SSIM on (FE, PE, TIME) reconstructions.

PSNR and SSIM compare magnitude images and are anchored to the reference:
the peak is the largest reference magnitude over the whole volume. Per-frame
values use the same peak, so the volume PSNR is the PSNR of the mean
per-frame MSE and the volume SSIM is the mean of per-frame SSIMs.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

__all__ = ["rlne", "psnr", "ssim", "MetricReport", "evaluate", "gaussian_window"]

PSNR_IDENTICAL = math.inf


def _data(x):
    return np.asarray(getattr(x, "data", x))


def rlne(x_hat, x_ref) -> float:
    """||x_hat - x_ref|| / ||x_ref|| over all complex entries."""
    a, r = _data(x_hat), _data(x_ref)
    if a.shape != r.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {r.shape}")
    nref = np.linalg.norm(r)
    if nref == 0:
        raise ValueError("reference is all zero")
    return float(np.linalg.norm(a - r) / nref)


def psnr(x_hat, x_ref, peak=None) -> float:
    """10 log10(peak^2 / MSE) on magnitudes; +inf for identical magnitudes."""
    a, r = np.abs(_data(x_hat)), np.abs(_data(x_ref))
    if a.shape != r.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {r.shape}")
    peak = float(r.max()) if peak is None else peak
    mse = float(np.mean((a - r) ** 2))
    if mse == 0:
        return PSNR_IDENTICAL
    return 10.0 * math.log10(peak**2 / mse)


def gaussian_window(size=11, sigma=1.5):
    g = np.exp(-((np.arange(size) - (size - 1) / 2) ** 2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img, w):
    # separable correlation keeping only positions where the window fits
    n = len(w)
    rows = sum(w[i] * img[i:img.shape[0] - n + 1 + i] for i in range(n))
    return sum(w[i] * rows[:, i:rows.shape[1] - n + 1 + i] for i in range(n))


def _ssim_2d(a, r, peak, size, sigma):
    w = gaussian_window(size, sigma)
    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    mu_a, mu_r = _filter_valid(a, w), _filter_valid(r, w)
    saa = _filter_valid(a * a, w) - mu_a**2
    srr = _filter_valid(r * r, w) - mu_r**2
    sar = _filter_valid(a * r, w) - mu_a * mu_r
    num = (2 * mu_a * mu_r + c1) * (2 * sar + c2)
    den = (mu_a**2 + mu_r**2 + c1) * (saa + srr + c2)
    return float(np.mean(num / den))


def _window_size(shape, size):
    # clamp to the largest odd size that fits the frame
    fit = min(size, *shape)
    return fit if fit % 2 else fit - 1


def ssim_frames(x_hat, x_ref, size=11, sigma=1.5, peak=None):
    a, r = np.abs(_data(x_hat)), np.abs(_data(x_ref))
    if a.shape != r.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {r.shape}")
    if a.ndim == 2:
        a, r = a[..., None], r[..., None]
    peak = float(r.max()) if peak is None else peak
    win = _window_size(a.shape[:2], size)
    return [_ssim_2d(a[..., t], r[..., t], peak, win, sigma) for t in range(a.shape[-1])], win


def ssim(x_hat, x_ref, size=11, sigma=1.5) -> float:
    """Gaussian-windowed SSIM per (FE, PE) frame, averaged over frames.

    Constants are (0.01 L)^2 and (0.03 L)^2 with L the reference peak
    magnitude; only window positions fully inside the frame are averaged.
    """
    frames, _ = ssim_frames(x_hat, x_ref, size, sigma)
    return float(np.mean(frames))


@dataclass
class MetricReport:
    rlne: float
    psnr_db: float
    ssim: float
    per_frame: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> str:
        d = asdict(self)
        if math.isinf(d["psnr_db"]):
            d["psnr_db"] = "inf"
        d["per_frame"] = {k: ["inf" if math.isinf(v) else v for v in vals]
                          for k, vals in d["per_frame"].items()}
        return json.dumps(d, sort_keys=True, indent=1)

    def csv_rows(self):
        """(metric, value) rows in fixed order."""
        return [("rlne", self.rlne), ("psnr_db", self.psnr_db), ("ssim", self.ssim)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value"])
        for name, v in self.csv_rows():
            w.writerow([name, repr(float(v))])
        return buf.getvalue()


def evaluate(x_hat, x_ref, **metadata) -> MetricReport:
    """All three metrics plus per-frame breakdowns for a (FE, PE, TIME) volume."""
    a, r = _data(x_hat), _data(x_ref)
    peak = float(np.abs(r).max())
    frames = range(r.shape[-1])
    ssims, win = ssim_frames(a, r, peak=peak)
    per_frame = {
        "rlne": [rlne(a[..., t], r[..., t]) if np.any(r[..., t]) else math.nan for t in frames],
        "psnr_db": [psnr(a[..., t], r[..., t], peak=peak) for t in frames],
        "ssim": ssims,
    }
    meta = {"psnr_peak": peak, "ssim_window": win, "ssim_sigma": 1.5}
    meta.update(metadata)
    return MetricReport(rlne(a, r), psnr(a, r), float(np.mean(ssims)), per_frame, meta)
