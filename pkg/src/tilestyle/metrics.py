"""Quantitative evaluation: PSNR, SSIM, blockwise Gram distance, identity test."""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .localized import stats_pass
from .pipeline import RunConfig, multiscale_transfer

LUMA_WEIGHTS = (0.299, 0.587, 0.114)  # Rec. 601
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10*log10(1/MSE) on [0,1] images; +inf for identical inputs."""
    if a.shape != b.shape:
        raise ShapeError(f"psnr dims differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _luma(img: np.ndarray) -> np.ndarray:
    if img.ndim == 2:
        return img.astype(np.float64)
    r, g, b = LUMA_WEIGHTS
    return (r * img[:, :, 0] + g * img[:, :, 1] + b * img[:, :, 2]).astype(np.float64)


def _gaussian_kernel(n: int, sigma: float) -> np.ndarray:
    t = np.arange(n, dtype=np.float64) - (n - 1) / 2.0
    k = np.exp(-(t ** 2) / (2.0 * sigma ** 2))
    return k / k.sum()


def _filter_valid(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    # separable correlation, valid mode
    win = np.lib.stride_tricks.sliding_window_view(img, k.size, axis=0)
    img = win @ k
    win = np.lib.stride_tricks.sliding_window_view(img, k.size, axis=1)
    return win @ k


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local SSIM on luma: 11x11 Gaussian window (sigma 1.5), K1/K2 = 0.01/0.03."""
    if a.shape != b.shape:
        raise ShapeError(f"ssim dims differ: {a.shape} vs {b.shape}")
    if min(a.shape[0], a.shape[1]) < SSIM_WINDOW:
        raise ShapeError(f"ssim needs min side >= {SSIM_WINDOW}, got {a.shape[:2]}")
    x = _luma(a)
    y = _luma(b)
    k = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)
    mx = _filter_valid(x, k)
    my = _filter_valid(y, k)
    vx = _filter_valid(x * x, k) - mx * mx
    vy = _filter_valid(y * y, k) - my * my
    cxy = _filter_valid(x * y, k) - mx * my
    c1 = SSIM_K1 ** 2  # dynamic range 1.0
    c2 = SSIM_K2 ** 2
    num = (2 * mx * my + c1) * (2 * cxy + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    return float(np.mean(num / den))


def gram_distance(x: np.ndarray, v: np.ndarray, spec, block: int = 512, margin: int = 256,
                  weights: dict | None = None, threads: int = 1) -> float:
    """Sum over style taps of w_L * ||G(x) - G(v)||_F^2 using blockwise statistics.

    weights maps tap name to w_L; None means 1 for every tap (the unweighted
    Gram metric).
    """
    sx = stats_pass(x, spec, block=block, margin=margin, threads=threads)
    sv = stats_pass(v, spec, block=block, margin=margin, threads=threads)
    total = 0.0
    for t in spec.style_taps:
        w = 1.0 if weights is None else weights[t]
        total += w * float(np.sum((sx[t].gram - sv[t].gram) ** 2))
    return total


@dataclass(frozen=True)
class IdentityReport:
    psnr: float
    ssim: float
    gram_distance: float
    gram_distance_weighted: float
    wall_time: float
    config_hash: str

    def to_json(self) -> str:
        return json.dumps({"psnr": self.psnr, "ssim": self.ssim,
                           "gram": self.gram_distance,
                           "gram_weighted": self.gram_distance_weighted,
                           "seconds": self.wall_time,
                           "config_hash": self.config_hash})


def identity_test(style: np.ndarray, cfg: RunConfig, progress=None) -> tuple:
    """Transfer a painting onto itself and measure how well it is reproduced.

    Returns (report, output image). The Gram distance is reported both
    unweighted and with the run's per-tap Gram weights.
    """
    t0 = time.perf_counter()
    out = multiscale_transfer(style, style, cfg, progress=progress)
    wall = time.perf_counter() - t0
    spec = cfg.extractor
    gw = None
    if cfg.weights is not None:
        gw = {t: w.gram for t, w in cfg.weights.style.items()}
    else:
        from .stats import default_loss_weights
        gw = {t: w.gram for t, w in
              default_loss_weights(spec, mean_std_factor=cfg.mean_std_factor).style.items()}
    style_f = style.astype(out.dtype, copy=False)
    report = IdentityReport(
        psnr=psnr(out, style_f),
        ssim=ssim(out, style_f),
        gram_distance=gram_distance(out, style_f, spec, block=cfg.block, margin=cfg.margin,
                                    threads=cfg.threads),
        gram_distance_weighted=gram_distance(out, style_f, spec, block=cfg.block,
                                             margin=cfg.margin, weights=gw, threads=cfg.threads),
        wall_time=wall,
        config_hash=cfg.config_hash,
    )
    return report, out


def append_csv(path, style_id: str, report: IdentityReport) -> None:
    header = "style_id,psnr,ssim,gram,seconds,config_hash\n"
    line = (f"{style_id},{report.psnr},{report.ssim},{report.gram_distance},"
            f"{report.wall_time},{report.config_hash}\n")
    new = not os.path.exists(path)
    with open(path, "a") as f:
        if new:
            f.write(header)
        f.write(line)
