"""Global feature statistics and the closed-form feature-space loss gradients.

A layer's style descriptor is its Gram matrix plus per-channel mean and std.
All three are spatial averages, so they accumulate block by block. Given the
finalized global statistics, every loss gradient below is pointwise in the
feature pixel, which is what makes the blockwise gradient pass exact.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import container
from .errors import DegenerateStdWarning, EmptyError, ShapeError

STD_EPS = 1e-8  # below this a channel's std is treated as degenerate


@dataclass(frozen=True)
class LayerStats:
    gram: np.ndarray   # (n_c, n_c), positive semidefinite
    mean: np.ndarray   # (n_c,)
    std: np.ndarray    # (n_c,) >= 0
    n_p: int           # feature pixels aggregated

    @property
    def channels(self) -> int:
        return self.mean.shape[0]


class StatsAccumulator:
    """Streaming sums for Gram/mean/std; runs in float64 regardless of input dtype."""

    def __init__(self, channels: int):
        self.channels = channels
        self.sum_outer = np.zeros((channels, channels), dtype=np.float64)
        self.sum = np.zeros(channels, dtype=np.float64)
        self.count = 0

    def accumulate(self, features: np.ndarray) -> None:
        """Add a (n_c, h, w) feature slab."""
        if features.ndim != 3 or features.shape[0] != self.channels:
            raise ShapeError(f"expected ({self.channels},h,w) features, got {features.shape}")
        flat = features.reshape(self.channels, -1).astype(np.float64, copy=False)
        self.sum_outer += flat @ flat.T
        self.sum += flat.sum(axis=1)
        self.count += flat.shape[1]

    def merge(self, other: "StatsAccumulator") -> None:
        if other.channels != self.channels:
            raise ShapeError(f"cannot merge {other.channels}-channel stats into {self.channels}")
        self.sum_outer += other.sum_outer
        self.sum += other.sum
        self.count += other.count

    def finalize(self) -> LayerStats:
        if self.count == 0:
            raise EmptyError("no feature pixels accumulated")
        gram = self.sum_outer / self.count
        mean = self.sum / self.count
        # diag(G) - mean^2 can dip below 0 by rounding; clamp before sqrt
        var = np.maximum(np.diagonal(gram) - mean ** 2, 0.0)
        return LayerStats(gram=gram, mean=mean, std=np.sqrt(var), n_p=self.count)


def compute_stats(features: np.ndarray) -> LayerStats:
    acc = StatsAccumulator(features.shape[0])
    acc.accumulate(features)
    return acc.finalize()


@dataclass(frozen=True)
class TapWeights:
    """Weights of a single style tap's Gram / mean / std terms."""
    gram: float
    mean: float
    std: float


@dataclass(frozen=True)
class LossWeights:
    lambda_c: float
    style: dict  # tap name -> TapWeights

    def __post_init__(self):
        vals = [self.lambda_c]
        for w in self.style.values():
            vals += [w.gram, w.mean, w.std]
        if any(v < 0 for v in vals):
            raise ShapeError("loss weights must be >= 0")
        if not any(v > 0 for v in vals):
            warnings.warn("all loss weights are zero; the objective is identically 0", stacklevel=2)


def default_loss_weights(spec, lambda_c: float = 1.0, mean_std_factor: float = 1e3) -> LossWeights:
    """Per-tap Gram weight 1/n_c^2, mean/std weights scaled up from it.

    These are configuration defaults, not part of the loss formulas; any
    weighting is accepted by the gradient routines.
    """
    from .extractor import tap_geometry
    style = {}
    for tap in spec.style_taps:
        n_c = tap_geometry(spec, tap).channels
        w = 1.0 / n_c ** 2
        style[tap] = TapWeights(gram=w, mean=mean_std_factor * w, std=mean_std_factor * w)
    return LossWeights(lambda_c=lambda_c, style=style)


# ---------------------------------------------------------------------------
# style loss and its feature gradient
# ---------------------------------------------------------------------------

def style_loss_terms(stats_x: LayerStats, stats_ref: LayerStats, w: TapWeights) -> tuple:
    """Weighted (gram, mean, std) squared distances between two stat sets."""
    if stats_x.channels != stats_ref.channels:
        raise ShapeError(f"stats have {stats_x.channels} vs {stats_ref.channels} channels")
    g = w.gram * float(np.sum((stats_x.gram - stats_ref.gram) ** 2))
    m = w.mean * float(np.sum((stats_x.mean - stats_ref.mean) ** 2))
    s = w.std * float(np.sum((stats_x.std - stats_ref.std) ** 2))
    return g, m, s


def style_layer_loss_grad(V: np.ndarray, stats_x: LayerStats, stats_ref: LayerStats,
                          w: TapWeights) -> tuple:
    """Loss terms plus the feature gradient of the augmented style loss on slab V.

    stats_x must be the global statistics of the full image; V may be any slab
    of its feature pixels. The three per-pixel gradients, with n_p the global
    pixel count:

        gram:  (4/n_p) * V (G - G_ref)
        mean:  (2/n_p) * (mean - mean_ref), identical at every pixel
        std:   (2/n_p) * (V - mean) * (std - std_ref) / std, per channel

    Channels with std below STD_EPS but nonzero reference std get a zero
    std-gradient column and a DegenerateStdWarning.
    """
    if V.ndim != 3 or V.shape[0] != stats_x.channels:
        raise ShapeError(f"expected ({stats_x.channels},h,w) features, got {V.shape}")
    terms = style_loss_terms(stats_x, stats_ref, w)
    n_p = stats_x.n_p
    dt = V.dtype
    grad = np.zeros_like(V)

    if w.gram:
        d = (stats_x.gram - stats_ref.gram).astype(dt)
        grad += (4.0 * w.gram / n_p) * np.einsum("cd,dhw->chw", d, V)
    if w.mean:
        dm = (stats_x.mean - stats_ref.mean).astype(dt)
        grad += (2.0 * w.mean / n_p) * dm[:, None, None]
    if w.std:
        std = stats_x.std
        ds = stats_x.std - stats_ref.std
        degenerate = std < STD_EPS
        if np.any(degenerate & (stats_ref.std > STD_EPS)):
            warnings.warn("zero-std channel with nonzero reference std; its gradient column is zeroed",
                          DegenerateStdWarning, stacklevel=2)
        ratio = np.where(degenerate, 0.0, ds / np.where(degenerate, 1.0, std)).astype(dt)
        centered = V - stats_x.mean.astype(dt)[:, None, None]
        grad += (2.0 * w.std / n_p) * centered * ratio[:, None, None]
    return terms, grad


def content_loss_grad(V: np.ndarray, V_ref: np.ndarray, lambda_c: float) -> tuple:
    """Unnormalized squared distance to the reference features and its gradient."""
    if V.shape != V_ref.shape:
        raise ShapeError(f"content features {V.shape} vs reference {V_ref.shape}")
    diff = V - V_ref
    loss = lambda_c * float(np.sum(diff.astype(np.float64) ** 2))
    return loss, (2.0 * lambda_c) * diff


# ---------------------------------------------------------------------------
# serialization (shares the weight-file container)
# ---------------------------------------------------------------------------

def save_stats(path, stats: dict) -> None:
    records = {}
    for tap, s in stats.items():
        records[f"{tap}.gram"] = s.gram
        records[f"{tap}.mean"] = s.mean
        records[f"{tap}.std"] = s.std
        records[f"{tap}.n_p"] = np.array([s.n_p], dtype=np.float64)
    container.write_records(path, records)


def load_stats(path) -> dict:
    records = container.read_records(path)
    taps = sorted({name.rsplit(".", 1)[0] for name in records})
    out = {}
    for tap in taps:
        out[tap] = LayerStats(gram=records[f"{tap}.gram"],
                              mean=records[f"{tap}.mean"],
                              std=records[f"{tap}.std"],
                              n_p=int(records[f"{tap}.n_p"][0]))
    return out
