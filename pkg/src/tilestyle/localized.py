"""Blockwise computation of the exact global transfer loss and pixel gradient.

Two passes over the block partition. Pass 1 streams global style statistics.
Pass 2 re-runs each padded block with saved activations, injects the
closed-form feature gradients (global statistics as parameters), backprops to
block pixels, and keeps only the inner region. Because every feature-space
gradient is pointwise given the global statistics, the assembled gradient
equals the whole-image gradient whenever the margin covers the support of all
features that touch a block's inner pixels.

Peak live activation memory is one padded block per worker, independent of
image size; a single-pass global evaluator is kept as the oracle for images
small enough to fit.
"""

from __future__ import annotations

import os
import tempfile
import threading
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .extractor import ExtractorSpec, forward_taps, backward_to_input, tap_geometry
from .stats import (LayerStats, LossWeights, StatsAccumulator,
                    style_layer_loss_grad, style_loss_terms)
from .tensorops import chw_to_img, fold_padding_gradient, img_to_chw, pad_to_multiple
from .tiling import Block, BlockGrid, feature_inner_crop, partition


# ---------------------------------------------------------------------------
# activation accounting (used by the memory-bound tests)
# ---------------------------------------------------------------------------

class ActivationMeter:
    """Tracks bytes of live saved activations across block workers."""

    def __init__(self):
        self._lock = threading.Lock()
        self.current = 0
        self.peak = 0

    def add(self, nbytes: int) -> None:
        with self._lock:
            self.current += nbytes
            self.peak = max(self.peak, self.current)

    def release(self, nbytes: int) -> None:
        with self._lock:
            self.current -= nbytes


_active_meter: ActivationMeter | None = None


@contextmanager
def track_activations():
    """Context manager: meter the activation footprint of enclosed passes."""
    global _active_meter
    meter = ActivationMeter()
    prev, _active_meter = _active_meter, meter
    try:
        yield meter
    finally:
        _active_meter = prev


def _meter_scope(arrays):
    nbytes = sum(a.nbytes for a in arrays)
    meter = _active_meter
    if meter is not None:
        meter.add(nbytes)
    return meter, nbytes


# ---------------------------------------------------------------------------
# content feature tiles
# ---------------------------------------------------------------------------

class ContentStore:
    """Per-block content-tap features, spilled to a temp directory over budget."""

    def __init__(self, budget_bytes: int = 256 << 20):
        self.budget_bytes = budget_bytes
        self._ram: dict[int, np.ndarray] = {}
        self._ram_bytes = 0
        self._dir: tempfile.TemporaryDirectory | None = None

    def put(self, index: int, tile: np.ndarray) -> None:
        if self._ram_bytes + tile.nbytes <= self.budget_bytes:
            self._ram[index] = tile
            self._ram_bytes += tile.nbytes
            return
        if self._dir is None:
            self._dir = tempfile.TemporaryDirectory(prefix="tilestyle-content-")
        np.save(os.path.join(self._dir.name, f"{index}.npy"), tile)

    def get(self, index: int) -> np.ndarray:
        if index in self._ram:
            return self._ram[index]
        return np.load(os.path.join(self._dir.name, f"{index}.npy"))

    @property
    def spilled(self) -> bool:
        return self._dir is not None


# ---------------------------------------------------------------------------
# problem setup
# ---------------------------------------------------------------------------

def make_grid(spec: ExtractorSpec, h: int, w: int, block: int, margin: int) -> BlockGrid:
    """Grid over the stride-padded dims of an h x w image."""
    s = spec.deepest_stride()
    return BlockGrid(image_h=h + (-h) % s, image_w=w + (-w) % s,
                     block=block, margin=margin, stride=s)


@dataclass
class TransferProblem:
    extractor: ExtractorSpec
    weights: LossWeights
    grid: BlockGrid
    style_stats: dict
    content_store: ContentStore | None
    content_image: np.ndarray | None
    threads: int = 1
    _content_full: np.ndarray | None = field(default=None, repr=False)

    @property
    def has_content(self) -> bool:
        return self.weights.lambda_c > 0

    def content_full(self) -> np.ndarray:
        """Whole-image content-tap features of u (oracle path only)."""
        if self._content_full is None:
            xp = pad_to_multiple(self.content_image, self.extractor.deepest_stride())
            self._content_full = forward_taps(img_to_chw(xp), self.extractor)[self.extractor.content_tap]
        return self._content_full


def _map_blocks(blocks, fn, threads):
    if threads <= 1 or len(blocks) == 1:
        return [fn(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=min(threads, len(blocks))) as pool:
        return list(pool.map(fn, blocks))


def _block_pixels(x_padded: np.ndarray, b: Block) -> np.ndarray:
    r = b.padded
    return img_to_chw(x_padded[r.y0:r.y1, r.x0:r.x1])


def _crop(t: np.ndarray, r) -> np.ndarray:
    return t[:, r.y0:r.y0 + r.h, r.x0:r.x0 + r.w]


def stats_pass(img: np.ndarray, spec: ExtractorSpec, block: int = 512, margin: int = 256,
               threads: int = 1, taps=None) -> dict:
    """Global per-tap statistics, aggregated block by block without saves."""
    taps = tuple(taps) if taps is not None else spec.style_taps
    grid = make_grid(spec, img.shape[0], img.shape[1], block, margin)
    xp = pad_to_multiple(img, grid.stride)
    geoms = {t: tap_geometry(spec, t) for t in taps}

    def worker(b: Block):
        out = forward_taps(_block_pixels(xp, b), spec)
        accs = {}
        for t in taps:
            acc = StatsAccumulator(geoms[t].channels)
            acc.accumulate(_crop(out[t], feature_inner_crop(b, geoms[t])))
            accs[t] = acc
        return accs

    totals = {t: StatsAccumulator(geoms[t].channels) for t in taps}
    # merge in block order so repeated runs are bit-identical
    for accs in _map_blocks(partition(grid), worker, threads):
        for t in taps:
            totals[t].merge(accs[t])
    return {t: totals[t].finalize() for t in taps}


def build_problem(content_img: np.ndarray | None, style_img: np.ndarray, spec: ExtractorSpec,
                  weights: LossWeights, block: int = 512, margin: int = 256, threads: int = 1,
                  content_budget_bytes: int = 256 << 20,
                  style_stats: dict | None = None) -> TransferProblem:
    """Precompute the style statistics of v and the content tiles of u.

    content_img may be None only when the content weight is zero (texture
    synthesis); then the grid is sized to the style image. Content tiles hold
    the full padded-block tap features so the gradient pass can evaluate the
    content gradient on margin features too.
    """
    if style_stats is None:
        style_stats = stats_pass(style_img, spec, block=block, margin=margin, threads=threads)
    for t in spec.style_taps:
        if style_stats[t].channels != tap_geometry(spec, t).channels:
            raise ConfigError(f"style stats for {t} have {style_stats[t].channels} channels, "
                              f"tap has {tap_geometry(spec, t).channels}")

    if weights.lambda_c > 0:
        if content_img is None:
            raise ConfigError("content image required when the content weight is nonzero")
        grid = make_grid(spec, content_img.shape[0], content_img.shape[1], block, margin)
        up = pad_to_multiple(content_img, grid.stride)
        store = ContentStore(budget_bytes=content_budget_bytes)
        for i, b in enumerate(partition(grid)):
            store.put(i, forward_taps(_block_pixels(up, b), spec)[spec.content_tap])
    else:
        ref = content_img if content_img is not None else style_img
        grid = make_grid(spec, ref.shape[0], ref.shape[1], block, margin)
        store = None

    return TransferProblem(extractor=spec, weights=weights, grid=grid,
                           style_stats=style_stats, content_store=store,
                           content_image=content_img, threads=threads)


# ---------------------------------------------------------------------------
# loss + gradient
# ---------------------------------------------------------------------------

def loss_grad(x: np.ndarray, p: TransferProblem):
    """Exact transfer loss and its pixel gradient, computed block by block."""
    spec = p.extractor
    h, w = x.shape[:2]
    grid = make_grid(spec, h, w, p.grid.block, p.grid.margin)
    if (grid.image_h, grid.image_w) != (p.grid.image_h, p.grid.image_w):
        raise ConfigError(f"image {h}x{w} does not match the problem grid "
                          f"{p.grid.image_h}x{p.grid.image_w}")
    xp = pad_to_multiple(x, grid.stride)
    blocks = partition(grid)
    geoms = {t: tap_geometry(spec, t) for t in spec.taps}

    # pass 1: global statistics of x
    stats_x = stats_pass(x, spec, block=grid.block, margin=grid.margin, threads=p.threads)
    style_total = 0.0
    for t in spec.style_taps:
        style_total += sum(style_loss_terms(stats_x[t], p.style_stats[t], p.weights.style[t]))

    # pass 2: per-block feature gradients, backprop, keep inner pixels
    grad_pad = np.zeros((xp.shape[0], xp.shape[1], 3), dtype=x.dtype)

    def worker(item):
        i, b = item
        taps, saves = forward_taps(_block_pixels(xp, b), spec, save_for_backward=True)
        meter, nbytes = _meter_scope(list(saves) + list(taps.values()))
        try:
            tap_grads = {}
            for t in spec.style_taps:
                _, g = style_layer_loss_grad(taps[t], stats_x[t], p.style_stats[t], p.weights.style[t])
                tap_grads[t] = g
            closs = 0.0
            if p.has_content:
                ct = spec.content_tap
                diff = taps[ct] - p.content_store.get(i).astype(x.dtype, copy=False)
                crop = feature_inner_crop(b, geoms[ct])
                closs = p.weights.lambda_c * float(np.sum(_crop(diff, crop).astype(np.float64) ** 2))
                cgrad = (2.0 * p.weights.lambda_c) * diff
                if ct in tap_grads:
                    tap_grads[ct] = tap_grads[ct] + cgrad
                else:
                    tap_grads[ct] = cgrad
            gpix = backward_to_input(tap_grads, saves, spec)
        finally:
            if meter is not None:
                meter.release(nbytes)
        left, top, _, _ = b.present_margin
        inner = b.inner
        grad_pad[inner.y0:inner.y1, inner.x0:inner.x1] = chw_to_img(
            gpix[:, top:top + inner.h, left:left + inner.w])
        return closs

    content_total = sum(_map_blocks(list(enumerate(blocks)), worker, p.threads))
    grad = fold_padding_gradient(grad_pad, (h, w))
    return style_total + content_total, grad


def loss_grad_global(x: np.ndarray, p: TransferProblem):
    """Single-pass whole-image evaluation; the oracle for desk-scale images."""
    spec = p.extractor
    h, w = x.shape[:2]
    xp = pad_to_multiple(x, spec.deepest_stride())
    taps, saves = forward_taps(img_to_chw(xp), spec, save_for_backward=True)
    meter, nbytes = _meter_scope(list(saves) + list(taps.values()))
    try:
        total = 0.0
        tap_grads = {}
        for t in spec.style_taps:
            acc = StatsAccumulator(taps[t].shape[0])
            acc.accumulate(taps[t])
            stats_t = acc.finalize()
            terms, g = style_layer_loss_grad(taps[t], stats_t, p.style_stats[t], p.weights.style[t])
            total += sum(terms)
            tap_grads[t] = g
        if p.has_content:
            ct = spec.content_tap
            diff = taps[ct] - p.content_full().astype(x.dtype, copy=False)
            total += p.weights.lambda_c * float(np.sum(diff.astype(np.float64) ** 2))
            cgrad = (2.0 * p.weights.lambda_c) * diff
            tap_grads[ct] = tap_grads[ct] + cgrad if ct in tap_grads else cgrad
        gpix = backward_to_input(tap_grads, saves, spec)
    finally:
        if meter is not None:
            meter.release(nbytes)
    grad = fold_padding_gradient(chw_to_img(gpix), (h, w))
    return total, grad
