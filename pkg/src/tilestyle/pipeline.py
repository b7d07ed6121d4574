"""Coarse-to-fine driver: per-scale schedules, style transfer, texture synthesis.

Each scale solves the transfer at dims ceil(full / 2^(n_scales-s)), starting
from the upscaled previous result (or the downscaled content / seeded noise at
scale 1), with the blockwise loss gradient feeding L-BFGS. The fast schedule
divides iteration counts by 3 per scale with a floor of 30, exploiting the
stability of the transfer across scales.
"""

from __future__ import annotations

import hashlib
import json
import os
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import imgio
from .errors import ConfigError
from .extractor import ExtractorSpec, tap_geometry
from .lbfgs import LBFGSConfig, minimize
from .localized import build_problem, loss_grad, stats_pass
from .stats import LossWeights, default_loss_weights, load_stats, save_stats
from .tensorops import resize_down, resize_up2, resolve_dtype

BASE_ITERS = 600        # first-scale iteration budget
LATER_ITERS = 300       # baseline budget for every later scale
FAST_DIVISOR = 3
FAST_MIN_ITERS = 30
FIRST_HISTORY = 100     # L-BFGS history at scale 1
LATER_HISTORY = 10


@dataclass(frozen=True)
class Schedule:
    n_scales: int
    iters: tuple
    histories: tuple
    mode: str

    def __post_init__(self):
        if not (len(self.iters) == len(self.histories) == self.n_scales):
            raise ConfigError("schedule lengths must equal n_scales")
        if any(v < 1 for v in (*self.iters, *self.histories)):
            raise ConfigError("iteration counts and histories must be positive")


def make_schedule(n_scales: int, mode: str = "baseline") -> Schedule:
    if n_scales < 1:
        raise ConfigError(f"n_scales must be >= 1, got {n_scales}")
    if mode not in ("baseline", "fast"):
        raise ConfigError(f"mode must be baseline or fast, got {mode!r}")
    iters = [BASE_ITERS]
    for _ in range(n_scales - 1):
        if mode == "baseline":
            iters.append(LATER_ITERS)
        else:
            iters.append(max(iters[-1] // FAST_DIVISOR, FAST_MIN_ITERS))
    histories = (FIRST_HISTORY,) + (LATER_HISTORY,) * (n_scales - 1)
    return Schedule(n_scales=n_scales, iters=tuple(iters), histories=histories, mode=mode)


def scale_dims(full_hw: tuple, n_scales: int) -> list:
    """Dims per scale: ceil division of the full dims by 2^(n_scales-s)."""
    h, w = full_hw
    return [(-(-h // 2 ** (n_scales - s)), -(-w // 2 ** (n_scales - s)))
            for s in range(1, n_scales + 1)]


@dataclass
class RunConfig:
    content: str | None = None
    style: str | None = None
    output: str | None = None
    n_scales: int = 3
    mode: str = "baseline"
    weights: LossWeights | None = None   # None: defaults derived from the extractor
    lambda_c: float = 1.0
    mean_std_factor: float = 1e3
    content_per_element: bool = True     # divide lambda_c by content feature count
    block: int = 512
    margin: int = 256
    seed: int = 0
    dtype: str = "f32"
    state_residency: str = "host"
    threads: int = 1
    grad_tol: float = 1e-9
    extractor: ExtractorSpec | None = None
    checkpoint: str | None = None        # base path for per-scale checkpoints
    resume: str | None = None            # sidecar path to resume from
    stats_cache_dir: str | None = None
    content_budget_bytes: int = 256 << 20
    config_hash: str = ""
    config_text: str = ""

    def __post_init__(self):
        if self.n_scales < 1:
            raise ConfigError(f"n_scales must be >= 1, got {self.n_scales}")
        resolve_dtype(self.dtype)


# ---------------------------------------------------------------------------
# style statistics cache
# ---------------------------------------------------------------------------

def spec_fingerprint(spec: ExtractorSpec) -> str:
    h = hashlib.sha256()
    for layer in spec.layers:
        h.update(repr((layer.kind, layer.name, layer.in_ch, layer.out_ch,
                       layer.k, layer.stride, layer.pad, layer.pool)).encode())
        if layer.weight is not None:
            h.update(np.ascontiguousarray(layer.weight).tobytes())
            h.update(np.ascontiguousarray(layer.bias).tobytes())
    h.update(repr((spec.style_taps, spec.content_tap, spec.preprocess)).encode())
    return h.hexdigest()[:16]


def _cached_style_stats(v: np.ndarray, spec, cfg: RunConfig, scale: int):
    if cfg.stats_cache_dir is None:
        return stats_pass(v, spec, block=cfg.block, margin=cfg.margin, threads=cfg.threads)
    key = hashlib.sha256()
    key.update(np.ascontiguousarray(v).tobytes())
    key.update(f"{scale}|{spec_fingerprint(cfg.extractor)}|{cfg.block}|{cfg.margin}".encode())
    path = os.path.join(cfg.stats_cache_dir, f"style-{key.hexdigest()[:24]}.nstw")
    if os.path.exists(path):
        return load_stats(path)
    st = stats_pass(v, spec, block=cfg.block, margin=cfg.margin, threads=cfg.threads)
    os.makedirs(cfg.stats_cache_dir, exist_ok=True)
    save_stats(path, st)
    return st


# ---------------------------------------------------------------------------
# checkpoints: 16-bit PNG view + JSON sidecar + exact array state
# ---------------------------------------------------------------------------

def write_checkpoint(base: str, x: np.ndarray, scale_done: int, cfg_hash: str) -> str:
    png = f"{base}.scale{scale_done}.png"
    npy = f"{base}.scale{scale_done}.npy"
    sidecar = f"{base}.scale{scale_done}.json"
    imgio.save_png16(png, x)
    np.save(npy, x)
    with open(sidecar, "w") as f:
        json.dump({"scale": scale_done, "iteration": 0, "config_hash": cfg_hash,
                   "png": os.path.basename(png), "exact": os.path.basename(npy)}, f)
    return sidecar


def read_checkpoint(sidecar: str, cfg_hash: str, dtype: str):
    with open(sidecar) as f:
        meta = json.load(f)
    if cfg_hash and meta.get("config_hash") and meta["config_hash"] != cfg_hash:
        raise ConfigError(f"checkpoint {sidecar} was written with config {meta['config_hash']}, "
                          f"this run is {cfg_hash}")
    root = os.path.dirname(os.path.abspath(sidecar))
    exact = os.path.join(root, meta["exact"])
    if os.path.exists(exact):
        x = np.load(exact).astype(resolve_dtype(dtype), copy=False)
    else:
        x = imgio.load_png16(os.path.join(root, meta["png"]), dtype=dtype)
    return int(meta["scale"]), x


# ---------------------------------------------------------------------------
# the multiscale loops
# ---------------------------------------------------------------------------

def _weights_for_scale(cfg: RunConfig, spec, dims, lambda_override=None):
    lam = cfg.lambda_c if lambda_override is None else lambda_override
    if cfg.weights is not None:
        w = cfg.weights
        return w if lambda_override is None else replace(w, lambda_c=lambda_override)
    if lam > 0 and cfg.content_per_element:
        g = tap_geometry(spec, spec.content_tap)
        s = spec.deepest_stride()
        ph = dims[0] + (-dims[0]) % s
        pw = dims[1] + (-dims[1]) % s
        lam = lam / (g.channels * (ph // g.stride) * (pw // g.stride))
    return default_loss_weights(spec, lambda_c=lam, mean_std_factor=cfg.mean_std_factor)


def _run_scales(u: np.ndarray | None, v: np.ndarray, cfg: RunConfig, progress,
                x0_for_scale1, lambda_override=None) -> np.ndarray:
    spec = cfg.extractor
    if spec is None:
        raise ConfigError("RunConfig.extractor is not set")
    if not spec.has_weights():
        raise ConfigError("extractor has no weights bound")
    sched = make_schedule(cfg.n_scales, cfg.mode)
    ref = u if u is not None else v
    dims = scale_dims(ref.shape[:2], cfg.n_scales)
    stride = spec.deepest_stride()
    if min(dims[0]) < stride:
        raise ConfigError(f"scale-1 dims {dims[0]} are below one feature pixel "
                          f"(deepest stride {stride}); use fewer scales")

    start_scale = 1
    x = None
    if cfg.resume is not None:
        done, x = read_checkpoint(cfg.resume, cfg.config_hash, cfg.dtype)
        if done >= cfg.n_scales:
            return x
        start_scale = done + 1

    for s in range(start_scale, cfg.n_scales + 1):
        factor = 2 ** (cfg.n_scales - s)
        u_s = resize_down(u, factor) if u is not None else None
        v_s = resize_down(v, factor)
        if x is None:
            x = x0_for_scale1()
        else:
            x = resize_up2(x, dims[s - 1])
        weights = _weights_for_scale(cfg, spec, dims[s - 1], lambda_override)
        style_stats = _cached_style_stats(v_s, spec, cfg, s)
        problem = build_problem(u_s if weights.lambda_c > 0 else None, v_s, spec, weights,
                                block=cfg.block, margin=cfg.margin, threads=cfg.threads,
                                content_budget_bytes=cfg.content_budget_bytes,
                                style_stats=style_stats)
        lcfg = LBFGSConfig(history_size=sched.histories[s - 1], max_iters=sched.iters[s - 1],
                           grad_tol=cfg.grad_tol, state_residency=cfg.state_residency)
        cb = None
        if progress is not None:
            cb = lambda it, xi, loss, gnorm, _s=s: progress(_s, it, loss, gnorm)
        x, _ = minimize(lambda arr: loss_grad(arr, problem), x, lcfg, callback=cb)
        if cfg.checkpoint is not None:
            write_checkpoint(cfg.checkpoint, x, s, cfg.config_hash)
    return x


def multiscale_transfer(u: np.ndarray, v: np.ndarray, cfg: RunConfig, progress=None) -> np.ndarray:
    """Transfer the style of v onto u across cfg.n_scales coarse-to-fine scales."""
    dt = resolve_dtype(cfg.dtype)
    u = u.astype(dt, copy=False)
    v = v.astype(dt, copy=False)
    n = cfg.n_scales
    return _run_scales(u, v, cfg, progress,
                       x0_for_scale1=lambda: resize_down(u, 2 ** (n - 1)).copy())


def texture_synthesize(v: np.ndarray, cfg: RunConfig, progress=None) -> np.ndarray:
    """Synthesize a texture matching v's statistics from seeded uniform noise.

    The content weight is forced to zero; a warning is logged when the config
    carries a nonzero one.
    """
    lam = cfg.weights.lambda_c if cfg.weights is not None else cfg.lambda_c
    if lam != 0:
        warnings.warn("texture synthesis forces the content weight to 0 "
                      f"(config asked for {lam})", stacklevel=2)
    dt = resolve_dtype(cfg.dtype)
    v = v.astype(dt, copy=False)
    dims1 = scale_dims(v.shape[:2], cfg.n_scales)[0]
    rng = np.random.default_rng(cfg.seed)

    def noise():
        return rng.uniform(0.0, 1.0, size=(*dims1, 3)).astype(dt)

    return _run_scales(None, v, cfg, progress, x0_for_scale1=noise, lambda_override=0.0)


def synthesis_scales_for(v_hw: tuple, target_side: int = 200) -> int:
    """Scale count so the coarsest side lands near target_side (about 200 px)."""
    side = min(v_hw)
    n = 1
    while side / 2 ** (n - 1) > 1.5 * target_side:
        n += 1
    return n
