"""Command-line surface: transfer, synth, identity, gradcheck, stats, schedule.

Flag resolution is flags > config file > defaults. Every run logs its
effective configuration and a short hash of it to stderr; output PNGs embed
the same text as a provenance chunk. Exit codes: 0 success, 2 usage error,
3 numeric failure, 4 format error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import extractor, imgio, metrics
from .errors import (ConfigError, EmptyError, FormatError, GeometryError,
                     NonFiniteError, ShapeError)
from .localized import build_problem, loss_grad, loss_grad_global, stats_pass
from .pipeline import RunConfig, make_schedule, multiscale_transfer, texture_synthesize
from .stats import default_loss_weights


def parse_config_file(path) -> dict:
    """Flat key = value text (a TOML subset): no sections, no nesting."""
    out = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("["):
                raise FormatError(f"{path}:{lineno}: config file must be flat key = value lines")
            if "=" not in line:
                raise FormatError(f"{path}:{lineno}: expected key = value, got {line!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if len(val) >= 2 and val[0] == val[-1] and val[0] in "\"'":
                val = val[1:-1]
            out[key] = val
    return out


_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def _as_bool(v):
    if isinstance(v, bool):
        return v
    try:
        return _BOOL[str(v).lower()]
    except KeyError:
        raise ConfigError(f"expected a boolean, got {v!r}") from None


class Resolver:
    """flags > config file > defaults, recording the effective values."""

    def __init__(self, args):
        self.args = args
        self.filecfg = parse_config_file(args.config) if getattr(args, "config", None) else {}
        self.effective = {}

    def get(self, key, default, cast=str):
        v = getattr(self.args, key, None)
        if v is None:
            v = self.filecfg.get(key, default)
        if v is not None and not isinstance(v, cast if cast is not _as_bool else bool):
            v = cast(v)
        self.effective[key] = v
        return v


HASH_EXCLUDED = {"output", "out_report", "resume", "checkpoint", "threads", "csv", "out_image"}


def config_hash(effective: dict) -> tuple:
    text = "\n".join(f"{k} = {effective[k]}" for k in sorted(effective)
                     if k not in HASH_EXCLUDED and effective[k] is not None)
    return text, hashlib.sha256(text.encode()).hexdigest()[:12]


def _build_extractor(net: str, weights_file):
    if net == "tiny":
        spec = extractor.tinynet(0)
        return extractor.load_weights(weights_file, spec) if weights_file else spec
    if net == "file":
        if not weights_file:
            raise ConfigError("--net file requires --weights-file")
        return extractor.load_weights(weights_file, extractor.vgg19())
    raise ConfigError(f"unknown net {net!r}, expected tiny or file")


def _require_file(path, role: str):
    if path is None or not os.path.exists(path):
        raise FileNotFoundError(2, f"cannot open {role}", path)


def _common_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--scales", type=int, dest="scales")
    p.add_argument("--mode", choices=("baseline", "fast"))
    p.add_argument("--block", type=int)
    p.add_argument("--margin", type=int)
    p.add_argument("--weights-file", dest="weights_file")
    p.add_argument("--net", choices=("tiny", "file"))
    p.add_argument("--seed", type=int)
    p.add_argument("--dtype", choices=("f32", "f64"))
    p.add_argument("--threads", type=int)
    p.add_argument("--deterministic", action="store_true",
                   help="ordered block merges (always on; flag kept for parity)")
    p.add_argument("--lambda-c", type=float, dest="lambda_c")
    p.add_argument("--mean-std-factor", type=float, dest="mean_std_factor")


def _resolve_run(args, needs_content: bool):
    r = Resolver(args)
    net = r.get("net", "tiny")
    weights_file = r.get("weights_file", None)
    cfg = RunConfig(
        content=getattr(args, "content", None),
        style=args.style,
        output=getattr(args, "output", None),
        n_scales=r.get("scales", 3, int),
        mode=r.get("mode", "baseline"),
        lambda_c=r.get("lambda_c", 1.0, float),
        mean_std_factor=r.get("mean_std_factor", 1e3, float),
        content_per_element=_as_bool(r.get("content_per_element", True, _as_bool)),
        block=r.get("block", 512, int),
        margin=r.get("margin", 256, int),
        seed=r.get("seed", 0, int),
        dtype=r.get("dtype", "f32"),
        state_residency=r.get("state_residency", "host"),
        threads=r.get("threads", os.cpu_count() or 1, int),
        grad_tol=r.get("grad_tol", 1e-9, float),
        extractor=_build_extractor(net, weights_file),
        checkpoint=getattr(args, "checkpoint", None),
        resume=getattr(args, "resume", None),
        stats_cache_dir=r.get("stats_cache_dir", None),
    )
    r.effective["command"] = args.command
    r.effective["content"] = cfg.content if needs_content else None
    r.effective["style"] = cfg.style
    text, digest = config_hash(r.effective)
    cfg.config_text = text
    cfg.config_hash = digest
    print(f"config {digest}:\n{text}", file=sys.stderr)
    return cfg


def _progress(scale, it, loss, gnorm):
    print(f"scale {scale} iter {it} loss {loss:.6e} grad {gnorm:.3e}", file=sys.stderr)


def _provenance(cfg) -> dict:
    return {"tilestyle-config": cfg.config_text, "tilestyle-config-hash": cfg.config_hash}


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_transfer(args) -> int:
    _require_file(args.content, "content")
    _require_file(args.style, "style")
    cfg = _resolve_run(args, needs_content=True)
    u = imgio.decode(args.content, dtype=cfg.dtype)
    v = imgio.decode(args.style, dtype=cfg.dtype)
    out = multiscale_transfer(u, v, cfg, progress=_progress)
    imgio.encode(args.output, out, text=_provenance(cfg))
    return 0


def cmd_synth(args) -> int:
    _require_file(args.style, "style")
    cfg = _resolve_run(args, needs_content=False)
    v = imgio.decode(args.style, dtype=cfg.dtype)
    out = texture_synthesize(v, cfg, progress=_progress)
    imgio.encode(args.output, out, text=_provenance(cfg))
    return 0


def cmd_identity(args) -> int:
    _require_file(args.style, "style")
    cfg = _resolve_run(args, needs_content=True)
    v = imgio.decode(args.style, dtype=cfg.dtype)
    report, out = metrics.identity_test(v, cfg, progress=_progress)
    line = report.to_json()
    with open(args.out_report, "w") as f:
        f.write(line + "\n")
    print(line)
    if args.csv:
        metrics.append_csv(args.csv, os.path.basename(args.style), report)
    if args.out_image:
        imgio.encode(args.out_image, out, text=_provenance(cfg))
    return 0


def cmd_gradcheck(args) -> int:
    r = Resolver(args)
    dtype = r.get("dtype", "f64")
    block = r.get("block", 64, int)
    margin = r.get("margin", 16, int)
    seed = r.get("seed", 0, int)
    tol = args.tol
    spec = _build_extractor(r.get("net", "tiny"), r.get("weights_file", None))
    h, w = args.size
    rng = np.random.default_rng(seed)
    dt = np.float64 if dtype == "f64" else np.float32
    u, v, x = (rng.random((h, w, 3)).astype(dt) for _ in range(3))
    weights = default_loss_weights(spec)
    problem = build_problem(u, v, spec, weights, block=block, margin=margin)
    loss_b, grad_b = loss_grad(x, problem)
    loss_g, grad_g = loss_grad_global(x, problem)
    rel = float(np.linalg.norm((grad_b - grad_g).ravel()) / np.linalg.norm(grad_g.ravel()))
    print(f"localized_loss {loss_b:.12e} global_loss {loss_g:.12e} relative_error {rel:.6e}")
    if rel > tol:
        print(f"error: gradient relative error {rel:.6e} exceeds tolerance {tol:.1e}", file=sys.stderr)
        return 3
    return 0


def cmd_stats(args) -> int:
    _require_file(args.image, "image")
    r = Resolver(args)
    dtype = r.get("dtype", "f32")
    spec = _build_extractor(r.get("net", "tiny"), r.get("weights_file", None))
    img = imgio.decode(args.image, dtype=dtype)
    st = stats_pass(img, spec, block=r.get("block", 512, int),
                    margin=r.get("margin", 256, int),
                    threads=r.get("threads", 1, int), taps=spec.taps)
    dump = {t: {"n_p": s.n_p, "mean": s.mean.tolist(), "std": s.std.tolist(),
                "gram": s.gram.tolist()} for t, s in st.items()}
    print(json.dumps(dump))
    return 0


def cmd_schedule(args) -> int:
    sched = make_schedule(args.scales, args.mode or "baseline")
    print(" ".join(str(i) for i in sched.iters))
    print(" ".join(str(h) for h in sched.histories))
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tilestyle",
                                description="Out-of-core painting style transfer and texture synthesis")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("transfer", help="style-transfer content using style")
    t.add_argument("content")
    t.add_argument("style")
    t.add_argument("output")
    t.add_argument("--resume", help="checkpoint sidecar to resume from")
    t.add_argument("--checkpoint", help="base path for per-scale checkpoints")
    _common_flags(t)
    t.set_defaults(fn=cmd_transfer)

    s = sub.add_parser("synth", help="synthesize a texture from an exemplar")
    s.add_argument("style")
    s.add_argument("output")
    s.add_argument("--resume")
    s.add_argument("--checkpoint")
    _common_flags(s)
    s.set_defaults(fn=cmd_synth)

    i = sub.add_parser("identity", help="identity test: transfer a painting onto itself")
    i.add_argument("style")
    i.add_argument("out_report")
    i.add_argument("--csv", help="append a row to this CSV file")
    i.add_argument("--out-image", dest="out_image")
    _common_flags(i)
    i.set_defaults(fn=cmd_identity)

    g = sub.add_parser("gradcheck", help="compare localized vs global gradient")
    g.add_argument("--size", type=int, nargs=2, metavar=("H", "W"), default=(160, 160))
    g.add_argument("--tol", type=float, default=1e-8)
    _common_flags(g)
    g.set_defaults(fn=cmd_gradcheck)

    st = sub.add_parser("stats", help="dump per-tap feature statistics as JSON")
    st.add_argument("image")
    _common_flags(st)
    st.set_defaults(fn=cmd_stats)

    sc = sub.add_parser("schedule", help="print the iteration/history table")
    sc.add_argument("--scales", type=int, required=True)
    sc.add_argument("--mode", choices=("baseline", "fast"))
    sc.set_defaults(fn=cmd_schedule)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except FileNotFoundError as e:
        reason = e.strerror or "cannot open file"
        print(f"error: {reason} {e.filename}", file=sys.stderr)
        return 2
    except FormatError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except NonFiniteError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (ConfigError, GeometryError, ShapeError, EmptyError, KeyError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
