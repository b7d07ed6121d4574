import numpy as np
import pytest

import tilestyle.pipeline as pl
from tilestyle.errors import ConfigError
from tilestyle.metrics import psnr
from tilestyle.pipeline import (RunConfig, make_schedule, multiscale_transfer, scale_dims,
                                synthesis_scales_for, texture_synthesize)
from tilestyle.tensorops import resize_down
from oracles import make_painting


class TestSchedule:
    def test_fast_four_scales(self):
        assert make_schedule(4, "fast").iters == (600, 200, 66, 30)

    def test_baseline_four_scales(self):
        assert make_schedule(4, "baseline").iters == (600, 300, 300, 300)

    def test_fast_five_scales_floor(self):
        assert make_schedule(5, "fast").iters == (600, 200, 66, 30, 30)

    def test_histories(self):
        assert make_schedule(4, "fast").histories == (100, 10, 10, 10)
        assert make_schedule(1, "baseline").histories == (100,)

    def test_validation(self):
        with pytest.raises(ConfigError):
            make_schedule(0, "fast")
        with pytest.raises(ConfigError):
            make_schedule(2, "turbo")


class TestScaleDims:
    def test_paper_chain(self):
        dims = scale_dims((6048, 8064), 4)
        assert dims == [(756, 1008), (1512, 2016), (3024, 4032), (6048, 8064)]

    def test_ceil_rounding_no_drift(self):
        dims = scale_dims((49, 42), 3)
        assert dims == [(13, 11), (25, 21), (49, 42)]

    def test_synthesis_scale_heuristic(self):
        assert synthesis_scales_for((3024, 4032)) == 5
        assert synthesis_scales_for((256, 256)) == 1


def small_cfg(tiny, **kw):
    base = dict(n_scales=2, mode="fast", dtype="f64", seed=0, extractor=tiny,
                threads=1, block=64, margin=16)
    base.update(kw)
    return RunConfig(**base)


class TestMultiscale:
    def test_identity_single_scale_is_fixpoint(self, tiny, rng):
        u = rng.random((48, 48, 3))
        cfg = small_cfg(tiny, n_scales=1)
        out = multiscale_transfer(u, u.copy(), cfg)
        assert np.array_equal(out, u)

    def test_single_scale_never_upscales(self, tiny, rng, monkeypatch):
        def boom(*a, **k):
            raise AssertionError("resize_up2 must not run for n_scales=1")
        monkeypatch.setattr(pl, "resize_up2", boom)
        u = rng.random((48, 48, 3))
        out = multiscale_transfer(u, u.copy(), small_cfg(tiny, n_scales=1))
        assert out.shape == u.shape

    def test_output_dims_and_monotone_traces(self, tiny):
        u = make_painting(48, 5, np.float64)
        v = make_painting(48, 9, np.float64)
        seen = []
        out = multiscale_transfer(u, v, small_cfg(tiny), progress=lambda *a: seen.append(a))
        assert out.shape == u.shape
        scales = sorted({s for s, *_ in seen})
        assert scales == [1, 2]
        for s in scales:
            losses = [l for ss, _, l, _ in seen if ss == s]
            assert all(b <= a for a, b in zip(losses, losses[1:]))

    def test_ragged_dims_run(self, tiny):
        u = make_painting(50, 3, np.float64)[:, :42]
        v = make_painting(48, 4, np.float64)
        out = multiscale_transfer(u, v, small_cfg(tiny))
        assert out.shape == (50, 42, 3)

    def test_too_many_scales_raises(self, tiny, rng):
        u = rng.random((16, 16, 3))
        with pytest.raises(ConfigError, match="scales"):
            multiscale_transfer(u, u, small_cfg(tiny, n_scales=4))

    def test_scale_stability_psnr(self, tiny, tmp_path):
        # measured anchor: downscaled scale-2 output stays close to scale-1 output
        style = make_painting(128, 21, np.float64)
        u = make_painting(128, 22, np.float64)
        cfg = small_cfg(tiny, checkpoint=str(tmp_path / "ck"))
        out = multiscale_transfer(u, style, cfg)
        x1 = np.load(tmp_path / "ck.scale1.npy")
        down = resize_down(out, 2)
        assert psnr(down.astype(np.float64), x1) >= 18.0


class TestCheckpointResume:
    def test_resume_equals_uninterrupted(self, tiny, tmp_path):
        u = make_painting(48, 1, np.float64)
        v = make_painting(48, 2, np.float64)
        cfg = small_cfg(tiny, checkpoint=str(tmp_path / "full"))
        out_full = multiscale_transfer(u, v, cfg)
        cfg2 = small_cfg(tiny, resume=str(tmp_path / "full.scale1.json"))
        out_resumed = multiscale_transfer(u, v, cfg2)
        assert np.array_equal(out_full, out_resumed)

    def test_resume_from_final_scale_returns_it(self, tiny, tmp_path):
        u = make_painting(48, 1, np.float64)
        v = make_painting(48, 2, np.float64)
        cfg = small_cfg(tiny, checkpoint=str(tmp_path / "full"))
        out_full = multiscale_transfer(u, v, cfg)
        cfg2 = small_cfg(tiny, resume=str(tmp_path / "full.scale2.json"))
        assert np.array_equal(multiscale_transfer(u, v, cfg2), out_full)

    def test_hash_mismatch_rejected(self, tiny, tmp_path):
        u = make_painting(48, 1, np.float64)
        cfg = small_cfg(tiny, n_scales=1, checkpoint=str(tmp_path / "a"))
        cfg.config_hash = "aaaa"
        multiscale_transfer(u, u.copy(), cfg)
        cfg2 = small_cfg(tiny, n_scales=1, resume=str(tmp_path / "a.scale1.json"))
        cfg2.config_hash = "bbbb"
        with pytest.raises(ConfigError):
            multiscale_transfer(u, u.copy(), cfg2)

    def test_checkpoint_png_is_viewable(self, tiny, tmp_path):
        from tilestyle.imgio import load_png16
        u = make_painting(48, 1, np.float64)
        cfg = small_cfg(tiny, n_scales=1, checkpoint=str(tmp_path / "c"))
        out = multiscale_transfer(u, u.copy(), cfg)
        png = load_png16(tmp_path / "c.scale1.png")
        assert np.abs(png - np.clip(out, 0, 1)).max() <= 1.0 / 65535 + 1e-9


class TestSynthesis:
    def test_equal_seeds_identical(self, tiny):
        v = make_painting(48, 7, np.float64)
        cfg = small_cfg(tiny, n_scales=1, lambda_c=0.0, seed=123)
        a = texture_synthesize(v, cfg)
        cfg2 = small_cfg(tiny, n_scales=1, lambda_c=0.0, seed=123)
        b = texture_synthesize(v, cfg2)
        assert np.array_equal(a, b)
        cfg3 = small_cfg(tiny, n_scales=1, lambda_c=0.0, seed=124)
        assert not np.array_equal(a, texture_synthesize(v, cfg3))

    def test_lambda_forced_zero_with_warning(self, tiny):
        v = make_painting(48, 7, np.float64)
        cfg = small_cfg(tiny, n_scales=1, lambda_c=1.0)
        with pytest.warns(UserWarning, match="content weight"):
            out = texture_synthesize(v, cfg)
        assert out.shape == v.shape

    def test_output_dims_match_exemplar(self, tiny):
        v = make_painting(48, 7, np.float64)[:, :40]
        cfg = small_cfg(tiny, lambda_c=0.0)
        assert texture_synthesize(v, cfg).shape == (48, 40, 3)


class TestStatsCache:
    def test_cache_created_and_reused(self, tiny, tmp_path):
        import os
        v = make_painting(48, 2, np.float64)
        u = make_painting(48, 1, np.float64)
        cache = tmp_path / "cache"
        cfg = small_cfg(tiny, n_scales=1, stats_cache_dir=str(cache))
        out1 = multiscale_transfer(u, v, cfg)
        files = os.listdir(cache)
        assert len(files) == 1
        cfg2 = small_cfg(tiny, n_scales=1, stats_cache_dir=str(cache))
        out2 = multiscale_transfer(u, v, cfg2)
        assert np.array_equal(out1, out2)
        assert os.listdir(cache) == files
