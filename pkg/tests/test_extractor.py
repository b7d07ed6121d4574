import numpy as np
import pytest

from tilestyle.container import read_records, write_records
from tilestyle.errors import FormatError, GeometryError
from tilestyle.extractor import (ExtractorSpec, backward_to_input, conv, forward_taps,
                                 load_weights, pool, relu, save_weights, tap_geometry,
                                 tinynet, vgg19)
from tilestyle.tensorops import img_to_chw


class TestTapGeometry:
    def test_single_conv_relu(self):
        spec = ExtractorSpec(layers=(conv("c", 3, 4), relu("r")), style_taps=("r",), content_tap="r")
        g = tap_geometry(spec, "r")
        assert (g.stride, g.rf_radius, g.channels) == (1, 1, 4)

    def test_conv_pool_conv(self):
        spec = ExtractorSpec(
            layers=(conv("c1", 3, 4), relu("r1"), pool("p1", 2), conv("c2", 4, 8), relu("r2")),
            style_taps=("r2",), content_tap="r2")
        g = tap_geometry(spec, "r2")
        assert (g.stride, g.rf_radius) == (2, 3)  # 1 + 2*1 by hand recurrence

    def test_tinynet_strides_and_rf(self, tiny):
        assert tuple(tap_geometry(tiny, t).stride for t in tiny.style_taps) == (1, 2, 4)
        assert tap_geometry(tiny, "relu3").rf_radius == 7  # 1 + 2 + 4

    def test_vgg19_deepest_stride(self):
        assert tap_geometry(vgg19(), "relu5_1").stride == 16

    def test_vgg19_tap_channels(self):
        spec = vgg19()
        widths = tuple(tap_geometry(spec, t).channels for t in spec.style_taps)
        assert widths == (64, 128, 256, 512, 512)

    def test_unknown_tap(self, tiny):
        with pytest.raises(KeyError):
            tap_geometry(tiny, "relu9")


class TestForward:
    def test_zero_image_constant_taps(self, tiny):
        taps = forward_taps(img_to_chw(np.zeros((32, 32, 3))), tiny)
        # conv on zeros is bias everywhere, so tap 1 is relu(bias) everywhere
        b1 = tiny.layers[0].bias
        expect1 = np.maximum(b1, 0.0)[:, None, None]
        assert np.allclose(taps["relu1"], expect1)
        # tap 2 interior: pool keeps the constant, then conv2 sums its kernel
        gamma = np.maximum(b1, 0.0)
        w2, b2 = tiny.layers[3].weight, tiny.layers[3].bias
        expect2 = np.maximum(np.tensordot(w2.sum(axis=(2, 3)), gamma, axes=1) + b2, 0.0)
        assert np.allclose(taps["relu2"][:, 1:-1, 1:-1], expect2[:, None, None], atol=1e-12)

    def test_embedding_locality(self, tiny, rng):
        # interior features are unchanged when the image sits in a larger zero canvas
        x = rng.random((40, 40, 3))
        big = np.zeros((72, 72, 3))
        big[16:56, 16:56] = x
        t_small = forward_taps(img_to_chw(x), tiny)["relu3"]
        t_big = forward_taps(img_to_chw(big), tiny)["relu3"]
        g = tap_geometry(tiny, "relu3")
        k = -(-g.rf_radius // g.stride)  # feature pixels spanned by the rf
        off = 16 // g.stride
        inner_small = t_small[:, k:-k, k:-k]
        inner_big = t_big[:, off + k:off + 10 - k, off + k:off + 10 - k]
        assert np.array_equal(inner_small, inner_big)

    def test_perturbation_probe_matches_geometry(self, tiny, rng):
        x = rng.random((64, 64, 3))
        taps0 = forward_taps(img_to_chw(x), tiny)
        x2 = x.copy()
        x2[33, 29] += 0.5
        taps1 = forward_taps(img_to_chw(x2), tiny)
        for t in tiny.style_taps:
            g = tap_geometry(tiny, t)
            changed = np.argwhere(np.any(taps0[t] != taps1[t], axis=0))
            if changed.size == 0:
                continue
            limit = -(-g.rf_radius // g.stride) + 1
            dist = np.abs(changed - np.array([33 // g.stride, 29 // g.stride])).max()
            assert dist <= limit

    def test_too_small_input(self, tiny):
        with pytest.raises(GeometryError):
            forward_taps(img_to_chw(np.zeros((3, 3, 3))), tiny)

    def test_save_for_backward_roundtrip(self, tiny, rng):
        x = img_to_chw(rng.random((24, 24, 3)))
        taps, saves = forward_taps(x, tiny, save_for_backward=True)
        assert len(saves) == tiny.deepest_tap_index() + 1
        grads = {t: np.ones_like(v) for t, v in taps.items()}
        g = backward_to_input(grads, saves, tiny)
        assert g.shape == x.shape and np.isfinite(g).all()


class TestDeterminism:
    def test_same_seed_same_weights(self):
        a, b = tinynet(3), tinynet(3)
        for la, lb in zip(a.layers, b.layers):
            if la.kind == "conv":
                assert np.array_equal(la.weight, lb.weight)
                assert np.array_equal(la.bias, lb.bias)

    def test_different_seed_differs(self):
        a, b = tinynet(0), tinynet(1)
        assert not np.array_equal(a.layers[0].weight, b.layers[0].weight)

    def test_activation_std_in_range(self, tiny, rng):
        taps = forward_taps(img_to_chw(rng.random((64, 64, 3))), tiny)
        for v in taps.values():
            assert 0.1 <= v.std() <= 10.0


class TestWeightFile:
    def test_roundtrip_bit_identical(self, tiny, tmp_path):
        path = tmp_path / "tiny.nstw"
        save_weights(path, tiny)
        back = load_weights(path, tinynet(0))
        for la, lb in zip(tiny.layers, back.layers):
            if la.kind == "conv":
                assert np.array_equal(la.weight, lb.weight)
                assert np.array_equal(la.bias, lb.bias)
        assert back.preprocess == tiny.preprocess

    def test_truncated_file(self, tiny, tmp_path):
        path = tmp_path / "tiny.nstw"
        save_weights(path, tiny)
        raw = path.read_bytes()
        path.write_bytes(raw[:len(raw) - 100])
        with pytest.raises(FormatError):
            load_weights(path, tinynet(0))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.nstw"
        path.write_bytes(b"JUNK!rest")
        with pytest.raises(FormatError):
            load_weights(path, tinynet(0))

    def test_permuted_dims_names_layer(self, tiny, tmp_path):
        path = tmp_path / "tiny.nstw"
        save_weights(path, tiny)
        records = read_records(path)
        records["conv2.weight"] = records["conv2.weight"].transpose(1, 0, 2, 3)
        write_records(path, records)
        with pytest.raises(FormatError, match="conv2"):
            load_weights(path, tinynet(0))

    def test_missing_layer_record(self, tiny, tmp_path):
        path = tmp_path / "tiny.nstw"
        save_weights(path, tiny)
        records = read_records(path)
        del records["conv3.bias"]
        write_records(path, records)
        with pytest.raises(FormatError, match="conv3"):
            load_weights(path, tinynet(0))
