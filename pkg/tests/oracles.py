"""Independent reference implementations used as test oracles.

Everything here is deliberately naive (explicit loops, direct formulas) and
shares no code with the engine paths it checks.
"""

import numpy as np


def naive_conv2d(x, weight, bias, stride=1, pad=0):
    """Direct quadruple-loop cross-correlation."""
    c, h, w = x.shape
    o, _, k, _ = weight.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    y = np.zeros((o, oh, ow), dtype=x.dtype)
    for oc in range(o):
        for i in range(oh):
            for j in range(ow):
                acc = 0.0
                for ic in range(c):
                    patch = xp[ic, i * stride:i * stride + k, j * stride:j * stride + k]
                    acc += float(np.sum(patch * weight[oc, ic]))
                y[oc, i, j] = acc + bias[oc]
    return y


def naive_gram(features):
    """(1/n_p) V^T V via an explicit per-pixel loop; features are (c, h, w)."""
    c = features.shape[0]
    flat = features.reshape(c, -1).astype(np.float64)
    n = flat.shape[1]
    g = np.zeros((c, c))
    for k in range(n):
        v = flat[:, k]
        g += np.outer(v, v)
    return g / n


def naive_mean_std(features):
    c = features.shape[0]
    flat = features.reshape(c, -1).astype(np.float64)
    return flat.mean(axis=1), flat.std(axis=1)


def augmented_style_loss(V, stats_ref, w):
    """Eq-style scalar from raw features: recomputes global stats from V itself."""
    mean, std = naive_mean_std(V)
    gram = naive_gram(V)
    return (w.gram * float(np.sum((gram - stats_ref.gram) ** 2))
            + w.mean * float(np.sum((mean - stats_ref.mean) ** 2))
            + w.std * float(np.sum((std - stats_ref.std) ** 2)))


def fd_directional(f, x, d, eps):
    """Central finite difference of scalar f along direction d."""
    return (f(x + eps * d) - f(x - eps * d)) / (2.0 * eps)


def direct_ssim(a, b, window=11, sigma=1.5, k1=0.01, k2=0.03):
    """Windowed-loop SSIM on luma, Gaussian weights, valid positions."""
    la = 0.299 * a[:, :, 0] + 0.587 * a[:, :, 1] + 0.114 * a[:, :, 2]
    lb = 0.299 * b[:, :, 0] + 0.587 * b[:, :, 1] + 0.114 * b[:, :, 2]
    t = np.arange(window) - (window - 1) / 2.0
    g1 = np.exp(-t ** 2 / (2 * sigma ** 2))
    wgt = np.outer(g1, g1)
    wgt /= wgt.sum()
    h, w = la.shape
    c1, c2 = k1 ** 2, k2 ** 2
    vals = []
    for i in range(h - window + 1):
        for j in range(w - window + 1):
            pa = la[i:i + window, j:j + window]
            pb = lb[i:i + window, j:j + window]
            ma = float(np.sum(wgt * pa))
            mb = float(np.sum(wgt * pb))
            va = float(np.sum(wgt * pa * pa)) - ma * ma
            vb = float(np.sum(wgt * pb * pb)) - mb * mb
            cab = float(np.sum(wgt * pa * pb)) - ma * mb
            vals.append(((2 * ma * mb + c1) * (2 * cab + c2))
                        / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def make_painting(n, seed, dtype=np.float32):
    """Smooth blobs plus fine grain: a desk-scale stand-in for a painting crop."""
    from tilestyle.tensorops import resize_up2
    r = np.random.default_rng(seed)
    base = resize_up2(resize_up2(resize_up2(r.random((n // 8, n // 8, 3)))))
    fine = 0.15 * (r.random((n, n, 3)) - 0.5)
    return np.clip(base + fine, 0.0, 1.0).astype(dtype)
