"""Dense array kernels: conv/relu/pool forward and input-gradient passes, resampling.

Feature maps are (channels, height, width), row-major. Convolution is
cross-correlation (no kernel flip), matching pretrained-network conventions.
Only input gradients exist here; weights are frozen everywhere in the engine.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

DTYPES = {"f32": np.float32, "f64": np.float64}


def resolve_dtype(dtype) -> np.dtype:
    if isinstance(dtype, str):
        try:
            return np.dtype(DTYPES[dtype])
        except KeyError:
            raise ShapeError(f"unknown dtype tag {dtype!r}, expected f32 or f64") from None
    d = np.dtype(dtype)
    if d not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ShapeError(f"unsupported dtype {d}, expected float32 or float64")
    return d


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv2d_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray,
                   stride: int = 1, pad: int = 0) -> np.ndarray:
    """Cross-correlate x (c,h,w) with weight (o,c,k,k), add bias (o,)."""
    if x.ndim != 3 or weight.ndim != 4:
        raise ShapeError(f"conv expects x (c,h,w) and weight (o,c,k,k), got {x.shape} and {weight.shape}")
    c, h, w = x.shape
    o, ci, k, k2 = weight.shape
    if ci != c:
        raise ShapeError(f"conv weight expects {ci} input channels, input has {c}")
    if k != k2:
        raise ShapeError(f"conv kernel must be square, got {k}x{k2}")
    if bias.shape != (o,):
        raise ShapeError(f"conv bias shape {bias.shape} does not match {o} output channels")
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad))) if pad else x
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ShapeError(f"conv output would be {oh}x{ow} for input {h}x{w} (k={k}, stride={stride}, pad={pad})")
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    win = win[:, ::stride, ::stride]
    y = np.tensordot(weight, win, axes=([1, 2, 3], [0, 3, 4]))
    y += bias[:, None, None]
    return np.ascontiguousarray(y)


def conv2d_backward_input(grad_out: np.ndarray, x_shape: tuple, weight: np.ndarray,
                          stride: int = 1, pad: int = 0) -> np.ndarray:
    """Gradient of <grad_out, conv2d_forward(x)> wrt x: transposed-kernel scatter."""
    c, h, w = x_shape
    o, ci, k, _ = weight.shape
    if grad_out.shape[0] != o:
        raise ShapeError(f"grad_out has {grad_out.shape[0]} channels, conv produces {o}")
    oh, ow = grad_out.shape[1:]
    # per-tap contribution: gcols[c,di,dj,p] = sum_o weight[o,c,di,dj] * grad_out[o,p]
    gcols = np.tensordot(weight, grad_out, axes=([0], [0]))
    gx = np.zeros((c, h + 2 * pad, w + 2 * pad), dtype=grad_out.dtype)
    for di in range(k):
        for dj in range(k):
            gx[:, di:di + stride * oh:stride, dj:dj + stride * ow:stride] += gcols[:, di, dj]
    if pad:
        gx = gx[:, pad:pad + h, pad:pad + w]
    return np.ascontiguousarray(gx)


# ---------------------------------------------------------------------------
# relu / pooling
# ---------------------------------------------------------------------------

def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(grad_out: np.ndarray, saved_input: np.ndarray) -> np.ndarray:
    if grad_out.shape != saved_input.shape:
        raise ShapeError(f"relu backward shapes differ: {grad_out.shape} vs {saved_input.shape}")
    return grad_out * (saved_input > 0)


def _pool_crop(x: np.ndarray, k: int):
    c, h, w = x.shape
    oh, ow = h // k, w // k
    if oh == 0 or ow == 0:
        raise ShapeError(f"pool{k} output would be empty for input {h}x{w}")
    return x[:, :oh * k, :ow * k], oh, ow


def avgpool_forward(x: np.ndarray, k: int) -> np.ndarray:
    xc, oh, ow = _pool_crop(x, k)
    return xc.reshape(x.shape[0], oh, k, ow, k).mean(axis=(2, 4))


def avgpool_backward(grad_out: np.ndarray, in_shape: tuple, k: int) -> np.ndarray:
    c, h, w = in_shape
    oh, ow = grad_out.shape[1:]
    gx = np.zeros(in_shape, dtype=grad_out.dtype)
    spread = np.repeat(np.repeat(grad_out, k, axis=1), k, axis=2) / (k * k)
    gx[:, :oh * k, :ow * k] = spread
    return gx


def maxpool_forward(x: np.ndarray, k: int) -> np.ndarray:
    xc, oh, ow = _pool_crop(x, k)
    return xc.reshape(x.shape[0], oh, k, ow, k).max(axis=(2, 4))


def maxpool_backward(grad_out: np.ndarray, saved_input: np.ndarray, k: int) -> np.ndarray:
    c, h, w = saved_input.shape
    xc, oh, ow = _pool_crop(saved_input, k)
    # row-major scan inside each window so argmax ties go to the first index
    win = xc.reshape(c, oh, k, ow, k).transpose(0, 1, 3, 2, 4).reshape(c, oh, ow, k * k)
    amax = np.argmax(win, axis=3)
    scatter = np.zeros_like(win, dtype=grad_out.dtype)
    np.put_along_axis(scatter, amax[..., None], grad_out[..., None], axis=3)
    scatter = scatter.reshape(c, oh, ow, k, k).transpose(0, 1, 3, 2, 4).reshape(c, oh * k, ow * k)
    gx = np.zeros((c, h, w), dtype=grad_out.dtype)
    gx[:, :oh * k, :ow * k] = scatter
    return gx


# ---------------------------------------------------------------------------
# resampling (images are (h, w) or (h, w, channels), values typically in [0,1])
# ---------------------------------------------------------------------------

def resize_down(img: np.ndarray, factor: int) -> np.ndarray:
    """Area-average downscale by an integer factor; output dims = ceil(input/factor).

    Each output pixel is the mean of its source box; boxes on the right/bottom
    edge may be smaller when factor does not divide the dimension.
    """
    if factor < 1:
        raise ShapeError(f"resize_down factor must be >= 1, got {factor}")
    if factor == 1:
        return img.copy()
    h, w = img.shape[:2]
    ih = np.arange(0, h, factor)
    iw = np.arange(0, w, factor)
    sums = np.add.reduceat(np.add.reduceat(img, ih, axis=0), iw, axis=1)
    bh = np.diff(np.append(ih, h)).astype(img.dtype)
    bw = np.diff(np.append(iw, w)).astype(img.dtype)
    area = bh[:, None] * bw[None, :]
    if img.ndim == 3:
        area = area[:, :, None]
    return (sums / area).astype(img.dtype)


def resize_bilinear(img: np.ndarray, out_hw: tuple) -> np.ndarray:
    """Bilinear resample to (out_h, out_w) using half-pixel-centered coordinates."""
    h, w = img.shape[:2]
    oh, ow = out_hw
    if oh < 1 or ow < 1:
        raise ShapeError(f"bilinear target must be >= 1x1, got {oh}x{ow}")

    def axis_weights(n_in, n_out):
        src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1.0)
        i0 = np.floor(src).astype(np.intp)
        i1 = np.minimum(i0 + 1, n_in - 1)
        t = (src - i0).astype(img.dtype)
        return i0, i1, t

    y0, y1, ty = axis_weights(h, oh)
    x0, x1, tx = axis_weights(w, ow)
    ty = ty[:, None, None] if img.ndim == 3 else ty[:, None]
    rows = img[y0] * (1 - ty) + img[y1] * ty
    txb = tx[None, :, None] if img.ndim == 3 else tx[None, :]
    out = rows[:, x0] * (1 - txb) + rows[:, x1] * txb
    return out.astype(img.dtype)


def resize_up2(img: np.ndarray, target_hw: tuple | None = None) -> np.ndarray:
    """Bilinear upscale by 2, or to an explicit target (absorbs ceil-rounding drift)."""
    h, w = img.shape[:2]
    return resize_bilinear(img, target_hw if target_hw is not None else (2 * h, 2 * w))


def img_to_chw(img: np.ndarray) -> np.ndarray:
    """(h,w,3) image to contiguous (3,h,w) tensor."""
    return np.ascontiguousarray(img.transpose(2, 0, 1))


def chw_to_img(t: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(t.transpose(1, 2, 0))


# ---------------------------------------------------------------------------
# stride-alignment padding (replicate edge), used by the blockwise passes
# ---------------------------------------------------------------------------

def pad_to_multiple(img: np.ndarray, multiple: int) -> np.ndarray:
    """Replicate-pad right/bottom so both spatial dims are multiples of `multiple`."""
    h, w = img.shape[:2]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return img
    pads = [(0, ph), (0, pw)] + [(0, 0)] * (img.ndim - 2)
    return np.pad(img, pads, mode="edge")


def fold_padding_gradient(grad: np.ndarray, orig_hw: tuple) -> np.ndarray:
    """Fold the gradient of replicate-padded pixels back onto the source edge pixels.

    Replicated pixels are copies of the last row/column, so by the chain rule
    their gradients accumulate there; plain cropping would drop them.
    """
    h, w = orig_hw
    gh, gw = grad.shape[:2]
    if (gh, gw) == (h, w):
        return grad
    out = grad[:h, :w].copy()
    if gh > h:
        out[h - 1] += grad[h:, :w].sum(axis=0)
    if gw > w:
        out[:, w - 1] += grad[:h, w:].sum(axis=1)
    if gh > h and gw > w:
        out[h - 1, w - 1] += grad[h:, w:].sum(axis=(0, 1))
    return out
