"""Image decode/encode: 8-bit PNG/JPEG via Pillow, 16-bit PNG for checkpoints.

Decoded images are (h, w, 3) float arrays in [0,1] (8-bit sRGB divided by
255); encode clamps back to [0,1]. Network preprocessing is owned by the
extractor spec, not by image IO.
"""

from __future__ import annotations

import numpy as np
from PIL import Image, PngImagePlugin

from .errors import FormatError
from .tensorops import resolve_dtype


def decode(path, dtype="f32") -> np.ndarray:
    dt = resolve_dtype(dtype)
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=dt)
    except FileNotFoundError:
        raise
    except Exception as e:
        raise FormatError(f"cannot decode image {path}: {e}") from e
    return arr / dt.type(255.0)


def encode(path, img: np.ndarray, text: dict | None = None) -> None:
    """Write 8-bit PNG or JPEG (by extension); PNG may carry text chunks."""
    q = np.clip(img, 0.0, 1.0)
    data = (q * 255.0 + 0.5).astype(np.uint8)
    im = Image.fromarray(data, "RGB")
    name = str(path).lower()
    if name.endswith((".jpg", ".jpeg")):
        im.save(path, quality=95)
        return
    info = None
    if text:
        info = PngImagePlugin.PngInfo()
        for k, v in text.items():
            info.add_text(k, v)
    im.save(path, pnginfo=info)


def save_png16(path, img: np.ndarray) -> None:
    """16-bit RGB PNG, used for human-inspectable checkpoints."""
    import cv2
    q = np.clip(img, 0.0, 1.0)
    data = (q * 65535.0 + 0.5).astype(np.uint16)
    if not cv2.imwrite(str(path), data[:, :, ::-1]):
        raise FormatError(f"cannot write 16-bit PNG {path}")


def load_png16(path, dtype="f64") -> np.ndarray:
    import cv2
    dt = resolve_dtype(dtype)
    data = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if data is None:
        raise FormatError(f"cannot read 16-bit PNG {path}")
    if data.dtype != np.uint16 or data.ndim != 3:
        raise FormatError(f"{path}: expected 16-bit 3-channel PNG, got {data.dtype} ndim={data.ndim}")
    return data[:, :, ::-1].astype(dt) / dt.type(65535.0)
