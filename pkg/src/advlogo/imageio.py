"""PNG import/export for renders, textures, masks and backgrounds."""

import io
from pathlib import Path

import numpy as np
from PIL import Image


def to_uint8(rgb: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(rgb, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def png_bytes(rgb: np.ndarray) -> bytes:
    arr = to_uint8(rgb)
    mode = "L" if arr.ndim == 2 else "RGB"
    buf = io.BytesIO()
    # fixed encoder settings keep output byte-identical across runs
    Image.fromarray(arr, mode=mode).save(buf, format="PNG", optimize=False, compress_level=6)
    return buf.getvalue()


def save_png(path, rgb: np.ndarray):
    Path(path).write_bytes(png_bytes(rgb))


def load_rgb(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def save_mask(path, mask: np.ndarray):
    save_png(path, np.asarray(mask, dtype=np.float64))


def load_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        g = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    return g >= 0.5


def load_background(path, image_size: int) -> np.ndarray:
    """Centre-crop to square, then resize to ``image_size``."""
    with Image.open(path) as im:
        im = im.convert("RGB")
        w, h = im.size
        side = min(w, h)
        left, top = (w - side) // 2, (h - side) // 2
        im = im.crop((left, top, left + side, top + side))
        im = im.resize((image_size, image_size), Image.BILINEAR)
        return np.asarray(im, dtype=np.float64) / 255.0
