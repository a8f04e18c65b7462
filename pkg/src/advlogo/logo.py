"""Logo transformation: texture coordinates for logo faces and colour transfer.

``build_2d_mapping`` runs once per (submesh, mask) and freezes the result.
``apply_3d_mapping`` then recolours the logo faces from the current texture
as often as needed, and ``backward_3d_mapping`` is its exact adjoint.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from . import glyphs
from .errors import DimensionError, DomainError, StateError
from .mesh import LogoSubmesh

_NN_CHUNK = 256


@dataclass
class LogoTexture:
    pixels: np.ndarray  # (h, w, 3)
    mask: np.ndarray  # (h, w) bool

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise DimensionError("pixels must be (h, w, 3)")
        if self.mask.shape != self.pixels.shape[:2]:
            raise DimensionError("mask must match pixel grid")
        if not self.mask.any():
            raise DomainError("logo mask has no pixels")
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise DomainError("texture channels must lie in [0, 1]")

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    @classmethod
    def uniform(cls, mask, rgb=(0.5, 0.5, 0.5)):
        mask = np.asarray(mask, dtype=bool)
        pix = np.empty(mask.shape + (3,))
        pix[:] = rgb
        return cls(pix, mask)

    def copy(self):
        return LogoTexture(self.pixels.copy(), self.mask.copy())


@dataclass(frozen=True)
class TexCoordMap:
    """Per-face texture coordinates in [0,1]^2 plus the pixel each one samples."""

    face_ids: np.ndarray
    coords: np.ndarray  # (F, 2) columns x_hat, y_hat
    rows: np.ndarray
    cols: np.ndarray
    texture_shape: tuple
    frozen: bool = True

    def __post_init__(self):
        for arr in (self.face_ids, self.coords, self.rows, self.cols):
            arr.flags.writeable = False

    def __len__(self):
        return len(self.face_ids)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["face_id", "x_hat", "y_hat"])
        for fid, (x, y) in zip(self.face_ids, self.coords):
            w.writerow([int(fid), repr(float(x)), repr(float(y))])
        return buf.getvalue()


def pixel_of(coord, size):
    """Nearest pixel index for a relative coordinate (round half up)."""
    return np.floor(np.asarray(coord) * (size - 1) + 0.5).astype(np.int64)


def relative_centroids(submesh: LogoSubmesh) -> np.ndarray:
    """Centroids scaled into the logo bounding box; a flat axis maps to 0.5."""
    span = submesh.bbox_max - submesh.bbox_min
    flat = span <= 0
    rel = (submesh.centroids - submesh.bbox_min) / np.where(flat, 1.0, span)
    rel[:, flat] = 0.5
    return np.clip(rel, 0.0, 1.0)


def nearest_mask_pixel(mask, rows, cols):
    """Nearest in-mask pixel for each query (Euclidean; lowest row-major index on ties)."""
    mr, mc = np.nonzero(mask)  # row-major order
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    out_r = np.empty_like(rows)
    out_c = np.empty_like(cols)
    for s in range(0, len(rows), _NN_CHUNK):
        r = rows[s:s + _NN_CHUNK, None]
        c = cols[s:s + _NN_CHUNK, None]
        d2 = (mr[None] - r) ** 2 + (mc[None] - c) ** 2
        k = np.argmin(d2, axis=1)
        out_r[s:s + _NN_CHUNK] = mr[k]
        out_c[s:s + _NN_CHUNK] = mc[k]
    return out_r, out_c


def build_2d_mapping(submesh: LogoSubmesh, texture: LogoTexture, axes=(0, 1),
                     flip_v=False) -> TexCoordMap:
    """Project logo face centroids into the texture domain.

    ``axes`` picks which two model axes become (x_hat, y_hat); y_hat indexes
    texture rows top-down, so ``flip_v=True`` keeps a y-up panel upright.
    Coordinates whose pixel falls outside the mask snap to the nearest mask pixel.
    """
    mask = texture.mask
    if not mask.any():
        raise DomainError("logo mask has no pixels")
    h, w = mask.shape
    rel = relative_centroids(submesh)
    x = rel[:, axes[0]].copy()
    y = rel[:, axes[1]].copy()
    if flip_v:
        y = 1.0 - y
    cols = pixel_of(x, w)
    rows = pixel_of(y, h)
    outside = ~mask[rows, cols]
    if outside.any():
        nr, nc = nearest_mask_pixel(mask, rows[outside], cols[outside])
        rows[outside], cols[outside] = nr, nc
        x[outside] = nc / (w - 1) if w > 1 else 0.0
        y[outside] = nr / (h - 1) if h > 1 else 0.0
    coords = np.stack([x, y], axis=1)
    return TexCoordMap(submesh.face_ids.copy(), coords, rows, cols, (h, w))


def _check(texmap: TexCoordMap, submesh: LogoSubmesh):
    if not texmap.frozen:
        raise StateError("texture coordinate map is not frozen")
    if len(texmap.face_ids) != len(submesh.face_ids) or \
            not np.array_equal(texmap.face_ids, submesh.face_ids):
        raise StateError("texture coordinate map was built for a different submesh")


def sample_colors(pixels: np.ndarray, texmap: TexCoordMap) -> np.ndarray:
    """Colour per logo face, (F, 3); the linear core of the 3D mapping."""
    if pixels.shape[:2] != texmap.texture_shape:
        raise DimensionError("texture size differs from the one the map was built for")
    return pixels[texmap.rows, texmap.cols]


def apply_3d_mapping(texture: LogoTexture, texmap: TexCoordMap, submesh: LogoSubmesh):
    """Fill every logo face's texture cube with its sampled texture colour."""
    _check(texmap, submesh)
    submesh.host.set_face_colors(submesh.face_ids, sample_colors(texture.pixels, texmap))


def scatter_color_grads(face_grads: np.ndarray, texmap: TexCoordMap) -> np.ndarray:
    """Adjoint of ``sample_colors``: add each face gradient onto its source pixel."""
    h, w = texmap.texture_shape
    if face_grads.shape != (len(texmap), 3):
        raise DimensionError(f"expected ({len(texmap)}, 3) face gradients, got {face_grads.shape}")
    out = np.zeros((h * w, 3))
    np.add.at(out, texmap.rows * w + texmap.cols, face_grads)
    return out.reshape(h, w, 3)


def backward_3d_mapping(texmap: TexCoordMap, submesh: LogoSubmesh, cube_grads) -> np.ndarray:
    """Texture-image gradient from per-face cube gradients.

    ``cube_grads`` is (F, q, q, q, 3) or already-reduced (F, 3).
    """
    _check(texmap, submesh)
    g = np.asarray(cube_grads, dtype=np.float64)
    if g.ndim == 5:
        g = g.sum(axis=(1, 2, 3))
    if g.ndim != 2 or g.shape[0] != len(texmap):
        raise DimensionError("one gradient entry per logo face required")
    return scatter_color_grads(g, texmap)


def _resample_nearest(src: np.ndarray, w: int, h: int) -> np.ndarray:
    sh, sw = src.shape
    r = ((np.arange(h) + 0.5) * sh / h).astype(np.int64)
    c = ((np.arange(w) + 0.5) * sw / w).astype(np.int64)
    return src[np.clip(r, 0, sh - 1)][:, np.clip(c, 0, sw - 1)]


def rasterize_shape_mask(glyph, w: int, h: int) -> np.ndarray:
    """Binary contour mask of a named glyph or a user bitmap (threshold 0.5)."""
    if w < 8 or h < 8:
        raise DomainError("mask must be at least 8x8")
    if isinstance(glyph, str):
        try:
            src = glyphs.GLYPHS[glyph]
        except KeyError:
            raise DomainError(f"unknown glyph {glyph!r}; choose from {glyphs.NAMES}") from None
    else:
        src = np.asarray(glyph, dtype=np.float64) >= 0.5
    mask = src if src.shape == (h, w) else _resample_nearest(src, w, h)
    mask = np.array(mask, dtype=bool)
    if not mask.any():
        raise DomainError("shape mask is empty")
    return mask
