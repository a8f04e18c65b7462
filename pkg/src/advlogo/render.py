"""Texture-differentiable z-buffer rasterizer, compositing and logo augmentation.

Geometry is fixed during an attack, so the pixel-to-face assignment is a
constant of the forward pass and every pixel colour is a linear function
of face colours. ``render_backward`` is therefore exact; no approximate
spatial gradients are produced.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError
from .logo import LogoTexture
from .mesh import CUBE_SIZE, LogoSubmesh, TriMesh, cube_centroid_weights

NEAR = 1e-3


@dataclass(frozen=True)
class Camera:
    azimuth_deg: float = 0.0
    elevation_deg: float = 0.0
    distance: float = 2.0
    fov_deg: float = 30.0
    image_size: int = 64
    shift_x: float = 0.0  # principal-point offset in pixels (pure image translation)
    shift_y: float = 0.0

    def __post_init__(self):
        if not self.distance > 0:
            raise DomainError("camera distance must be positive")
        if not 0.0 < self.fov_deg < 180.0:
            raise DomainError("fov must lie in (0, 180) degrees")
        if self.image_size < 16:
            raise DomainError("image_size must be >= 16")

    def with_azimuth(self, deg):
        return dataclasses.replace(self, azimuth_deg=float(deg))


def project(vertices: np.ndarray, camera: Camera):
    """Screen-space x, y (pixels, y down) and view depth for model-space vertices.

    The model turns by the azimuth about +y (counterclockwise seen from
    above) in front of a fixed camera on the +z axis looking at the origin.
    """
    a = math.radians(camera.azimuth_deg)
    e = math.radians(camera.elevation_deg)
    x, y, z = vertices[:, 0], vertices[:, 1], vertices[:, 2]
    xr = x * math.cos(a) + z * math.sin(a)
    zr = -x * math.sin(a) + z * math.cos(a)
    ye = y * math.cos(e) - zr * math.sin(e)
    ze = y * math.sin(e) + zr * math.cos(e)
    depth = camera.distance - ze
    t = math.tan(math.radians(camera.fov_deg) / 2.0)
    safe = np.where(depth > NEAR, depth, 1.0)
    s = camera.image_size
    sx = (xr / (safe * t) + 1.0) * (s / 2.0) + camera.shift_x
    sy = (1.0 - ye / (safe * t)) * (s / 2.0) + camera.shift_y
    return sx, sy, depth


@dataclass
class Fragments:
    coverage: np.ndarray
    depth: np.ndarray
    face_id: np.ndarray


def _edge_weights(x0, y0, x1, y1, x2, y2, px, py):
    w0 = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
    w1 = (x0 - x2) * (py - y2) - (y0 - y2) * (px - x2)
    w2 = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
    return w0, w1, w2


def _candidates(x0, y0, z0, x1, y1, z1, x2, y2, z2, area, px, py):
    """Inside test and perspective-correct depth; shapes broadcast."""
    w0, w1, w2 = _edge_weights(x0, y0, x1, y1, x2, y2, px, py)
    pos = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
    neg = (w0 <= 0) & (w1 <= 0) & (w2 <= 0)
    inside = np.where(area > 0, pos, neg)
    inv = (w0 / area) / z0 + (w1 / area) / z1 + (w2 / area) / z2
    z = 1.0 / np.where(inside, inv, 1.0)
    return inside, z


_SMALL = 8


def rasterize(mesh: TriMesh, camera: Camera) -> Fragments:
    """Nearest face per pixel centre; equal depths keep the lower face index.

    Faces with any vertex at or behind the near plane are dropped. No
    back-face culling. Faces whose pixel bounding box fits in a small
    window are tested together; larger faces one at a time.
    """
    s = camera.image_size
    sx, sy, dz = project(mesh.vertices, camera)
    tri = mesh.faces
    X, Y, Z = sx[tri], sy[tri], dz[tri]
    area = (X[:, 1] - X[:, 0]) * (Y[:, 2] - Y[:, 0]) - (Y[:, 1] - Y[:, 0]) * (X[:, 2] - X[:, 0])
    ok = (Z > NEAR).all(axis=1) & (area != 0.0)
    with np.errstate(invalid="ignore"):
        c_lo = np.maximum(np.floor(X.min(axis=1) - 0.5) - 1, 0)
        c_hi = np.minimum(np.ceil(X.max(axis=1) - 0.5) + 1, s - 1)
        r_lo = np.maximum(np.floor(Y.min(axis=1) - 0.5) - 1, 0)
        r_hi = np.minimum(np.ceil(Y.max(axis=1) - 0.5) + 1, s - 1)
    ok &= (c_lo <= c_hi) & (r_lo <= r_hi)
    faces = np.nonzero(ok)[0]
    width = (c_hi - c_lo + 1)[faces]
    height = (r_hi - r_lo + 1)[faces]
    small = faces[(width <= _SMALL) & (height <= _SMALL)]
    large = faces[(width > _SMALL) | (height > _SMALL)]

    pix, zs, fs = [], [], []
    if len(small):
        k = np.arange(_SMALL)
        cols = c_lo[small, None] + k[None]  # (F, K)
        rows = r_lo[small, None] + k[None]
        px = (cols + 0.5)[:, None, :]
        py = (rows + 0.5)[:, :, None]
        v = [a[small][:, None, None] for a in
             (X[:, 0], Y[:, 0], Z[:, 0], X[:, 1], Y[:, 1], Z[:, 1], X[:, 2], Y[:, 2], Z[:, 2], area)]
        inside, z = _candidates(*v, px, py)
        inside &= (cols <= c_hi[small, None])[:, None, :] & (rows <= r_hi[small, None])[:, :, None]
        fi, ri, ci = np.nonzero(inside)
        pix.append(rows[fi, ri].astype(np.int64) * s + cols[fi, ci].astype(np.int64))
        zs.append(z[fi, ri, ci])
        fs.append(small[fi])
    for f in large:
        cols = np.arange(int(c_lo[f]), int(c_hi[f]) + 1)
        rows = np.arange(int(r_lo[f]), int(r_hi[f]) + 1)
        inside, z = _candidates(X[f, 0], Y[f, 0], Z[f, 0], X[f, 1], Y[f, 1], Z[f, 1],
                                X[f, 2], Y[f, 2], Z[f, 2], area[f],
                                (cols + 0.5)[None, :], (rows + 0.5)[:, None])
        ri, ci = np.nonzero(inside)
        pix.append(rows[ri] * s + cols[ci])
        zs.append(z[ri, ci])
        fs.append(np.full(len(ri), f, dtype=np.int64))

    zbuf = np.full(s * s, np.inf)
    fid = np.full(s * s, -1, dtype=np.int64)
    if pix:
        pix, zs, fs = np.concatenate(pix), np.concatenate(zs), np.concatenate(fs)
        order = np.lexsort((fs, zs, pix))
        pix, zs, fs = pix[order], zs[order], fs[order]
        first = np.ones(len(pix), dtype=bool)
        first[1:] = pix[1:] != pix[:-1]
        zbuf[pix[first]] = zs[first]
        fid[pix[first]] = fs[first]
    zbuf, fid = zbuf.reshape(s, s), fid.reshape(s, s)
    return Fragments(fid >= 0, zbuf, fid)


@dataclass
class RenderOutput:
    rgb: np.ndarray  # (S, S, 3)
    coverage: np.ndarray
    depth: np.ndarray
    face_id: np.ndarray
    logo_mask: np.ndarray
    n_faces: int

    @property
    def image_size(self):
        return self.rgb.shape[0]


def shade(frags: Fragments, face_colors: np.ndarray, logo_face_ids=()) -> RenderOutput:
    """Ambient-only shading at intensity 1: a covered pixel takes its face colour."""
    s = frags.face_id.shape[0]
    rgb = np.zeros((s, s, 3))
    cov = frags.coverage
    rgb[cov] = face_colors[frags.face_id[cov]]
    is_logo = np.zeros(len(face_colors) + 1, dtype=bool)
    is_logo[np.asarray(logo_face_ids, dtype=np.int64)] = True
    # index -1 (background) lands on the extra False slot
    logo_mask = is_logo[frags.face_id]
    return RenderOutput(rgb, cov, frags.depth, frags.face_id, logo_mask, len(face_colors))


def render(mesh: TriMesh, logo: LogoSubmesh | None, camera: Camera,
           fragments: Fragments | None = None) -> RenderOutput:
    frags = fragments if fragments is not None else rasterize(mesh, camera)
    ids = logo.face_ids if logo is not None else ()
    return shade(frags, mesh.face_colors(), ids)


def face_color_grads(out_grad: np.ndarray, output: RenderOutput) -> np.ndarray:
    """Gradient w.r.t. each face colour, (F, 3), summed over the face's pixels."""
    s = output.image_size
    if out_grad.shape != (s, s, 3):
        raise DimensionError(f"expected ({s}, {s}, 3) gradient, got {out_grad.shape}")
    cov = output.coverage
    ids = output.face_id[cov]
    g = out_grad[cov]
    return np.stack([np.bincount(ids, weights=g[:, c], minlength=output.n_faces)
                     for c in range(3)], axis=1)


def render_backward(out_grad: np.ndarray, output: RenderOutput,
                    logo: LogoSubmesh | None = None) -> np.ndarray:
    """Per-face texture-cube gradients, (F, q, q, q, 3).

    Each pixel's gradient goes to the cube samples that produced its colour
    (the centroid samples). With ``logo`` only the logo faces are returned,
    in logo order.
    """
    fg = face_color_grads(out_grad, output)
    if logo is not None:
        fg = fg[logo.face_ids]
    w = cube_centroid_weights(CUBE_SIZE)
    return fg[:, None, None, None, :] * w[None, :, :, :, None]


def composite(person: RenderOutput, background: np.ndarray) -> np.ndarray:
    bg = np.asarray(background, dtype=np.float64)
    if bg.shape != person.rgb.shape:
        raise DimensionError(f"background {bg.shape} does not match render {person.rgb.shape}")
    return np.where(person.coverage[..., None], person.rgb, bg)


def composite_backward(grad: np.ndarray, person: RenderOutput) -> np.ndarray:
    """Gradient reaching the person render: only covered pixels pass."""
    if grad.shape != person.rgb.shape:
        raise DimensionError("gradient does not match render size")
    return np.where(person.coverage[..., None], grad, 0.0)


@dataclass(frozen=True)
class AugmentParams:
    contrast: float
    brightness: float
    noise: np.ndarray
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.contrast <= 1.0:
            raise DomainError("contrast must lie in [0, 1]")
        if not 0.0 <= self.brightness <= 1.0:
            raise DomainError("brightness must lie in [0, 1]")
        if np.abs(self.noise).max(initial=0.0) > 0.1:
            raise DomainError("noise must lie in [-0.1, 0.1]")

    @classmethod
    def draw(cls, seed: int, shape):
        rng = np.random.Generator(np.random.Philox(seed))
        c = float(rng.uniform(0.0, 1.0))
        b = float(rng.uniform(0.0, 1.0))
        n = rng.uniform(-0.1, 0.1, size=tuple(shape) + (3,))
        return cls(c, b, n, seed)

    @classmethod
    def identity(cls, shape):
        return cls(1.0, 0.0, np.zeros(tuple(shape) + (3,)))


def _augment_raw(texture: LogoTexture, p: AugmentParams):
    if p.noise.shape != texture.pixels.shape:
        raise DimensionError("noise must match texture pixels")
    return p.contrast * texture.pixels + p.brightness + p.noise


def augment_logo_texture(texture: LogoTexture, params: AugmentParams) -> LogoTexture:
    """In-mask pixels become clamp01(contrast * p + brightness + noise)."""
    raw = _augment_raw(texture, params)
    out = np.where(texture.mask[..., None], np.clip(raw, 0.0, 1.0), texture.pixels)
    return LogoTexture(out, texture.mask.copy())


def augment_backward(grad: np.ndarray, texture: LogoTexture, params: AugmentParams) -> np.ndarray:
    raw = _augment_raw(texture, params)
    live = (raw > 0.0) & (raw < 1.0)
    inside = texture.mask[..., None]
    return np.where(inside, np.where(live, params.contrast * grad, 0.0), grad)


def sample_views(lo_deg: int, hi_deg: int, step: int = 1, **camera_kw) -> list:
    if lo_deg > hi_deg or step < 1:
        raise DomainError("need lo <= hi and step >= 1")
    return [Camera(azimuth_deg=float(a), **camera_kw) for a in range(lo_deg, hi_deg + 1, step)]
