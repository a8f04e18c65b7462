"""Procedural scene assets: backgrounds, dressed person proxies, logo placement
and the supervised dataset for the toy detector.

Everything is driven by integer seeds through counter-based generators, so a
(seed, index) pair always produces the same frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .logo import LogoTexture, TexCoordMap, build_2d_mapping, pixel_of
from .mesh import LogoSubmesh, TriMesh, extract_logo_submesh, generate_person_proxy
from .render import Camera, Fragments, rasterize, shade


def rng_for(seed: int, *keys: int) -> np.random.Generator:
    """Independent stream for (seed, *keys) with no shared global state."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


# ------------------------------------------------------------------ backgrounds


@dataclass
class BackgroundSet:
    images: list
    source: str = "procedural"

    def __len__(self):
        return len(self.images)

    def __getitem__(self, i):
        return self.images[i]

    def array(self):
        return np.stack(self.images)


def _background(rng, s):
    rows = np.arange(s)[:, None, None] / (s - 1)
    horizon = int(rng.uniform(0.45, 0.75) * s)
    sky_top = rng.uniform([0.25, 0.35, 0.55], [0.6, 0.75, 1.0])
    sky_low = np.clip(sky_top + rng.uniform(0.05, 0.3), 0, 1)
    img = np.broadcast_to(sky_top + (sky_low - sky_top) * rows, (s, s, 3)).copy()
    ground = rng.choice([[0.25, 0.5, 0.2], [0.45, 0.45, 0.45], [0.5, 0.4, 0.3], [0.35, 0.55, 0.3]])
    ground = np.clip(np.asarray(ground) + rng.uniform(-0.08, 0.08, 3), 0, 1)
    n_g = s - horizon
    tex = rng.uniform(-0.06, 0.06, (n_g, s, 1))
    stripes = 0.05 * np.sin(np.arange(n_g)[:, None, None] * rng.uniform(0.5, 2.0))
    img[horizon:] = np.clip(ground + tex + stripes, 0, 1)
    for _ in range(rng.integers(0, 7)):
        w = int(rng.integers(3, s // 3))
        h = int(rng.integers(3, s // 2))
        x = int(rng.integers(0, s - w))
        y = int(rng.integers(max(0, horizon - h - s // 8), max(1, min(s - h, horizon + s // 8))))
        img[y:y + h, x:x + w] = rng.uniform(0.05, 0.95, 3)
    return np.clip(img, 0.0, 1.0)


def generate_backgrounds(n: int, seed: int, image_size: int = 64) -> BackgroundSet:
    """Gradient sky, textured ground and rectangle clutter; never contains a person."""
    if n < 1:
        raise DomainError("need at least one background")
    return BackgroundSet([_background(rng_for(seed, i), image_size) for i in range(n)])


# ------------------------------------------------------------------ people


@dataclass(frozen=True)
class PersonSpec:
    name: str
    height: float = 0.75
    radius: float = 0.15
    segments: int = 48
    rings: int = 24
    panel_half_angle: float = 45.0
    panel_band: tuple = (-0.22, 0.22)
    skin: tuple = (0.85, 0.65, 0.5)
    shirt: tuple = (0.2, 0.35, 0.7)
    pants: tuple = (0.15, 0.15, 0.2)


DEFAULT_PEOPLE = (
    PersonSpec("A"),
    PersonSpec("B", height=0.72, radius=0.17, shirt=(0.7, 0.2, 0.2), pants=(0.25, 0.2, 0.15)),
    PersonSpec("C", height=0.7, radius=0.13, shirt=(0.3, 0.6, 0.3), pants=(0.2, 0.2, 0.35),
               skin=(0.75, 0.55, 0.45)),
)


def dress(mesh: TriMesh, height: float, skin, shirt, pants):
    """Paint head/torso/leg bands by centroid height."""
    y = mesh.face_centroids()[:, 1] / height
    colors = np.where((y > 0.32)[:, None], skin, np.where((y < -0.15)[:, None], pants, shirt))
    mesh.set_face_colors(np.arange(mesh.n_faces), colors)


def build_person(spec: PersonSpec):
    mesh, panel = generate_person_proxy(spec.height, spec.radius, spec.segments, spec.rings,
                                        spec.panel_half_angle, spec.panel_band, name=spec.name)
    dress(mesh, spec.height, spec.skin, spec.shirt, spec.pants)
    return mesh, panel


def select_logo_faces(mesh: TriMesh, panel_ids, mask, scale=1.0):
    """Panel faces whose centroid lands inside the shape mask.

    The mask is laid over the panel's centroid bounding box, shrunk by
    ``scale`` around its centre. Rows run top-down (model y up).
    """
    if not 0.0 < scale <= 1.0:
        raise DomainError("scale must lie in (0, 1]")
    panel_ids = np.asarray(panel_ids)
    sub = extract_logo_submesh(mesh, panel_ids)
    span = np.where(sub.bbox_max - sub.bbox_min > 0, sub.bbox_max - sub.bbox_min, 1.0)
    rel = (sub.centroids - sub.bbox_min) / span
    u = (rel[:, 0] - 0.5) / scale + 0.5
    v = 1.0 - ((rel[:, 1] - 0.5) / scale + 0.5)
    h, w = mask.shape
    inside = (u >= 0) & (u <= 1) & (v >= 0) & (v <= 1)
    keep = np.zeros(len(panel_ids), dtype=bool)
    keep[inside] = mask[pixel_of(v[inside], h), pixel_of(u[inside], w)]
    ids = panel_ids[keep]
    if len(ids) == 0:
        raise DomainError("no panel faces fall inside the logo mask")
    return ids


@dataclass
class LogoPlacement:
    """A mesh with its logo submesh and frozen texture coordinate map."""

    mesh: TriMesh
    logo: LogoSubmesh
    texmap: TexCoordMap
    fragments: dict = field(default_factory=dict)

    def fragments_for(self, camera: Camera) -> Fragments:
        if camera not in self.fragments:
            self.fragments[camera] = rasterize(self.mesh, camera)
        return self.fragments[camera]


def place_logo(spec: PersonSpec, texture: LogoTexture, scale=1.0) -> LogoPlacement:
    mesh, panel = build_person(spec)
    ids = select_logo_faces(mesh, panel, texture.mask, scale)
    logo = extract_logo_submesh(mesh, ids)
    return LogoPlacement(mesh, logo, build_2d_mapping(logo, texture, flip_v=True))


def person_rect(coverage: np.ndarray):
    """Normalised (cx, cy, w, h) bounding rectangle of the covered pixels, or None."""
    rows, cols = np.nonzero(coverage)
    if len(rows) == 0:
        return None
    s_h, s_w = coverage.shape
    x0, x1 = cols.min(), cols.max() + 1
    y0, y1 = rows.min(), rows.max() + 1
    return ((x0 + x1) / 2 / s_w, (y0 + y1) / 2 / s_h, (x1 - x0) / s_w, (y1 - y0) / s_h)


# ------------------------------------------------------------------ detector data


def _shift(frags: Fragments, dy: int, dx: int) -> Fragments:
    s = frags.face_id.shape[0]
    fid = np.full_like(frags.face_id, -1)
    depth = np.full_like(frags.depth, np.inf)
    ys = slice(max(dy, 0), s + min(dy, 0))
    yd = slice(max(-dy, 0), s + min(-dy, 0))
    xs = slice(max(dx, 0), s + min(dx, 0))
    xd = slice(max(-dx, 0), s + min(-dx, 0))
    fid[ys, xs] = frags.face_id[yd, xd]
    depth[ys, xs] = frags.depth[yd, xd]
    return Fragments(fid >= 0, depth, fid)


def _random_spec(rng, i):
    return PersonSpec(
        f"train{i}",
        height=float(rng.uniform(0.62, 0.76)),
        radius=float(rng.uniform(0.11, 0.19)),
        segments=32, rings=16,
    )


# Principal-point shift that puts the person centre inside one grid cell
# rather than on the boundary between the two central cells.
SCENE_SHIFT = (8.0, 6.0)


def scene_camera(azimuth_deg=0.0, image_size=64, **kw) -> Camera:
    sx, sy = (v * image_size / 64 for v in SCENE_SHIFT)
    return Camera(azimuth_deg=float(azimuth_deg), image_size=image_size, shift_x=sx, shift_y=sy, **kw)


def synth_detector_dataset(n: int, seed: int, image_size: int = 64, positive_fraction=0.5,
                           n_shapes=64, azimuth_range=60.0, max_shift=4):
    """Labelled frames: dressed proxies at random views over fresh backgrounds.

    Positives vary body shape, azimuth, outfit colours, a small image-space
    shift, and what covers the chest panel (shirt, flat colour, or a smooth
    random pattern). Returns a list of (image (S,S,3), box or None).
    """
    if n < 1:
        raise DomainError("need at least one sample")
    shape_rng = rng_for(seed, 0)
    bodies = []
    for k in range(n_shapes):
        spec = _random_spec(shape_rng, k)
        mesh, panel = generate_person_proxy(spec.height, spec.radius, spec.segments, spec.rings,
                                            50.0, (-0.25, 0.25))
        views = {}
        bodies.append((spec, mesh, panel, views))

    out = []
    for i in range(n):
        rng = rng_for(seed, 1, i)
        bg = _background(rng, image_size)
        if rng.uniform() >= positive_fraction:
            out.append((bg, None))
            continue
        spec, mesh, panel, views = bodies[int(rng.integers(len(bodies)))]
        az = int(rng.integers(-int(azimuth_range), int(azimuth_range) + 1))
        if az not in views:
            views[az] = rasterize(mesh, scene_camera(az, image_size))
        frags = _shift(views[az], int(rng.integers(-max_shift, max_shift + 1)),
                       int(rng.integers(-max_shift, max_shift + 1)))
        skin = rng.uniform([0.45, 0.3, 0.2], [0.95, 0.8, 0.7])
        shirt = rng.uniform(0.05, 0.95, 3)
        pants = rng.uniform(0.05, 0.5, 3)
        dress(mesh, spec.height, skin, shirt, pants)
        colors = mesh.face_colors()
        mode = rng.integers(3)
        if mode == 1:
            colors[panel] = rng.uniform(0, 1, 3)
        elif mode == 2:
            cents = mesh.face_centroids(panel)
            freq = rng.uniform(5, 25, (3, 2))
            phase = rng.uniform(0, 2 * np.pi, (3,))
            colors[panel] = 0.5 + 0.5 * np.sin(cents[:, :2] @ freq.T + phase)
        person = shade(frags, colors)
        if not person.coverage.any():
            out.append((bg, None))
            continue
        img = np.where(person.coverage[..., None], person.rgb, bg)
        out.append((img, person_rect(person.coverage)))
    return out


def scene_views(lo_deg: int, hi_deg: int, step: int = 1, image_size=64, **kw) -> list:
    """Integer azimuths in [lo, hi] as scene cameras."""
    if lo_deg > hi_deg or step < 1:
        raise DomainError("need lo <= hi and step >= 1")
    return [scene_camera(a, image_size, **kw) for a in range(lo_deg, hi_deg + 1, step)]


def detector_stream(n_per_epoch: int, seed: int, image_size: int = 64):
    """Callable epoch -> fresh labelled frames, for streamed detector training."""
    def draw(epoch):
        sub = int(rng_for(seed, 11, epoch).integers(0, 2 ** 62))
        return synth_detector_dataset(n_per_epoch, sub, image_size)
    return draw


def detector_holdout(n: int, seed: int, image_size: int = 64):
    return synth_detector_dataset(n, int(rng_for(seed, 12).integers(0, 2 ** 62)), image_size)
