"""Evaluation protocols and metrics.

Frames are rendered for every (mesh, view, background) with a fixed logo
texture and scored by whether the detector still fires above threshold.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .attack import AttackConfig, run_attack
from .detector import DetectorModel, max_confidences
from .errors import DomainError
from .logo import LogoTexture, apply_3d_mapping, rasterize_shape_mask
from .render import composite, render
from .scene import DEFAULT_PEOPLE, PersonSpec, generate_backgrounds, place_logo, scene_camera


def attack_success_rate(detector: DetectorModel, threshold: float, frames) -> float:
    """Fraction of frames with no confidence strictly above ``threshold``."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim == 3:
        frames = frames[None]
    if len(frames) == 0:
        raise DomainError("no frames to score")
    return float((max_confidences(detector, frames) <= threshold).mean())


def person_by_name(name) -> PersonSpec:
    if isinstance(name, PersonSpec):
        return name
    for spec in DEFAULT_PEOPLE:
        if spec.name == name:
            return spec
    raise DomainError(f"unknown person mesh {name!r}")


@dataclass
class EvalProtocol:
    test_views: list
    test_meshes: list
    texture: LogoTexture
    detector: DetectorModel
    threshold: float = 0.6
    n_test_backgrounds: int = 200
    train_views: list = field(default_factory=list)
    train_meshes: list = field(default_factory=list)
    logo_scale: float = 1.0
    image_size: int = 64
    seed: int = 0
    backgrounds: np.ndarray | None = None
    camera_kw: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.test_views or not self.test_meshes:
            raise DomainError("protocol needs test views and test meshes")
        if self.backgrounds is None and self.n_test_backgrounds < 1:
            raise DomainError("protocol needs test backgrounds")

    def test_backgrounds(self):
        if self.backgrounds is not None:
            return np.asarray(self.backgrounds, dtype=np.float64)
        # test frames come from a stream disjoint from the training backgrounds
        return generate_backgrounds(self.n_test_backgrounds, self.seed + 1_000_003, self.image_size).array()

    def describe(self) -> dict:
        return {
            "test_views": [float(v) for v in self.test_views],
            "train_views": [float(v) for v in self.train_views],
            "test_meshes": [person_by_name(m).name for m in self.test_meshes],
            "train_meshes": [person_by_name(m).name for m in self.train_meshes],
            "threshold": self.threshold,
            "n_test_backgrounds": int(len(self.test_backgrounds())) if self.backgrounds is not None
            else self.n_test_backgrounds,
            "logo_scale": self.logo_scale,
            "image_size": self.image_size,
            "seed": self.seed,
            "camera": dict(self.camera_kw),
        }


@dataclass
class EvalResult:
    views: list
    rates: list
    counts: list
    train_views: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def mean(self) -> float:
        return float(np.mean(self.rates))

    def rate_at(self, view) -> float:
        return self.rates[self.views.index(float(view))]

    def mean_over(self, lo, hi, absolute=False) -> float:
        sel = [r for v, r in zip(self.views, self.rates) if lo <= (abs(v) if absolute else v) <= hi]
        if not sel:
            raise DomainError("no views in range")
        return float(np.mean(sel))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["view_deg", "success_rate", "n"])
        for v, r, n in zip(self.views, self.rates, self.counts):
            w.writerow([repr(float(v)), repr(float(r)), n])
        return buf.getvalue()

    def to_json(self) -> str:
        trained = [v for v in self.views if v in set(self.train_views)]
        summary = {
            "config": self.config,
            "mean_success_rate": self.mean,
            "mean_success_rate_train_views": float(np.mean([self.rate_at(v) for v in trained]))
            if trained else None,
            "per_view": [{"view_deg": v, "success_rate": r, "n": n, "train_view": v in trained}
                         for v, r, n in zip(self.views, self.rates, self.counts)],
        }
        return json.dumps(summary, indent=2, sort_keys=True) + "\n"


def render_frames(placement, camera, backgrounds):
    """Composite the placement's current render over each background."""
    person = render(placement.mesh, placement.logo, camera, placement.fragments_for(camera))
    return np.stack([composite(person, bg) for bg in backgrounds])


def run_protocol(p: EvalProtocol, jobs: int = 1) -> EvalResult:
    """Per-view success rate over every test mesh and background.

    Views are independent once the texture is mapped, so ``jobs`` > 1 scores
    them on a thread pool; results are gathered in view order.
    """
    bgs = p.test_backgrounds()
    placements = [place_logo(person_by_name(m), p.texture, p.logo_scale) for m in p.test_meshes]
    for pl in placements:
        apply_3d_mapping(p.texture, pl.texmap, pl.logo)

    def one_view(view):
        cam = scene_camera(view, p.image_size, **p.camera_kw)
        misses = total = 0
        for pl in placements:
            frames = render_frames(pl, cam, bgs)
            misses += int((max_confidences(p.detector, frames) <= p.threshold).sum())
            total += len(frames)
        return misses / total, total

    views = [float(v) for v in p.test_views]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            out = list(ex.map(one_view, views))
    else:
        out = [one_view(v) for v in views]
    return EvalResult(views, [r for r, _ in out], [n for _, n in out],
                      [float(v) for v in p.train_views], p.describe())


@dataclass
class GalleryRow:
    shape: str
    scale: float
    result: EvalResult


def shape_and_size_gallery(shapes, scales, base: EvalProtocol, train_backgrounds,
                           cfg: AttackConfig, texture_size=32, jobs=1) -> list:
    """One attack plus evaluation per (shape, scale); returns GalleryRow list.

    ``shapes`` are glyph names or boolean bitmaps. Training uses the base
    protocol's train meshes and train views.
    """
    rows = []
    for shape in shapes:
        name = shape if isinstance(shape, str) else "bitmap"
        mask = rasterize_shape_mask(shape, texture_size, texture_size)
        start = LogoTexture.uniform(mask)
        for scale in scales:
            meshes = base.train_meshes or base.test_meshes
            scene = [place_logo(person_by_name(m), start, scale) for m in meshes]
            views = base.train_views or base.test_views
            run_cfg = AttackConfig(**{**cfg.__dict__, "views": [scene_camera(v, base.image_size, **base.camera_kw)
                                                        for v in views]})
            tex, _ = run_attack(scene, start, train_backgrounds, base.detector, run_cfg)
            proto = EvalProtocol(**{**base.__dict__, "texture": tex, "logo_scale": scale})
            rows.append(GalleryRow(name, float(scale), run_protocol(proto, jobs)))
    return rows


def gallery_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["shape", "scale", "mean_success_rate"])
    for r in rows:
        w.writerow([r.shape, repr(r.scale), repr(r.result.mean)])
    return buf.getvalue()
