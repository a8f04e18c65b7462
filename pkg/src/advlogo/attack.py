"""Adversarial objective and the texture optimisation loop.

One step: augment the logo texture, recolour the logo faces, render with
cached fragments, composite over a batch of backgrounds, run the detector,
and push the gradient of

    lambda_dis * mean_batch(DIS) + lambda_tv * TV

back through detector, compositing, renderer, logo mapping and
augmentation onto the texture pixels, followed by a masked Adam update.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .detector import DetectorModel, DetectorPass, forward
from .errors import DomainError, NumericError
from .logo import LogoTexture, apply_3d_mapping, backward_3d_mapping
from .optim import AdamMoments, adam_update
from .render import (AugmentParams, Camera, RenderOutput, augment_backward, augment_logo_texture,
                     composite, composite_backward, render, render_backward)
from .scene import LogoPlacement, person_rect, rng_for, scene_camera

IOU_MIN = 0.1


@dataclass
class AttackConfig:
    lambda_dis: float = 1.0
    lambda_tv: float = 2.5
    lr0: float = 0.03
    lr_decay: float = 0.1
    decay_every: int = 50
    epochs: int = 100
    background_batch: int = 8
    mesh_batch: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    views: list = field(default_factory=lambda: [scene_camera(0.0)])
    threshold: float = 0.6
    augment: bool = True
    snapshot_every: int = 0

    def __post_init__(self):
        if self.lambda_dis < 0 or self.lambda_tv < 0:
            raise DomainError("loss weights must be non-negative")
        if not self.lr0 > 0:
            raise DomainError("initial learning rate must be positive")
        if self.epochs < 0:
            raise DomainError("epochs must be non-negative")
        if self.background_batch < 1 or self.mesh_batch != 1:
            raise DomainError("background_batch must be >= 1 and mesh_batch must be 1")
        if not self.views:
            raise DomainError("at least one view is required")


# ------------------------------------------------------------------ losses


def iou(a, b) -> float:
    ax0, ay0, ax1, ay1 = a[0] - a[2] / 2, a[1] - a[3] / 2, a[0] + a[2] / 2, a[1] + a[3] / 2
    bx0, by0, bx1, by1 = b[0] - b[2] / 2, b[1] - b[3] / 2, b[0] + b[2] / 2, b[1] + b[3] / 2
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = a[2] * a[3] + b[2] * b[3] - inter
    return inter / union if union > 0 else 0.0


def qualifying(boxes, rect) -> np.ndarray:
    """Boxes overlapping the person rectangle with IoU above ``IOU_MIN``."""
    if rect is None:
        return np.zeros(len(boxes), dtype=bool)
    return np.array([iou(b, rect) > IOU_MIN for b in boxes], dtype=bool)


def disappearance_loss(confidences: T.Tensor, boxes, rect, tape=None):
    """Max confidence over boxes containing the person; all boxes if none qualify.

    Returns (loss tensor, index of the selected box or -1 when there are no boxes).
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    if confidences.size == 0:
        return T.Tensor(0.0), -1
    keep = np.nonzero(qualifying(boxes, rect))[0]
    if len(keep) == 0:
        keep = np.arange(confidences.size)
    sel = T.gather(confidences, keep, tape=tape)
    value, k = T.reduce_max(sel, tape=tape)
    return value, int(keep[k])


def disappearance_from_detections(detections, rect) -> float:
    conf = T.Tensor([d.confidence for d in detections])
    return disappearance_loss(conf, [d.box for d in detections], rect)[0].item()


def tv_loss(person: RenderOutput, with_grad=False):
    """Sum of absolute horizontal and vertical differences over rendered logo pixels.

    A difference counts only when both pixels belong to the logo. With
    ``with_grad`` also returns d(TV)/d(rgb), using 0 as the subgradient at 0.
    """
    rgb, m = person.rgb, person.logo_mask
    dh = rgb[:, :-1] - rgb[:, 1:]
    dv = rgb[1:] - rgb[:-1]
    mh = (m[:, :-1] & m[:, 1:])[..., None]
    mv = (m[1:] & m[:-1])[..., None]
    value = float((np.abs(dh) * mh).sum() + (np.abs(dv) * mv).sum())
    if not with_grad:
        return value
    sh = np.sign(dh) * mh
    sv = np.sign(dv) * mv
    g = np.zeros_like(rgb)
    g[:, :-1] += sh
    g[:, 1:] -= sh
    g[1:] += sv
    g[:-1] -= sv
    return value, g


def total_loss(dis, tv, cfg: AttackConfig):
    return cfg.lambda_dis * dis + cfg.lambda_tv * tv


# ------------------------------------------------------------------ optimiser


@dataclass
class AdamState:
    moments: AdamMoments
    step: int = 0

    @classmethod
    def for_texture(cls, texture: LogoTexture):
        return cls(AdamMoments.like(texture.pixels), 0)


def adam_step(grad, state: AdamState, texture: LogoTexture, lr: float,
              beta1=0.9, beta2=0.999, eps=1e-8):
    """Masked Adam update then clamp to [0, 1]; returns (new texture, state)."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != texture.pixels.shape:
        raise DomainError("gradient must match the texture shape")
    if not np.isfinite(grad).all():
        raise NumericError("non-finite texture gradient")
    pix = texture.pixels.copy()
    state.step += 1
    mask = np.broadcast_to(texture.mask[..., None], pix.shape)
    adam_update(pix, grad, state.moments, state.step, lr, beta1, beta2, eps, mask=mask)
    np.clip(pix, 0.0, 1.0, out=pix)
    return LogoTexture(pix, texture.mask), state


def lr_schedule(epoch: int, cfg: AttackConfig) -> float:
    return cfg.lr0 * cfg.lr_decay ** (epoch // cfg.decay_every)


# ------------------------------------------------------------------ one step


@dataclass
class StepResult:
    dis: float
    tv: float
    total: float
    grad: np.ndarray  # w.r.t. the (augmented) texture pixels fed to the mapping
    person: RenderOutput
    dpass: DetectorPass | None = None


def frame_loss(texture: LogoTexture, placement: LogoPlacement, camera: Camera, backgrounds,
               detector: DetectorModel, cfg: AttackConfig) -> StepResult:
    """Weighted DIS + TV loss of one (mesh, view, background batch) and its texture gradient."""
    apply_3d_mapping(texture, placement.texmap, placement.logo)
    person = render(placement.mesh, placement.logo, camera, placement.fragments_for(camera))
    bgs = np.asarray(backgrounds, dtype=np.float64)
    if bgs.ndim == 3:
        bgs = bgs[None]
    n = len(bgs)
    frames = np.stack([composite(person, bg) for bg in bgs])
    x = T.Tensor(frames.transpose(0, 3, 1, 2))
    tape = T.Tape()
    dpass = forward(detector, x, tape=tape)
    rect = person_rect(person.coverage)
    boxes = dpass.boxes.reshape(n, -1, 4)
    cells = np.arange(dpass.grid ** 2)
    terms = []
    for b in range(n):
        conf = T.gather(dpass.probs, dpass.conf_index(b, cells), tape=tape)
        terms.append(disappearance_loss(conf, boxes[b], rect, tape)[0])
    dis = T.affine(T.reduce_sum(T.stack_scalars(terms, tape=tape), tape=tape), 1.0 / n, 0.0, tape=tape)
    g_frames = tape.backward(dis)[x].transpose(0, 2, 3, 1)
    g_rgb = sum(composite_backward(g, person) for g in g_frames) * cfg.lambda_dis
    tv, g_tv = tv_loss(person, with_grad=True)
    g_rgb = g_rgb + cfg.lambda_tv * g_tv
    cube_grads = render_backward(g_rgb, person, placement.logo)
    grad = backward_3d_mapping(placement.texmap, placement.logo, cube_grads)
    return StepResult(dis.item(), tv, total_loss(dis.item(), tv, cfg), grad, person, dpass)


def scene_loss(texture: LogoTexture, items, detector, cfg, params: AugmentParams | None = None):
    """Summed loss and gradient w.r.t. the raw texture over (placement, camera, backgrounds) items."""
    aug = augment_logo_texture(texture, params) if params is not None else texture
    total, grad = 0.0, np.zeros_like(texture.pixels)
    for placement, camera, bgs in items:
        r = frame_loss(aug, placement, camera, bgs, detector, cfg)
        total += r.total
        grad += r.grad
    if params is not None:
        grad = augment_backward(grad, texture, params)
    return total, grad


# ------------------------------------------------------------------ training loop


@dataclass
class EpochRecord:
    epoch: int
    mean_dis: float
    mean_tv: float
    total: float
    lr: float


@dataclass
class TrainReport:
    records: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)  # (epoch, LogoTexture)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "mean_dis", "mean_tv", "total", "lr"])
        for r in self.records:
            w.writerow([r.epoch, repr(r.mean_dis), repr(r.mean_tv), repr(r.total), repr(r.lr)])
        return buf.getvalue()

    @property
    def dis(self):
        return np.array([r.mean_dis for r in self.records])


def run_attack(scene, texture: LogoTexture, backgrounds, detector: DetectorModel,
               cfg: AttackConfig, log=None):
    """Optimise ``texture`` against ``detector`` over every mesh of ``scene``.

    ``scene`` is a sequence of LogoPlacement. Iteration order per epoch is
    meshes, then views, then background batches; each step draws a fresh
    augmentation from a counter-derived seed. Returns (texture, TrainReport).
    """
    placements = list(scene)
    if not placements:
        raise DomainError("scene has no meshes")
    bgs = np.asarray(backgrounds.array() if hasattr(backgrounds, "array") else backgrounds,
                     dtype=np.float64)
    if len(bgs) == 0:
        raise DomainError("no training backgrounds")
    batches = [bgs[s:s + cfg.background_batch] for s in range(0, len(bgs), cfg.background_batch)]
    tex = texture.copy()
    state = AdamState.for_texture(tex)
    report = TrainReport()
    step = 0
    for epoch in range(cfg.epochs):
        lr = lr_schedule(epoch, cfg)
        dis_acc, tv_acc, tot_acc, count = 0.0, 0.0, 0.0, 0
        for placement in placements:
            for camera in cfg.views:
                for batch in batches:
                    if cfg.augment:
                        params = AugmentParams.draw(_aug_seed(cfg.seed, step), tex.pixels.shape[:2])
                        fed = augment_logo_texture(tex, params)
                    else:
                        params, fed = None, tex
                    r = frame_loss(fed, placement, camera, batch, detector, cfg)
                    g = augment_backward(r.grad, tex, params) if params is not None else r.grad
                    tex, state = adam_step(g, state, tex, lr, cfg.beta1, cfg.beta2, cfg.eps)
                    dis_acc += r.dis
                    tv_acc += r.tv
                    tot_acc += r.total
                    count += 1
                    step += 1
        rec = EpochRecord(epoch, dis_acc / count, tv_acc / count, tot_acc / count, lr)
        report.records.append(rec)
        if cfg.snapshot_every and (epoch + 1) % cfg.snapshot_every == 0:
            report.snapshots.append((epoch + 1, tex.copy()))
        if log is not None:
            log(f"epoch {epoch}: dis={rec.mean_dis:.4f} tv={rec.mean_tv:.3f} lr={lr:g}")
    for placement in placements:
        apply_3d_mapping(tex, placement.texmap, placement.logo)
    return tex, report


def _aug_seed(seed, step):
    return int(rng_for(seed, 7, step).integers(0, 2 ** 63 - 1))
