import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from advlogo import tensor as T
from advlogo.attack import (
    AdamState,
    AttackConfig,
    adam_step,
    disappearance_from_detections,
    disappearance_loss,
    frame_loss,
    lr_schedule,
    run_attack,
    total_loss,
    tv_loss,
)
from advlogo.detector import Detection, DetectorModel
from advlogo.errors import DomainError, NumericError
from advlogo.logo import LogoTexture, rasterize_shape_mask
from advlogo.render import RenderOutput
from advlogo.scene import DEFAULT_PEOPLE, generate_backgrounds, place_logo, scene_camera
from oracles import ScalarAdam, box_iou, tv_loops


def fake_render(rgb, logo_mask):
    rgb = np.asarray(rgb, dtype=np.float64)
    s = rgb.shape[0]
    cov = np.ones((s, s), bool)
    return RenderOutput(rgb, cov, np.ones((s, s)), np.zeros((s, s), int), np.asarray(logo_mask, bool), 1)


def small_setup(texture_size=16, seed=0):
    mask = rasterize_shape_mask("G", texture_size, texture_size)
    tex = LogoTexture(np.random.default_rng(seed).uniform(0.2, 0.8, (texture_size, texture_size, 3)), mask)
    placement = place_logo(DEFAULT_PEOPLE[0], tex)
    return tex, placement


# ------------------------------------------------------------------ TV


def test_tv_constant_region_is_zero():
    assert tv_loss(fake_render(np.full((16, 16, 3), 0.3), np.ones((16, 16)))) == 0.0


def test_tv_hand_example():
    rgb = np.zeros((16, 16, 3))
    rgb[0, 1, 0] = rgb[1, 1, 0] = 1.0
    mask = np.zeros((16, 16), bool)
    mask[:2, :2] = True
    assert tv_loss(fake_render(rgb, mask)) == 2.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(-0.2, 0.2))
def test_tv_matches_loops_and_is_shift_invariant(seed, shift):
    rng = np.random.default_rng(seed)
    rgb = rng.uniform(0.3, 0.7, (16, 16, 3))
    mask = rng.uniform(size=(16, 16)) < 0.6
    v = tv_loss(fake_render(rgb, mask))
    assert v >= 0
    assert np.isclose(v, tv_loops(rgb, mask), rtol=1e-12)
    assert np.isclose(tv_loss(fake_render(rgb + shift, mask)), v, rtol=1e-9, atol=1e-9)


def test_tv_gradient_matches_finite_differences(rng):
    rgb = rng.uniform(size=(16, 16, 3))
    mask = rng.uniform(size=(16, 16)) < 0.7
    _, g = tv_loss(fake_render(rgb, mask), with_grad=True)
    eps = 1e-6
    for _ in range(40):
        i, j, c = rng.integers(16), rng.integers(16), rng.integers(3)
        hi, lo = rgb.copy(), rgb.copy()
        hi[i, j, c] += eps
        lo[i, j, c] -= eps
        num = (tv_loops(hi, mask) - tv_loops(lo, mask)) / (2 * eps)
        assert np.isclose(g[i, j, c], num, atol=1e-6)


# ------------------------------------------------------------------ total loss


def test_total_loss_examples():
    cfg = AttackConfig()
    assert total_loss(0.9, 2.0, cfg) == pytest.approx(5.9)
    assert total_loss(0.9, 2.0, AttackConfig(lambda_dis=0.0, lambda_tv=0.0)) == 0.0
    assert total_loss(0.0, 0.0, cfg) == 0.0


# ------------------------------------------------------------------ DIS


RECT = (0.5, 0.5, 0.3, 0.6)


def test_dis_max_over_qualifying():
    dets = [Detection((0.5, 0.5, 0.3, 0.6), 0.3), Detection((0.55, 0.5, 0.3, 0.5), 0.9),
            Detection((0.05, 0.05, 0.05, 0.05), 0.95)]
    assert disappearance_from_detections(dets[:2], RECT) == 0.9
    # a stronger box far from the person does not count while others qualify
    assert disappearance_from_detections(dets, RECT) == 0.9


def test_dis_fallback_to_global_max():
    dets = [Detection((0.05, 0.05, 0.05, 0.05), 0.7), Detection((0.95, 0.95, 0.05, 0.05), 0.2)]
    assert all(box_iou(d.box, RECT) <= 0.1 for d in dets)
    assert disappearance_from_detections(dets, RECT) == 0.7
    assert disappearance_from_detections(dets, None) == 0.7


def test_dis_empty_is_zero():
    v, idx = disappearance_loss(T.Tensor(np.zeros(0)), np.zeros((0, 4)), RECT)
    assert v.item() == 0.0 and idx == -1


def test_dis_gradient_only_on_argmax():
    conf = T.Tensor([0.3, 0.9, 0.5])
    boxes = [RECT, RECT, RECT]
    tape = T.Tape()
    v, idx = disappearance_loss(conf, boxes, RECT, tape)
    assert idx == 1
    assert np.array_equal(tape.backward(v)[conf], [0.0, 1.0, 0.0])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_dis_ignores_irrelevant_detections(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 10))
    boxes = np.column_stack([rng.uniform(0.3, 0.7, (n, 2)), rng.uniform(0.2, 0.6, (n, 2))])
    conf = rng.uniform(size=n)
    base = disappearance_loss(T.Tensor(conf), boxes, RECT)[0].item()
    extra_box = np.array([[0.02, 0.02, 0.03, 0.03]])
    extra_conf = rng.uniform(0, 1)
    if any(box_iou(b, RECT) > 0.1 for b in boxes):
        got = disappearance_loss(T.Tensor(np.append(conf, extra_conf)), np.vstack([boxes, extra_box]), RECT)
        assert got[0].item() == base


# ------------------------------------------------------------------ optimiser


def test_adam_zero_gradient_keeps_texture():
    tex = LogoTexture.uniform(np.ones((4, 4), bool), (0.2, 0.5, 0.7))
    state = AdamState.for_texture(tex)
    out, state = adam_step(np.zeros((4, 4, 3)), state, tex, 0.03)
    assert np.array_equal(out.pixels, tex.pixels)
    assert state.step == 1


def test_adam_matches_scalar_reference(rng):
    mask = np.ones((3, 3), bool)
    tex = LogoTexture.uniform(mask, (0.5, 0.5, 0.5))
    state = AdamState.for_texture(tex)
    ref = ScalarAdam(0.03)
    p = 0.5
    grads = [1.0, -0.3, 0.7, 0.2, -1.5]
    for g in grads:
        tex, state = adam_step(np.full((3, 3, 3), g), state, tex, 0.03)
        p = ref.step(p, g)
        assert np.allclose(tex.pixels, p, atol=1e-15)
    first = ScalarAdam(0.03).step(0.5, 1.0)
    assert first == pytest.approx(0.47)


def test_adam_masks_and_clamps(rng):
    mask = rng.uniform(size=(6, 6)) < 0.5
    mask[0, 0] = True
    tex = LogoTexture(rng.uniform(size=(6, 6, 3)), mask)
    state = AdamState.for_texture(tex)
    out = tex
    for _ in range(50):
        out, state = adam_step(rng.normal(size=(6, 6, 3)) * 100, state, out, 0.5)
    assert np.array_equal(out.pixels[~mask], tex.pixels[~mask])
    assert out.pixels.min() >= 0.0 and out.pixels.max() <= 1.0
    assert not np.array_equal(out.pixels[mask], tex.pixels[mask])


def test_adam_rejects_bad_gradients():
    tex = LogoTexture.uniform(np.ones((2, 2), bool))
    g = np.zeros((2, 2, 3))
    g[0, 0, 0] = np.nan
    with pytest.raises(NumericError):
        adam_step(g, AdamState.for_texture(tex), tex, 0.03)
    with pytest.raises(DomainError):
        adam_step(np.zeros((3, 3, 3)), AdamState.for_texture(tex), tex, 0.03)


def test_lr_schedule():
    cfg = AttackConfig()
    assert lr_schedule(0, cfg) == 0.03
    assert lr_schedule(49, cfg) == 0.03
    assert lr_schedule(50, cfg) == pytest.approx(0.003)
    assert lr_schedule(120, cfg) == pytest.approx(0.03 * 0.1 ** 2)


def test_config_validation():
    with pytest.raises(DomainError):
        AttackConfig(lambda_tv=-1)
    with pytest.raises(DomainError):
        AttackConfig(lr0=0)
    with pytest.raises(DomainError):
        AttackConfig(views=[])


# ------------------------------------------------------------------ pipeline


def test_gradient_is_linear_in_loss_weights():
    tex, placement = small_setup()
    det = DetectorModel.init(0)
    bgs = generate_backgrounds(2, 5).array()
    cam = scene_camera(0)
    g_dis = frame_loss(tex, placement, cam, bgs, det, AttackConfig(lambda_dis=1.0, lambda_tv=0.0)).grad
    g_tv = frame_loss(tex, placement, cam, bgs, det, AttackConfig(lambda_dis=0.0, lambda_tv=1.0)).grad
    both = frame_loss(tex, placement, cam, bgs, det, AttackConfig(lambda_dis=1.0, lambda_tv=2.5)).grad
    assert np.allclose(both, g_dis + 2.5 * g_tv, atol=1e-12)
    assert g_dis.any() and g_tv.any()


def test_zero_epochs_returns_texture_unchanged():
    tex, placement = small_setup()
    out, report = run_attack([placement], tex, generate_backgrounds(3, 1), DetectorModel.init(0),
                             AttackConfig(epochs=0))
    assert np.array_equal(out.pixels, tex.pixels)
    assert report.records == []


def test_attack_leaves_detector_geometry_and_outside_pixels_alone():
    tex, placement = small_setup()
    det = DetectorModel.init(0)
    fp = det.fingerprint()
    verts = placement.mesh.vertices.copy()
    faces = placement.mesh.faces.copy()
    out, report = run_attack([placement], tex, generate_backgrounds(8, 1), det,
                             AttackConfig(epochs=3, background_batch=4))
    assert det.fingerprint() == fp
    assert np.array_equal(placement.mesh.vertices, verts)
    assert np.array_equal(placement.mesh.faces, faces)
    assert np.array_equal(out.pixels[~tex.mask], tex.pixels[~tex.mask])
    assert not np.array_equal(out.pixels, tex.pixels)
    assert len(report.records) == 3
    rows = report.to_csv().strip().split("\n")
    assert rows[0] == "epoch,mean_dis,mean_tv,total,lr" and len(rows) == 4


def test_attack_is_deterministic():
    results = []
    for _ in range(2):
        tex, placement = small_setup()
        out, report = run_attack([placement], tex, generate_backgrounds(4, 2), DetectorModel.init(1),
                                 AttackConfig(epochs=2, background_batch=2, seed=11))
        results.append((out.pixels.tobytes(), report.to_csv()))
    assert results[0] == results[1]


def test_snapshots_every_n_epochs():
    tex, placement = small_setup()
    _, report = run_attack([placement], tex, generate_backgrounds(2, 2), DetectorModel.init(1),
                           AttackConfig(epochs=4, snapshot_every=2))
    assert [e for e, _ in report.snapshots] == [2, 4]


def test_attack_lowers_disappearance_loss(baseline):
    """1 mesh, 1 view, 8 backgrounds, 20 epochs against the trained detector, from a gray logo."""
    tex = LogoTexture.uniform(rasterize_shape_mask("G", 32, 32))
    placement = place_logo(DEFAULT_PEOPLE[0], tex)
    bgs = generate_backgrounds(8, 123)
    _, report = run_attack([placement], tex, bgs, baseline.model,
                           AttackConfig(epochs=20, augment=False, seed=0))
    assert report.dis[-1] < report.dis[0]


def test_attack_without_tv_hides_the_person(baseline):
    mask = rasterize_shape_mask("G", 32, 32)
    tex = LogoTexture.uniform(mask)
    placement = place_logo(DEFAULT_PEOPLE[0], tex)
    bgs = generate_backgrounds(8, 321)
    _, report = run_attack([placement], tex, bgs, baseline.model,
                           AttackConfig(epochs=30, lambda_tv=0.0, augment=False, seed=0))
    assert report.dis[0] > 0.6
    assert report.dis[-1] < 0.6
