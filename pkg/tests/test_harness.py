import json

import numpy as np
import pytest

from advlogo.attack import AttackConfig
from advlogo.detector import DetectorModel, detect
from advlogo.errors import DomainError
from advlogo.harness import (
    EvalProtocol,
    EvalResult,
    attack_success_rate,
    gallery_csv,
    person_by_name,
    run_protocol,
    shape_and_size_gallery,
)
from advlogo.logo import LogoTexture, rasterize_shape_mask
from advlogo.scene import generate_backgrounds


def brightness_detector(gain=10.0, bias=-5.0):
    """Confidence = sigmoid(gain * mean pixel + bias) in every cell of a flat image."""
    ws = [a.copy() for a in DetectorModel.zeros().arrays()]
    ws[0][0, :, 1, 1] = 1.0 / 3.0
    for li in (2, 4, 6):
        ws[li][0, 0, 1, 1] = 1.0
    ws[8][4, 0, 0, 0] = gain
    ws[9][4] = bias
    return DetectorModel(ws)


def gray_protocol(detector, views=(-1, 0, 1), meshes=("A",), n_bg=4, **kw):
    tex = LogoTexture.uniform(rasterize_shape_mask("G", 16, 16))
    return EvalProtocol(list(views), list(meshes), tex, detector, n_test_backgrounds=n_bg, **kw)


def test_success_rate_ratio():
    det = brightness_detector()
    frames = np.zeros((4, 64, 64, 3))
    frames[0] = 1.0
    assert attack_success_rate(det, 0.6, frames) == 0.75
    assert attack_success_rate(det, 0.6, np.ones((3, 64, 64, 3))) == 0.0
    with pytest.raises(DomainError):
        attack_success_rate(det, 0.6, np.zeros((0, 64, 64, 3)))


def test_success_rate_matches_recount(rng):
    det = DetectorModel.init(3)
    frames = rng.uniform(size=(12, 64, 64, 3))
    detections = [detect(det, f, 0.5) for f in frames]
    misses = 0
    for d in detections:
        if len(d) == 0:
            misses += 1
    assert attack_success_rate(det, 0.5, frames) == misses / len(frames)


def test_backgrounds_deterministic_and_in_range():
    a = generate_backgrounds(312, 4)
    assert len(a) == 312
    b = generate_backgrounds(312, 4)
    assert all(np.array_equal(x, y) for x, y in zip(a.images, b.images))
    arr = a.array()
    assert arr.shape == (312, 64, 64, 3) and arr.min() >= 0 and arr.max() <= 1
    assert not np.array_equal(a[0], generate_backgrounds(1, 5)[0])


def test_protocol_mean_is_unweighted_and_counts():
    res = run_protocol(gray_protocol(DetectorModel.init(2), meshes=("A", "B")))
    assert res.views == [-1.0, 0.0, 1.0]
    assert res.counts == [8, 8, 8]
    assert res.mean == sum(res.rates) / len(res.rates)
    assert all(0 <= r <= 1 for r in res.rates)


def test_protocol_deterministic_and_thread_independent():
    det = DetectorModel.init(4)
    a = run_protocol(gray_protocol(det, views=range(-3, 4)))
    b = run_protocol(gray_protocol(det, views=range(-3, 4)))
    c = run_protocol(gray_protocol(det, views=range(-3, 4)), jobs=3)
    assert a.to_csv() == b.to_csv() == c.to_csv()
    assert a.to_json() == c.to_json()


def test_result_exports():
    res = EvalResult([-1.0, 0.0, 1.0], [0.25, 0.5, 1.0], [4, 4, 4], train_views=[0.0], config={"k": 1})
    rows = res.to_csv().strip().split("\n")
    assert rows[0] == "view_deg,success_rate,n"
    assert rows[2] == "0.0,0.5,4"
    js = json.loads(res.to_json())
    assert js["mean_success_rate"] == pytest.approx(1.75 / 3)
    assert js["mean_success_rate_train_views"] == 0.5
    assert [v["train_view"] for v in js["per_view"]] == [False, True, False]
    assert res.mean_over(-1, 0) == pytest.approx(0.375)
    assert res.mean_over(1, 1, absolute=True) == pytest.approx(0.625)


def test_protocol_validation():
    det = DetectorModel.zeros()
    with pytest.raises(DomainError):
        gray_protocol(det, views=())
    with pytest.raises(DomainError):
        person_by_name("Z")


def test_unseen_mesh_protocol_shape():
    p = gray_protocol(DetectorModel.init(0), views=[0], meshes=["C"], train_meshes=["A", "B"])
    res = run_protocol(p)
    assert res.config["train_meshes"] == ["A", "B"] and res.config["test_meshes"] == ["C"]


def test_gallery_rows_and_degenerate_case():
    det = DetectorModel.init(5)
    base = gray_protocol(det, views=[0], n_bg=2)
    bgs = generate_backgrounds(2, 9)
    rows = shape_and_size_gallery(["G", "H"], [1.0, 2 / 3, 1 / 3], base, bgs, AttackConfig(epochs=1),
                                  texture_size=16)
    assert len(rows) == 6
    assert [(r.shape, r.scale) for r in rows[:3]] == [("G", 1.0), ("G", 2 / 3), ("G", 1 / 3)]
    assert gallery_csv(rows).count("\n") == 7
    (single,) = shape_and_size_gallery(["G"], [1.0], base, bgs, AttackConfig(epochs=0), texture_size=16)
    assert single.result.to_csv() == run_protocol(base).to_csv()


def test_gray_logo_does_not_cloak(baseline):
    tex = LogoTexture.uniform(rasterize_shape_mask("G", 32, 32))
    res = run_protocol(EvalProtocol(list(range(-10, 11)), ["A"], tex, baseline.model))
    assert res.mean <= (1 - baseline.recall) + 0.05
