import dataclasses

import numpy as np
import pytest

from popparts.config import RunConfig, SceneConfig
from popparts.core import DEFAULT_CAMERA, ITOP_SKELETON
from popparts.loss import STAGE_FAMILIES
from popparts.pipeline import make_scenes, roundtrip
from popparts.synth import (
    FigureSpec,
    OracleNoise,
    oracle_predict,
    render_scene,
    sample_random_scene,
    tpdf_discontinuity,
)
from popparts.encoder import encode_scene

K = ITOP_SKELETON.k
E = len(ITOP_SKELETON.edges)


def blob(x, y, z, r=0.1):
    return FigureSpec(np.tile([x, y, z], (K, 1)), np.full(E, r))


def test_sphere_depth():
    depth, (p,), (m,) = render_scene([blob(0, 0, 2.0)])
    c = int(DEFAULT_CAMERA.cx), int(DEFAULT_CAMERA.cy)
    assert depth.data[c[1], c[0]] == 1900
    assert m[c[1], c[0]] and m.sum() == (depth.data > 0).sum()
    assert p.labeled.all() and p.visible.all()
    assert np.allclose(p.z, 2.0)


def test_empty_scene():
    depth, poses, masks = render_scene([])
    assert not depth.data.any() and poses == [] and masks == []
    assert sample_random_scene(3, 0) == []
    with pytest.raises(ValueError):
        sample_random_scene(3, -1)


def test_rear_figure_hidden():
    front, back = blob(0, 0, 2.0, 0.2), blob(0, 0, 3.0, 0.05)
    depth, (pb, pf), (mb, mf) = render_scene([back, front])
    assert not mb.any() and pf.visible.all() and not pb.visible.any() and pb.labeled.all()
    depth2, _, _ = render_scene([front, back])
    assert np.array_equal(depth.data, depth2.data)


def test_out_of_frame_joint_unlabeled():
    _, (p,), _ = render_scene([blob(5.0, 0, 2.0)])
    assert not p.labeled.any()


def test_figure_validation_and_dict():
    with pytest.raises(ValueError):
        FigureSpec(np.zeros((K, 2)), np.ones(E))
    with pytest.raises(ValueError):
        FigureSpec(np.zeros((K, 3)), np.zeros(E))
    f = blob(0.1, 0.2, 2.0)
    g = FigureSpec.from_dict(f.to_dict())
    assert np.array_equal(f.joints, g.joints) and np.array_equal(f.radii, g.radii)


def test_sampler_is_deterministic():
    a = sample_random_scene(42, 3, min_part_gap=40.0)
    b = sample_random_scene(42, 3, min_part_gap=40.0)
    assert len(a) == len(b) > 0
    assert all(np.array_equal(x.joints, y.joints) for x, y in zip(a, b))
    c = sample_random_scene(43, 3)
    assert not np.array_equal(a[0].joints, c[0].joints)


def test_forced_overlap_intersects():
    for seed in range(5):
        figs = sample_random_scene(seed, 2, force_overlap=True)
        assert len(figs) == 2
        _, poses, masks = render_scene(figs)
        front = int(np.argmin([f.joints[:, 2].mean() for f in figs]))
        other = 1 - front
        # the rear figure loses pixels to the front one
        alone = render_scene([figs[other]])[2][0]
        assert (alone & masks[front]).any()


def test_render_order_invariant():
    figs = sample_random_scene(7, 3)
    d1, p1, m1 = render_scene(figs)
    d2, p2, m2 = render_scene(figs[::-1])
    assert np.array_equal(d1.data, d2.data)
    for a, b in zip(p1, p2[::-1]):
        assert np.array_equal(a.xy, b.xy) and np.array_equal(a.visible, b.visible)


def scene_maps(seed=5, n=2):
    figs = sample_random_scene(seed, n, min_part_gap=40.0)
    depth, poses, _ = render_scene(figs)
    return encode_scene(poses, depth, RunConfig().encoder, K)


def test_zero_noise_oracle_is_exact():
    gt = scene_maps()
    pred = oracle_predict(gt, OracleNoise(), 2)
    t = gt.tensors()
    for s in pred.stages:
        for n in STAGE_FAMILIES:
            assert np.array_equal(s[n], t[n])
    assert np.array_equal(pred.P, t["P"])


def test_oracle_seeded():
    gt = scene_maps()
    noise = OracleNoise(heat_sigma=0.05, depth_sigma=0.01, disp_sigma=0.1, pose_sigma=0.1, seed=9)
    a = oracle_predict(gt, noise)
    b = oracle_predict(gt, noise)
    c = oracle_predict(gt, dataclasses.replace(noise, seed=10))
    assert np.array_equal(a.P, b.P) and all(np.array_equal(x["H"], y["H"]) for x, y in zip(a.stages, b.stages))
    assert not np.array_equal(a.P, c.P)


def test_tpdf_discontinuity_shrinks_with_radius():
    figs = sample_random_scene(11, 3, min_part_gap=40.0)
    depth, poses, _ = render_scene(figs)
    prev = None
    for r in (float("inf"), 10.0, 4.0, 2.0, 1.0):
        enc = dataclasses.replace(RunConfig().encoder, r=r)
        g = encode_scene(poses, depth, enc, K).parts
        d = tpdf_discontinuity(g.X, g.Y, g.Wt, 3)
        assert d.shape == g.X.shape and (d >= 0).all()
        if prev is not None:
            assert (d <= prev + 1e-12).all()
        prev = d


def test_tpdf_discontinuity_single_target_is_zero():
    v, u = np.mgrid[0:5, 0:5].astype(float)
    X, Y = (2.0 - u)[None], (1.0 - v)[None]
    Wt = np.ones_like(X)
    assert not tpdf_discontinuity(X, Y, Wt, 3).any()
    X[0, 4, 4] += 3.0
    d = tpdf_discontinuity(X, Y, Wt, 1)
    assert d[0, 3, 3] == pytest.approx(3.0) and d[0, 0, 0] == 0.0
    Wt[0, 4, 4] = 0
    assert not tpdf_discontinuity(X, Y, Wt, 3).any()


def test_heat_noise_lowers_accuracy():
    cfg = RunConfig(scenes=SceneConfig(n_scenes=100, seed=3))
    scenes = make_scenes(cfg)
    clean = roundtrip(cfg, scenes)
    noisy = roundtrip(dataclasses.replace(cfg, noise=OracleNoise(heat_sigma=0.05, seed=3)), scenes)
    assert noisy.fused.mean_pck3d < clean.fused.mean_pck3d
    assert noisy.fused.mean_pck2d <= clean.fused.mean_pck2d
