import numpy as np
import pytest

from popparts.loss import (
    STAGE_FAMILIES,
    StagePredictions,
    finite_difference_check,
    loss_gradients,
    random_problem,
    total_loss,
)


def exact(gt, n_stages=2):
    t = gt.tensors()
    return StagePredictions([{n: t[n].copy() for n in STAGE_FAMILIES} for _ in range(n_stages)], t["P"].copy())


def test_perfect_prediction_has_zero_loss_and_gradient():
    _, gt = random_problem(0)
    pred = exact(gt)
    assert total_loss(pred, gt).total == 0.0
    g = loss_gradients(pred, gt)
    assert all(not s[n].any() for s in g.stages for n in STAGE_FAMILIES) and not g.P.any()


def test_single_weighted_depth_term():
    gt = next(g for _, g in map(random_problem, range(50)) if (g.parts.Wd == 0.9).any())
    pred = exact(gt)
    idx = np.argwhere(gt.parts.Wd == 0.9)[0]
    pred.stages[0]["D"][tuple(idx)] += 0.3
    out = total_loss(pred, gt)
    assert out.l_d == pytest.approx(0.9 * 0.3**2)
    assert out.l_h == out.l_t == out.l_p == 0.0


def test_unsupervised_displacement_is_ignored():
    for seed in range(20):
        pred, gt = random_problem(seed)
        base = total_loss(pred, gt)
        mask = gt.parts.Wt == 0
        for s in pred.stages:
            s["X"][mask] += 7.0
            s["Y"][mask] -= 3.0
        assert total_loss(pred, gt).l_t == base.l_t


def test_stage_terms_add():
    pred, gt = random_problem(5, n_stages=3)
    parts = [
        total_loss(StagePredictions([s], pred.P), gt) for s in pred.stages
    ]
    whole = total_loss(pred, gt)
    assert whole.l_h == pytest.approx(sum(p.l_h for p in parts))
    assert whole.l_d == pytest.approx(sum(p.l_d for p in parts))
    assert whole.l_t == pytest.approx(sum(p.l_t for p in parts))
    assert whole.l_p == pytest.approx(parts[0].l_p)


def test_gradient_is_linear_in_residual():
    pred, gt = random_problem(9)
    g1 = loss_gradients(pred, gt)
    t = gt.tensors()
    doubled = StagePredictions(
        [{n: t[n] + 2 * (s[n] - t[n]) for n in STAGE_FAMILIES} for s in pred.stages], t["P"] + 2 * (pred.P - t["P"])
    )
    g2 = loss_gradients(doubled, gt)
    assert np.allclose(g2.P, 2 * g1.P)
    assert np.allclose(g2.stages[1]["D"], 2 * g1.stages[1]["D"])
    assert total_loss(doubled, gt).total == pytest.approx(4 * total_loss(pred, gt).total)


def test_finite_differences_agree():
    for seed in range(5):
        pred, gt = random_problem(seed)
        assert finite_difference_check(pred, gt) < 1e-4


def test_shape_mismatch_names_map():
    pred, gt = random_problem(2)
    pred.stages[1]["X"] = pred.stages[1]["X"][..., :-1] if pred.stages[1]["X"].shape[-1] > 1 else np.zeros((1, 1, 9))
    with pytest.raises(ValueError, match="map X"):
        total_loss(pred, gt)
    pred, gt = random_problem(3)
    pred.P = pred.P[:, :-1]
    with pytest.raises(ValueError, match="map P"):
        loss_gradients(pred, gt)
    pred, gt = random_problem(4)
    del pred.stages[0]["H"]
    with pytest.raises(ValueError, match="map H"):
        total_loss(pred, gt)


def test_needs_a_stage():
    with pytest.raises(ValueError):
        StagePredictions([], np.zeros(1))
