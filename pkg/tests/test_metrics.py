import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from popparts.core import DEFAULT_CAMERA, ITOP_SKELETON, BBox, Detection, Pose, bbox_from_pose
from popparts.metrics import (
    MetricConfig,
    average_precision,
    evaluate,
    head_size,
    map_score,
    match_by_iou,
    pck,
)

K = ITOP_SKELETON.k
CAM = DEFAULT_CAMERA


def person(x0, y0=40.0, z=2.0):
    xy = np.column_stack([x0 + 3.0 * np.arange(K), y0 + 8.0 * np.arange(K)])
    return Pose.from_arrays(xy, np.full(K, z))


def as_det(p: Pose, score=1.0) -> Detection:
    return Detection(bbox_from_pose(p), score, p)


def test_match_examples():
    a, b = person(20), person(150)
    m = match_by_iou([as_det(b, 0.9), as_det(a, 0.8)], [a, b])
    assert m == [1, 0]
    far = Detection(BBox(0, 0, 5, 5), 0.99, a)
    assert match_by_iou([far], [a]) == [None]
    # two predictions on one person: the higher score takes it
    m = match_by_iou([as_det(a, 0.5), as_det(a, 0.7)], [a])
    assert m == [None, 0]
    assert match_by_iou([], [a]) == []
    assert match_by_iou([as_det(a)], []) == [None]


def test_head_size():
    p = person(20)
    assert head_size(p, ITOP_SKELETON, 10.0) == pytest.approx(math.hypot(3, 8))
    q = p.replace(labeled=np.zeros(K, bool))
    assert head_size(q, ITOP_SKELETON, 10.0) == 10.0


def test_pck3d_threshold():
    g = person(60)
    near = g.replace(z=g.z + 0.09)
    far = g.replace(z=g.z + 0.11)
    _, m = pck([[as_det(near)]], [[g]], ITOP_SKELETON, space="3D", cam=CAM)
    assert m == pytest.approx(1.0)
    _, m = pck([[as_det(far)]], [[g]], ITOP_SKELETON, space="3D", cam=CAM)
    assert m == 0.0


def test_pck_unmatched_person_counts_as_miss():
    a, b = person(20), person(150)
    per, m = pck([[as_det(a)]], [[a, b]], ITOP_SKELETON)
    assert m == 0.5 and np.allclose(per, 0.5)
    with pytest.raises(ValueError):
        pck([[as_det(a)]], [[a, b]], ITOP_SKELETON, space="3D")
    with pytest.raises(ValueError):
        pck([[]], [[a], [b]], ITOP_SKELETON)


def test_unlabeled_parts_are_excluded():
    g = person(60)
    lab = np.ones(K, bool)
    lab[3] = False
    g = g.replace(labeled=lab)
    per, m = pck([[as_det(g)]], [[g]], ITOP_SKELETON)
    assert np.isnan(per[3]) and m == 1.0
    ap, mp = map_score([[as_det(person(60))]], [[g]], ITOP_SKELETON)
    assert np.isnan(ap[3]) and mp == 1.0


def test_average_precision_examples():
    assert average_precision([0.9, 0.8], [True, True], 2) == 1.0
    assert average_precision([], [], 3) == 0.0
    assert math.isnan(average_precision([0.5], [True], 0))
    assert average_precision([0.9, 0.8], [False, True], 1) == pytest.approx(0.5)
    assert average_precision([0.9, 0.8], [True, False], 1) == 1.0


def test_equal_scores_give_pck_squared():
    hits = [True] * 7 + [False] * 3
    assert average_precision([0.5] * 10, hits, 10) == pytest.approx(0.7 * 0.7)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.sampled_from([0.1, 0.5, 0.9]), st.booleans()), min_size=1, max_size=12), st.randoms())
def test_average_precision_tie_order_invariant(items, rnd):
    n_pos = sum(t for _, t in items) + 1
    a = average_precision([s for s, _ in items], [t for _, t in items], n_pos)
    shuffled = list(items)
    rnd.shuffle(shuffled)
    b = average_precision([s for s, _ in shuffled], [t for _, t in shuffled], n_pos)
    assert a == pytest.approx(b, abs=1e-12)
    assert 0.0 <= a <= 1.0
    # one more false positive never helps
    c = average_precision([s for s, _ in items] + [0.5], [t for _, t in items] + [False], n_pos)
    assert c <= a + 1e-12


def test_map_perfect_and_empty():
    scenes = [[person(20), person(150)], [person(80, z=3.0)]]
    preds = [[as_det(p, 0.9) for p in s] for s in scenes]
    for space in ("2D", "3D"):
        _, m = map_score(preds, scenes, ITOP_SKELETON, space=space, cam=CAM)
        assert m == 1.0
    _, m = map_score([[], []], scenes, ITOP_SKELETON)
    assert m == 0.0


def test_evaluate_report():
    g = [[person(20), person(150)]]
    p = [[as_det(person(20)), Detection(BBox(0, 0, 4, 4), 0.3, person(0))]]
    r = evaluate(p, g, ITOP_SKELETON, CAM, MetricConfig())
    assert (r.tp, r.fp, r.missed) == (1, 1, 1)
    assert r.mean_pck2d == 0.5
    d = r.to_dict()
    assert d["matches"] == {"tp": 1, "fp": 1, "missed": 1} and len(d["per_part"]["names"]) == K
    assert "mean" in r.table()


def test_metric_config_validation():
    with pytest.raises(ValueError):
        MetricConfig(pck3d_thresh=0)
    with pytest.raises(ValueError):
        MetricConfig(match_iou=1.5)
