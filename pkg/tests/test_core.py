import numpy as np
import pytest
from hypothesis import given, strategies as st

from popparts.core import (
    ITOP_SKELETON,
    BBox,
    CameraIntrinsics,
    DepthImage,
    Detection,
    Pose,
    Skeleton,
    bbox_from_pose,
    iou,
)


def pose_of(points):
    pts = np.asarray(points, dtype=float)
    return Pose.from_arrays(pts, np.ones(len(pts)))


def test_bbox_single_point():
    assert bbox_from_pose(pose_of([[10, 10]])).as_list() == [10, 10, 10, 10]


def test_bbox_extremes():
    assert bbox_from_pose(pose_of([[0, 0], [10, 20]])).as_list() == [0, 0, 10, 20]


def test_bbox_margin():
    # pad = 0.1 * max(10, 20) = 2 on each side
    assert bbox_from_pose(pose_of([[0, 0], [10, 20]]), 0.1).as_list() == [-2, -2, 12, 22]


def test_bbox_ignores_unlabeled():
    p = Pose(np.array([[0, 0], [50, 50], [10, 20]]), np.ones(3), np.ones(3, bool), np.array([True, False, True]))
    assert bbox_from_pose(p).as_list() == [0, 0, 10, 20]


def test_bbox_empty_pose():
    p = Pose(np.zeros((3, 2)), np.zeros(3), np.zeros(3, bool), np.zeros(3, bool))
    with pytest.raises(ValueError, match="empty pose"):
        bbox_from_pose(p)


def test_iou_examples():
    a = BBox(0, 0, 10, 10)
    assert iou(a, a) == 1.0
    assert iou(a, BBox(20, 20, 30, 30)) == 0.0
    assert iou(a, BBox(5, 0, 15, 10)) == pytest.approx(1 / 3)
    assert iou(BBox(1, 1, 1, 1), BBox(1, 1, 1, 1)) == 0.0


boxes = st.tuples(
    st.floats(-100, 100), st.floats(-100, 100), st.floats(0, 50), st.floats(0, 50)
).map(lambda t: BBox(t[0], t[1], t[0] + t[2], t[1] + t[3]))


@given(boxes, boxes)
def test_iou_symmetric_and_bounded(a, b):
    assert iou(a, b) == iou(b, a)
    assert 0.0 <= iou(a, b) <= 1.0


@given(boxes)
def test_iou_self(a):
    if a.area > 0:
        assert iou(a, a) == pytest.approx(1.0)


@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), min_size=1, max_size=20))
def test_bbox_contains_parts(points):
    p = pose_of(points)
    box = bbox_from_pose(p)
    assert np.all(p.xy[:, 0] >= box.x_min) and np.all(p.xy[:, 0] <= box.x_max)
    assert np.all(p.xy[:, 1] >= box.y_min) and np.all(p.xy[:, 1] <= box.y_max)


def test_skeleton_validation():
    with pytest.raises(ValueError):
        Skeleton(("a", "b"), ((0, 2),), (0, 1), ())
    with pytest.raises(ValueError):
        Skeleton(("a", "b"), (), (0, 5), ())
    with pytest.raises(ValueError):
        Skeleton(("a", "b"), (), (0, 1), ((0, 3),))
    with pytest.raises(ValueError):
        Skeleton((), (), (0, 0), ())


def test_skeleton_roundtrip_and_flip():
    assert ITOP_SKELETON.k == 15
    assert Skeleton.from_dict(ITOP_SKELETON.to_dict()) == ITOP_SKELETON
    perm = ITOP_SKELETON.flip_permutation()
    assert np.array_equal(perm[perm], np.arange(15))
    assert perm[6] == 7 and perm[0] == 0


def test_skeleton_k_mismatch():
    d = ITOP_SKELETON.to_dict()
    d["k"] = 3
    with pytest.raises(ValueError):
        Skeleton.from_dict(d)


def test_camera_and_depth_validation():
    with pytest.raises(ValueError):
        CameraIntrinsics(0, 1, 0, 0)
    with pytest.raises(ValueError):
        DepthImage(np.array([[-1.0]]))
    img = DepthImage.zeros(4, 3)
    assert (img.width, img.height) == (4, 3)
    with pytest.raises(ValueError):
        img.data[0, 0] = 1


def test_pose_validation_and_json():
    with pytest.raises(ValueError):
        Pose.from_arrays([[0, 0]], [-1.0])
    p = Pose(np.array([[1.5, 2.25], [3, 4]]), np.array([2.0, 0.0]), np.array([True, False]), np.array([True, False]))
    q = Pose.from_dict(p.to_dict())
    assert q.same_as(p)


def test_detection_score_range():
    p = pose_of([[0, 0]])
    with pytest.raises(ValueError):
        Detection(BBox(0, 0, 1, 1), 1.5, p)
    d = Detection(BBox(0, 0, 1, 1), 0.5, p, modes=("B",)).to_dict()
    assert d["score"] == 0.5 and d["parts"][0]["mode"] == "B"
