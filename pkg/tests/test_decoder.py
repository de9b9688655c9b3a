import math

import numpy as np
import pytest

from popparts.core import BBox, DepthImage, Detection, Pose
from popparts.decoder import FusionConfig, decode_full, decode_global_poses, fuse_part, nms, resolve_mode
from popparts.encoder import EncodedMaps, EncoderConfig, GlobalPoseMap, PartMaps, encode_scene

CFG = FusionConfig()


def maps(H, X=None, Y=None, D=None):
    H = np.asarray(H, float)[None]
    z = np.zeros_like(H)
    bg = 1 - H
    return PartMaps(
        np.concatenate([H, bg]),
        z + 2.0 if D is None else np.asarray(D, float)[None],
        z if X is None else np.asarray(X, float)[None],
        z if Y is None else np.asarray(Y, float)[None],
        z,
        z,
    )


def det(x0, y0, x1, y1, score):
    return Detection(BBox(x0, y0, x1, y1), score, Pose.from_arrays([[x0, y0]], [1.0]))


def test_fusion_config_validation():
    with pytest.raises(ValueError):
        FusionConfig(conf_thresh=1.5)
    with pytest.raises(ValueError):
        FusionConfig(mask_half=-1)


def test_nms_examples():
    a = det(0, 0, 10, 10, 0.9)
    assert len(nms([a, det(0, 0, 10, 10, 0.8)], 0.45)) == 1
    # IOU 0.3 < 0.45 keeps both
    b = det(0, 0, 10, 10, 0.9)
    c = det(10 * (1 - 2 * 0.3 / 1.3), 0, 10 * (1 - 2 * 0.3 / 1.3) + 10, 10, 0.8)
    from popparts.core import iou

    assert iou(b.bbox, c.bbox) == pytest.approx(0.3)
    assert len(nms([b, c], 0.45)) == 2
    assert nms([c, b], 0.45)[0] is b


def test_decode_single_anchor():
    P = np.zeros((2, 13, 4, 4))
    P[1, :5, 2, 1] = [0.25, 0.75, math.log(2), 0.0, 0.9]
    P[1, 5:, 2, 1] = [0.5, -0.5, 2.5, 0.8, 0.0, 0.0, 1.5, 0.1]
    dets = decode_global_poses(GlobalPoseMap(P, P * 0), CFG, ((6, 12), (3, 6)))
    assert len(dets) == 1
    d = dets[0]
    assert d.bbox.center == (1.25 * 16, 2.75 * 16)
    assert d.bbox.width == pytest.approx(6 * 16) and d.bbox.height == pytest.approx(6 * 16)
    assert d.pose.xy.tolist() == [[2.0 * 16, 2.0 * 16], [1.5 * 16, 2.5 * 16]]  # offsets from cell center
    assert d.pose.z.tolist() == [2.5, 1.5]
    assert d.vis.tolist() == [0.8, 0.1] and d.score == 0.9


def test_decode_empty():
    P = np.zeros((2, 9, 3, 3))  # K = 1
    assert decode_global_poses(P, CFG, ((6, 12), (3, 6))) == []
    m = EncodedMaps(maps(np.zeros((6, 6))), GlobalPoseMap(P, P))
    assert decode_full(m, CFG, ((6, 12), (3, 6))) == []


def test_fuse_zero_field():
    H = np.ones((10, 10))
    fp = fuse_part((4.7, 5.2, 1.0), 0, maps(H), CFG)
    assert (fp.x, fp.y, fp.z, fp.mode) == (4 * 8, 5 * 8, 2.0, "B")


def test_fuse_one_hot():
    H = np.zeros((10, 10))
    H[6, 3] = 0.7
    X = np.full((10, 10), 0.3)
    Y = np.full((10, 10), -0.2)
    D = np.arange(100.0).reshape(10, 10)
    fp = fuse_part((4.2, 5.4, 1.0), 0, maps(H, X, Y, D), CFG)
    assert fp.x == pytest.approx((3 + 0.3) * 8) and fp.y == pytest.approx((6 - 0.2) * 8)
    assert fp.z == pytest.approx(D[6, 3])


def test_fuse_symmetric_mask_matches_weighted_sum():
    """With weights symmetric about the mask center both readings of the update agree."""
    rng = np.random.default_rng(0)
    w = rng.random((5, 5))
    w = (w + w[::-1] + w[:, ::-1] + w[::-1, ::-1]) / 4
    H = np.zeros((12, 12))
    X = rng.uniform(-2, 2, (12, 12))
    Y = rng.uniform(-2, 2, (12, 12))
    D = rng.uniform(1, 4, (12, 12))
    # global part at (5.3, 6.6); field there shifts it to (6.x, 7.x)
    X[7, 5], Y[7, 5] = 1.1, 0.9
    fx, fy = math.floor(5.3 + 1.1), math.floor(6.6 + 0.9)
    H[fy - 2 : fy + 3, fx - 2 : fx + 3] = w
    sl = (slice(fy - 2, fy + 3), slice(fx - 2, fx + 3))
    x_lit = fx + (w * X[sl]).sum() / w.sum()
    y_lit = fy + (w * Y[sl]).sum() / w.sum()
    z_lit = (w * D[sl]).sum() / w.sum()
    fp = fuse_part((5.3, 6.6, 0.0), 0, maps(H, X, Y, D), CFG)
    assert fp.x == pytest.approx(x_lit * 8, abs=1e-9)
    assert fp.y == pytest.approx(y_lit * 8, abs=1e-9)
    assert fp.z == pytest.approx(z_lit, abs=1e-12)


def test_fuse_brute_force():
    rng = np.random.default_rng(1)
    for _ in range(200):
        gh, gw = rng.integers(3, 15, 2)
        H, X, Y, D = rng.random((gh, gw)), rng.uniform(-2, 2, (gh, gw)), rng.uniform(-2, 2, (gh, gw)), rng.random((gh, gw))
        gx, gy = rng.uniform(-2, gw + 1), rng.uniform(-2, gh + 1)
        half = int(rng.integers(0, 4))
        cfg = FusionConfig(mask_half=half)
        fp = fuse_part((gx, gy, 1.0), 0, maps(H, X, Y, D), cfg)
        cx = min(max(math.floor(gx + 0.5), 0), gw - 1)
        cy = min(max(math.floor(gy + 0.5), 0), gh - 1)
        bx, by = math.floor(gx + X[cy, cx]), math.floor(gy + Y[cy, cx])
        sw = sx = sy = sz = 0.0
        for v in range(by - half, by + half + 1):
            for u in range(bx - half, bx + half + 1):
                if 0 <= u < gw and 0 <= v < gh:
                    sw += H[v, u]
                    sx += H[v, u] * (u + X[v, u])
                    sy += H[v, u] * (v + Y[v, u])
                    sz += H[v, u] * D[v, u]
        if sw < 1e-8:
            assert fp.mode == "A"
            continue
        assert fp.mode == "B"
        assert fp.x == pytest.approx(sx / sw * 8) and fp.y == pytest.approx(sy / sw * 8)
        assert fp.z == pytest.approx(sz / sw)
        # votes stay within the mask plus one displacement
        assert abs(fp.x / 8 - bx) <= half + 2 + 1e-9 and abs(fp.y / 8 - by) <= half + 2 + 1e-9


def test_fuse_falls_back_without_support():
    fp = fuse_part((4.0, 4.0, 1.5), 0, maps(np.zeros((10, 10))), CFG)
    assert (fp.x, fp.y, fp.z, fp.mode) == (32, 32, 1.5, "A")


def test_resolve_mode_examples():
    quiet = maps(np.zeros((10, 10)))
    H = np.zeros((10, 10))
    H[5, 5] = 0.9
    loud = maps(H)
    assert resolve_mode((5, 5), 0.0, 0, quiet, CFG) == "A"
    assert resolve_mode((5, 5), 0.0, 0, loud, CFG) == "B"
    assert resolve_mode((5, 5), 0.9, 0, loud, CFG) == "C"
    assert resolve_mode((5, 5), 0.9, 0, quiet, CFG) == "C"


def test_out_of_grid_part_keeps_coordinates():
    H = np.zeros((10, 10))
    d = Detection(BBox(0, 0, 1, 1), 1.0, Pose.from_arrays([[-40.0, 300.0]], [2.0]), vis=np.zeros(1))
    from popparts.decoder import fuse_detection

    out = fuse_detection(d, maps(H), CFG)
    assert out.modes == ("A",) and out.pose.xy.tolist() == [[-40.0, 300.0]]


def test_occluded_hand_uses_global_depth():
    """Two people overlap; the rear person's right hand hides behind the front one's."""
    k = 15
    rng = np.random.default_rng(3)
    front_xy = np.column_stack([np.linspace(60, 100, k), np.linspace(40, 180, k)])
    rear_xy = front_xy + [60, 5]
    rear_xy[6] = front_xy[6] + [1.5, 1.0]  # right hands nearly coincide
    front = Pose.from_arrays(front_xy, np.full(k, 2.0))
    rear = Pose.from_arrays(rear_xy, np.full(k, 2.8) + rng.uniform(0, 0.01, k))
    gt = encode_scene([front, rear], DepthImage.zeros(224, 224), EncoderConfig(), k)
    dets = decode_full(gt, CFG, EncoderConfig().anchors)
    assert len(dets) == 2
    back = min(dets, key=lambda d: np.abs(d.pose.xy - rear.xy).max())
    assert back.modes[6] == "C"
    assert back.pose.z[6] == pytest.approx(rear.z[6], abs=1e-12)
    assert np.abs(back.pose.xy[6] - rear.xy[6]).max() < 1e-9
    frontd = min(dets, key=lambda d: np.abs(d.pose.xy - front.xy).max())
    assert frontd.modes[6] == "B" and frontd.pose.z[6] == pytest.approx(2.0, abs=1e-3)


def test_noise_free_scene_recovers_parts():
    k = 15
    xy = np.column_stack([np.linspace(70, 130, k), np.linspace(30, 200, k)]) + 0.37
    p = Pose.from_arrays(xy, np.linspace(2.0, 2.5, k))
    gt = encode_scene([p], DepthImage.zeros(224, 224), EncoderConfig(), k)
    (d,) = decode_full(gt, CFG, EncoderConfig().anchors)
    assert np.abs(d.pose.xy - p.xy).max() <= 4.0
    # neighbouring disks overlap, so the z-buffer mixes in adjacent parts (step 0.036 m)
    assert np.abs(d.pose.z - p.z).max() <= 0.01
    (g,) = decode_full(gt, CFG, EncoderConfig().anchors, force_mode="A")
    assert all(m == "A" for m in g.modes) and np.abs(g.pose.xy - p.xy).max() < 1e-9
    with pytest.raises(ValueError):
        decode_full(gt, CFG, EncoderConfig().anchors, force_mode="Z")
