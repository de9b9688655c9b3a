"""Synthetic depth scenes of capsule figures and an oracle map predictor.

Figures are articulated stick figures whose limbs are capsules (segment-swept
spheres), so every depth pixel is an exact ray/capsule intersection. The
oracle stands in for a trained network: it emits ground-truth maps, optionally
perturbed by seeded noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .core import (
    BBOX_MARGIN,
    DEFAULT_CAMERA,
    ITOP_SKELETON,
    CameraIntrinsics,
    DepthImage,
    Pose,
    Skeleton,
    bbox_from_pose,
    iou,
)
from .encoder import BOX_ATTRS, GLOBAL_STRIDE, OBJ, PART_ATTRS, EncodedMaps, EncoderConfig, GlobalPoseMap, GridSpec, PartMaps, best_anchor
from .loss import StagePredictions

VIS_TOL = 0.025


def make_rng(seed: int) -> np.random.Generator:
    # Philox is counter-based: streams are reproducible regardless of threading.
    return np.random.Generator(np.random.Philox(seed))


@dataclass(frozen=True, eq=False)
class FigureSpec:
    joints: np.ndarray  # (K, 3) meters, camera frame
    radii: np.ndarray  # (E,) meters, one per skeleton edge

    def __post_init__(self):
        j = np.array(self.joints, dtype=np.float64)
        r = np.array(self.radii, dtype=np.float64)
        if j.ndim != 2 or j.shape[1] != 3:
            raise ValueError("joints must be (K, 3)")
        if np.any(r <= 0):
            raise ValueError("limb radii must be positive")
        j.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "joints", j)
        object.__setattr__(self, "radii", r)

    def to_dict(self) -> dict:
        return {"joints": self.joints.tolist(), "radii": self.radii.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "FigureSpec":
        return cls(np.array(d["joints"]), np.array(d["radii"]))


@dataclass(frozen=True)
class OracleNoise:
    heat_sigma: float = 0.0
    depth_sigma: float = 0.0
    disp_sigma: float = 0.0
    pose_sigma: float = 0.0
    confusion_gain: float = 0.0
    confusion_window: int = 3
    seed: int = 0

    def __post_init__(self):
        for name in ("heat_sigma", "depth_sigma", "disp_sigma", "pose_sigma", "confusion_gain"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.confusion_window < 0:
            raise ValueError("confusion_window must be >= 0")


# --- rendering ---------------------------------------------------------------


def _sphere_hit(d: np.ndarray, c: np.ndarray, r: float) -> np.ndarray:
    """Nearest ray parameter for unit rays ``d`` (N, 3) from the origin; inf on miss."""
    b = d @ c
    disc = b * b - (c @ c - r * r)
    t = b - np.sqrt(np.maximum(disc, 0.0))
    return np.where((disc >= 0) & (t > 0), t, np.inf)


def _cylinder_hit(d: np.ndarray, a: np.ndarray, b: np.ndarray, r: float) -> np.ndarray:
    axis = b - a
    length = float(np.linalg.norm(axis))
    if length < 1e-12:
        return np.full(len(d), np.inf)
    n = axis / length
    m = d - np.outer(d @ n, n)
    q = -(a - (a @ n) * n)
    qa = m @ q
    mm = np.einsum("ij,ij->i", m, m)
    disc = qa * qa - mm * (q @ q - r * r)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (-qa - np.sqrt(np.maximum(disc, 0.0))) / mm
    s = t * (d @ n) - a @ n
    ok = (disc >= 0) & (mm > 1e-15) & (t > 0) & (s >= 0) & (s <= length)
    return np.where(ok, t, np.inf)


def _capsule_depth(
    rays: np.ndarray, a: np.ndarray, b: np.ndarray, r: float
) -> np.ndarray:
    """Camera-frame Z of the nearest hit per ray (rays are unit vectors)."""
    t = np.minimum(_sphere_hit(rays, a, r), _sphere_hit(rays, b, r))
    t = np.minimum(t, _cylinder_hit(rays, a, b, r))
    return t * rays[:, 2]


def _pixel_window(a, b, r, cam: CameraIntrinsics, w: int, h: int):
    """Pixel bounds covering a capsule's projection, or the full frame."""
    zmin = min(a[2], b[2]) - r
    if zmin <= 1e-3:
        return 0, w, 0, h
    xs, ys = [], []
    for p in (a, b):
        xs.append(cam.cx + cam.fx * p[0] / p[2])
        ys.append(cam.cy + cam.fy * p[1] / p[2])
    # generous pad: sphere silhouettes grow near the frame edges
    pad_x = 1.5 * cam.fx * r / zmin + 2
    pad_y = 1.5 * cam.fy * r / zmin + 2
    x0 = max(int(math.floor(min(xs) - pad_x)), 0)
    x1 = min(int(math.ceil(max(xs) + pad_x)) + 1, w)
    y0 = max(int(math.floor(min(ys) - pad_y)), 0)
    y1 = min(int(math.ceil(max(ys) + pad_y)) + 1, h)
    return x0, x1, y0, y1


def render_figure_depth(
    fig: FigureSpec, skeleton: Skeleton, cam: CameraIntrinsics, w: int, h: int
) -> np.ndarray:
    """Float Z (meters) of a single figure; inf where it is not hit."""
    out = np.full((h, w), np.inf)
    for (i, j), r in zip(skeleton.edges, fig.radii):
        a, b = fig.joints[i], fig.joints[j]
        x0, x1, y0, y1 = _pixel_window(a, b, r, cam, w, h)
        if x0 >= x1 or y0 >= y1:
            continue
        vs, us = np.mgrid[y0:y1, x0:x1].astype(np.float64)
        rays = np.stack([(us - cam.cx) / cam.fx, (vs - cam.cy) / cam.fy, np.ones_like(us)], axis=-1)
        rays = rays.reshape(-1, 3)
        rays /= np.linalg.norm(rays, axis=1, keepdims=True)
        z = _capsule_depth(rays, a, b, float(r)).reshape(y1 - y0, x1 - x0)
        np.minimum(out[y0:y1, x0:x1], z, out=out[y0:y1, x0:x1])
    return out


def joint_radii(fig: FigureSpec, skeleton: Skeleton) -> np.ndarray:
    rad = np.zeros(skeleton.k)
    for (i, j), r in zip(skeleton.edges, fig.radii):
        rad[i] = max(rad[i], r)
        rad[j] = max(rad[j], r)
    return rad


def render_scene(
    figures: Sequence[FigureSpec],
    cam: CameraIntrinsics = DEFAULT_CAMERA,
    w: int = 224,
    h: int = 224,
    skeleton: Skeleton = ITOP_SKELETON,
    tol: float = VIS_TOL,
) -> tuple[DepthImage, list[Pose], list[np.ndarray]]:
    """Ray-cast figures into a depth image (integer mm), GT poses and masks.

    Each figure's mask holds the pixels it wins in the z-buffer (ties go to
    the lower index). A joint is labeled when it projects inside the frame
    and is visible when the rendered surface at its pixel is not nearer than
    its own limb surface (joint depth minus limb radius) by more than ``tol``.
    """
    per_fig = [render_figure_depth(f, skeleton, cam, w, h) for f in figures]
    if per_fig:
        stack = np.stack(per_fig)
        owner = np.argmin(stack, axis=0)
        zbuf = np.take_along_axis(stack, owner[None], axis=0)[0]
    else:
        owner = np.zeros((h, w), dtype=np.int64)
        zbuf = np.full((h, w), np.inf)
    hit = np.isfinite(zbuf)
    depth_mm = np.where(hit, np.rint(np.where(hit, zbuf, 0.0) * 1000.0), 0.0)
    masks = [hit & (owner == i) for i in range(len(figures))]

    poses = []
    for fig in figures:
        J = fig.joints
        rad = joint_radii(fig, skeleton)
        with np.errstate(divide="ignore", invalid="ignore"):
            x = cam.cx + cam.fx * J[:, 0] / J[:, 2]
            y = cam.cy + cam.fy * J[:, 1] / J[:, 2]
        labeled = (J[:, 2] > 0) & (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
        xy = np.where(labeled[:, None], np.stack([x, y], axis=1), 0.0)
        visible = np.zeros(len(J), dtype=bool)
        for j in np.nonzero(labeled)[0]:
            px, py = math.floor(xy[j, 0] + 0.5), math.floor(xy[j, 1] + 0.5)
            visible[j] = zbuf[py, px] >= J[j, 2] - rad[j] - tol
        poses.append(Pose(xy, np.where(labeled, J[:, 2], 0.0), visible, labeled))
    return DepthImage(depth_mm), poses, masks


# --- random figures ----------------------------------------------------------

# ITOP-ordered rest pose relative to the torso joint, meters, y down.
_REST = np.array(
    [
        [0.0, -0.62, 0.0],  # head
        [0.0, -0.40, 0.0],  # neck
        [-0.19, -0.37, 0.0],  # r_shoulder
        [0.19, -0.37, 0.0],  # l_shoulder
        [0.0, 0.0, 0.0],  # r_elbow (set by limb chain)
        [0.0, 0.0, 0.0],  # l_elbow
        [0.0, 0.0, 0.0],  # r_hand
        [0.0, 0.0, 0.0],  # l_hand
        [0.0, 0.0, 0.0],  # torso
        [-0.11, 0.16, 0.0],  # r_hip
        [0.11, 0.16, 0.0],  # l_hip
        [0.0, 0.0, 0.0],  # r_knee
        [0.0, 0.0, 0.0],  # l_knee
        [0.0, 0.0, 0.0],  # r_foot
        [0.0, 0.0, 0.0],  # l_foot
    ]
)
_RADII = np.array([0.09, 0.06, 0.06, 0.05, 0.05, 0.045, 0.045, 0.13, 0.11, 0.11, 0.07, 0.07, 0.055, 0.055])
_UPPER_ARM, _FOREARM, _THIGH, _SHIN = 0.29, 0.27, 0.43, 0.43


def _rot_x(t):
    c, s = math.cos(t), math.sin(t)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def _rot_y(t):
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def _rot_z(t):
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def _limb(rng, side: float, spread: float, swing: tuple[float, float], bend: float, jitter: float):
    """Directions of the proximal and distal segments of one limb."""
    down = np.array([0.0, 1.0, 0.0])
    abduct = side * rng.uniform(0.0, spread * jitter + 0.05)
    flex = rng.uniform(swing[0] * jitter, swing[1] * jitter)
    upper = _rot_x(flex) @ _rot_z(-abduct) @ down
    lower = _rot_x(flex + bend * rng.uniform(0.0, jitter)) @ _rot_z(-abduct) @ down
    return upper, lower


def random_figure(rng: np.random.Generator, pose_jitter: float = 1.0) -> np.ndarray:
    """Joint positions (K, 3) of a random figure in its body frame."""
    J = _REST.copy()
    # +x is the figure's left (image right) when facing the camera
    for side, sh, el, ha in ((-1.0, 2, 4, 6), (1.0, 3, 5, 7)):
        up, lo = _limb(rng, side, 1.6, (-1.3, 0.4), -1.6, pose_jitter)
        J[el] = J[sh] + _UPPER_ARM * up
        J[ha] = J[el] + _FOREARM * lo
    for side, hip, kn, ft in ((-1.0, 9, 11, 13), (1.0, 10, 12, 14)):
        up, lo = _limb(rng, side, 0.35, (-0.5, 0.3), 1.0, pose_jitter)
        J[kn] = J[hip] + _THIGH * up
        J[ft] = J[kn] + _SHIN * lo
    J[0] = J[1] + _rot_x(rng.uniform(-0.3, 0.3) * pose_jitter) @ (J[0] - J[1])
    scale = rng.uniform(0.9, 1.1)
    yaw = rng.uniform(-1.0, 1.0) * pose_jitter * math.pi / 3
    return scale * (J @ _rot_y(yaw).T)


def _place(body: np.ndarray, rng, cam: CameraIntrinsics, w: int, h: int, depth_range) -> np.ndarray:
    z = rng.uniform(*depth_range)
    u = rng.uniform(0.15 * w, 0.85 * w)
    v = rng.uniform(0.4 * h, 0.6 * h)
    root = np.array([(u - cam.cx) * z / cam.fx, (v - cam.cy) * z / cam.fy, z])
    return body + root


def _projected_pose(joints: np.ndarray, cam: CameraIntrinsics, w: int, h: int) -> Pose:
    x = cam.cx + cam.fx * joints[:, 0] / joints[:, 2]
    y = cam.cy + cam.fy * joints[:, 1] / joints[:, 2]
    lab = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
    return Pose(np.stack([x, y], axis=1), joints[:, 2], lab, lab)


def _anchor_slot(box, w: int, h: int, anchors=EncoderConfig().anchors):
    # (anchor, cell) a pose binds to in the global map; two poses may not share one
    grid = GridSpec.for_image(w, h, GLOBAL_STRIDE)
    cx, cy = box.center
    gx = min(max(math.floor(cx / GLOBAL_STRIDE), 0), grid.gw - 1)
    gy = min(max(math.floor(cy / GLOBAL_STRIDE), 0), grid.gh - 1)
    return best_anchor(box, (gx, gy), anchors), gy, gx


def _part_gap(a: Pose, b: Pose) -> float:
    both = a.labeled & b.labeled
    if not both.any():
        return math.inf
    return float(np.min(np.linalg.norm(a.xy[both] - b.xy[both], axis=1)))


def sample_random_scene(
    rng_seed: int,
    n_figures: int,
    pose_jitter: float = 1.0,
    cam: CameraIntrinsics = DEFAULT_CAMERA,
    w: int = 224,
    h: int = 224,
    force_overlap: bool = False,
    max_iou: float = 0.15,
    depth_range: tuple[float, float] = (1.5, 4.5),
    max_attempts: int = 400,
    min_part_gap: float = 0.0,
) -> list[FigureSpec]:
    """Seeded random figures in the camera frustum.

    Without ``force_overlap`` figures are rejection-sampled so their 2D
    boxes overlap by at most ``max_iou``; a figure that cannot be placed is
    dropped. ``min_part_gap`` (pixels) additionally keeps every labeled part
    that far from the same part of any other figure. With ``force_overlap``
    every later figure stands 0.6-1.2 m behind the first
    and within a few pixels of it laterally, so their silhouettes intersect.
    """
    if n_figures < 0:
        raise ValueError("n_figures must be >= 0")
    rng = make_rng(rng_seed)
    figures: list[FigureSpec] = []
    boxes = []
    slots: set = set()
    placed: list[Pose] = []
    for i in range(n_figures):
        for _ in range(max_attempts):
            body = random_figure(rng, pose_jitter)
            if force_overlap and figures:
                lead = figures[0].joints
                z = lead[8, 2] + rng.uniform(0.6, 1.2)
                du = rng.uniform(-12.0, 12.0)
                u = cam.cx + cam.fx * lead[8, 0] / lead[8, 2] + du
                v = cam.cy + cam.fy * lead[8, 1] / lead[8, 2]
                joints = body + np.array([(u - cam.cx) * z / cam.fx, (v - cam.cy) * z / cam.fy, z])
            else:
                joints = _place(body, rng, cam, w, h, depth_range)
            if np.any(joints[:, 2] < 0.3):
                continue
            pose = _projected_pose(joints, cam, w, h)
            if pose.labeled.sum() < 3:
                continue
            box = bbox_from_pose(pose, BBOX_MARGIN)
            cx, cy = box.center
            if not (0 <= cx < w and 0 <= cy < h):
                continue
            if not force_overlap and any(iou(box, b) > max_iou for b in boxes):
                continue
            if min_part_gap > 0 and any(_part_gap(pose, o) < min_part_gap for o in placed):
                continue
            slot = _anchor_slot(box, w, h)
            if not force_overlap and slot in slots:
                continue
            figures.append(FigureSpec(joints, _RADII.copy()))
            boxes.append(box)
            slots.add(slot)
            placed.append(pose)
            break
    return figures


# --- oracle -----------------------------------------------------------------


def tpdf_discontinuity(X: np.ndarray, Y: np.ndarray, Wt: np.ndarray, window: int) -> np.ndarray:
    """Largest disagreement between supervised displacement targets near each cell.

    The target of a supervised cell (u, v) is the point (u + X, v + Y). For
    every cell this returns the largest distance between two targets found
    within a (2 * window + 1)^2 neighbourhood; 0 where all agree.
    """
    k, gh, gw = X.shape
    v, u = np.mgrid[0:gh, 0:gw]
    out = np.zeros((k, gh, gw))
    size = 2 * window + 1
    for j in range(k):
        sup = Wt[j] > 0
        if not sup.any():
            continue
        tx = np.round((u + X[j])[sup], 6)
        ty = np.round((v + Y[j])[sup], 6)
        targets, inverse = np.unique(np.stack([tx, ty], axis=1), axis=0, return_inverse=True)
        if len(targets) < 2:
            continue
        near = []
        for t in range(len(targets)):
            present = np.zeros((gh, gw), dtype=bool)
            idx = np.nonzero(sup)
            sel = inverse.reshape(-1) == t
            present[idx[0][sel], idx[1][sel]] = True
            near.append(ndimage.maximum_filter(present, size=size, mode="constant"))
        for a in range(len(targets)):
            for b in range(a + 1, len(targets)):
                gap = float(np.linalg.norm(targets[a] - targets[b]))
                both = near[a] & near[b]
                out[j][both] = np.maximum(out[j][both], gap)
    return out


def oracle_predict(gt: EncodedMaps, noise: OracleNoise = OracleNoise(), n_stages: int = 2) -> StagePredictions:
    """Ground-truth maps copied into every stage, plus seeded noise.

    Families: heat (H), depth (D), disp (X, Y), pose (per-part dx, dy of P),
    and confusion (X, Y noise scaled by :func:`tpdf_discontinuity`). H and the
    objectness and visibility channels of P are clamped to [0, 1]. Draw order
    is fixed, so equal seeds give equal standard normals across settings.
    """
    rng = make_rng(noise.seed)
    p = gt.parts
    base = {"H": p.H, "D": p.D, "X": p.X, "Y": p.Y}
    disc = None
    if noise.confusion_gain > 0:
        disc = tpdf_discontinuity(p.X, p.Y, p.Wt, noise.confusion_window)
    stages = []
    for _ in range(n_stages):
        st = {}
        st["H"] = np.clip(base["H"] + noise.heat_sigma * rng.standard_normal(p.H.shape), 0.0, 1.0)
        st["D"] = base["D"] + noise.depth_sigma * rng.standard_normal(p.D.shape)
        nx = rng.standard_normal(p.X.shape)
        ny = rng.standard_normal(p.Y.shape)
        cx = rng.standard_normal(p.X.shape)
        cy = rng.standard_normal(p.Y.shape)
        st["X"] = base["X"] + noise.disp_sigma * nx
        st["Y"] = base["Y"] + noise.disp_sigma * ny
        if disc is not None:
            st["X"] = st["X"] + noise.confusion_gain * disc * cx
            st["Y"] = st["Y"] + noise.confusion_gain * disc * cy
        stages.append(st)
    P = gt.glob.P.copy()
    A, C, gh, gw = P.shape
    k = (C - BOX_ATTRS) // PART_ATTRS
    pn = rng.standard_normal((A, k, 2, gh, gw))
    for j in range(k):
        c = BOX_ATTRS + PART_ATTRS * j
        P[:, c : c + 2] += noise.pose_sigma * pn[:, j]
        P[:, c + 3] = np.clip(P[:, c + 3], 0.0, 1.0)
    P[:, OBJ] = np.clip(P[:, OBJ], 0.0, 1.0)
    return StagePredictions(stages, P)


def predicted_maps(pred: StagePredictions, gt: EncodedMaps) -> EncodedMaps:
    """Last-stage part maps and the global map packaged for the decoder."""
    last = pred.last()
    parts = PartMaps(last["H"], last["D"], last["X"], last["Y"], gt.parts.Wd, gt.parts.Wt)
    return EncodedMaps(parts, GlobalPoseMap(pred.P, gt.glob.Wp))
