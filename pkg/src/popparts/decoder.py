"""Global-pose extraction, displacement-guided fusion and conflict resolution.

Per part of each detected global pose one of three modes applies:

* ``A``: little local part evidence, keep the global estimate;
* ``B``: confident local evidence, fuse with the part maps;
* ``C``: the global pose flags the part as hidden behind a same-type part,
  keep the global estimate (the local evidence belongs to the occluder).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import BBox, Detection, Pose, iou
from .encoder import (
    BOX_ATTRS,
    GLOBAL_STRIDE,
    OBJ,
    PART_ATTRS,
    PART_STRIDE,
    EncodedMaps,
    GlobalPoseMap,
    PartMaps,
)

MODES = ("A", "B", "C")


@dataclass(frozen=True)
class FusionConfig:
    mask_half: int = 2
    conf_thresh: float = 0.2
    vis_thresh: float = 0.5
    nms_iou: float = 0.45
    obj_thresh: float = 0.5

    def __post_init__(self):
        for name in ("conf_thresh", "vis_thresh", "nms_iou", "obj_thresh"):
            val = getattr(self, name)
            if not 0.0 <= val <= 1.0:
                raise ValueError(f"{name}={val} outside [0, 1]")
        if self.mask_half < 0:
            raise ValueError("mask_half must be >= 0")


@dataclass(frozen=True)
class FusedPart:
    x: float  # px
    y: float
    z: float  # m
    mode: str


def nms(candidates: Sequence[Detection], thresh: float) -> list[Detection]:
    """Greedy NMS; candidates are ranked by score, ties by input order."""
    order = sorted(range(len(candidates)), key=lambda i: -candidates[i].score)
    kept: list[Detection] = []
    for i in order:
        c = candidates[i]
        if all(iou(c.bbox, kk.bbox) <= thresh for kk in kept):
            kept.append(c)
    return kept


def decode_global_poses(
    gmap: GlobalPoseMap | np.ndarray,
    cfg: FusionConfig,
    anchors: Sequence[tuple[float, float]],
    stride: int = GLOBAL_STRIDE,
) -> list[Detection]:
    P = gmap.P if isinstance(gmap, GlobalPoseMap) else np.asarray(gmap)
    A, C, gh, gw = P.shape
    k = (C - BOX_ATTRS) // PART_ATTRS
    cands = []
    for a, gy, gx in zip(*np.nonzero(P[:, OBJ] >= cfg.obj_thresh)):
        col = P[a, :, gy, gx]
        aw, ah = anchors[a]
        bx = (gx + col[0]) * stride
        by = (gy + col[1]) * stride
        bw = aw * math.exp(col[2]) * stride
        bh = ah * math.exp(col[3]) * stride
        parts = col[BOX_ATTRS:].reshape(k, PART_ATTRS)
        xy = np.stack([(gx + 0.5 + parts[:, 0]) * stride, (gy + 0.5 + parts[:, 1]) * stride], axis=1)
        z = parts[:, 2]
        vis = parts[:, 3].copy()
        pose = Pose(xy, np.maximum(z, 0.0), vis < cfg.vis_thresh, z > 0)
        score = float(np.clip(col[OBJ], 0.0, 1.0))
        cands.append(Detection(BBox.from_center(bx, by, bw, bh), score, pose, vis=vis))
    return nms(cands, cfg.nms_iou)


def _mask_bounds(cx: int, cy: int, half: int, gw: int, gh: int):
    return max(cx - half, 0), min(cx + half, gw - 1), max(cy - half, 0), min(cy + half, gh - 1)


def _nearest_cell(x: float, y: float, gw: int, gh: int) -> tuple[int, int]:
    gx = min(max(math.floor(x + 0.5), 0), gw - 1)
    gy = min(max(math.floor(y + 0.5), 0), gh - 1)
    return gx, gy


def fuse_part(
    gp: tuple[float, float, float],
    j: int,
    maps: PartMaps,
    cfg: FusionConfig,
    stride: int = PART_STRIDE,
) -> FusedPart:
    """Drag a global part along the displacement field, then aggregate.

    ``gp`` is (x, y) in grid coordinates plus depth in meters. The field is
    read at the nearest cell, giving the displaced point (xb, yb). Every
    cell (u, v) of the mask around (floor(xb), floor(yb)) votes for the part
    position (u + X, v + Y) and depth D, weighted by the part confidence H.
    """
    x, y, z = gp
    _, gh, gw = maps.X.shape
    cx, cy = _nearest_cell(x, y, gw, gh)
    xb = x + maps.X[j, cy, cx]
    yb = y + maps.Y[j, cy, cx]
    fx, fy = math.floor(xb), math.floor(yb)
    h = cfg.mask_half
    x0, x1, y0, y1 = max(fx - h, 0), min(fx + h, gw - 1), max(fy - h, 0), min(fy + h, gh - 1)
    if x0 > x1 or y0 > y1:
        return FusedPart(x * stride, y * stride, z, "A")
    w = maps.H[j, y0 : y1 + 1, x0 : x1 + 1]
    total = w.sum()
    if total < 1e-8:
        return FusedPart(x * stride, y * stride, z, "A")
    v, u = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
    tx = u + maps.X[j, y0 : y1 + 1, x0 : x1 + 1]
    ty = v + maps.Y[j, y0 : y1 + 1, x0 : x1 + 1]
    d = maps.D[j, y0 : y1 + 1, x0 : x1 + 1]
    xh = float((w * tx).sum() / total)
    yh = float((w * ty).sum() / total)
    zh = float((w * d).sum() / total)
    return FusedPart(xh * stride, yh * stride, zh, "B")


def resolve_mode(
    gp: tuple[float, float], vis: float, j: int, maps: PartMaps, cfg: FusionConfig
) -> str:
    if vis >= cfg.vis_thresh:
        return "C"
    _, gh, gw = maps.X.shape
    cx, cy = _nearest_cell(gp[0], gp[1], gw, gh)
    x0, x1, y0, y1 = _mask_bounds(cx, cy, cfg.mask_half, gw, gh)
    if maps.H[j, y0 : y1 + 1, x0 : x1 + 1].max() < cfg.conf_thresh:
        return "A"
    return "B"


def fuse_detection(
    det: Detection,
    maps: PartMaps,
    cfg: FusionConfig,
    force_mode: str | None = None,
    stride: int = PART_STRIDE,
) -> Detection:
    pose = det.pose
    k = pose.k
    vis = det.vis if det.vis is not None else np.zeros(k)
    xy = pose.xy.copy()
    z = pose.z.copy()
    modes = []
    for j in range(k):
        gx, gy = pose.xy[j] / stride
        mode = force_mode or resolve_mode((gx, gy), vis[j], j, maps, cfg)
        if mode == "B":
            fp = fuse_part((gx, gy, pose.z[j]), j, maps, cfg, stride)
            mode = fp.mode
            if mode == "B":
                xy[j] = fp.x, fp.y
                z[j] = fp.z
        modes.append(mode)
    fused = Pose(xy, np.maximum(z, 0.0), pose.visible, z > 0)
    return Detection(det.bbox, det.score, fused, vis=vis, modes=tuple(modes))


def decode_full(
    maps: EncodedMaps,
    cfg: FusionConfig,
    anchors: Sequence[tuple[float, float]],
    force_mode: str | None = None,
) -> list[Detection]:
    """Global poses after NMS, each part fused or kept per its mode.

    3D positions follow from :func:`popparts.geometry.pose_points3d` with the
    image intrinsics; parts whose depth is not positive come back unlabeled.
    """
    if force_mode is not None and force_mode not in MODES:
        raise ValueError(f"unknown mode {force_mode!r}")
    dets = decode_global_poses(maps.glob, cfg, anchors)
    return [fuse_detection(d, maps.parts, cfg, force_mode) for d in dets]
