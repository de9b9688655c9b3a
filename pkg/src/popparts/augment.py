"""Geometric augmentation plus background and multi-person compositing.

Compositing follows the z-buffer rule: at each pixel the nearest valid depth
wins, 0 counts as no reading.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import CameraIntrinsics, DepthImage, Pose, Skeleton

DEFAULT_MAX_BODIES = 2


@dataclass(frozen=True, eq=False)
class SegmentedSample:
    depth: DepthImage
    mask: np.ndarray
    pose: Pose

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        if m.shape != self.depth.data.shape:
            raise ValueError(f"mask {m.shape} does not match depth {self.depth.data.shape}")
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)


def hflip(img: DepthImage, poses: Sequence[Pose], skeleton: Skeleton) -> tuple[DepthImage, list[Pose]]:
    """Mirror about the vertical image axis and swap left/right parts.

    Labels stay consistent in 3D with the mirrored camera from
    :func:`flip_camera`, under which each part's X is negated.
    """
    w = img.width
    perm = skeleton.flip_permutation()
    out = []
    for p in poses:
        xy = p.xy.copy()
        xy[:, 0] = (w - 1) - xy[:, 0]
        out.append(Pose(xy[perm], p.z[perm], p.visible[perm], p.labeled[perm]))
    return DepthImage(img.data[:, ::-1]), out


def flip_camera(cam: CameraIntrinsics, width: int) -> CameraIntrinsics:
    return CameraIntrinsics(cam.fx, cam.fy, (width - 1) - cam.cx, cam.cy)


def _rotation(angle: float) -> tuple[float, float]:
    quarter = angle / 90.0
    if quarter == round(quarter):
        return ((1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0))[int(round(quarter)) % 4]
    t = math.radians(angle)
    return math.cos(t), math.sin(t)


def rotate_crop(
    img: DepthImage,
    poses: Sequence[Pose],
    angle: float,
    crop_box: tuple[float, float, float, float],
    out_size: tuple[int, int],
) -> tuple[DepthImage, list[Pose]]:
    """Rotate about the image center, crop ``(x0, y0, x1, y1)``, resize to ``(w, h)``.

    Positive angles turn the content counter-clockwise on screen, so a 90
    degree turn of a square image sends (x, y) to (y, w - 1 - x). Sampling is
    nearest-neighbour; pixels sourced from outside the image read 0. Depth
    values are untouched; parts leaving the output frame lose their label.
    """
    x0, y0, x1, y1 = crop_box
    ow, oh = out_size
    if x1 <= x0 or y1 <= y0 or ow <= 0 or oh <= 0:
        raise ValueError("degenerate crop")
    w, h = img.width, img.height
    ccx, ccy = (w - 1) / 2.0, (h - 1) / 2.0
    c, s = _rotation(angle)
    sx, sy = ow / (x1 - x0), oh / (y1 - y0)

    # output pixel -> rotated frame -> source via the inverse rotation
    oy, ox = np.mgrid[0:oh, 0:ow].astype(np.float64)
    rx = x0 + ox / sx - ccx
    ry = y0 + oy / sy - ccy
    src_x = np.floor(ccx + c * rx - s * ry + 0.5).astype(np.int64)
    src_y = np.floor(ccy + s * rx + c * ry + 0.5).astype(np.int64)
    ok = (src_x >= 0) & (src_x < w) & (src_y >= 0) & (src_y < h)
    out = np.zeros((oh, ow))
    out[ok] = img.data[src_y[ok], src_x[ok]]

    new_poses = []
    for p in poses:
        dx = p.xy[:, 0] - ccx
        dy = p.xy[:, 1] - ccy
        px = ((ccx + c * dx + s * dy) - x0) * sx
        py = ((ccy - s * dx + c * dy) - y0) * sy
        inside = (px >= 0) & (px <= ow - 1) & (py >= 0) & (py <= oh - 1)
        new_poses.append(Pose(np.stack([px, py], axis=1), p.z, p.visible & inside, p.labeled & inside))
    return DepthImage(out), new_poses


def composite_background(fg: SegmentedSample, bg: DepthImage) -> tuple[DepthImage, Pose]:
    if fg.depth.data.shape != bg.data.shape:
        raise ValueError(f"dimension mismatch: {fg.depth.data.shape} vs {bg.data.shape}")
    return DepthImage(np.where(fg.mask, fg.depth.data, bg.data)), fg.pose


def _pixel(x: float, y: float, w: int, h: int):
    px, py = math.floor(x + 0.5), math.floor(y + 0.5)
    if 0 <= px < w and 0 <= py < h:
        return px, py
    return None


def composite_multiperson(
    samples: Sequence[SegmentedSample],
    bg: DepthImage,
    tol: float = 0.025,
    max_bodies: int | None = DEFAULT_MAX_BODIES,
    bg_in_zbuffer: bool = False,
) -> tuple[DepthImage, list[Pose]]:
    """Z-buffer composite of human segments over a background.

    Segments resolve among themselves by minimum depth and then replace the
    background, so a single segment reduces to :func:`composite_background`.
    With ``bg_in_zbuffer`` the background takes part in the minimum too.

    A part is re-flagged occluded when the composite at its pixel is nearer
    than its own segment's surface there by more than ``tol`` meters (the
    joint itself sits inside the body, so its own surface is the reference;
    the joint depth is used when the segment has no reading at that pixel).
    Equal depths keep the earlier sample.
    """
    if max_bodies is not None and len(samples) > max_bodies:
        raise ValueError(f"{len(samples)} bodies exceed the cap of {max_bodies}")
    for s in samples:
        if s.depth.data.shape != bg.data.shape:
            raise ValueError(f"dimension mismatch: {s.depth.data.shape} vs {bg.data.shape}")
    h, w = bg.data.shape
    human = np.full((h, w), np.inf)
    covered = np.zeros((h, w), dtype=bool)
    for s in samples:
        d = np.where(s.mask & (s.depth.data > 0), s.depth.data, np.inf)
        np.minimum(human, d, out=human)
        covered |= s.mask
    if bg_in_zbuffer:
        out = np.minimum(human, np.where(bg.data > 0, bg.data, np.inf))
        out = np.where(np.isfinite(out), out, 0.0)
    else:
        out = np.where(covered, np.where(np.isfinite(human), human, 0.0), bg.data)

    poses = []
    for s in samples:
        p = s.pose
        vis = p.visible.copy()
        for j in range(p.k):
            if not p.labeled[j]:
                continue
            pix = _pixel(p.xy[j, 0], p.xy[j, 1], w, h)
            if pix is None:
                continue
            px, py = pix
            own = s.depth.data[py, px] if s.mask[py, px] and s.depth.data[py, px] > 0 else p.z[j] * 1000.0
            comp = out[py, px]
            if comp > 0 and own - comp > tol * 1000.0:
                vis[j] = False
        poses.append(p.replace(visible=vis))
    return DepthImage(out), poses
