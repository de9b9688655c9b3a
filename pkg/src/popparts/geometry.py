"""Pinhole projection and depth-rescaling augmentation.

Rescaling simulates moving the camera along its principal axis: a point
at depth Z0 is re-placed at Z1 = a * Z0 with the same lateral X, Y, so its
image offset from the principal point shrinks by 1/a.
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

from .core import CameraIntrinsics, DepthImage, Pose

DEFAULT_AUG_RANGE = (0.7, 1.7)


class Point3D(NamedTuple):
    X: float
    Y: float
    Z: float


def project(p: Point3D, cam: CameraIntrinsics) -> tuple[float, float]:
    X, Y, Z = p
    if Z <= 0:
        raise ValueError("behind camera")
    return cam.cx + cam.fx * X / Z, cam.cy + cam.fy * Y / Z


def backproject(x: float, y: float, z: float, cam: CameraIntrinsics) -> Point3D:
    if z <= 0:
        raise ValueError("non-positive depth")
    return Point3D((x - cam.cx) * z / cam.fx, (y - cam.cy) * z / cam.fy, z)


def backproject_array(xy: np.ndarray, z: np.ndarray, cam: CameraIntrinsics) -> np.ndarray:
    """Vectorized backprojection, (N, 2) + (N,) -> (N, 3). No depth check."""
    xy = np.asarray(xy, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    X = (xy[..., 0] - cam.cx) * z / cam.fx
    Y = (xy[..., 1] - cam.cy) * z / cam.fy
    return np.stack([X, Y, z], axis=-1)


def project_array(pts: np.ndarray, cam: CameraIntrinsics) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64)
    Z = pts[..., 2]
    return np.stack([cam.cx + cam.fx * pts[..., 0] / Z, cam.cy + cam.fy * pts[..., 1] / Z], axis=-1)


def pose_points3d(pose: Pose, cam: CameraIntrinsics) -> np.ndarray:
    return backproject_array(pose.xy, pose.z, cam)


def rescale_pose(pose: Pose, cam: CameraIntrinsics, a: float, width: int, height: int) -> Pose:
    if a <= 0:
        raise ValueError("scale must be positive")
    if a == 1:
        return pose
    c = np.array([cam.cx, cam.cy])
    xy = c + (pose.xy - c) / a
    inside = (xy[:, 0] >= 0) & (xy[:, 0] <= width - 1) & (xy[:, 1] >= 0) & (xy[:, 1] <= height - 1)
    labeled = pose.labeled & inside
    return pose.replace(xy=xy, z=pose.z * a, labeled=labeled, visible=pose.visible & inside)


def depth_rescale(
    img: DepthImage, poses: Sequence[Pose], cam: CameraIntrinsics, a: float
) -> tuple[DepthImage, list[Pose]]:
    """Inverse-warp the raster (nearest neighbour) and move labels to depth a*Z.

    Target pixels whose source falls outside the image or on an invalid
    reading become 0; disocclusions cannot be synthesized.
    """
    if a <= 0:
        raise ValueError("scale must be positive")
    if a == 1:
        return img, list(poses)
    h, w = img.height, img.width
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    sx = np.floor(cam.cx + a * (xs - cam.cx) + 0.5).astype(np.int64)
    sy = np.floor(cam.cy + a * (ys - cam.cy) + 0.5).astype(np.int64)
    ok = (sx >= 0) & (sx < w) & (sy >= 0) & (sy < h)
    out = np.zeros((h, w))
    src = img.data[sy[ok], sx[ok]]
    out[ok] = np.where(src > 0, a * src, 0.0)
    return DepthImage(out), [rescale_pose(p, cam, a, w, h) for p in poses]


def sample_scale(rng: np.random.Generator, aug_range: tuple[float, float] = DEFAULT_AUG_RANGE) -> float:
    lo, hi = aug_range
    if not 0 < lo <= hi:
        raise ValueError(f"bad augmentation range {aug_range}")
    return float(rng.uniform(lo, hi))
