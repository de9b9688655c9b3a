"""Ground-truth and weight-map generation.

Part maps live on the stride-8 grid, the anchor-based global pose map on the
stride-16 grid. A part at pixel (x, y) sits at grid coordinate (x, y) / stride;
cell (u, v) is the integer point of that lattice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import BBOX_MARGIN, BBox, DepthImage, Pose, bbox_from_pose, iou

PART_STRIDE = 8
GLOBAL_STRIDE = 16
BOX_ATTRS = 5  # tx, ty, tw, th, obj
PART_ATTRS = 4  # dx, dy, z, v
OBJ = 4
MIN_BOX = 1e-6


@dataclass(frozen=True)
class GridSpec:
    stride: int
    gw: int
    gh: int

    def __post_init__(self):
        if self.stride not in (PART_STRIDE, GLOBAL_STRIDE):
            raise ValueError(f"stride must be 8 or 16, got {self.stride}")
        if self.gw < 1 or self.gh < 1:
            raise ValueError("grid must be at least 1x1")

    @classmethod
    def for_image(cls, width: int, height: int, stride: int) -> "GridSpec":
        return cls(stride, -(-width // stride), -(-height // stride))


@dataclass(frozen=True)
class EncoderConfig:
    sigma: float = 0.5
    disk_radius: float = 2.0
    r: float = 2.0
    anchors: tuple[tuple[float, float], ...] = ((6.0, 12.0), (3.0, 6.0))
    fg_weight: float = 0.9
    bg_weight: float = 0.1
    vis_tol: float = 0.025
    bbox_margin: float = BBOX_MARGIN

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not self.r >= 1:
            raise ValueError("truncation radius must be >= 1")
        if not self.disk_radius >= 0:
            raise ValueError("disk radius must be >= 0")
        if not self.anchors:
            raise ValueError("need at least one anchor")


@dataclass(frozen=True, eq=False)
class PartMaps:
    H: np.ndarray  # (K+1, gh, gw)
    D: np.ndarray  # (K, gh, gw) meters
    X: np.ndarray  # (K, gh, gw) grid units
    Y: np.ndarray
    Wd: np.ndarray
    Wt: np.ndarray

    @property
    def k(self) -> int:
        return self.D.shape[0]


@dataclass(frozen=True, eq=False)
class GlobalPoseMap:
    P: np.ndarray  # (A, 5 + 4K, gh, gw)
    Wp: np.ndarray
    collisions: int = 0


@dataclass(frozen=True, eq=False)
class EncodedMaps:
    parts: PartMaps
    glob: GlobalPoseMap

    def tensors(self) -> dict[str, np.ndarray]:
        p = self.parts
        return {"H": p.H, "D": p.D, "X": p.X, "Y": p.Y, "Wd": p.Wd, "Wt": p.Wt,
                "P": self.glob.P, "Wp": self.glob.Wp}

    @classmethod
    def from_tensors(cls, t: dict[str, np.ndarray]) -> "EncodedMaps":
        zeros = np.zeros_like(t["D"])
        parts = PartMaps(t["H"], t["D"], t["X"], t["Y"], t.get("Wd", zeros), t.get("Wt", zeros))
        return cls(parts, GlobalPoseMap(t["P"], t.get("Wp", np.zeros_like(t["P"]))))


def part_channel(j: int) -> int:
    return BOX_ATTRS + PART_ATTRS * j


def _instances(poses: Sequence[Pose], j: int, stride: int) -> tuple[np.ndarray, np.ndarray]:
    """Grid positions (n, 2) and depths (n,) of labeled instances of part j."""
    pts = [(p.xy[j] / stride, p.z[j]) for p in poses if p.labeled[j]]
    if not pts:
        return np.zeros((0, 2)), np.zeros(0)
    return np.array([q for q, _ in pts]), np.array([z for _, z in pts])


def _cell_grid(grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    v, u = np.mgrid[0 : grid.gh, 0 : grid.gw].astype(np.float64)
    return u, v


def encode_heatmaps(poses: Sequence[Pose], grid: GridSpec, cfg: EncoderConfig, k: int) -> np.ndarray:
    u, v = _cell_grid(grid)
    H = np.zeros((k + 1, grid.gh, grid.gw))
    for j in range(k):
        q, _ = _instances(poses, j, grid.stride)
        for qx, qy in q:
            g = np.exp(-((u - qx) ** 2 + (v - qy) ** 2) / (2.0 * cfg.sigma**2))
            np.maximum(H[j], g, out=H[j])
    H[k] = 1.0 - H[:k].max(axis=0) if k else 1.0
    return H


def downsample_depth(raw: DepthImage, grid: GridSpec) -> np.ndarray:
    """Nearest-neighbour resize to the grid, meters; invalid stays 0."""
    ys = np.minimum(np.arange(grid.gh) * grid.stride, raw.height - 1)
    xs = np.minimum(np.arange(grid.gw) * grid.stride, raw.width - 1)
    return raw.meters()[np.ix_(ys, xs)]


def encode_part_depth(
    poses: Sequence[Pose], raw: DepthImage, grid: GridSpec, cfg: EncoderConfig, k: int
) -> tuple[np.ndarray, np.ndarray]:
    u, v = _cell_grid(grid)
    base = downsample_depth(raw, grid)
    D = np.repeat(base[None], k, axis=0)
    Wd = np.full((k, grid.gh, grid.gw), cfg.bg_weight)
    r2 = cfg.disk_radius**2
    for j in range(k):
        q, zs = _instances(poses, j, grid.stride)
        written = np.full((grid.gh, grid.gw), np.inf)
        for (qx, qy), z in zip(q, zs):
            disk = (u - qx) ** 2 + (v - qy) ** 2 <= r2
            written[disk] = np.minimum(written[disk], z)
        hit = np.isfinite(written)
        D[j][hit] = written[hit]
        Wd[j][hit] = cfg.fg_weight
    return D, Wd


def encode_tpdf(
    poses: Sequence[Pose], grid: GridSpec, cfg: EncoderConfig, k: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Truncated displacement to the nearest same-type instance.

    Ties in distance go to the lowest instance index (argmin keeps the first).
    """
    u, v = _cell_grid(grid)
    shape = (k, grid.gh, grid.gw)
    X, Y, Wt = np.zeros(shape), np.zeros(shape), np.zeros(shape)
    for j in range(k):
        q, _ = _instances(poses, j, grid.stride)
        if len(q) == 0:
            continue
        dx = q[:, 0, None, None] - u[None]
        dy = q[:, 1, None, None] - v[None]
        d2 = dx * dx + dy * dy
        best = np.argmin(d2, axis=0)
        take = lambda a: np.take_along_axis(a, best[None], axis=0)[0]
        inside = take(d2) <= cfg.r * cfg.r
        X[j] = np.where(inside, take(dx), 0.0)
        Y[j] = np.where(inside, take(dy), 0.0)
        Wt[j] = inside
    return X, Y, Wt


def grid_cell(x: float, y: float, grid: GridSpec) -> tuple[int, int] | None:
    """Nearest cell to grid coordinate (x, y); None when off-grid."""
    gx, gy = math.floor(x + 0.5), math.floor(y + 0.5)
    if 0 <= gx < grid.gw and 0 <= gy < grid.gh:
        return gx, gy
    return None


def assign_visibility(pose: Pose, D: np.ndarray, grid: GridSpec, tol: float = 0.025) -> np.ndarray:
    """1 where the part's depth disagrees with the z-buffered part depth map."""
    v = np.ones(pose.k)
    for j in range(pose.k):
        if not pose.labeled[j]:
            continue
        cell = grid_cell(pose.xy[j, 0] / grid.stride, pose.xy[j, 1] / grid.stride, grid)
        if cell is None:
            continue
        gx, gy = cell
        v[j] = float(abs(pose.z[j] - D[j, gy, gx]) > tol)
    return v


def best_anchor(box: BBox, cell: tuple[int, int], anchors, stride: int = GLOBAL_STRIDE) -> int:
    cx, cy = (cell[0] + 0.5) * stride, (cell[1] + 0.5) * stride
    scores = [iou(box, BBox.from_center(cx, cy, aw * stride, ah * stride)) for aw, ah in anchors]
    return int(np.argmax(scores))


def encode_global_pose_map(
    poses: Sequence[Pose],
    grid16: GridSpec,
    cfg: EncoderConfig,
    k: int,
    visibility: Sequence[np.ndarray] | None = None,
) -> GlobalPoseMap:
    """Anchor-grid targets for each pose.

    ``visibility`` holds one v-vector per pose (see :func:`assign_visibility`);
    without it v is 0 for labeled parts and 1 otherwise. Unlabeled parts get
    zero weight on their offset and depth channels.
    """
    s = grid16.stride
    A = len(cfg.anchors)
    C = BOX_ATTRS + PART_ATTRS * k
    P = np.zeros((A, C, grid16.gh, grid16.gw))
    Wp = np.zeros_like(P)
    Wp[:, OBJ] = cfg.bg_weight
    claimed: dict[tuple[int, int, int], float] = {}
    collisions = 0
    for i, pose in enumerate(poses):
        if not pose.labeled.any():
            continue
        box = bbox_from_pose(pose, cfg.bbox_margin)
        bx, by = box.center
        gx = min(max(math.floor(bx / s), 0), grid16.gw - 1)
        gy = min(max(math.floor(by / s), 0), grid16.gh - 1)
        a = best_anchor(box, (gx, gy), cfg.anchors, s)
        key = (a, gy, gx)
        if key in claimed:
            collisions += 1
            if box.area <= claimed[key]:
                continue
        claimed[key] = box.area
        aw, ah = cfg.anchors[a]
        col = np.zeros(C)
        wcol = np.ones(C)
        col[0] = bx / s - gx
        col[1] = by / s - gy
        col[2] = math.log(max(box.width / s, MIN_BOX) / aw)
        col[3] = math.log(max(box.height / s, MIN_BOX) / ah)
        col[OBJ] = 1.0
        wcol[OBJ] = cfg.fg_weight
        if visibility is None:
            vis = np.where(pose.labeled, 0.0, 1.0)
        else:
            vis = np.asarray(visibility[i], dtype=np.float64)
        for j in range(k):
            c = part_channel(j)
            if pose.labeled[j]:
                col[c] = pose.xy[j, 0] / s - (gx + 0.5)
                col[c + 1] = pose.xy[j, 1] / s - (gy + 0.5)
                col[c + 2] = pose.z[j]
            else:
                wcol[c : c + 3] = 0.0
            col[c + 3] = vis[j]
        P[a, :, gy, gx] = col
        Wp[a, :, gy, gx] = wcol
    return GlobalPoseMap(P, Wp, collisions)


def encode_scene(
    poses: Sequence[Pose], raw: DepthImage, cfg: EncoderConfig, k: int
) -> EncodedMaps:
    grid8 = GridSpec.for_image(raw.width, raw.height, PART_STRIDE)
    grid16 = GridSpec.for_image(raw.width, raw.height, GLOBAL_STRIDE)
    H = encode_heatmaps(poses, grid8, cfg, k)
    D, Wd = encode_part_depth(poses, raw, grid8, cfg, k)
    X, Y, Wt = encode_tpdf(poses, grid8, cfg, k)
    vis = [assign_visibility(p, D, grid8, cfg.vis_tol) for p in poses]
    glob = encode_global_pose_map(poses, grid16, cfg, k, vis)
    return EncodedMaps(PartMaps(H, D, X, Y, Wd, Wt), glob)
