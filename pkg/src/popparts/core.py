"""Domain types shared across the pipeline and bounding-box helpers."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

# 2D labels live on a dyadic lattice so that mirror/identity transforms are
# exact in floating point (x -> (w - 1) - x is an involution only on-lattice).
LABEL_QUANTUM = 2.0 ** -32

BBOX_MARGIN = 0.1


def snap(xy: np.ndarray) -> np.ndarray:
    return np.round(np.asarray(xy, dtype=np.float64) / LABEL_QUANTUM) * LABEL_QUANTUM


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Skeleton:
    names: tuple[str, ...]
    flip_pairs: tuple[tuple[int, int], ...]
    head_pair: tuple[int, int]
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        k = len(self.names)
        if k < 1:
            raise ValueError("skeleton needs at least one part")
        seen = set()
        for a, b in self.flip_pairs:
            if not (0 <= a < k and 0 <= b < k) or a == b:
                raise ValueError(f"invalid flip pair ({a}, {b})")
            if a in seen or b in seen:
                raise ValueError(f"part used in more than one flip pair: ({a}, {b})")
            seen.update((a, b))
        h, n = self.head_pair
        if not (0 <= h < k and 0 <= n < k):
            raise ValueError(f"invalid head pair ({h}, {n})")
        for a, b in self.edges:
            if not (0 <= a < k and 0 <= b < k):
                raise ValueError(f"edge ({a}, {b}) references a missing part")

    @property
    def k(self) -> int:
        return len(self.names)

    def flip_permutation(self) -> np.ndarray:
        perm = np.arange(self.k)
        for a, b in self.flip_pairs:
            perm[a], perm[b] = b, a
        return perm

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "names": list(self.names),
            "flip_pairs": [list(p) for p in self.flip_pairs],
            "head_pair": list(self.head_pair),
            "edges": [list(e) for e in self.edges],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Skeleton":
        names = tuple(str(n) for n in d["names"])
        if "k" in d and int(d["k"]) != len(names):
            raise ValueError(f"k={d['k']} does not match {len(names)} names")
        return cls(
            names=names,
            flip_pairs=tuple((int(a), int(b)) for a, b in d.get("flip_pairs", [])),
            head_pair=(int(d["head_pair"][0]), int(d["head_pair"][1])),
            edges=tuple((int(a), int(b)) for a, b in d.get("edges", [])),
        )


# ITOP ordering.
ITOP_SKELETON = Skeleton(
    names=(
        "head", "neck", "r_shoulder", "l_shoulder", "r_elbow", "l_elbow",
        "r_hand", "l_hand", "torso", "r_hip", "l_hip", "r_knee", "l_knee",
        "r_foot", "l_foot",
    ),
    flip_pairs=((2, 3), (4, 5), (6, 7), (9, 10), (11, 12), (13, 14)),
    head_pair=(0, 1),
    edges=(
        (0, 1), (1, 2), (1, 3), (2, 4), (3, 5), (4, 6), (5, 7), (1, 8),
        (8, 9), (8, 10), (9, 11), (10, 12), (11, 13), (12, 14),
    ),
)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")


DEFAULT_CAMERA = CameraIntrinsics(fx=200.0, fy=200.0, cx=112.0, cy=112.0)


@dataclass(frozen=True, eq=False)
class DepthImage:
    """Depth raster in millimeters, indexed ``data[y, x]``; 0 marks invalid."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 2:
            raise ValueError("depth image must be 2D")
        if not np.all(np.isfinite(d)) or np.any(d < 0):
            raise ValueError("depth values must be finite and >= 0")
        object.__setattr__(self, "data", _frozen(d))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @classmethod
    def zeros(cls, width: int, height: int) -> "DepthImage":
        return cls(np.zeros((height, width)))

    def meters(self) -> np.ndarray:
        return self.data / 1000.0


@dataclass(frozen=True, eq=False)
class Pose:
    """K parts: 2D position (px), depth (m), visibility and label flags.

    ``visible`` False means the part is occluded; ``labeled`` False means there
    is no ground truth for it at all (e.g. truncated by the frame).
    """

    xy: np.ndarray
    z: np.ndarray
    visible: np.ndarray
    labeled: np.ndarray

    def __post_init__(self):
        xy = np.asarray(self.xy, dtype=np.float64).reshape(-1, 2)
        k = xy.shape[0]
        z = np.asarray(self.z, dtype=np.float64).reshape(k)
        vis = np.asarray(self.visible, dtype=bool).reshape(k)
        lab = np.asarray(self.labeled, dtype=bool).reshape(k)
        if not np.all(np.isfinite(xy)) or not np.all(np.isfinite(z)):
            raise ValueError("pose coordinates must be finite")
        if np.any(z[lab] < 0):
            raise ValueError("labeled parts need z >= 0")
        object.__setattr__(self, "xy", _frozen(snap(xy)))
        object.__setattr__(self, "z", _frozen(z))
        object.__setattr__(self, "visible", _frozen(vis))
        object.__setattr__(self, "labeled", _frozen(lab))

    @property
    def k(self) -> int:
        return self.xy.shape[0]

    @classmethod
    def from_arrays(cls, xy, z, visible=None, labeled=None) -> "Pose":
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        k = xy.shape[0]
        if visible is None:
            visible = np.ones(k, dtype=bool)
        if labeled is None:
            labeled = np.ones(k, dtype=bool)
        return cls(xy, z, visible, labeled)

    def replace(self, **changes) -> "Pose":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "parts": [
                {
                    "x": float(self.xy[j, 0]),
                    "y": float(self.xy[j, 1]),
                    "z": float(self.z[j]),
                    "visible": bool(self.visible[j]),
                    "labeled": bool(self.labeled[j]),
                }
                for j in range(self.k)
            ]
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        parts = d["parts"]
        return cls(
            xy=[[p["x"], p["y"]] for p in parts],
            z=[p["z"] for p in parts],
            visible=[p.get("visible", True) for p in parts],
            labeled=[p.get("labeled", True) for p in parts],
        )

    def same_as(self, other: "Pose") -> bool:
        return (
            np.array_equal(self.xy, other.xy)
            and np.array_equal(self.z, other.z)
            and np.array_equal(self.visible, other.visible)
            and np.array_equal(self.labeled, other.labeled)
        )


@dataclass(frozen=True)
class BBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"malformed box {self}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> "BBox":
        return cls(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)

    def as_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]


@dataclass(frozen=True, eq=False)
class Detection:
    """A decoded global pose.

    ``vis`` holds the predicted per-part visibility attribute (1 = occluded by
    a same-type part) and ``modes`` the fusion mode chosen per part, once known.
    """

    bbox: BBox
    score: float
    pose: Pose
    vis: np.ndarray | None = None
    modes: tuple[str, ...] | None = None

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")

    def to_dict(self) -> dict:
        d = self.pose.to_dict()
        d["score"] = float(self.score)
        d["bbox"] = self.bbox.as_list()
        if self.modes is not None:
            for part, mode in zip(d["parts"], self.modes):
                part["mode"] = mode
        return d


def bbox_from_pose(pose: Pose, margin: float = 0.0) -> BBox:
    """Tight box over labeled 2D parts, grown by ``margin * max(w, h)`` per side."""
    pts = pose.xy[pose.labeled]
    if len(pts) == 0:
        raise ValueError("empty pose")
    x0, y0 = pts.min(axis=0)
    x1, y1 = pts.max(axis=0)
    pad = margin * max(x1 - x0, y1 - y0)
    return BBox(float(x0 - pad), float(y0 - pad), float(x1 + pad), float(y1 + pad))


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union
