"""PCK and MPII-style mAP over matched poses, in 2D and 3D.

Datasets are lists of scenes; each scene pairs a list of detections with a
list of ground-truth poses. Predictions are matched to ground truth per
scene by 2D box IOU, greedily in score order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import BBOX_MARGIN, CameraIntrinsics, Detection, Pose, Skeleton, bbox_from_pose, iou
from .geometry import pose_points3d


@dataclass(frozen=True)
class MetricConfig:
    pck2d_factor: float = 0.5
    pck3d_thresh: float = 0.10
    match_iou: float = 0.4
    head_fallback: float = 10.0
    bbox_margin: float = BBOX_MARGIN

    def __post_init__(self):
        if not (self.pck2d_factor > 0 and self.pck3d_thresh > 0 and self.head_fallback > 0):
            raise ValueError("metric factors must be positive")
        if not 0.0 <= self.match_iou <= 1.0:
            raise ValueError("match_iou outside [0, 1]")


@dataclass
class EvalReport:
    names: list[str]
    pck2d: list[float]
    pck3d: list[float]
    ap2d: list[float]
    ap3d: list[float]
    tp: int
    fp: int
    missed: int

    @staticmethod
    def _mean(v):
        v = [x for x in v if not np.isnan(x)]
        return float(np.mean(v)) if v else 0.0

    @property
    def mean_pck2d(self):
        return self._mean(self.pck2d)

    @property
    def mean_pck3d(self):
        return self._mean(self.pck3d)

    @property
    def map2d(self):
        return self._mean(self.ap2d)

    @property
    def map3d(self):
        return self._mean(self.ap3d)

    def to_dict(self) -> dict:
        clean = lambda v: [None if np.isnan(x) else float(x) for x in v]
        return {
            "per_part": {
                "names": list(self.names),
                "pck2d": clean(self.pck2d),
                "pck3d": clean(self.pck3d),
                "ap2d": clean(self.ap2d),
                "ap3d": clean(self.ap3d),
            },
            "pck2d": self.mean_pck2d,
            "pck3d": self.mean_pck3d,
            "map2d": self.map2d,
            "map3d": self.map3d,
            "matches": {"tp": self.tp, "fp": self.fp, "missed": self.missed},
        }

    def table(self) -> str:
        head = f"{'':<12}{'2D PCK':>9}{'3D PCK':>9}{'2D mAP':>9}{'3D mAP':>9}"
        rows = [head, "-" * len(head)]
        for j, name in enumerate(self.names):
            vals = (self.pck2d[j], self.pck3d[j], self.ap2d[j], self.ap3d[j])
            rows.append(f"{name:<12}" + "".join("      n/a" if np.isnan(v) else f"{v:9.3f}" for v in vals))
        rows.append("-" * len(head))
        rows.append(
            f"{'mean':<12}{self.mean_pck2d:9.3f}{self.mean_pck3d:9.3f}{self.map2d:9.3f}{self.map3d:9.3f}"
        )
        rows.append(f"matched {self.tp}  false positives {self.fp}  missed {self.missed}")
        return "\n".join(rows)


def match_by_iou(preds: Sequence[Detection], gts: Sequence[Pose], cfg: MetricConfig = MetricConfig()) -> list[int | None]:
    """For each prediction, the index of its ground-truth pose or None.

    Predictions are visited by descending score (stable on input order); each
    takes the free ground truth of highest IOU, if that IOU reaches match_iou.
    """
    gt_boxes = [bbox_from_pose(g, cfg.bbox_margin) if g.labeled.any() else None for g in gts]
    taken = [False] * len(gts)
    out: list[int | None] = [None] * len(preds)
    for i in sorted(range(len(preds)), key=lambda i: -preds[i].score):
        best, best_iou = None, -1.0
        for g, box in enumerate(gt_boxes):
            if taken[g] or box is None:
                continue
            o = iou(preds[i].bbox, box)
            if o > best_iou:
                best, best_iou = g, o
        if best is not None and best_iou >= cfg.match_iou:
            out[i] = best
            taken[best] = True
    return out


def head_size(gt: Pose, skeleton: Skeleton, fallback: float) -> float:
    h, n = skeleton.head_pair
    if not (gt.labeled[h] and gt.labeled[n]):
        return fallback
    size = float(np.linalg.norm(gt.xy[h] - gt.xy[n]))
    return size if size > 1e-9 else fallback


def _part_hits(
    det: Detection, gt: Pose, skeleton: Skeleton, cfg: MetricConfig, space: str, cam: CameraIntrinsics | None
) -> np.ndarray:
    """Per-part correctness of a matched prediction (False where either side lacks the part)."""
    ok = gt.labeled & det.pose.labeled
    if space == "2D":
        dist = np.linalg.norm(det.pose.xy - gt.xy, axis=1)
        thresh = cfg.pck2d_factor * head_size(gt, skeleton, cfg.head_fallback)
    elif space == "3D":
        if cam is None:
            raise ValueError("3D evaluation needs camera intrinsics")
        dist = np.linalg.norm(pose_points3d(det.pose, cam) - pose_points3d(gt, cam), axis=1)
        thresh = cfg.pck3d_thresh
    else:
        raise ValueError(f"unknown space {space!r}")
    return ok & (dist < thresh)


def _scene_pairs(preds, gts):
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} prediction scenes vs {len(gts)} ground-truth scenes")
    return zip(preds, gts)


def pck(
    preds: Sequence[Sequence[Detection]],
    gts: Sequence[Sequence[Pose]],
    skeleton: Skeleton,
    cfg: MetricConfig = MetricConfig(),
    space: str = "2D",
    cam: CameraIntrinsics | None = None,
) -> tuple[np.ndarray, float]:
    """Per-part PCK (NaN for parts never labeled) and the mean over parts."""
    k = skeleton.k
    correct = np.zeros(k)
    total = np.zeros(k)
    for scene_preds, scene_gts in _scene_pairs(preds, gts):
        match = match_by_iou(scene_preds, scene_gts, cfg)
        for g in scene_gts:
            total += g.labeled
        for i, g in enumerate(match):
            if g is not None:
                correct += _part_hits(scene_preds[i], scene_gts[g], skeleton, cfg, space, cam)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_part = np.where(total > 0, correct / np.maximum(total, 1), np.nan)
    valid = per_part[~np.isnan(per_part)]
    return per_part, float(valid.mean()) if len(valid) else 0.0


def average_precision(scores: Sequence[float], is_tp: Sequence[bool], n_positive: int) -> float:
    """Area under the precision/recall curve with all-point interpolation.

    Equal scores form one operating point, so the result does not depend on
    the order of tied predictions.
    """
    if n_positive == 0:
        return float("nan")
    if len(is_tp) == 0:
        return 0.0
    scores = np.asarray(scores, dtype=np.float64)
    hits = np.asarray(is_tp, dtype=bool)
    order = np.argsort(-scores, kind="stable")
    scores, hits = scores[order], hits[order]
    tp = np.cumsum(hits)
    fp = np.cumsum(~hits)
    # keep the last entry of each run of equal scores
    ends = np.append(scores[1:] != scores[:-1], True)
    tp, fp = tp[ends].astype(np.float64), fp[ends].astype(np.float64)
    recall = tp / n_positive
    precision = tp / (tp + fp)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def map_score(
    preds: Sequence[Sequence[Detection]],
    gts: Sequence[Sequence[Pose]],
    skeleton: Skeleton,
    cfg: MetricConfig = MetricConfig(),
    space: str = "2D",
    cam: CameraIntrinsics | None = None,
) -> tuple[np.ndarray, float]:
    """Per-part AP (NaN for parts never labeled) and mAP.

    Part predictions from every scene are ranked together by detection score.
    A prediction whose matched ground truth has no label for the part is
    ignored rather than counted.
    """
    k = skeleton.k
    ranked: list[list[tuple[float, bool]]] = [[] for _ in range(k)]
    positives = np.zeros(k, dtype=np.int64)
    for scene_preds, scene_gts in _scene_pairs(preds, gts):
        match = match_by_iou(scene_preds, scene_gts, cfg)
        for g in scene_gts:
            positives += g.labeled
        for i, det in enumerate(scene_preds):
            g = match[i]
            if g is None:
                hits = np.zeros(k, dtype=bool)
                counted = det.pose.labeled
            else:
                hits = _part_hits(det, scene_gts[g], skeleton, cfg, space, cam)
                counted = det.pose.labeled & scene_gts[g].labeled
            for j in np.nonzero(counted)[0]:
                ranked[j].append((det.score, bool(hits[j])))
    ap = np.array(
        [
            average_precision([s for s, _ in r], [t for _, t in r], int(positives[j]))
            for j, r in enumerate(ranked)
        ]
    )
    valid = ap[~np.isnan(ap)]
    return ap, float(valid.mean()) if len(valid) else 0.0


def evaluate(
    preds: Sequence[Sequence[Detection]],
    gts: Sequence[Sequence[Pose]],
    skeleton: Skeleton,
    cam: CameraIntrinsics,
    cfg: MetricConfig = MetricConfig(),
) -> EvalReport:
    p2, _ = pck(preds, gts, skeleton, cfg, "2D")
    p3, _ = pck(preds, gts, skeleton, cfg, "3D", cam)
    a2, _ = map_score(preds, gts, skeleton, cfg, "2D")
    a3, _ = map_score(preds, gts, skeleton, cfg, "3D", cam)
    tp = fp = missed = 0
    for scene_preds, scene_gts in _scene_pairs(preds, gts):
        m = match_by_iou(scene_preds, scene_gts, cfg)
        matched = sum(x is not None for x in m)
        tp += matched
        fp += len(m) - matched
        missed += len(scene_gts) - matched
    return EvalReport(list(skeleton.names), p2.tolist(), p3.tolist(), a2.tolist(), a3.tolist(), tp, fp, missed)
