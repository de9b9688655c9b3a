"""End-to-end loop over synthetic scenes: render, encode, oracle, decode, score."""

from __future__ import annotations

import dataclasses
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

from .config import RunConfig
from .core import DepthImage, Detection, Pose
from .decoder import decode_full
from .encoder import encode_scene
from .metrics import EvalReport, evaluate
from .synth import FigureSpec, make_rng, oracle_predict, predicted_maps, render_scene, sample_random_scene

T = TypeVar("T")
R = TypeVar("R")

THREADS_ENV = "POPPARTS_THREADS"


def worker_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return max(n, 1)


def ordered_map(fn: Callable[[T], R], items: Iterable[T], workers: int | None = None) -> list[R]:
    """``map`` with up to ``workers`` threads; results keep input order."""
    workers = worker_count() if workers is None else workers
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def scene_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


@dataclass(frozen=True, eq=False)
class Scene:
    figures: list[FigureSpec]
    depth: DepthImage
    poses: list[Pose]
    masks: list[np.ndarray]


def make_scene(cfg: RunConfig, index: int) -> Scene:
    sc = cfg.scenes
    s = scene_seed(sc.seed, index)
    n = int(make_rng(s).integers(sc.min_figures, sc.max_figures + 1))
    figs = sample_random_scene(
        s + 1, n, sc.pose_jitter, cfg.camera, sc.width, sc.height, force_overlap=sc.force_overlap,
        min_part_gap=sc.min_part_gap,
    )
    depth, poses, masks = render_scene(figs, cfg.camera, sc.width, sc.height, cfg.skeleton)
    return Scene(figs, depth, poses, masks)


@dataclass(frozen=True, eq=False)
class SceneResult:
    gt: list[Pose]
    fused: list[Detection]
    glob: list[Detection]
    collisions: int


def run_scene(cfg: RunConfig, index: int, scene: Scene | None = None) -> SceneResult:
    scene = scene if scene is not None else make_scene(cfg, index)
    gt = encode_scene(scene.poses, scene.depth, cfg.encoder, cfg.skeleton.k)
    noise = dataclasses.replace(cfg.noise, seed=scene_seed(cfg.noise.seed, index))
    pred = oracle_predict(gt, noise, cfg.stages)
    maps = predicted_maps(pred, gt)
    fused = decode_full(maps, cfg.fusion, cfg.encoder.anchors)
    glob = decode_full(maps, cfg.fusion, cfg.encoder.anchors, force_mode="A")
    return SceneResult(scene.poses, fused, glob, gt.glob.collisions)


@dataclass(frozen=True, eq=False)
class RoundtripReport:
    fused: EvalReport
    glob: EvalReport
    n_scenes: int
    n_figures: int
    collisions: int
    mode_counts: dict[str, int]

    def to_dict(self) -> dict:
        return {
            "scenes": self.n_scenes,
            "figures": self.n_figures,
            "collisions": self.collisions,
            "modes": dict(sorted(self.mode_counts.items())),
            "fused": self.fused.to_dict(),
            "global": self.glob.to_dict(),
        }

    def table(self) -> str:
        f, g = self.fused, self.glob
        head = f"{'':<10}{'2D PCK':>9}{'3D PCK':>9}{'2D mAP':>9}{'3D mAP':>9}"
        rows = [
            head,
            "-" * len(head),
            f"{'global':<10}{g.mean_pck2d:9.4f}{g.mean_pck3d:9.4f}{g.map2d:9.4f}{g.map3d:9.4f}",
            f"{'fused':<10}{f.mean_pck2d:9.4f}{f.mean_pck3d:9.4f}{f.map2d:9.4f}{f.map3d:9.4f}",
            "-" * len(head),
            f"scenes {self.n_scenes}  figures {self.n_figures}  collisions {self.collisions}",
            "modes " + "  ".join(f"{k} {v}" for k, v in sorted(self.mode_counts.items())),
        ]
        return "\n".join(rows)


def summarize(results: Sequence[SceneResult], cfg: RunConfig) -> RoundtripReport:
    gts = [r.gt for r in results]
    fused = evaluate([r.fused for r in results], gts, cfg.skeleton, cfg.camera, cfg.metrics)
    glob = evaluate([r.glob for r in results], gts, cfg.skeleton, cfg.camera, cfg.metrics)
    modes = {m: 0 for m in "ABC"}
    for r in results:
        for d in r.fused:
            for m in d.modes or ():
                modes[m] += 1
    return RoundtripReport(
        fused, glob, len(results), sum(len(r.gt) for r in results), sum(r.collisions for r in results), modes
    )


def roundtrip(cfg: RunConfig, scenes: Sequence[Scene] | None = None, workers: int | None = None) -> RoundtripReport:
    n = cfg.scenes.n_scenes if scenes is None else len(scenes)
    if scenes is None:
        results = ordered_map(lambda i: run_scene(cfg, i), range(n), workers)
    else:
        results = ordered_map(lambda i: run_scene(cfg, i, scenes[i]), range(n), workers)
    return summarize(results, cfg)


def make_scenes(cfg: RunConfig, workers: int | None = None) -> list[Scene]:
    return ordered_map(lambda i: make_scene(cfg, i), range(cfg.scenes.n_scenes), workers)


def truncation_ablation(
    cfg: RunConfig, radii: Sequence[float], scenes: Sequence[Scene] | None = None, workers: int | None = None
) -> dict[float, RoundtripReport]:
    """Round trip per truncation radius on shared scenes and shared noise draws."""
    scenes = list(scenes) if scenes is not None else make_scenes(cfg, workers)
    out = {}
    for r in radii:
        c = dataclasses.replace(cfg, encoder=dataclasses.replace(cfg.encoder, r=float(r)))
        out[float(r)] = roundtrip(c, scenes, workers)
    return out
