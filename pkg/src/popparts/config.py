"""Run configuration: one JSON document, every section optional.

``parse_config`` fills defaults and validates; ``config_to_dict`` emits the
normalized form, so ``config_to_dict(parse_config(d))`` is the canonical
version of ``d``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .core import DEFAULT_CAMERA, ITOP_SKELETON, CameraIntrinsics, Skeleton
from .decoder import FusionConfig
from .encoder import EncoderConfig
from .formats import FormatError, load_json
from .geometry import DEFAULT_AUG_RANGE
from .metrics import MetricConfig
from .synth import OracleNoise


@dataclass(frozen=True)
class SceneConfig:
    seed: int = 0
    n_scenes: int = 200
    min_figures: int = 1
    max_figures: int = 3
    pose_jitter: float = 1.0
    force_overlap: bool = False
    min_part_gap: float = 40.0
    width: int = 224
    height: int = 224

    def __post_init__(self):
        if self.n_scenes < 0 or self.min_figures < 0 or self.max_figures < self.min_figures:
            raise ValueError("scene counts must satisfy 0 <= min_figures <= max_figures, n_scenes >= 0")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive")


@dataclass(frozen=True)
class AugmentConfig:
    aug_range: tuple[float, float] = DEFAULT_AUG_RANGE
    max_bodies: int = 2
    tol: float = 0.025

    def __post_init__(self):
        lo, hi = self.aug_range
        if not 0 < lo <= hi:
            raise ValueError(f"bad augmentation range {self.aug_range}")
        if self.max_bodies < 1:
            raise ValueError("max_bodies must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    skeleton_path: str | None = None
    camera: CameraIntrinsics = DEFAULT_CAMERA
    encoder: EncoderConfig = EncoderConfig()
    fusion: FusionConfig = FusionConfig()
    metrics: MetricConfig = MetricConfig()
    noise: OracleNoise = OracleNoise()
    scenes: SceneConfig = SceneConfig()
    augment: AugmentConfig = AugmentConfig()
    stages: int = 2
    inputs: tuple[str, ...] = ()
    output: str | None = None
    skeleton: Skeleton = field(default=ITOP_SKELETON, compare=False)

    def __post_init__(self):
        if self.stages < 1:
            raise ValueError("stages must be >= 1")


_SECTIONS = {
    "camera": DEFAULT_CAMERA,
    "encoder": EncoderConfig(),
    "fusion": FusionConfig(),
    "metrics": MetricConfig(),
    "noise": OracleNoise(),
    "scenes": SceneConfig(),
    "augment": AugmentConfig(),
}


def _coerce(value: Any, default: Any, name: str):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ValueError(f"{name} must be a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValueError(f"{name} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            raise ValueError(f"{name} must be a number")
        # "inf" is accepted for unbounded radii
        out = float(value)
        if math.isnan(out):
            raise ValueError(f"{name} must not be NaN")
        return out
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ValueError(f"{name} must be a list")
        if default and isinstance(default[0], tuple):
            return tuple(tuple(float(x) for x in item) for item in value)
        return tuple(float(x) for x in value)
    return value


def _section(defaults, data: Any, name: str):
    if data is None:
        return defaults
    if not isinstance(data, dict):
        raise ValueError(f"section {name!r} must be an object")
    known = {f.name for f in dataclasses.fields(defaults)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValueError(f"unknown key(s) in {name!r}: {', '.join(unknown)}")
    kwargs = {k: _coerce(v, getattr(defaults, k), f"{name}.{k}") for k, v in data.items()}
    return dataclasses.replace(defaults, **kwargs)


def parse_config(doc: dict, base_dir: Path | None = None, check_files: bool = True) -> RunConfig:
    if not isinstance(doc, dict):
        raise ValueError("configuration must be a JSON object")
    allowed = set(_SECTIONS) | {"skeleton", "stages", "inputs", "output"}
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ValueError(f"unknown configuration key(s): {', '.join(unknown)}")
    kwargs = {name: _section(d, doc.get(name), name) for name, d in _SECTIONS.items()}
    base = base_dir or Path(".")
    skel_path = doc.get("skeleton")
    skeleton = ITOP_SKELETON
    if skel_path is not None:
        p = base / skel_path
        if check_files:
            if not p.is_file():
                raise ValueError(f"skeleton file not found: {p}")
            sdoc = load_json(p)
            skeleton = Skeleton.from_dict(sdoc.get("skeleton", sdoc))
    inputs = tuple(str(x) for x in doc.get("inputs", ()))
    if check_files:
        for x in inputs:
            if not (base / x).exists():
                raise ValueError(f"input file not found: {base / x}")
    stages = doc.get("stages", 2)
    if isinstance(stages, bool) or not isinstance(stages, int):
        raise ValueError("stages must be an integer")
    return RunConfig(
        skeleton_path=skel_path,
        stages=stages,
        inputs=inputs,
        output=doc.get("output"),
        skeleton=skeleton,
        **kwargs,
    )


def load_config(path) -> RunConfig:
    doc = load_json(path)
    try:
        return parse_config(doc, Path(path).parent)
    except (ValueError, TypeError) as e:
        if isinstance(e, FormatError):
            raise
        raise FormatError(path, "document", str(e)) from None


def _plain(value):
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    return value


def config_to_dict(cfg: RunConfig) -> dict:
    out: dict[str, Any] = {}
    for name in _SECTIONS:
        sec = getattr(cfg, name)
        out[name] = {f.name: _plain(getattr(sec, f.name)) for f in dataclasses.fields(sec)}
    out["skeleton"] = cfg.skeleton_path
    out["stages"] = cfg.stages
    out["inputs"] = list(cfg.inputs)
    out["output"] = cfg.output
    return out


def override(cfg: RunConfig, **flags) -> RunConfig:
    """Apply command-line overrides; ``None`` values are ignored."""
    enc, fus, sc, aug, noise = cfg.encoder, cfg.fusion, cfg.scenes, cfg.augment, cfg.noise
    if flags.get("radius") is not None:
        enc = dataclasses.replace(enc, r=float(flags["radius"]))
    for flag, attr in (("mask_half", "mask_half"), ("conf_thresh", "conf_thresh"),
                       ("vis_thresh", "vis_thresh"), ("nms_iou", "nms_iou")):
        if flags.get(flag) is not None:
            fus = dataclasses.replace(fus, **{attr: flags[flag]})
    if flags.get("seed") is not None:
        sc = dataclasses.replace(sc, seed=int(flags["seed"]))
        noise = dataclasses.replace(noise, seed=int(flags["seed"]))
    if flags.get("aug_range") is not None:
        aug = dataclasses.replace(aug, aug_range=tuple(flags["aug_range"]))
    out = dataclasses.replace(cfg, encoder=enc, fusion=fus, scenes=sc, augment=aug, noise=noise)
    if flags.get("out") is not None:
        out = dataclasses.replace(out, output=flags["out"])
    return out
