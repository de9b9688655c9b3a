"""Command-line front end.

Exit status: 0 success, 1 usage error, 2 bad input data, 3 a checked
invariant failed (gradient check above tolerance).
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path


from . import augment as aug
from .config import RunConfig, config_to_dict, load_config, override
from .decoder import MODES, decode_full
from .encoder import EncodedMaps, encode_scene
from .formats import (
    FormatError,
    dump_json,
    load_detections,
    load_poses,
    pose_document,
    read_depth,
    read_mask,
    read_tensors,
    write_depth,
    write_mask,
    write_tensors,
)
from .geometry import depth_rescale, sample_scale
from .loss import finite_difference_check, random_problem
from .metrics import evaluate
from .pipeline import make_scene, ordered_map, roundtrip
from .synth import make_rng

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 0, 1, 2, 3
GRADCHECK_TOL = 1e-4


class UsageError(Exception):
    pass


class InvariantError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _range(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO:HI, got {text!r}") from None
    if not 0 < lo <= hi:
        raise argparse.ArgumentTypeError(f"need 0 < LO <= HI, got {text!r}")
    return lo, hi


def _floats(n: int):
    def parse(text: str) -> tuple[float, ...]:
        try:
            vals = tuple(float(v) for v in text.split(","))
        except ValueError:
            vals = ()
        if len(vals) != n:
            raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers, got {text!r}")
        return vals

    return parse


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="JSON run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--radius", type=float, help="TPDF truncation radius (grid-8 cells, 'inf' allowed)")
    p.add_argument("--mask-half", type=int)
    p.add_argument("--conf-thresh", type=float)
    p.add_argument("--vis-thresh", type=float)
    p.add_argument("--nms-iou", type=float)
    p.add_argument("--aug-range", type=_range, metavar="LO:HI")
    p.add_argument("--out", metavar="PATH")
    p.add_argument("--format", choices=("json", "table"), default="json")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="popparts", description="Pose-over-parts encode/decode/evaluate toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("encode", help="depth image + pose labels -> tensor file")
    p.add_argument("depth", help="16-bit PGM depth image (mm)")
    p.add_argument("poses", help="pose JSON document")
    _common(p)

    p = sub.add_parser("decode", help="tensor file -> pose JSON")
    p.add_argument("maps", help="PTSR tensor file")
    p.add_argument("--force-mode", choices=MODES, help="use one fusion mode for every part")
    _common(p)

    p = sub.add_parser("eval", help="score predicted poses against ground truth")
    p.add_argument("pred", help="predicted pose JSON")
    p.add_argument("gt", help="ground-truth pose JSON")
    _common(p)

    p = sub.add_parser("augment", help="apply one augmentation to a labeled sample")
    p.add_argument("mode", choices=("hflip", "rotate", "rescale", "background", "multiperson"))
    p.add_argument("--depth", help="depth PGM (hflip, rotate, rescale)")
    p.add_argument("--poses", help="pose JSON (hflip, rotate, rescale)")
    p.add_argument("--sample", action="append", default=[], metavar="DEPTH,MASK,POSES",
                   help="segmented sample (background, multiperson); repeatable")
    p.add_argument("--bg", help="background depth PGM")
    p.add_argument("--angle", type=float, default=0.0)
    p.add_argument("--crop", type=_floats(4), metavar="X0,Y0,X1,Y1")
    p.add_argument("--size", type=_floats(2), metavar="W,H")
    p.add_argument("--scale", type=float, help="rescale factor; drawn from --aug-range when absent")
    _common(p)

    p = sub.add_parser("synth", help="render one synthetic scene with ground truth")
    p.add_argument("--index", type=int, default=0, help="scene index within the seeded sequence")
    _common(p)

    p = sub.add_parser("roundtrip", help="synthetic encode -> oracle -> decode -> metrics")
    p.add_argument("--scenes", type=int, help="number of scenes (overrides config)")
    _common(p)

    p = sub.add_parser("gradcheck", help="analytic vs finite-difference loss gradients")
    p.add_argument("--instances", type=int, default=50)
    _common(p)
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    return override(
        cfg,
        seed=args.seed,
        radius=args.radius,
        mask_half=args.mask_half,
        conf_thresh=args.conf_thresh,
        vis_thresh=args.vis_thresh,
        nms_iou=args.nms_iou,
        aug_range=args.aug_range,
        out=args.out,
    )


def _emit(text: str, path: str | None) -> None:
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _need_out(cfg: RunConfig) -> str:
    if not cfg.output:
        raise UsageError("--out is required for this command")
    return cfg.output


def _single_scene(poses_path: str) -> tuple:
    skeleton, scenes = load_poses(poses_path)
    if len(scenes) != 1:
        raise FormatError(poses_path, "document", f"expected one scene, found {len(scenes)}")
    return skeleton, scenes[0]


def _check_skeleton(cfg: RunConfig, skeleton, path) -> None:
    if skeleton.k != cfg.skeleton.k:
        raise FormatError(path, "skeleton", f"{skeleton.k} parts, configuration expects {cfg.skeleton.k}")


def cmd_encode(args, cfg: RunConfig) -> None:
    depth = read_depth(args.depth)
    skeleton, poses = _single_scene(args.poses)
    _check_skeleton(cfg, skeleton, args.poses)
    maps = encode_scene(poses, depth, cfg.encoder, skeleton.k)
    write_tensors(_need_out(cfg), maps.tensors())
    if maps.glob.collisions:
        print(f"warning: {maps.glob.collisions} anchor collision(s)", file=sys.stderr)


def cmd_decode(args, cfg: RunConfig) -> None:
    tensors = read_tensors(args.maps)
    missing = [n for n in ("H", "D", "X", "Y", "P") if n not in tensors]
    if missing:
        raise FormatError(args.maps, "entries", f"missing tensor(s): {', '.join(missing)}")
    k = tensors["D"].shape[0]
    if k != cfg.skeleton.k:
        raise FormatError(args.maps, "D", f"{k} part maps, configuration expects {cfg.skeleton.k}")
    dets = decode_full(EncodedMaps.from_tensors(tensors), cfg.fusion, cfg.encoder.anchors, args.force_mode)
    _emit(dump_json(pose_document(cfg.skeleton, [dets])), cfg.output)


def cmd_eval(args, cfg: RunConfig) -> None:
    skel_p, preds = load_detections(args.pred)
    skel_g, gts = load_poses(args.gt)
    if skel_p.k != skel_g.k:
        raise FormatError(args.pred, "skeleton", f"{skel_p.k} parts vs {skel_g.k} in ground truth")
    if len(preds) != len(gts):
        raise FormatError(args.pred, "scenes", f"{len(preds)} scenes vs {len(gts)} in ground truth")
    report = evaluate(preds, gts, skel_g, cfg.camera, cfg.metrics)
    text = report.table() + "\n" if args.format == "table" else dump_json(report.to_dict())
    _emit(text, cfg.output)


def _write_sample(prefix: str, depth, skeleton, poses) -> None:
    write_depth(prefix + ".pgm", depth)
    Path(prefix + ".json").write_text(dump_json(pose_document(skeleton, [poses])), encoding="utf-8")


def _segmented(arg: str, cfg: RunConfig) -> aug.SegmentedSample:
    parts = arg.split(",")
    if len(parts) != 3:
        raise UsageError(f"--sample expects DEPTH,MASK,POSES, got {arg!r}")
    depth_p, mask_p, poses_p = parts
    skeleton, poses = _single_scene(poses_p)
    _check_skeleton(cfg, skeleton, poses_p)
    if len(poses) != 1:
        raise FormatError(poses_p, "poses", f"a segmented sample holds one pose, found {len(poses)}")
    return aug.SegmentedSample(read_depth(depth_p), read_mask(mask_p), poses[0])


def cmd_augment(args, cfg: RunConfig) -> None:
    prefix = _need_out(cfg)
    skeleton = cfg.skeleton
    if args.mode in ("hflip", "rotate", "rescale"):
        if not (args.depth and args.poses):
            raise UsageError(f"{args.mode} needs --depth and --poses")
        depth = read_depth(args.depth)
        skeleton, poses = _single_scene(args.poses)
        if args.mode == "hflip":
            out, new = aug.hflip(depth, poses, skeleton)
        elif args.mode == "rotate":
            crop = args.crop or (0.0, 0.0, float(depth.width), float(depth.height))
            size = args.size or (depth.width, depth.height)
            out, new = aug.rotate_crop(depth, poses, args.angle, crop, (int(size[0]), int(size[1])))
        else:
            a = args.scale if args.scale is not None else sample_scale(make_rng(cfg.scenes.seed), cfg.augment.aug_range)
            out, new = depth_rescale(depth, poses, cfg.camera, a)
        _write_sample(prefix, out, skeleton, new)
        return
    if not args.bg:
        raise UsageError(f"{args.mode} needs --bg")
    if not args.sample:
        raise UsageError(f"{args.mode} needs at least one --sample")
    bg = read_depth(args.bg)
    samples = [_segmented(s, cfg) for s in args.sample]
    if args.mode == "background":
        if len(samples) != 1:
            raise UsageError("background takes exactly one --sample")
        out, pose = aug.composite_background(samples[0], bg)
        new = [pose]
    else:
        out, new = aug.composite_multiperson(samples, bg, cfg.augment.tol, cfg.augment.max_bodies)
    _write_sample(prefix, out, skeleton, new)


def cmd_synth(args, cfg: RunConfig) -> None:
    prefix = _need_out(cfg)
    scene = make_scene(cfg, args.index)
    _write_sample(prefix, scene.depth, cfg.skeleton, scene.poses)
    for i, m in enumerate(scene.masks):
        write_mask(f"{prefix}_mask{i}.pgm", m)
    layout = {"figures": [f.to_dict() for f in scene.figures], "camera": dataclasses.asdict(cfg.camera)}
    Path(prefix + ".scene.json").write_text(dump_json(layout), encoding="utf-8")


def cmd_roundtrip(args, cfg: RunConfig) -> None:
    if args.scenes is not None:
        if args.scenes < 0:
            raise UsageError("--scenes must be >= 0")
        cfg = dataclasses.replace(cfg, scenes=dataclasses.replace(cfg.scenes, n_scenes=args.scenes))
    report = roundtrip(cfg)
    if args.format == "table":
        text = report.table() + "\n"
    else:
        doc = report.to_dict()
        # the destination is not part of the result
        doc["config"] = config_to_dict(dataclasses.replace(cfg, output=None))
        text = dump_json(doc)
    _emit(text, cfg.output)


def cmd_gradcheck(args, cfg: RunConfig) -> None:
    if args.instances < 1:
        raise UsageError("--instances must be >= 1")
    base = cfg.scenes.seed
    errors = ordered_map(
        lambda i: finite_difference_check(*random_problem(base * 1_000_003 + i, n_stages=cfg.stages)),
        range(args.instances),
    )
    worst = float(max(errors))
    doc = {"instances": args.instances, "max_rel_error": worst, "tolerance": GRADCHECK_TOL, "ok": worst < GRADCHECK_TOL}
    if args.format == "table":
        text = f"instances {args.instances}  max relative error {worst:.3e}  tolerance {GRADCHECK_TOL:.0e}\n"
    else:
        text = dump_json(doc)
    _emit(text, cfg.output)
    if worst >= GRADCHECK_TOL:
        raise InvariantError(f"max relative gradient error {worst:.3e} >= {GRADCHECK_TOL:.0e}")


COMMANDS = {
    "encode": cmd_encode,
    "decode": cmd_decode,
    "eval": cmd_eval,
    "augment": cmd_augment,
    "synth": cmd_synth,
    "roundtrip": cmd_roundtrip,
    "gradcheck": cmd_gradcheck,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        COMMANDS[args.command](args, cfg)
    except UsageError as e:
        print(f"popparts {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except InvariantError as e:
        print(f"popparts {args.command}: invariant violated: {e}", file=sys.stderr)
        return EXIT_INVARIANT
    except FormatError as e:
        print(f"popparts {args.command}: {e}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, OSError) as e:
        print(f"popparts {args.command}: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
