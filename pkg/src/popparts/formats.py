"""File formats: binary PGM rasters, the PTSR tensor container, pose JSON."""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .core import BBox, Detection, DepthImage, Pose, Skeleton

PTSR_MAGIC = b"PTSR"
PTSR_VERSION = 1


class FormatError(ValueError):
    """Malformed input file; carries the file name and a line or byte offset."""

    def __init__(self, path, where: str, message: str):
        self.path = str(path)
        self.where = where
        super().__init__(f"{self.path}:{where}: {message}")


# --- PGM -------------------------------------------------------------------


def _pgm_tokens(buf: bytes, path):
    """Read the 4 header tokens of a P5 file; returns (tokens, payload offset)."""
    tokens = []
    i = 0
    n = len(buf)
    while len(tokens) < 4:
        while i < n and buf[i : i + 1].isspace():
            i += 1
        if i < n and buf[i : i + 1] == b"#":
            while i < n and buf[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        if i >= n:
            raise FormatError(path, f"offset {i}", "truncated PGM header")
        start = i
        while i < n and not buf[i : i + 1].isspace():
            i += 1
        tokens.append((buf[start:i], start))
    # exactly one whitespace byte separates the header from the raster
    return tokens, i + 1


def read_pgm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    tokens, offset = _pgm_tokens(buf, path)
    (magic, _), *rest = tokens
    if magic != b"P5":
        raise FormatError(path, "offset 0", f"expected P5 magic, got {magic!r}")
    vals = []
    for tok, pos in rest:
        try:
            vals.append(int(tok))
        except ValueError:
            raise FormatError(path, f"offset {pos}", f"bad header integer {tok!r}") from None
    w, h, maxval = vals
    if w <= 0 or h <= 0 or not 0 < maxval < 65536:
        raise FormatError(path, f"offset {rest[0][1]}", f"bad dimensions {w}x{h} maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = w * h * dtype.itemsize
    if len(buf) - offset < need:
        raise FormatError(path, f"offset {offset}", f"raster needs {need} bytes, found {len(buf) - offset}")
    return np.frombuffer(buf, dtype=dtype, count=w * h, offset=offset).reshape(h, w).astype(np.int64)


def write_pgm(path, raster: np.ndarray, maxval: int) -> None:
    raster = np.asarray(raster)
    h, w = raster.shape
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    header = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
    Path(path).write_bytes(header + np.clip(raster, 0, maxval).astype(dtype).tobytes())


def read_depth(path) -> DepthImage:
    return DepthImage(read_pgm(path).astype(np.float64))


def write_depth(path, img: DepthImage) -> None:
    mm = np.rint(img.data).astype(np.int64)
    if mm.size and mm.max() > 65535:
        raise ValueError(f"{path}: depth {mm.max()} mm exceeds the 16-bit range")
    write_pgm(path, mm, 65535)


def read_mask(path) -> np.ndarray:
    return read_pgm(path) != 0


def write_mask(path, mask: np.ndarray) -> None:
    write_pgm(path, np.asarray(mask, dtype=np.int64) * 255, 255)


# --- PTSR tensor container -------------------------------------------------
#
# A file is a sequence of records, little-endian:
#   "PTSR" | version u16 | name_len u16 | name utf-8 | rank u8 | dims u32[rank] | f32 payload


def write_tensors(path, tensors: Mapping[str, np.ndarray]) -> None:
    chunks = []
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f4")  # keeps rank 0; tobytes() is row-major
        raw_name = name.encode("utf-8")
        chunks.append(PTSR_MAGIC)
        chunks.append(struct.pack("<HH", PTSR_VERSION, len(raw_name)))
        chunks.append(raw_name)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_tensors(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    out: dict[str, np.ndarray] = {}
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(path, f"offset {pos}", f"truncated record, wanted {n} bytes")
        chunk = buf[pos : pos + n]
        pos += n
        return chunk

    while pos < len(buf):
        start = pos
        if take(4) != PTSR_MAGIC:
            raise FormatError(path, f"offset {start}", "bad PTSR magic")
        version, name_len = struct.unpack("<HH", take(4))
        if version != PTSR_VERSION:
            raise FormatError(path, f"offset {start + 4}", f"unsupported version {version}")
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(dims, dtype=np.int64))
        data = np.frombuffer(take(4 * count), dtype="<f4").reshape(dims)
        out[name] = data.astype(np.float64)
    return out


# --- JSON ------------------------------------------------------------------


def load_json(path):
    text = Path(path).read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatError(path, f"line {e.lineno} col {e.colno}", e.msg) from None


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _pose_entry(d: dict, k: int) -> tuple[Pose, float | None, BBox | None]:
    pose = Pose.from_dict(d)
    if pose.k != k:
        raise ValueError(f"pose has {pose.k} parts, skeleton has {k}")
    score = d.get("score")
    box = d.get("bbox")
    return pose, (None if score is None else float(score)), (None if box is None else BBox(*box))


def parse_pose_document(doc: dict, path="<memory>") -> tuple[Skeleton, list[list[dict]]]:
    """Return the skeleton plus raw pose entries grouped by scene.

    A document holds either ``poses`` (one scene) or ``scenes: [{poses}]``.
    """
    try:
        skeleton = Skeleton.from_dict(doc["skeleton"])
        if "scenes" in doc:
            scenes = [s["poses"] for s in doc["scenes"]]
        else:
            scenes = [doc["poses"]]
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(path, "document", f"malformed pose document: {e}") from None
    return skeleton, scenes


def load_poses(path) -> tuple[Skeleton, list[list[Pose]]]:
    skeleton, scenes = parse_pose_document(load_json(path), path)
    out = []
    for si, scene in enumerate(scenes):
        poses = []
        for pi, entry in enumerate(scene):
            try:
                poses.append(_pose_entry(entry, skeleton.k)[0])
            except (KeyError, TypeError, ValueError) as e:
                raise FormatError(path, f"scene {si} pose {pi}", str(e)) from None
        out.append(poses)
    return skeleton, out


def load_detections(path) -> tuple[Skeleton, list[list[Detection]]]:
    """Predictions; entries without ``score`` get 1.0, without ``bbox`` get one derived from parts."""
    from .core import BBOX_MARGIN, bbox_from_pose

    skeleton, scenes = parse_pose_document(load_json(path), path)
    out = []
    for si, scene in enumerate(scenes):
        dets = []
        for pi, entry in enumerate(scene):
            try:
                pose, score, box = _pose_entry(entry, skeleton.k)
                if box is None:
                    box = bbox_from_pose(pose, BBOX_MARGIN)
                dets.append(Detection(box, 1.0 if score is None else score, pose))
            except (KeyError, TypeError, ValueError) as e:
                raise FormatError(path, f"scene {si} pose {pi}", str(e)) from None
        out.append(dets)
    return skeleton, out


def pose_document(skeleton: Skeleton, scenes: list[list]) -> dict:
    """Build a pose document from Pose or Detection entries."""

    def entry(p):
        return p.to_dict()

    doc = {"skeleton": skeleton.to_dict()}
    if len(scenes) == 1:
        doc["poses"] = [entry(p) for p in scenes[0]]
    else:
        doc["scenes"] = [{"poses": [entry(p) for p in s]} for s in scenes]
    return doc
