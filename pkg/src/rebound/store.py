"""Native log persistence: deterministic JSON + .rbpc point clouds.

Layout under a log root:

    metadata.json                   log id, source dataset, vocabulary, cameras
    frames.json                     ordered frame records
    pointclouds/<frame_id>.rbpc     binary point clouds (payload, never rewritten)
    images/<camera>/<frame_id>.png  RGB payloads (never rewritten)
    annotations/<frame_id>.json     ground-truth boxes
    predictions/<set>/<frame_id>.json

Serialization is deterministic: sorted JSON keys, records sorted by
instance_id, floats emitted with shortest round-trip repr (exact reload).
"""
from __future__ import annotations

import json
import math
import secrets
import shutil
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import LogLoadError, LogValidationError, Violation
from .types import (
    SOURCE_DATASETS,
    UNIT_NORM_TOL,
    Box3D,
    CameraCalibration,
    FrameRecord,
    LogBundle,
    PointCloud,
    Quaternion,
    SE3Pose,
    Vec3,
)

RBPC_MAGIC = b"RBPC"
RBPC_VERSION = 1
_HEADER = struct.Struct("<4sHI")

MOVE_TOL_M = 1e-6
MOVE_TOL_RAD = 1e-6


# ---------------------------------------------------------------------------
# binary point clouds

def write_rbpc(path: Path, points: np.ndarray) -> None:
    pts = np.ascontiguousarray(np.asarray(points, dtype="<f4").reshape(-1, 4))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(_HEADER.pack(RBPC_MAGIC, RBPC_VERSION, len(pts)) + pts.tobytes())


def read_rbpc(path: Path) -> np.ndarray:
    """Parse an .rbpc file into an (N, 4) float32 array; raises ValueError
    on any format defect."""
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError("file too short for header")
    magic, version, count = _HEADER.unpack_from(raw)
    if magic != RBPC_MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if version != RBPC_VERSION:
        raise ValueError(f"unsupported version {version}")
    body = raw[_HEADER.size:]
    expected = count * 4 * 4
    if len(body) != expected:
        raise ValueError(f"expected {expected} payload bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<f4").reshape(count, 4).copy()


def load_pointcloud(bundle: LogBundle, frame_id: str) -> PointCloud:
    """Load a frame's point cloud, normalizing intensity into [0, 1]."""
    ref = bundle.frame(frame_id).pointcloud_ref
    source = bundle.payload_map.get(ref)
    if source is None:
        raise LogLoadError(f"no payload source for {ref}")
    pts = read_rbpc(Path(source))
    if not np.all(np.isfinite(pts[:, :3])):
        raise LogValidationError(
            [Violation(file=ref, rule="nonfinite_point", message="point cloud has non-finite coordinates", frame_id=frame_id)]
        )
    intensity = pts[:, 3]
    if len(intensity) and (intensity.min() < 0.0 or intensity.max() > 1.0):
        warnings.warn(f"{ref}: intensity outside [0, 1] clamped", stacklevel=2)
        pts[:, 3] = np.clip(intensity, 0.0, 1.0)
    return PointCloud(points=pts)


# ---------------------------------------------------------------------------
# canonical payload refs

def pointcloud_ref(frame_id: str) -> str:
    return f"pointclouds/{frame_id}.rbpc"


def image_ref(camera: str, frame_id: str, ext: str = "png") -> str:
    return f"images/{camera}/{frame_id}.{ext}"


# ---------------------------------------------------------------------------
# JSON helpers

def dump_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n", encoding="utf-8")


def _quat_to_list(q: Quaternion) -> list[float]:
    return [float(q.w), float(q.x), float(q.y), float(q.z)]


def pose_to_json(p: SE3Pose) -> dict:
    return {"translation": [float(v) for v in p.translation], "rotation": _quat_to_list(p.rotation)}


def pose_from_json(obj: dict) -> SE3Pose:
    t = obj["translation"]
    r = obj["rotation"]
    return SE3Pose((float(t[0]), float(t[1]), float(t[2])), Quaternion(float(r[0]), float(r[1]), float(r[2]), float(r[3])))


def box_to_json(box: Box3D) -> dict:
    rec = {
        "attributes": dict(box.attributes),
        "category": box.category,
        "center": [float(v) for v in box.center],
        "instance_id": box.instance_id,
        "modified": bool(box.modified),
        "rotation": _quat_to_list(box.rotation),
        "size": [float(v) for v in box.size],
    }
    if box.confidence is not None:
        rec["confidence"] = float(box.confidence)
    return rec


def box_from_json(rec: dict) -> Box3D:
    c = rec["center"]
    s = rec["size"]
    r = rec["rotation"]
    conf = rec.get("confidence")
    return Box3D(
        center=(float(c[0]), float(c[1]), float(c[2])),
        size=(float(s[0]), float(s[1]), float(s[2])),
        rotation=Quaternion(float(r[0]), float(r[1]), float(r[2]), float(r[3])),
        category=str(rec["category"]),
        instance_id=str(rec["instance_id"]),
        confidence=None if conf is None else float(conf),
        attributes={str(k): str(v) for k, v in rec.get("attributes", {}).items()},
        modified=bool(rec.get("modified", False)),
    )


def write_box_file(path: Path, boxes: list[Box3D]) -> None:
    dump_json(path, [box_to_json(b) for b in sorted(boxes, key=lambda b: b.instance_id)])


# ---------------------------------------------------------------------------
# validation

def _finite(*values: float) -> bool:
    return all(math.isfinite(v) for v in values)


def _check_boxes(
    boxes: list[Box3D],
    *,
    file: str,
    frame_id: str,
    prediction: bool,
    vocabulary: set[str],
    out: list[Violation],
) -> None:
    seen: set[str] = set()
    for box in boxes:
        bid = box.instance_id
        if bid in seen:
            out.append(Violation(file, "duplicate_instance_id", f"instance_id {bid} repeats", frame_id, bid))
        seen.add(bid)
        if not _finite(*box.center, *box.size, *box.rotation.as_tuple()):
            out.append(Violation(file, "nonfinite_value", "box has non-finite fields", frame_id, bid))
            continue
        if min(box.size) <= 0.0:
            out.append(Violation(file, "nonpositive_size", f"size {box.size} must be positive", frame_id, bid))
        if not box.rotation.is_unit(UNIT_NORM_TOL):
            out.append(Violation(file, "rotation_not_normalized", f"|q|={box.rotation.norm():.6g}", frame_id, bid))
        if box.category not in vocabulary:
            out.append(Violation(file, "unknown_category", f"category {box.category!r} not in vocabulary", frame_id, bid))
        if prediction:
            if box.confidence is None:
                out.append(Violation(file, "missing_confidence", "prediction box lacks confidence", frame_id, bid))
            elif not (0.0 <= box.confidence <= 1.0):
                out.append(Violation(file, "confidence_out_of_range", f"confidence {box.confidence}", frame_id, bid))
        elif box.confidence is not None:
            out.append(Violation(file, "unexpected_confidence", "ground-truth box carries confidence", frame_id, bid))


def validate_bundle(bundle: LogBundle, *, check_payloads: bool = True) -> list[Violation]:
    """In-memory invariant checks mirroring the on-disk rules."""
    out: list[Violation] = []
    if bundle.source_dataset not in SOURCE_DATASETS:
        out.append(Violation("metadata.json", "bad_source_dataset", f"unknown source {bundle.source_dataset!r}"))

    for cam in bundle.cameras:
        f = "metadata.json"
        if not _finite(cam.fx, cam.fy, cam.cx, cam.cy):
            out.append(Violation(f, "nonfinite_value", f"camera {cam.name} intrinsics non-finite"))
            continue
        if cam.fx <= 0 or cam.fy <= 0 or not (0 < cam.cx < cam.width) or not (0 < cam.cy < cam.height):
            out.append(Violation(f, "bad_intrinsics", f"camera {cam.name} intrinsics out of range"))
        if not cam.extrinsic.rotation.is_unit(UNIT_NORM_TOL):
            out.append(Violation(f, "rotation_not_normalized", f"camera {cam.name} extrinsic rotation"))

    seen_frames: set[str] = set()
    prev_ts: int | None = None
    for fr in bundle.frames:
        f = "frames.json"
        if fr.frame_id in seen_frames:
            out.append(Violation(f, "duplicate_frame_id", f"frame_id {fr.frame_id} repeats", fr.frame_id))
        seen_frames.add(fr.frame_id)
        if prev_ts is not None and fr.timestamp <= prev_ts:
            out.append(Violation(f, "timestamps_not_increasing", f"timestamp {fr.timestamp} after {prev_ts}", fr.frame_id))
        prev_ts = fr.timestamp
        if not fr.ego_pose.rotation.is_unit(UNIT_NORM_TOL):
            out.append(Violation(f, "rotation_not_normalized", "ego pose rotation", fr.frame_id))
        if not _finite(*fr.ego_pose.translation):
            out.append(Violation(f, "nonfinite_value", "ego pose translation", fr.frame_id))
        refs = [fr.pointcloud_ref, *fr.image_refs.values()]
        for ref in refs:
            p = Path(ref)
            if p.is_absolute() or ".." in p.parts:
                out.append(Violation(f, "bad_ref", f"payload ref {ref!r} escapes the log root", fr.frame_id))
            elif check_payloads and ref not in bundle.payload_map:
                out.append(Violation(f, "missing_payload", f"no payload source for {ref!r}", fr.frame_id))

    vocab = set(bundle.vocabulary)
    for frame_id, boxes in bundle.annotations.items():
        f = f"annotations/{frame_id}.json"
        if frame_id not in seen_frames:
            out.append(Violation(f, "unknown_frame", f"frame {frame_id} not in frames.json", frame_id))
        _check_boxes(boxes, file=f, frame_id=frame_id, prediction=False, vocabulary=vocab, out=out)
    for set_name, per_frame in bundle.predictions.items():
        for frame_id, boxes in per_frame.items():
            f = f"predictions/{set_name}/{frame_id}.json"
            if frame_id not in seen_frames:
                out.append(Violation(f, "unknown_frame", f"frame {frame_id} not in frames.json", frame_id))
            _check_boxes(boxes, file=f, frame_id=frame_id, prediction=True, vocabulary=vocab, out=out)
    return out


def _parse_metadata(root: Path) -> tuple[str, str, list[CameraCalibration], list[str]]:
    raw = json.loads((root / "metadata.json").read_text(encoding="utf-8"))
    cameras = []
    for rec in raw.get("cameras", []):
        cameras.append(
            CameraCalibration(
                name=str(rec["name"]),
                extrinsic=pose_from_json(rec["extrinsic"]),
                fx=float(rec["intrinsic"]["fx"]),
                fy=float(rec["intrinsic"]["fy"]),
                cx=float(rec["intrinsic"]["cx"]),
                cy=float(rec["intrinsic"]["cy"]),
                width=int(rec["width"]),
                height=int(rec["height"]),
            )
        )
    return (
        str(raw["log_id"]),
        str(raw["source_dataset"]),
        cameras,
        [str(v) for v in raw.get("vocabulary", [])],
    )


def _parse_frames(root: Path) -> list[FrameRecord]:
    raw = json.loads((root / "frames.json").read_text(encoding="utf-8"))
    frames = []
    for rec in raw:
        frames.append(
            FrameRecord(
                frame_id=str(rec["frame_id"]),
                timestamp=int(rec["timestamp"]),
                ego_pose=pose_from_json(rec["ego_pose"]),
                pointcloud_ref=str(rec["pointcloud_ref"]),
                image_refs={str(k): str(v) for k, v in rec.get("image_refs", {}).items()},
            )
        )
    return frames


def _read_box_dir(directory: Path, out: list[Violation], rel_prefix: str) -> dict[str, list[Box3D]]:
    result: dict[str, list[Box3D]] = {}
    if not directory.is_dir():
        return result
    for path in sorted(directory.glob("*.json")):
        frame_id = path.stem
        rel = f"{rel_prefix}/{path.name}"
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
            result[frame_id] = [box_from_json(rec) for rec in raw]
        except (ValueError, KeyError, TypeError) as exc:
            out.append(Violation(rel, "unparseable", f"cannot parse: {exc}", frame_id))
            result[frame_id] = []
    return result


def _checked_load(root: Path) -> tuple[LogBundle | None, list[Violation]]:
    out: list[Violation] = []
    for required in ("metadata.json", "frames.json"):
        if not (root / required).is_file():
            out.append(Violation(required, "missing_file", f"{root / required} not found"))
    if out:
        return None, out

    try:
        log_id, source_dataset, cameras, vocabulary = _parse_metadata(root)
    except (ValueError, KeyError, TypeError) as exc:
        return None, [Violation("metadata.json", "unparseable", f"cannot parse: {exc}")]
    try:
        frames = _parse_frames(root)
    except (ValueError, KeyError, TypeError) as exc:
        return None, [Violation("frames.json", "unparseable", f"cannot parse: {exc}")]

    annotations = _read_box_dir(root / "annotations", out, "annotations")
    predictions: dict[str, dict[str, list[Box3D]]] = {}
    pred_root = root / "predictions"
    if pred_root.is_dir():
        for set_dir in sorted(p for p in pred_root.iterdir() if p.is_dir()):
            predictions[set_dir.name] = _read_box_dir(set_dir, out, f"predictions/{set_dir.name}")

    payload_map: dict[str, Path] = {}
    for fr in frames:
        for ref in (fr.pointcloud_ref, *fr.image_refs.values()):
            payload_map[ref] = root / ref

    bundle = LogBundle(
        log_id=log_id,
        source_dataset=source_dataset,
        cameras=cameras,
        frames=frames,
        annotations={f.frame_id: annotations.get(f.frame_id, []) for f in frames},
        predictions={
            name: {f.frame_id: per.get(f.frame_id, []) for f in frames} for name, per in predictions.items()
        },
        vocabulary=vocabulary,
        payload_map=payload_map,
    )
    # annotation files for unknown frames are dropped from the bundle above,
    # so surface them from the raw read
    for frame_id in annotations:
        if frame_id not in bundle.annotations:
            out.append(Violation(f"annotations/{frame_id}.json", "unknown_frame", f"frame {frame_id} not in frames.json", frame_id))
            _check_boxes(annotations[frame_id], file=f"annotations/{frame_id}.json", frame_id=frame_id,
                         prediction=False, vocabulary=set(vocabulary), out=out)
    for set_name, per in predictions.items():
        for frame_id in per:
            if frame_id not in bundle.annotations:
                out.append(Violation(f"predictions/{set_name}/{frame_id}.json", "unknown_frame",
                                     f"frame {frame_id} not in frames.json", frame_id))

    out.extend(validate_bundle(bundle, check_payloads=False))

    for fr in frames:
        for ref in (fr.pointcloud_ref, *fr.image_refs.values()):
            path = root / ref
            if not path.is_file():
                out.append(Violation("frames.json", "missing_file", f"{path} not found", fr.frame_id))
            elif ref.endswith(".rbpc"):
                try:
                    pts = read_rbpc(path)
                except ValueError as exc:
                    out.append(Violation(ref, "bad_pointcloud", str(exc), fr.frame_id))
                else:
                    if not np.all(np.isfinite(pts[:, :3])):
                        out.append(Violation(ref, "nonfinite_point", "non-finite coordinates", fr.frame_id))
    return bundle, out


def validate_log(root: Path | str) -> list[Violation]:
    """All format violations for the log at ``root``; empty means loadable."""
    _, violations = _checked_load(Path(root))
    return violations


def load_log(root: Path | str) -> LogBundle:
    """Load and fully validate a native log."""
    root = Path(root)
    bundle, violations = _checked_load(root)
    if violations:
        missing = [v for v in violations if v.rule == "missing_file"]
        if missing:
            raise LogLoadError(missing[0].message)
        raise LogValidationError(violations)
    assert bundle is not None
    return bundle


# ---------------------------------------------------------------------------
# saving

def write_metadata_file(bundle: LogBundle, path: Path) -> None:
    dump_json(
        path,
        {
            "log_id": bundle.log_id,
            "source_dataset": bundle.source_dataset,
            "vocabulary": list(bundle.vocabulary),
            "cameras": [
                {
                    "name": c.name,
                    "extrinsic": pose_to_json(c.extrinsic),
                    "intrinsic": {"fx": float(c.fx), "fy": float(c.fy), "cx": float(c.cx), "cy": float(c.cy)},
                    "width": c.width,
                    "height": c.height,
                }
                for c in bundle.cameras
            ],
        },
    )


def write_frames_file(bundle: LogBundle, path: Path) -> None:
    dump_json(
        path,
        [
            {
                "frame_id": f.frame_id,
                "timestamp": f.timestamp,
                "ego_pose": pose_to_json(f.ego_pose),
                "pointcloud_ref": f.pointcloud_ref,
                "image_refs": dict(sorted(f.image_refs.items())),
            }
            for f in bundle.frames
        ],
    )


def _write_tree(bundle: LogBundle, root: Path) -> None:
    write_metadata_file(bundle, root / "metadata.json")
    write_frames_file(bundle, root / "frames.json")
    for f in bundle.frames:
        write_box_file(root / "annotations" / f"{f.frame_id}.json", bundle.annotations.get(f.frame_id, []))
    for set_name in sorted(bundle.predictions):
        per_frame = bundle.predictions[set_name]
        for f in bundle.frames:
            write_box_file(root / "predictions" / set_name / f"{f.frame_id}.json", per_frame.get(f.frame_id, []))
    for f in bundle.frames:
        for ref in (f.pointcloud_ref, *f.image_refs.values()):
            dest = root / ref
            dest.parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(bundle.payload_map[ref], dest)


def save_log(bundle: LogBundle, root: Path | str) -> None:
    """Write the bundle as a native log; all-or-nothing.

    Failures leave the destination untouched and a ``*.partial-*`` directory
    behind for inspection.
    """
    root = Path(root)
    violations = validate_bundle(bundle)
    if violations:
        raise LogValidationError(violations)

    token = secrets.token_hex(4)
    tmp = root.parent / f"{root.name}.partial-{token}"
    tmp.mkdir(parents=True)
    _write_tree(bundle, tmp)

    if root.exists():
        displaced = root.parent / f"{root.name}.replaced-{token}"
        root.rename(displaced)
        tmp.rename(root)
        shutil.rmtree(displaced)
    else:
        tmp.rename(root)


# ---------------------------------------------------------------------------
# diffing

@dataclass(frozen=True)
class MovedBox:
    frame_id: str
    instance_id: str
    center_delta: Vec3
    rotation_delta: float  # radians
    size_delta: Vec3


@dataclass(frozen=True)
class RelabeledBox:
    frame_id: str
    instance_id: str
    old_category: str
    new_category: str


@dataclass
class DiffReport:
    added: list[tuple[str, Box3D]] = field(default_factory=list)
    removed: list[tuple[str, Box3D]] = field(default_factory=list)
    moved: list[MovedBox] = field(default_factory=list)
    relabeled: list[RelabeledBox] = field(default_factory=list)

    def is_empty(self) -> bool:
        return not (self.added or self.removed or self.moved or self.relabeled)

    def summary(self) -> str:
        return (
            f"{len(self.added)} added, {len(self.removed)} removed, "
            f"{len(self.moved)} moved, {len(self.relabeled)} relabeled"
        )


def _index_boxes(boxes: list[Box3D], frame_id: str, side: str) -> dict[str, Box3D]:
    index: dict[str, Box3D] = {}
    for box in boxes:
        if box.instance_id in index:
            raise ValueError(f"duplicate instance_id {box.instance_id!r} in {side} frame {frame_id}")
        index[box.instance_id] = box
    return index


def diff_annotations(a: dict[str, list[Box3D]], b: dict[str, list[Box3D]]) -> DiffReport:
    """Match per-frame boxes by instance_id and classify the differences."""
    from .geometry import quat_angle  # local import to keep module load light

    report = DiffReport()
    for frame_id in sorted(set(a) | set(b)):
        index_a = _index_boxes(a.get(frame_id, []), frame_id, "left")
        index_b = _index_boxes(b.get(frame_id, []), frame_id, "right")
        for bid in sorted(set(index_a) | set(index_b)):
            if bid not in index_a:
                report.added.append((frame_id, index_b[bid]))
                continue
            if bid not in index_b:
                report.removed.append((frame_id, index_a[bid]))
                continue
            old, new = index_a[bid], index_b[bid]
            center_delta = tuple(float(n - o) for n, o in zip(new.center, old.center))
            size_delta = tuple(float(n - o) for n, o in zip(new.size, old.size))
            angle = quat_angle(old.rotation, new.rotation)
            dist = math.sqrt(sum(d * d for d in center_delta))
            if dist > MOVE_TOL_M or angle > MOVE_TOL_RAD or max(abs(d) for d in size_delta) > MOVE_TOL_M:
                report.moved.append(MovedBox(frame_id, bid, center_delta, angle, size_delta))
            if old.category != new.category:
                report.relabeled.append(RelabeledBox(frame_id, bid, old.category, new.category))
    return report


def load_annotation_dir(directory: Path | str) -> dict[str, list[Box3D]]:
    """Read a bare directory of per-frame box files (for standalone diffs)."""
    directory = Path(directory)
    if not directory.is_dir():
        raise LogLoadError(f"{directory} is not a directory")
    result: dict[str, list[Box3D]] = {}
    for path in sorted(directory.glob("*.json")):
        raw = json.loads(path.read_text(encoding="utf-8"))
        result[path.stem] = [box_from_json(rec) for rec in raw]
    return result
