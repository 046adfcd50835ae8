"""Waymo-style adapter: newline-delimited per-frame records with yaw-only
box headings and 4x4 row-major pose matrices.

Dataset root layout:

    context.json      {"name": ..., "camera_calibrations": [...]}
    frames.jsonl      one JSON object per line:
                      {"timestamp": ns, "pose": [16 floats], "lidar": path,
                       "images": {camera: path},
                       "labels": [{"center_x", "center_y", "center_z",
                                   "length", "width", "height",
                                   "heading", "type", "id"}]}
    lidar/<timestamp>.rbpc
    images/<camera>/<timestamp>.<ext>

Headings carry yaw only; exporting a box with roll or pitch beyond
1e-3 rad records a lossy-conversion warning and writes the extracted yaw.
"""
from __future__ import annotations

import json
import math
import shutil
import warnings
from pathlib import Path

from ..errors import ConversionError
from ..geometry import quat_from_yaw, quat_yaw, yaw_pitch_roll
from ..store import image_ref, pointcloud_ref
from ..types import Box3D, CameraCalibration, FrameRecord, LogBundle, SE3Pose
from ._util import finish_import, matrix_to_pose, pose_to_matrix, require_file

LOSSY_TILT_RAD = 1e-3


def _normalize_heading(heading: float, *, where: str) -> float:
    """Wrap into (-pi, pi], warning when the source was out of range."""
    if -math.pi < heading <= math.pi:
        return heading
    wrapped = math.remainder(heading, 2.0 * math.pi)  # (-pi, pi], -pi maps to pi below
    if wrapped <= -math.pi:
        wrapped = math.pi
    warnings.warn(f"{where}: heading {heading:.6g} normalized to {wrapped:.6g}", stacklevel=3)
    return wrapped


def import_waymo_style(root: Path | str) -> LogBundle:
    root = Path(root)
    context_path = require_file(root / "context.json", where="context")
    frames_path = require_file(root / "frames.jsonl", where="frames")
    context = json.loads(context_path.read_text(encoding="utf-8"))

    cameras = [
        CameraCalibration(
            name=str(rec["name"]),
            extrinsic=SE3Pose(*matrix_to_pose(rec["extrinsic"], where=f"context camera {rec['name']}")),
            fx=float(rec["fx"]),
            fy=float(rec["fy"]),
            cx=float(rec["cx"]),
            cy=float(rec["cy"]),
            width=int(rec["width"]),
            height=int(rec["height"]),
        )
        for rec in sorted(context.get("camera_calibrations", []), key=lambda r: str(r["name"]))
    ]

    records = []
    for n, line in enumerate(frames_path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except ValueError as exc:
            raise ConversionError(f"frames.jsonl line {n}: {exc}") from None
    records.sort(key=lambda r: int(r["timestamp"]))

    frames: list[FrameRecord] = []
    annotations: dict[str, list[Box3D]] = {}
    payload_map: dict[str, Path] = {}
    categories: set[str] = set()
    for rec in records:
        ts = int(rec["timestamp"])
        fid = str(ts)
        if fid in annotations:
            raise ConversionError(f"frames.jsonl: duplicate timestamp {ts}")
        translation, rotation = matrix_to_pose(rec["pose"], where=f"frame {ts} pose")
        pc_ref = pointcloud_ref(fid)
        payload_map[pc_ref] = require_file(root / str(rec["lidar"]), where=f"frame {ts}")
        image_refs: dict[str, str] = {}
        for cam_name, rel in sorted(rec.get("images", {}).items()):
            ext = Path(str(rel)).suffix.lstrip(".") or "png"
            ref = image_ref(str(cam_name), fid, ext)
            image_refs[str(cam_name)] = ref
            payload_map[ref] = require_file(root / str(rel), where=f"frame {ts}")
        frames.append(
            FrameRecord(
                frame_id=fid,
                timestamp=ts,
                ego_pose=SE3Pose(translation, rotation),
                pointcloud_ref=pc_ref,
                image_refs=image_refs,
            )
        )
        boxes = []
        for label in rec.get("labels", []):
            heading = _normalize_heading(float(label["heading"]), where=f"frame {ts} label {label['id']}")
            category = str(label["type"])
            categories.add(category)
            boxes.append(
                Box3D(
                    center=(float(label["center_x"]), float(label["center_y"]), float(label["center_z"])),
                    size=(float(label["length"]), float(label["width"]), float(label["height"])),
                    rotation=quat_from_yaw(heading),
                    category=category,
                    instance_id=str(label["id"]),
                )
            )
        annotations[fid] = boxes

    return finish_import(
        LogBundle(
            log_id=str(context.get("name", root.name)),
            source_dataset="waymo_style",
            cameras=cameras,
            frames=frames,
            annotations=annotations,
            predictions={},
            vocabulary=sorted(categories),
            payload_map=payload_map,
        )
    )


def export_waymo_style(bundle: LogBundle, root: Path | str) -> list[str]:
    """Write per-frame records, extracting yaw-only headings.

    Returns one lossy-conversion warning per box whose rotation has roll or
    pitch beyond LOSSY_TILT_RAD.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    lossy: list[str] = []

    dump = lambda obj: json.dumps(obj, sort_keys=True, allow_nan=False)  # noqa: E731
    lines = []
    for frame in bundle.frames:
        fid = frame.frame_id
        ts = frame.timestamp
        lidar_name = f"lidar/{ts}.rbpc"
        _copy(bundle, frame.pointcloud_ref, root / lidar_name)
        images = {}
        for cam_name in sorted(frame.image_refs):
            ref = frame.image_refs[cam_name]
            ext = Path(ref).suffix.lstrip(".")
            img_name = f"images/{cam_name}/{ts}.{ext}"
            images[cam_name] = img_name
            _copy(bundle, ref, root / img_name)

        labels = []
        for box in sorted(bundle.annotations.get(fid, []), key=lambda b: b.instance_id):
            yaw, pitch, roll = yaw_pitch_roll(box.rotation)
            if abs(pitch) > LOSSY_TILT_RAD or abs(roll) > LOSSY_TILT_RAD:
                lossy.append(
                    f"frame {fid} box {box.instance_id}: rotation has roll={roll:.4g} "
                    f"pitch={pitch:.4g} rad; exported heading keeps yaw only"
                )
            labels.append(
                {
                    "center_x": float(box.center[0]),
                    "center_y": float(box.center[1]),
                    "center_z": float(box.center[2]),
                    "length": float(box.size[0]),
                    "width": float(box.size[1]),
                    "height": float(box.size[2]),
                    "heading": yaw,
                    "type": box.category,
                    "id": box.instance_id,
                }
            )
        lines.append(
            dump(
                {
                    "timestamp": ts,
                    "pose": pose_to_matrix(frame.ego_pose.translation, frame.ego_pose.rotation),
                    "lidar": lidar_name,
                    "images": images,
                    "labels": labels,
                }
            )
        )

    (root / "frames.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (root / "context.json").write_text(
        dump(
            {
                "name": bundle.log_id,
                "camera_calibrations": [
                    {
                        "name": cam.name,
                        "fx": float(cam.fx),
                        "fy": float(cam.fy),
                        "cx": float(cam.cx),
                        "cy": float(cam.cy),
                        "width": cam.width,
                        "height": cam.height,
                        "extrinsic": pose_to_matrix(cam.extrinsic.translation, cam.extrinsic.rotation),
                    }
                    for cam in sorted(bundle.cameras, key=lambda c: c.name)
                ],
            }
        )
        + "\n",
        encoding="utf-8",
    )
    return lossy


def _copy(bundle: LogBundle, ref: str, dest: Path) -> None:
    source = bundle.payload_map.get(ref)
    if source is None:
        raise ConversionError(f"no payload source for {ref!r}")
    dest.parent.mkdir(parents=True, exist_ok=True)
    shutil.copyfile(source, dest)


def _register() -> None:
    from . import Adapter, register

    register(
        Adapter(
            dataset_id="waymo",
            source_tag="waymo_style",
            import_log=import_waymo_style,
            export_log=export_waymo_style,
        )
    )


_register()
