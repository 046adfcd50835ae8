"""Argoverse-style adapter: flat CSV tables with ego-frame annotations.

Dataset root layout:

    annotations.csv   timestamp_ns,track_uuid,category,tx_m,ty_m,tz_m,
                      length_m,width_m,height_m,qw,qx,qy,qz
    poses.csv         timestamp_ns,tx,ty,tz,qw,qx,qy,qz          (ego->city)
    calibration.csv   sensor_name,fx_px,fy_px,cx_px,cy_px,width_px,height_px,
                      qw,qx,qy,qz,tx_m,ty_m,tz_m                 (ego->camera)
    lidar/<timestamp_ns>.rbpc
    cameras/<sensor_name>/<timestamp_ns>.<ext>

Boxes map field-for-field onto the native format (ego frame, length/width/
height order), so conversion applies no geometric transform. Timestamps
become frame ids.
"""
from __future__ import annotations

import csv
import shutil
from pathlib import Path

from ..errors import ConversionError
from ..store import image_ref, pointcloud_ref
from ..types import Box3D, CameraCalibration, FrameRecord, LogBundle, SE3Pose
from ._util import finish_import, parse_quaternion, require_file

ANNOTATION_COLUMNS = [
    "timestamp_ns", "track_uuid", "category",
    "tx_m", "ty_m", "tz_m",
    "length_m", "width_m", "height_m",
    "qw", "qx", "qy", "qz",
]
POSE_COLUMNS = ["timestamp_ns", "tx", "ty", "tz", "qw", "qx", "qy", "qz"]
CALIBRATION_COLUMNS = [
    "sensor_name", "fx_px", "fy_px", "cx_px", "cy_px", "width_px", "height_px",
    "qw", "qx", "qy", "qz", "tx_m", "ty_m", "tz_m",
]


def _read_csv(root: Path, name: str, columns: list[str]) -> list[dict]:
    path = require_file(root / name, where=f"table {name}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != columns:
            raise ConversionError(
                f"table {name}: expected columns {','.join(columns)}, found "
                f"{','.join(reader.fieldnames or [])}"
            )
        return list(reader)


def _write_csv(path: Path, columns: list[str], rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)


def import_argoverse_style(root: Path | str) -> LogBundle:
    root = Path(root)
    pose_rows = _read_csv(root, "poses.csv", POSE_COLUMNS)
    ann_rows = _read_csv(root, "annotations.csv", ANNOTATION_COLUMNS)
    calib_rows = _read_csv(root, "calibration.csv", CALIBRATION_COLUMNS)

    cameras = [
        CameraCalibration(
            name=row["sensor_name"],
            extrinsic=SE3Pose(
                (float(row["tx_m"]), float(row["ty_m"]), float(row["tz_m"])),
                parse_quaternion(
                    (row["qw"], row["qx"], row["qy"], row["qz"]),
                    where=f"calibration.csv {row['sensor_name']}",
                ),
            ),
            fx=float(row["fx_px"]),
            fy=float(row["fy_px"]),
            cx=float(row["cx_px"]),
            cy=float(row["cy_px"]),
            width=int(row["width_px"]),
            height=int(row["height_px"]),
        )
        for row in sorted(calib_rows, key=lambda r: r["sensor_name"])
    ]

    poses: dict[int, SE3Pose] = {}
    for row in pose_rows:
        ts = int(row["timestamp_ns"])
        if ts in poses:
            raise ConversionError(f"table poses.csv: duplicate timestamp_ns {ts}")
        poses[ts] = SE3Pose(
            (float(row["tx"]), float(row["ty"]), float(row["tz"])),
            parse_quaternion((row["qw"], row["qx"], row["qy"], row["qz"]), where=f"poses.csv {ts}"),
        )

    frames: list[FrameRecord] = []
    payload_map: dict[str, Path] = {}
    for ts in sorted(poses):
        fid = str(ts)
        pc_ref = pointcloud_ref(fid)
        payload_map[pc_ref] = require_file(root / "lidar" / f"{ts}.rbpc", where="table poses.csv")
        image_refs: dict[str, str] = {}
        for cam in cameras:
            matches = sorted((root / "cameras" / cam.name).glob(f"{ts}.*"))
            if matches:
                ext = matches[0].suffix.lstrip(".")
                ref = image_ref(cam.name, fid, ext)
                image_refs[cam.name] = ref
                payload_map[ref] = matches[0]
        frames.append(
            FrameRecord(
                frame_id=fid,
                timestamp=ts,
                ego_pose=poses[ts],
                pointcloud_ref=pc_ref,
                image_refs=image_refs,
            )
        )

    annotations: dict[str, list[Box3D]] = {f.frame_id: [] for f in frames}
    categories: set[str] = set()
    for row in ann_rows:
        ts = int(row["timestamp_ns"])
        if ts not in poses:
            raise ConversionError(f"table annotations.csv: timestamp_ns {ts} has no ego pose")
        category = row["category"]
        categories.add(category)
        annotations[str(ts)].append(
            Box3D(
                center=(float(row["tx_m"]), float(row["ty_m"]), float(row["tz_m"])),
                size=(float(row["length_m"]), float(row["width_m"]), float(row["height_m"])),
                rotation=parse_quaternion(
                    (row["qw"], row["qx"], row["qy"], row["qz"]),
                    where=f"annotations.csv {row['track_uuid']}",
                ),
                category=category,
                instance_id=row["track_uuid"],
            )
        )

    return finish_import(
        LogBundle(
            log_id=root.name,
            source_dataset="argoverse_style",
            cameras=cameras,
            frames=frames,
            annotations=annotations,
            predictions={},
            vocabulary=sorted(categories),
            payload_map=payload_map,
        )
    )


def export_argoverse_style(bundle: LogBundle, root: Path | str) -> list[str]:
    """Field-for-field export; frame ids must stringify timestamps."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)

    pose_rows = []
    ann_rows = []
    for frame in bundle.frames:
        ts = frame.timestamp
        t = frame.ego_pose.translation
        q = frame.ego_pose.rotation
        pose_rows.append(
            {
                "timestamp_ns": ts,
                "tx": repr(float(t[0])), "ty": repr(float(t[1])), "tz": repr(float(t[2])),
                "qw": repr(q.w), "qx": repr(q.x), "qy": repr(q.y), "qz": repr(q.z),
            }
        )
        for box in sorted(bundle.annotations.get(frame.frame_id, []), key=lambda b: b.instance_id):
            bq = box.rotation
            ann_rows.append(
                {
                    "timestamp_ns": ts,
                    "track_uuid": box.instance_id,
                    "category": box.category,
                    "tx_m": repr(float(box.center[0])),
                    "ty_m": repr(float(box.center[1])),
                    "tz_m": repr(float(box.center[2])),
                    "length_m": repr(float(box.size[0])),
                    "width_m": repr(float(box.size[1])),
                    "height_m": repr(float(box.size[2])),
                    "qw": repr(bq.w), "qx": repr(bq.x), "qy": repr(bq.y), "qz": repr(bq.z),
                }
            )
        dest = root / "lidar" / f"{ts}.rbpc"
        _copy(bundle, frame.pointcloud_ref, dest)
        for cam_name in sorted(frame.image_refs):
            ref = frame.image_refs[cam_name]
            ext = Path(ref).suffix.lstrip(".")
            _copy(bundle, ref, root / "cameras" / cam_name / f"{ts}.{ext}")

    calib_rows = [
        {
            "sensor_name": cam.name,
            "fx_px": repr(float(cam.fx)), "fy_px": repr(float(cam.fy)),
            "cx_px": repr(float(cam.cx)), "cy_px": repr(float(cam.cy)),
            "width_px": cam.width, "height_px": cam.height,
            "qw": repr(cam.extrinsic.rotation.w), "qx": repr(cam.extrinsic.rotation.x),
            "qy": repr(cam.extrinsic.rotation.y), "qz": repr(cam.extrinsic.rotation.z),
            "tx_m": repr(float(cam.extrinsic.translation[0])),
            "ty_m": repr(float(cam.extrinsic.translation[1])),
            "tz_m": repr(float(cam.extrinsic.translation[2])),
        }
        for cam in sorted(bundle.cameras, key=lambda c: c.name)
    ]

    _write_csv(root / "poses.csv", POSE_COLUMNS, pose_rows)
    _write_csv(root / "annotations.csv", ANNOTATION_COLUMNS, ann_rows)
    _write_csv(root / "calibration.csv", CALIBRATION_COLUMNS, calib_rows)
    return []


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
            dataset_id="argoverse",
            source_tag="argoverse_style",
            import_log=import_argoverse_style,
            export_log=export_argoverse_style,
        )
    )


_register()
