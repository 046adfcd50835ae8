"""nuScenes-style adapter: relational JSON tables, global-frame annotations,
(width, length, height) box sizes.

Table files under the dataset root: ``sample.json``, ``sample_data.json``,
``sample_annotation.json``, ``ego_pose.json``, ``calibrated_sensor.json``.
``calibrated_sensor`` holds sensor->ego transforms; camera rows carry a 3x3
``camera_intrinsic`` matrix, the lidar row an empty one. Point clouds are
referenced by ``sample_data.filename`` and must already be ego-frame (the
lidar extrinsic is required to be identity at desk scale).
"""
from __future__ import annotations

import json
import shutil
import warnings
from pathlib import Path

import numpy as np

from ..errors import ConversionError
from ..geometry import quat_conjugate, quat_mul, se3_apply, se3_invert
from ..store import dump_json, image_ref, pointcloud_ref
from ..types import Box3D, CameraCalibration, FrameRecord, LogBundle, SE3Pose
from ._util import finish_import, parse_quaternion, require_file

LIDAR_CHANNEL = "LIDAR_TOP"

TABLES = ("sample", "sample_data", "sample_annotation", "ego_pose", "calibrated_sensor")


def _load_table(root: Path, name: str) -> list[dict]:
    path = require_file(root / f"{name}.json", where=f"table {name}")
    try:
        rows = json.loads(path.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise ConversionError(f"table {name}: cannot parse {path}: {exc}") from None
    if not isinstance(rows, list):
        raise ConversionError(f"table {name}: expected a JSON array")
    return rows


def _index(rows: list[dict], table: str) -> dict[str, dict]:
    out: dict[str, dict] = {}
    for row in rows:
        token = str(row["token"])
        if token in out:
            raise ConversionError(f"table {table}: duplicate token {token!r}")
        out[token] = row
    return out


def _resolve(index: dict[str, dict], token: str, table: str) -> dict:
    try:
        return index[token]
    except KeyError:
        raise ConversionError(f"table {table}: dangling token {token!r}") from None


def _chain_samples(samples: list[dict]) -> list[dict]:
    """Order samples by walking the prev/next linked list."""
    by_token = _index(samples, "sample")
    heads = [s for s in samples if not s.get("prev")]
    if len(heads) != 1:
        raise ConversionError(f"table sample: expected one chain head, found {len(heads)}")
    ordered = [heads[0]]
    seen = {str(heads[0]["token"])}
    while ordered[-1].get("next"):
        nxt = str(ordered[-1]["next"])
        if nxt in seen:
            raise ConversionError(f"table sample: cycle at token {nxt!r}")
        ordered.append(_resolve(by_token, nxt, "sample"))
        seen.add(nxt)
    if len(ordered) != len(samples):
        raise ConversionError("table sample: prev/next chain does not cover all samples")
    return ordered


def import_nuscenes_style(root: Path | str) -> LogBundle:
    root = Path(root)
    samples = _chain_samples(_load_table(root, "sample"))
    sample_data = _load_table(root, "sample_data")
    sample_annotation = _load_table(root, "sample_annotation")
    ego_poses = _index(_load_table(root, "ego_pose"), "ego_pose")
    sensors = _index(_load_table(root, "calibrated_sensor"), "calibrated_sensor")

    cameras: list[CameraCalibration] = []
    lidar_tokens: set[str] = set()
    for token, rec in sorted(sensors.items()):
        intrinsic = rec.get("camera_intrinsic") or []
        sensor_to_ego = SE3Pose(
            tuple(float(v) for v in rec["translation"]),
            parse_quaternion(rec["rotation"], where=f"calibrated_sensor {token}"),
        )
        if not intrinsic:
            lidar_tokens.add(token)
            off = np.linalg.norm(rec["translation"])
            if off > 1e-9 or abs(abs(sensor_to_ego.rotation.w) - 1.0) > 1e-9:
                warnings.warn(
                    f"calibrated_sensor {token}: non-identity lidar extrinsic ignored; "
                    "point clouds are treated as ego-frame",
                    stacklevel=2,
                )
            continue
        k = intrinsic
        cameras.append(
            CameraCalibration(
                name=str(rec["channel"]),
                extrinsic=se3_invert(sensor_to_ego),
                fx=float(k[0][0]),
                fy=float(k[1][1]),
                cx=float(k[0][2]),
                cy=float(k[1][2]),
                width=int(rec["width"]),
                height=int(rec["height"]),
            )
        )
    cameras.sort(key=lambda c: c.name)

    data_by_sample: dict[str, list[dict]] = {}
    for row in sample_data:
        data_by_sample.setdefault(str(row["sample_token"]), []).append(row)

    frames: list[FrameRecord] = []
    payload_map: dict[str, Path] = {}
    for sample in samples:
        token = str(sample["token"])
        rows = data_by_sample.get(token, [])
        lidar_rows = [r for r in rows if str(r["calibrated_sensor_token"]) in lidar_tokens]
        if len(lidar_rows) != 1:
            raise ConversionError(f"table sample_data: sample {token!r} needs exactly one lidar row")
        lidar = lidar_rows[0]
        pose_rec = _resolve(ego_poses, str(lidar["ego_pose_token"]), "ego_pose")
        ego_pose = SE3Pose(
            tuple(float(v) for v in pose_rec["translation"]),
            parse_quaternion(pose_rec["rotation"], where=f"ego_pose {pose_rec['token']}"),
        )
        pc_ref = pointcloud_ref(token)
        payload_map[pc_ref] = require_file(root / str(lidar["filename"]), where="table sample_data")

        image_refs: dict[str, str] = {}
        for row in rows:
            cs_token = str(row["calibrated_sensor_token"])
            if cs_token in lidar_tokens:
                continue
            sensor = _resolve(sensors, cs_token, "calibrated_sensor")
            channel = str(sensor["channel"])
            ext = Path(str(row["filename"])).suffix.lstrip(".") or "png"
            ref = image_ref(channel, token, ext)
            image_refs[channel] = ref
            payload_map[ref] = require_file(root / str(row["filename"]), where="table sample_data")

        frames.append(
            FrameRecord(
                frame_id=token,
                timestamp=int(sample["timestamp"]),
                ego_pose=ego_pose,
                pointcloud_ref=pc_ref,
                image_refs=image_refs,
            )
        )

    frames_by_id = {f.frame_id: f for f in frames}
    annotations: dict[str, list[Box3D]] = {f.frame_id: [] for f in frames}
    categories: set[str] = set()
    for row in sample_annotation:
        token = str(row["token"])
        sample_token = str(row["sample_token"])
        if sample_token not in frames_by_id:
            raise ConversionError(f"table sample_annotation: dangling token {sample_token!r}")
        frame = frames_by_id[sample_token]
        q_global = parse_quaternion(row["rotation"], where=f"sample_annotation {token}")
        center = se3_apply(se3_invert(frame.ego_pose), [float(v) for v in row["translation"]])
        rotation = quat_mul(quat_conjugate(frame.ego_pose.rotation), q_global).normalized()
        w, l, h = (float(v) for v in row["size"])
        category = str(row["category_name"])
        categories.add(category)
        annotations[sample_token].append(
            Box3D(
                center=(float(center[0]), float(center[1]), float(center[2])),
                size=(l, w, h),
                rotation=rotation,
                category=category,
                instance_id=str(row["instance_token"]),
            )
        )

    return finish_import(
        LogBundle(
            log_id=root.name,
            source_dataset="nuscenes_style",
            cameras=cameras,
            frames=frames,
            annotations=annotations,
            predictions={},
            vocabulary=sorted(categories),
            payload_map=payload_map,
        )
    )


def export_nuscenes_style(bundle: LogBundle, root: Path | str) -> list[str]:
    """Inverse of the import: ego->global annotations, (w, l, h) sizes.

    Sensor payloads are copied byte-for-byte; prediction sets and the
    native ``modified``/``attributes`` metadata have no slot in this schema
    and are not written.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)

    sensors: list[dict] = [
        {
            "token": f"cs_{LIDAR_CHANNEL}",
            "channel": LIDAR_CHANNEL,
            "translation": [0.0, 0.0, 0.0],
            "rotation": [1.0, 0.0, 0.0, 0.0],
            "camera_intrinsic": [],
            "width": 0,
            "height": 0,
        }
    ]
    for cam in sorted(bundle.cameras, key=lambda c: c.name):
        sensor_to_ego = se3_invert(cam.extrinsic)
        sensors.append(
            {
                "token": f"cs_{cam.name}",
                "channel": cam.name,
                "translation": [float(v) for v in sensor_to_ego.translation],
                "rotation": list(sensor_to_ego.rotation.as_tuple()),
                "camera_intrinsic": [
                    [float(cam.fx), 0.0, float(cam.cx)],
                    [0.0, float(cam.fy), float(cam.cy)],
                    [0.0, 0.0, 1.0],
                ],
                "width": cam.width,
                "height": cam.height,
            }
        )

    samples: list[dict] = []
    ego_rows: list[dict] = []
    data_rows: list[dict] = []
    ann_rows: list[dict] = []
    for i, frame in enumerate(bundle.frames):
        fid = frame.frame_id
        samples.append(
            {
                "token": fid,
                "timestamp": frame.timestamp,
                "prev": bundle.frames[i - 1].frame_id if i > 0 else "",
                "next": bundle.frames[i + 1].frame_id if i + 1 < len(bundle.frames) else "",
            }
        )
        ego_rows.append(
            {
                "token": f"ep_{fid}",
                "timestamp": frame.timestamp,
                "translation": [float(v) for v in frame.ego_pose.translation],
                "rotation": list(frame.ego_pose.rotation.as_tuple()),
            }
        )
        lidar_name = f"sweeps/{LIDAR_CHANNEL}/{fid}.rbpc"
        data_rows.append(
            {
                "token": f"sd_{LIDAR_CHANNEL}_{fid}",
                "sample_token": fid,
                "ego_pose_token": f"ep_{fid}",
                "calibrated_sensor_token": f"cs_{LIDAR_CHANNEL}",
                "filename": lidar_name,
                "fileformat": "rbpc",
            }
        )
        _copy_payload(bundle, frame.pointcloud_ref, root / lidar_name)
        for channel in sorted(frame.image_refs):
            ref = frame.image_refs[channel]
            ext = Path(ref).suffix.lstrip(".")
            img_name = f"samples/{channel}/{fid}.{ext}"
            data_rows.append(
                {
                    "token": f"sd_{channel}_{fid}",
                    "sample_token": fid,
                    "ego_pose_token": f"ep_{fid}",
                    "calibrated_sensor_token": f"cs_{channel}",
                    "filename": img_name,
                    "fileformat": ext,
                }
            )
            _copy_payload(bundle, ref, root / img_name)

        for box in sorted(bundle.annotations.get(fid, []), key=lambda b: b.instance_id):
            translation = se3_apply(frame.ego_pose, box.center)
            rotation = quat_mul(frame.ego_pose.rotation, box.rotation).normalized()
            l, w, h = box.size
            ann_rows.append(
                {
                    "token": f"sa_{fid}_{box.instance_id}",
                    "sample_token": fid,
                    "instance_token": box.instance_id,
                    "category_name": box.category,
                    "translation": [float(v) for v in translation],
                    "size": [float(w), float(l), float(h)],
                    "rotation": list(rotation.as_tuple()),
                }
            )

    dump_json(root / "sample.json", samples)
    dump_json(root / "ego_pose.json", ego_rows)
    dump_json(root / "calibrated_sensor.json", sensors)
    dump_json(root / "sample_data.json", data_rows)
    dump_json(root / "sample_annotation.json", ann_rows)
    return []


def _copy_payload(bundle: LogBundle, ref: str, dest: Path) -> None:
    source = bundle.payload_map.get(ref)
    if source is None:
        raise ConversionError(f"no payload source for {ref!r}")
    dest.parent.mkdir(parents=True, exist_ok=True)
    shutil.copyfile(source, dest)


def _register() -> None:
    from . import Adapter, register

    register(
        Adapter(
            dataset_id="nuscenes",
            source_tag="nuscenes_style",
            import_log=import_nuscenes_style,
            export_log=export_nuscenes_style,
        )
    )


_register()
