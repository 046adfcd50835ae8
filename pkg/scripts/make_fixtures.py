#!/usr/bin/env python3
"""Regenerate the golden fixture logs under tests/fixtures/.

Dataset-style fixture values are authored here by hand (plain trig, no
adapter code) so adapter tests check conversion against independent
arithmetic. Run from the repo root:

    python scripts/make_fixtures.py
"""
from __future__ import annotations

import io
import json
import math
import shutil
import sys
from pathlib import Path

import numpy as np
from PIL import Image

REPO = Path(__file__).resolve().parent.parent
FIXTURES = REPO / "tests" / "fixtures"
sys.path.insert(0, str(REPO))

from rebound.store import write_rbpc  # noqa: E402


def png_bytes(color=(30, 60, 90), size=(4, 3)) -> bytes:
    buf = io.BytesIO()
    Image.new("RGB", size, color).save(buf, format="PNG")
    return buf.getvalue()


def cloud(seed: int, n: int = 100) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.column_stack(
        [
            rng.uniform(-30, 60, n),
            rng.uniform(-20, 20, n),
            rng.uniform(-1, 4, n),
            rng.uniform(0, 1, n),
        ]
    ).astype(np.float32)


def yaw_quat(yaw: float) -> list[float]:
    return [math.cos(yaw / 2), 0.0, 0.0, math.sin(yaw / 2)]


def rotate_z(yaw: float, p) -> list[float]:
    c, s = math.cos(yaw), math.sin(yaw)
    return [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]]


def dump(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


# ego -> camera-optical rotation matrix for a forward camera
# (camera x = -ego y, camera y = -ego z, camera z = ego x)
FWD = [[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]]


def mat_to_quat(m) -> list[float]:
    # plain Shepperd conversion, independent of the package
    r = np.asarray(m, dtype=float)
    t = r[0, 0] + r[1, 1] + r[2, 2]
    if t > 0:
        s = math.sqrt(t + 1.0) * 2
        return [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
    i = int(np.argmax([r[0, 0], r[1, 1], r[2, 2]]))
    if i == 0:
        s = math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2
        return [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
    if i == 1:
        s = math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2
        return [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
    s = math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2
    return [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]


def pose_matrix(translation, yaw: float) -> list[float]:
    c, s = math.cos(yaw), math.sin(yaw)
    return [
        c, -s, 0.0, float(translation[0]),
        s, c, 0.0, float(translation[1]),
        0.0, 0.0, 1.0, float(translation[2]),
        0.0, 0.0, 0.0, 1.0,
    ]


def make_nuscenes(root: Path) -> None:
    """Three samples; annotations in the GLOBAL frame with (w, l, h) sizes.

    Native expectations (hand-derived, asserted in tests):
      tok_f1 ego (100,50,0) yaw 0    -> veh_1 at (4,2,1) size (4,2,1.5) yaw 0
                                        ped_1 at (3,-3,0.9) yaw 0.4
      tok_f2 ego (100,50,0) yaw pi/2 -> veh_1 at (4,0,0) yaw 0
      tok_f3 ego (102,51,0.5) yaw 0.3-> veh_1 at (8,1,0.25) yaw 0.7
    """
    samples = [
        {"token": "tok_f1", "timestamp": 1_000_000_000, "prev": "", "next": "tok_f2"},
        {"token": "tok_f2", "timestamp": 1_500_000_000, "prev": "tok_f1", "next": "tok_f3"},
        {"token": "tok_f3", "timestamp": 2_000_000_000, "prev": "tok_f2", "next": ""},
    ]
    ego_poses = [
        {"token": "ep_f1", "timestamp": 1_000_000_000, "translation": [100.0, 50.0, 0.0], "rotation": yaw_quat(0.0)},
        {"token": "ep_f2", "timestamp": 1_500_000_000, "translation": [100.0, 50.0, 0.0], "rotation": yaw_quat(math.pi / 2)},
        {"token": "ep_f3", "timestamp": 2_000_000_000, "translation": [102.0, 51.0, 0.5], "rotation": yaw_quat(0.3)},
    ]
    sensors = [
        {
            "token": "cs_LIDAR_TOP",
            "channel": "LIDAR_TOP",
            "translation": [0.0, 0.0, 0.0],
            "rotation": [1.0, 0.0, 0.0, 0.0],
            "camera_intrinsic": [],
            "width": 0,
            "height": 0,
        },
        {
            "token": "cs_CAM_FRONT",
            "channel": "CAM_FRONT",
            # sensor->ego: camera sits at (1.5, 0, 1.6) looking forward
            "translation": [1.5, 0.0, 1.6],
            "rotation": mat_to_quat(np.asarray(FWD).T),
            "camera_intrinsic": [[1266.0, 0.0, 800.0], [0.0, 1266.0, 450.0], [0.0, 0.0, 1.0]],
            "width": 1600,
            "height": 900,
        },
    ]

    def ann(token, sample, instance, category, translation, wlh, rotation):
        return {
            "token": token,
            "sample_token": sample,
            "instance_token": instance,
            "category_name": category,
            "translation": translation,
            "size": wlh,
            "rotation": rotation,
        }

    ego3_t = [102.0, 51.0, 0.5]
    veh3_global = [a + b for a, b in zip(rotate_z(0.3, [8.0, 1.0, 0.25]), ego3_t)]
    annotations = [
        ann("sa_1", "tok_f1", "veh_1", "car", [104.0, 52.0, 1.0], [2.0, 4.0, 1.5], yaw_quat(0.0)),
        ann("sa_2", "tok_f1", "ped_1", "pedestrian", [103.0, 47.0, 0.9], [0.6, 0.6, 1.8], yaw_quat(0.4)),
        ann("sa_3", "tok_f2", "veh_1", "car", [100.0, 54.0, 0.0], [2.0, 4.0, 1.5], yaw_quat(math.pi / 2)),
        ann("sa_4", "tok_f3", "veh_1", "car", veh3_global, [2.0, 4.0, 1.5], yaw_quat(1.0)),
    ]

    sample_data = []
    for i, s in enumerate(samples, start=1):
        tok = s["token"]
        lidar_file = f"sweeps/LIDAR_TOP/{tok}.rbpc"
        img_file = f"samples/CAM_FRONT/{tok}.png"
        sample_data.append(
            {
                "token": f"sd_lidar_{tok}",
                "sample_token": tok,
                "ego_pose_token": f"ep_f{i}",
                "calibrated_sensor_token": "cs_LIDAR_TOP",
                "filename": lidar_file,
                "fileformat": "rbpc",
            }
        )
        sample_data.append(
            {
                "token": f"sd_cam_{tok}",
                "sample_token": tok,
                "ego_pose_token": f"ep_f{i}",
                "calibrated_sensor_token": "cs_CAM_FRONT",
                "filename": img_file,
                "fileformat": "png",
            }
        )
        write_rbpc(root / lidar_file, cloud(seed=10 + i))
        (root / img_file).parent.mkdir(parents=True, exist_ok=True)
        (root / img_file).write_bytes(png_bytes(color=(40 * i, 80, 120)))

    dump(root / "sample.json", samples)
    dump(root / "ego_pose.json", ego_poses)
    dump(root / "calibrated_sensor.json", sensors)
    dump(root / "sample_data.json", sample_data)
    dump(root / "sample_annotation.json", annotations)


def make_argoverse(root: Path) -> None:
    """Ego-frame rows, field-for-field with the native format."""
    header_poses = "timestamp_ns,tx,ty,tz,qw,qx,qy,qz"
    poses = [
        f"2000000000,10.0,20.0,0.3,{math.cos(-0.1)!r},0.0,0.0,{math.sin(-0.1)!r}",
        "2100000000,12.0,21.0,0.3,1.0,0.0,0.0,0.0",
        f"2200000000,14.0,22.0,0.35,{math.cos(0.125)!r},0.0,0.0,{math.sin(0.125)!r}",
    ]
    header_ann = (
        "timestamp_ns,track_uuid,category,tx_m,ty_m,tz_m,"
        "length_m,width_m,height_m,qw,qx,qy,qz"
    )
    pitchy = (math.cos(0.025), math.sin(0.025))  # pitch of 0.05 rad about y
    annotations = [
        "2000000000,track_a,car,4.0,2.0,1.0,4.0,2.0,1.5,1.0,0.0,0.0,0.0",
        f"2000000000,track_b,pedestrian,6.0,-2.0,0.9,0.7,0.7,1.8,{math.cos(0.45)!r},0.0,0.0,{math.sin(0.45)!r}",
        f"2100000000,track_a,car,5.5,2.2,1.0,4.0,2.0,1.5,{math.cos(0.05)!r},0.0,0.0,{math.sin(0.05)!r}",
        f"2200000000,track_c,truck,12.0,0.5,1.6,8.2,2.9,3.4,{pitchy[0]!r},0.0,{pitchy[1]!r},0.0",
    ]
    header_calib = (
        "sensor_name,fx_px,fy_px,cx_px,cy_px,width_px,height_px,"
        "qw,qx,qy,qz,tx_m,ty_m,tz_m"
    )
    q = [float(v) for v in mat_to_quat(FWD)]
    # ego->camera translation = -R @ position for a camera at (1.6, 0, 1.4)
    t = [float(v) for v in -np.asarray(FWD) @ np.array([1.6, 0.0, 1.4])]
    calibration = [
        f"ring_front_center,1500.0,1500.0,775.0,580.0,1550,1160,"
        f"{q[0]!r},{q[1]!r},{q[2]!r},{q[3]!r},{t[0]!r},{t[1]!r},{t[2]!r}"
    ]

    root.mkdir(parents=True, exist_ok=True)
    (root / "poses.csv").write_text(header_poses + "\r\n" + "\r\n".join(poses) + "\r\n")
    (root / "annotations.csv").write_text(header_ann + "\r\n" + "\r\n".join(annotations) + "\r\n")
    (root / "calibration.csv").write_text(header_calib + "\r\n" + "\r\n".join(calibration) + "\r\n")
    for i, ts in enumerate((2000000000, 2100000000, 2200000000), start=1):
        write_rbpc(root / "lidar" / f"{ts}.rbpc", cloud(seed=20 + i))
        img = root / "cameras" / "ring_front_center" / f"{ts}.png"
        img.parent.mkdir(parents=True, exist_ok=True)
        img.write_bytes(png_bytes(color=(60, 40 * i, 100)))


def make_waymo(root: Path) -> None:
    """Per-frame JSONL records with yaw-only headings."""
    root.mkdir(parents=True, exist_ok=True)
    cameras = [
        {
            "name": "FRONT",
            "fx": 2000.0,
            "fy": 2000.0,
            "cx": 960.0,
            "cy": 640.0,
            "width": 1920,
            "height": 1280,
            "extrinsic": pose_matrix_cam((1.5, 0.0, 2.0)),
        }
    ]
    dump(root / "context.json", {"name": "waymo_fixture", "camera_calibrations": cameras})

    frames = [
        {
            "timestamp": 3_000_000_000,
            "pose": pose_matrix((50.0, -10.0, 0.0), 0.0),
            "labels": [
                label("w_veh_1", "TYPE_VEHICLE", (12.0, 3.0, 1.0), (4.8, 2.1, 1.7), 0.5),
                label("w_ped_1", "TYPE_PEDESTRIAN", (7.0, -2.0, 0.9), (0.8, 0.8, 1.8), math.pi / 2),
            ],
        },
        {
            "timestamp": 3_100_000_000,
            "pose": pose_matrix((52.0, -10.5, 0.0), 0.1),
            "labels": [label("w_veh_1", "TYPE_VEHICLE", (11.0, 3.1, 1.0), (4.8, 2.1, 1.7), 3.0)],
        },
        {
            "timestamp": 3_200_000_000,
            "pose": pose_matrix((54.0, -11.0, 0.0), 0.2),
            "labels": [],
        },
    ]
    lines = []
    for i, fr in enumerate(frames, start=1):
        ts = fr["timestamp"]
        lidar = f"lidar/{ts}.rbpc"
        image = f"images/FRONT/{ts}.png"
        write_rbpc(root / lidar, cloud(seed=30 + i))
        (root / image).parent.mkdir(parents=True, exist_ok=True)
        (root / image).write_bytes(png_bytes(color=(100, 60, 40 * i)))
        fr = dict(fr, lidar=lidar, images={"FRONT": image})
        lines.append(json.dumps(fr, sort_keys=True))
    (root / "frames.jsonl").write_text("\n".join(lines) + "\n")


def pose_matrix_cam(position) -> list[float]:
    r = np.asarray(FWD)
    t = -r @ np.asarray(position, dtype=float)
    m = np.eye(4)
    m[:3, :3] = r
    m[:3, 3] = t
    return [float(v) for v in m.reshape(-1)]


def label(lid, type_, center, size, heading):
    return {
        "id": lid,
        "type": type_,
        "center_x": center[0],
        "center_y": center[1],
        "center_z": center[2],
        "length": size[0],
        "width": size[1],
        "height": size[2],
        "heading": heading,
    }


def make_native(root: Path) -> None:
    from tests.builders import demo_bundle

    from rebound.store import save_log

    payload_dir = root.parent / "_native_payloads"
    if payload_dir.exists():
        shutil.rmtree(payload_dir)
    bundle = demo_bundle(payload_dir, log_id="fixture_log")
    if root.exists():
        shutil.rmtree(root)
    save_log(bundle, root)
    shutil.rmtree(payload_dir)


def main() -> None:
    for name, fn in [
        ("nuscenes_style", make_nuscenes),
        ("argoverse_style", make_argoverse),
        ("waymo_style", make_waymo),
    ]:
        target = FIXTURES / name
        if target.exists():
            shutil.rmtree(target)
        fn(target)
        print(f"wrote {target}")
    make_native(FIXTURES / "native_log")
    print(f"wrote {FIXTURES / 'native_log'}")


if __name__ == "__main__":
    main()
