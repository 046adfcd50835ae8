"""Domain types for the native annotation-log interchange format.

Conventions (fixed across the whole package):
  * right-handed ego frame: x forward, y left, z up
  * quaternions are scalar-first Hamilton (w, x, y, z), active rotations
  * box size is (length, width, height) with length along box-local x
  * boxes live in the ego frame of their owning frame record
"""
from __future__ import annotations

import math
import secrets
from dataclasses import dataclass, field
from pathlib import Path

Vec3 = tuple[float, float, float]

SOURCE_DATASETS = ("nuscenes_style", "argoverse_style", "waymo_style", "native")

# unit-norm tolerance enforced on stored rotations
UNIT_NORM_TOL = 1e-9


def new_instance_id() -> str:
    """Fresh 128-bit random id as a hex string."""
    return secrets.token_hex(16)


@dataclass(frozen=True)
class Quaternion:
    """Unit quaternion, scalar first, Hamilton convention, active."""

    w: float
    x: float
    y: float
    z: float

    def __post_init__(self) -> None:
        # keep components plain Python floats (exact equality, clean repr/JSON)
        for name in ("w", "x", "y", "z"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @classmethod
    def identity(cls) -> "Quaternion":
        return cls(1.0, 0.0, 0.0, 0.0)

    def norm(self) -> float:
        return math.sqrt(self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z)

    def normalized(self) -> "Quaternion":
        n = self.norm()
        if n == 0.0:
            raise ValueError("cannot normalize zero quaternion")
        return Quaternion(self.w / n, self.x / n, self.y / n, self.z / n)

    def is_unit(self, tol: float = UNIT_NORM_TOL) -> bool:
        return abs(self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z - 1.0) <= tol

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.w, self.x, self.y, self.z)


@dataclass(frozen=True)
class SE3Pose:
    """Rigid transform: rotate by `rotation`, then translate."""

    translation: Vec3
    rotation: Quaternion

    def __post_init__(self) -> None:
        object.__setattr__(self, "translation", tuple(float(v) for v in self.translation))

    @classmethod
    def identity(cls) -> "SE3Pose":
        return cls((0.0, 0.0, 0.0), Quaternion.identity())


@dataclass(frozen=True)
class Box3D:
    """Oriented cuboid annotation in the ego frame of its owning frame."""

    center: Vec3
    size: Vec3  # (length, width, height)
    rotation: Quaternion
    category: str
    instance_id: str
    confidence: float | None = None
    attributes: dict[str, str] = field(default_factory=dict)
    modified: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "size", tuple(float(v) for v in self.size))
        if self.confidence is not None:
            object.__setattr__(self, "confidence", float(self.confidence))

    def ego_distance(self) -> float:
        cx, cy, cz = self.center
        return math.sqrt(cx * cx + cy * cy + cz * cz)


@dataclass(frozen=True)
class CameraCalibration:
    """Pinhole camera: ego->camera extrinsic plus intrinsics in pixels.

    Camera frame is optical: z forward, x right, y down.
    """

    name: str
    extrinsic: SE3Pose  # ego -> camera
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int


@dataclass(frozen=True)
class FrameRecord:
    frame_id: str
    timestamp: int  # nanoseconds
    ego_pose: SE3Pose  # ego -> global
    pointcloud_ref: str  # path relative to the log root
    image_refs: dict[str, str] = field(default_factory=dict)  # camera name -> relative path


@dataclass
class PointCloud:
    """Ego-frame points as an (N, 4) float32 array of x, y, z, intensity."""

    points: "object"  # numpy (N, 4) float32; kept loose to avoid importing numpy here

    def __len__(self) -> int:
        return len(self.points)


@dataclass(eq=True)
class LogBundle:
    """One converted driving log; immutable by convention after load.

    ``payload_map`` resolves relative sensor refs (point clouds, images) to
    absolute source files; it is provenance, not content, and is excluded
    from equality.
    """

    log_id: str
    source_dataset: str
    cameras: list[CameraCalibration]
    frames: list[FrameRecord]
    annotations: dict[str, list[Box3D]]
    predictions: dict[str, dict[str, list[Box3D]]]
    vocabulary: list[str]
    payload_map: dict[str, Path] = field(default_factory=dict, compare=False, repr=False)

    def frame_ids(self) -> list[str]:
        return [f.frame_id for f in self.frames]

    def frame(self, frame_id: str) -> FrameRecord:
        for f in self.frames:
            if f.frame_id == frame_id:
                return f
        raise KeyError(frame_id)

    def camera(self, name: str) -> CameraCalibration:
        for c in self.cameras:
            if c.name == name:
                return c
        raise KeyError(name)
