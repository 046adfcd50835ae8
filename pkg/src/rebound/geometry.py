"""Quaternion/SE(3) algebra, cuboid geometry, pinhole projection and the
constrained drag modes.

Everything here is a pure function over immutable inputs. Vectors are
accepted as any 3-sequence and returned as numpy float64 arrays unless the
operation produces a domain type.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import DegenerateDrag, DegenerateView
from .types import Box3D, CameraCalibration, Quaternion, SE3Pose, Vec3

NEAR_CLIP_M = 0.1
SLAB_EPS = 1e-12
DRAG_PLANE_EPS = 1e-9
VIEW_DIR_EPS = 1e-6

ArrayLike = Sequence[float]


@dataclass(frozen=True)
class Ray:
    """Half-line with unit direction."""

    origin: Vec3
    direction: Vec3

    def __post_init__(self) -> None:
        d = np.asarray(self.direction, dtype=float)
        n = float(np.linalg.norm(d))
        if n == 0.0:
            raise ValueError("ray direction must be nonzero")
        if abs(n - 1.0) > 1e-12:
            d = d / n
            object.__setattr__(self, "direction", (float(d[0]), float(d[1]), float(d[2])))

    def point_at(self, t: float) -> np.ndarray:
        return np.asarray(self.origin, dtype=float) + t * np.asarray(self.direction, dtype=float)


# ---------------------------------------------------------------------------
# quaternion algebra

def quat_mul(a: Quaternion, b: Quaternion) -> Quaternion:
    return Quaternion(
        a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
        a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
        a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
        a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
    )


def quat_conjugate(q: Quaternion) -> Quaternion:
    return Quaternion(q.w, -q.x, -q.y, -q.z)


def quat_from_yaw(yaw: float) -> Quaternion:
    half = 0.5 * yaw
    return Quaternion(math.cos(half), 0.0, 0.0, math.sin(half))


def quat_rotate(q: Quaternion, v: ArrayLike) -> np.ndarray:
    """Rotate a 3-vector by a unit quaternion (v' = q v q*)."""
    vec = np.asarray(v, dtype=float)
    u = np.array([q.x, q.y, q.z], dtype=float)
    t = 2.0 * np.cross(u, vec)
    return vec + q.w * t + np.cross(u, t)


def quat_to_matrix(q: Quaternion) -> np.ndarray:
    w, x, y, z = q.w, q.x, q.y, q.z
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ],
        dtype=float,
    )


def quat_from_matrix(m: ArrayLike) -> Quaternion:
    """Rotation matrix to unit quaternion (Shepperd's method)."""
    r = np.asarray(m, dtype=float)
    t = r[0, 0] + r[1, 1] + r[2, 2]
    if t > 0:
        s = math.sqrt(t + 1.0) * 2.0
        q = Quaternion(0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s)
    elif r[0, 0] >= r[1, 1] and r[0, 0] >= r[2, 2]:
        s = math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
        q = Quaternion((r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s)
    elif r[1, 1] >= r[2, 2]:
        s = math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
        q = Quaternion((r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s)
    else:
        s = math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
        q = Quaternion((r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s)
    return q.normalized()


def quat_angle(a: Quaternion, b: Quaternion) -> float:
    """Geodesic angle in radians between two rotations, in [0, pi]."""
    d = quat_mul(quat_conjugate(a), b)
    vec = math.sqrt(d.x * d.x + d.y * d.y + d.z * d.z)
    return 2.0 * math.atan2(vec, abs(d.w))


def yaw_pitch_roll(q: Quaternion) -> tuple[float, float, float]:
    """Intrinsic z-y'-x'' Euler angles of the rotation."""
    w, x, y, z = q.w, q.x, q.y, q.z
    yaw = math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))
    sp = max(-1.0, min(1.0, 2.0 * (w * y - z * x)))
    pitch = math.asin(sp)
    roll = math.atan2(2.0 * (w * x + y * z), 1.0 - 2.0 * (x * x + y * y))
    return yaw, pitch, roll


def quat_yaw(q: Quaternion) -> float:
    return yaw_pitch_roll(q)[0]


# ---------------------------------------------------------------------------
# SE(3)

def se3_apply(T: SE3Pose, p: ArrayLike) -> np.ndarray:
    return quat_rotate(T.rotation, p) + np.asarray(T.translation, dtype=float)


def se3_invert(T: SE3Pose) -> SE3Pose:
    rinv = quat_conjugate(T.rotation)
    t = -quat_rotate(rinv, T.translation)
    return SE3Pose((float(t[0]), float(t[1]), float(t[2])), rinv)


def se3_compose(A: SE3Pose, B: SE3Pose) -> SE3Pose:
    """Transform applying B first, then A."""
    rot = quat_mul(A.rotation, B.rotation).normalized()
    t = se3_apply(A, B.translation)
    return SE3Pose((float(t[0]), float(t[1]), float(t[2])), rot)


# ---------------------------------------------------------------------------
# cuboids

# Corner index encodes local-axis signs bitwise: bit0 -> x (length),
# bit1 -> y (width), bit2 -> z (height); a clear bit is the positive side.
_CORNER_SIGNS = np.array(
    [
        [1 if not (i & 1) else -1, 1 if not (i & 2) else -1, 1 if not (i & 4) else -1]
        for i in range(8)
    ],
    dtype=float,
)

# The 12 edges connect corners differing in exactly one index bit.
BOX_EDGES: tuple[tuple[int, int], ...] = tuple(
    (i, i | bit) for bit in (1, 2, 4) for i in range(8) if not (i & bit)
)


def box_corners(box: Box3D) -> np.ndarray:
    """All 8 corners, (8, 3), in canonical bit order."""
    half = 0.5 * np.asarray(box.size, dtype=float)
    local = _CORNER_SIGNS * half
    rot = quat_to_matrix(box.rotation)
    return local @ rot.T + np.asarray(box.center, dtype=float)


def point_in_box(box: Box3D, p: ArrayLike) -> bool:
    """Boundary-inclusive containment test in the box-local frame."""
    d = np.asarray(p, dtype=float) - np.asarray(box.center, dtype=float)
    local = quat_rotate(quat_conjugate(box.rotation), d)
    half = 0.5 * np.asarray(box.size, dtype=float)
    return bool(np.all(np.abs(local) <= half))


# ---------------------------------------------------------------------------
# pinhole projection

def project_point(cam: CameraCalibration, p_ego: ArrayLike) -> tuple[float, float] | None:
    """Project an ego-frame point; None when at or behind the near plane.

    Off-image pixels are returned unclamped.
    """
    p_cam = se3_apply(cam.extrinsic, p_ego)
    if p_cam[2] <= NEAR_CLIP_M:
        return None
    u = cam.fx * p_cam[0] / p_cam[2] + cam.cx
    v = cam.fy * p_cam[1] / p_cam[2] + cam.cy
    return (float(u), float(v))


def _pinhole(cam: CameraCalibration, p_cam: np.ndarray) -> tuple[float, float]:
    return (
        float(cam.fx * p_cam[0] / p_cam[2] + cam.cx),
        float(cam.fy * p_cam[1] / p_cam[2] + cam.cy),
    )


Segment2D = tuple[tuple[float, float], tuple[float, float]]


def project_box_wireframe(cam: CameraCalibration, box: Box3D) -> list[Segment2D]:
    """Project the 12 box edges, clipping against the near plane.

    Edges fully behind the near plane are dropped; crossing edges are cut at
    z = NEAR_CLIP_M in the camera frame before projecting.
    """
    corners = box_corners(box)
    rot = quat_to_matrix(cam.extrinsic.rotation)
    cam_pts = corners @ rot.T + np.asarray(cam.extrinsic.translation, dtype=float)

    segments: list[Segment2D] = []
    for i, j in BOX_EDGES:
        a, b = cam_pts[i], cam_pts[j]
        za, zb = a[2], b[2]
        if za <= NEAR_CLIP_M and zb <= NEAR_CLIP_M:
            continue
        if za <= NEAR_CLIP_M or zb <= NEAR_CLIP_M:
            t = (NEAR_CLIP_M - za) / (zb - za)
            clipped = a + t * (b - a)
            clipped[2] = NEAR_CLIP_M  # exact plane, guards rounding
            if za <= NEAR_CLIP_M:
                a = clipped
            else:
                b = clipped
        segments.append((_pinhole(cam, a), _pinhole(cam, b)))
    return segments


# ---------------------------------------------------------------------------
# picking

def ray_box_intersect(ray: Ray, box: Box3D) -> float | None:
    """Smallest t >= 0 at which the ray is inside the oriented box.

    Slab method in the box-local frame; returns 0.0 for rays starting
    inside, None on a miss.
    """
    rinv = quat_conjugate(box.rotation)
    o = quat_rotate(rinv, np.asarray(ray.origin, dtype=float) - np.asarray(box.center, dtype=float))
    d = quat_rotate(rinv, ray.direction)
    half = 0.5 * np.asarray(box.size, dtype=float)

    t_min, t_max = -math.inf, math.inf
    for k in range(3):
        if abs(d[k]) < SLAB_EPS:
            if abs(o[k]) > half[k]:
                return None
            continue
        t1 = (-half[k] - o[k]) / d[k]
        t2 = (half[k] - o[k]) / d[k]
        if t1 > t2:
            t1, t2 = t2, t1
        t_min = max(t_min, t1)
        t_max = min(t_max, t2)
        if t_min > t_max:
            return None
    if t_max < 0.0:
        return None
    return max(t_min, 0.0)


def _ray_plane_t(ray: Ray, point: np.ndarray, normal: np.ndarray) -> float:
    denom = float(np.dot(normal, ray.direction))
    if abs(denom) <= DRAG_PLANE_EPS:
        raise DegenerateDrag("drag ray is parallel to the picking plane")
    return float(np.dot(normal, point - np.asarray(ray.origin, dtype=float))) / denom


# ---------------------------------------------------------------------------
# drag modes

def drag_horizontal(box: Box3D, grab: Ray, release: Ray) -> Box3D:
    """Translate in x/y along the horizontal plane through the box center;
    z, size and rotation are preserved bit-identically."""
    center = np.asarray(box.center, dtype=float)
    normal = np.array([0.0, 0.0, 1.0])
    if abs(grab.direction[2]) <= DRAG_PLANE_EPS or abs(release.direction[2]) <= DRAG_PLANE_EPS:
        raise DegenerateDrag("drag ray is parallel to the horizontal plane")
    hit_a = grab.point_at(_ray_plane_t(grab, center, normal))
    hit_b = release.point_at(_ray_plane_t(release, center, normal))
    delta = hit_b - hit_a
    new_center = (box.center[0] + float(delta[0]), box.center[1] + float(delta[1]), box.center[2])
    return replace(box, center=new_center)


def drag_vertical(box: Box3D, grab: Ray, release: Ray, view_dir: ArrayLike) -> Box3D:
    """Translate along z on a camera-facing vertical plane through the
    center; x, y, size and rotation are preserved bit-identically."""
    v = np.asarray(view_dir, dtype=float)
    horiz = np.array([v[0], v[1], 0.0])
    n = float(np.linalg.norm(horiz))
    if n < VIEW_DIR_EPS:
        raise DegenerateView("view direction is nearly vertical")
    normal = horiz / n
    center = np.asarray(box.center, dtype=float)
    hit_a = grab.point_at(_ray_plane_t(grab, center, normal))
    hit_b = release.point_at(_ray_plane_t(release, center, normal))
    new_center = (box.center[0], box.center[1], box.center[2] + float(hit_b[2] - hit_a[2]))
    return replace(box, center=new_center)


def rotate_about_z(box: Box3D, delta_yaw: float) -> Box3D:
    """Yaw the box in place; center and size are untouched."""
    rot = quat_mul(quat_from_yaw(delta_yaw), box.rotation).normalized()
    return replace(box, rotation=rot)
