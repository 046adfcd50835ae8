import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rebound.errors import DegenerateDrag, DegenerateView
from rebound.geometry import (
    BOX_EDGES,
    Ray,
    box_corners,
    drag_horizontal,
    drag_vertical,
    point_in_box,
    project_box_wireframe,
    project_point,
    quat_angle,
    quat_conjugate,
    quat_from_matrix,
    quat_from_yaw,
    quat_mul,
    quat_rotate,
    quat_to_matrix,
    quat_yaw,
    ray_box_intersect,
    rotate_about_z,
    se3_apply,
    se3_compose,
    se3_invert,
)
from rebound.types import Box3D, CameraCalibration, Quaternion, SE3Pose

from .oracles import (
    clip_segment_near,
    corner_face_planes,
    point_in_box_halfspace,
    points_in_box_mask,
    random_unit_quaternion,
    ray_march_hit,
    rotate_by_matrix,
    rotation_matrix,
    surface_distance,
    to_camera_frame,
)

RT2 = math.sqrt(2.0) / 2.0


def make_box(center=(0.0, 0.0, 0.0), size=(4.0, 2.0, 2.0), rotation=Quaternion.identity(), **kw):
    defaults = dict(category="car", instance_id="b0")
    defaults.update(kw)
    return Box3D(center=center, size=size, rotation=rotation, **defaults)


unit_quats = (
    st.tuples(*[st.floats(-1, 1, allow_nan=False) for _ in range(4)])
    .filter(lambda t: sum(v * v for v in t) > 1e-6)
    .map(lambda t: Quaternion(*t).normalized())
)

coords = st.floats(-50, 50, allow_nan=False, allow_infinity=False)
vec3 = st.tuples(coords, coords, coords)


# ---------------------------------------------------------------------------
# quaternions

def test_quat_from_yaw_identity():
    q = quat_from_yaw(0.0)
    assert q == Quaternion(1.0, 0.0, 0.0, 0.0)


def test_quat_from_yaw_quarter_turn():
    q = quat_from_yaw(math.pi / 2)
    np.testing.assert_allclose(q.as_tuple(), (RT2, 0, 0, RT2), atol=1e-15)
    np.testing.assert_allclose(quat_rotate(q, (1, 0, 0)), (0, 1, 0), atol=1e-15)


def test_quat_from_yaw_half_turn():
    q = quat_from_yaw(math.pi)
    np.testing.assert_allclose(q.as_tuple(), (0, 0, 0, 1), atol=1e-15)
    np.testing.assert_allclose(quat_rotate(q, (1, 0, 0)), (-1, 0, 0), atol=1e-15)


def test_quat_rotate_identity_is_noop():
    v = (3.0, -2.0, 0.5)
    np.testing.assert_array_equal(quat_rotate(Quaternion.identity(), v), v)


def test_quat_rotate_matches_matrix_oracle():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        q = random_unit_quaternion(rng)
        v = rng.uniform(-10, 10, size=3)
        np.testing.assert_allclose(quat_rotate(q, v), rotate_by_matrix(q, v), atol=1e-12)


@given(unit_quats, vec3)
def test_quat_rotate_preserves_norm(q, v):
    assert abs(np.linalg.norm(quat_rotate(q, v)) - np.linalg.norm(v)) <= 1e-12 * max(1.0, np.linalg.norm(v))


def test_quat_matrix_round_trip():
    rng = np.random.default_rng(11)
    for _ in range(200):
        q = random_unit_quaternion(rng)
        back = quat_from_matrix(quat_to_matrix(q))
        assert quat_angle(q, back) <= 1e-9


def test_quat_yaw_extraction():
    for yaw in (-3.0, -1.2, 0.0, 0.4, 2.9):
        assert abs(quat_yaw(quat_from_yaw(yaw)) - yaw) <= 1e-12


# ---------------------------------------------------------------------------
# SE(3)

def test_se3_invert_pure_translation():
    T = SE3Pose((100.0, 50.0, 0.0), Quaternion.identity())
    np.testing.assert_allclose(se3_apply(se3_invert(T), (104, 52, 1)), (4, 2, 1), atol=1e-12)


def test_se3_invert_with_rotation_matches_matrix_oracle():
    T = SE3Pose((100.0, 50.0, 0.0), quat_from_yaw(math.pi / 2))
    got = se3_apply(se3_invert(T), (100, 54, 0))
    r = rotation_matrix(T.rotation)
    expected = r.T @ (np.array([100.0, 54.0, 0.0]) - np.array(T.translation))
    np.testing.assert_allclose(got, expected, atol=1e-12)
    np.testing.assert_allclose(got, (4, 0, 0), atol=1e-12)


def test_se3_identity_apply():
    p = (1.5, -2.0, 7.0)
    np.testing.assert_array_equal(se3_apply(SE3Pose.identity(), p), p)


@given(st.tuples(vec3, unit_quats), st.tuples(vec3, unit_quats), vec3)
@settings(max_examples=150)
def test_se3_compose_matches_sequential_apply(a, b, p):
    A = SE3Pose(a[0], a[1])
    B = SE3Pose(b[0], b[1])
    np.testing.assert_allclose(se3_apply(se3_compose(A, B), p), se3_apply(A, se3_apply(B, p)), atol=1e-9)


@given(st.tuples(vec3, unit_quats), vec3)
@settings(max_examples=150)
def test_se3_invert_is_two_sided(a, p):
    T = SE3Pose(a[0], a[1])
    Ti = se3_invert(T)
    np.testing.assert_allclose(se3_apply(se3_compose(T, Ti), p), p, atol=1e-9)
    np.testing.assert_allclose(se3_apply(se3_compose(Ti, T), p), p, atol=1e-9)


def test_se3_compose_associative():
    rng = np.random.default_rng(3)
    for _ in range(100):
        poses = [
            SE3Pose(tuple(rng.uniform(-20, 20, 3)), random_unit_quaternion(rng))
            for _ in range(3)
        ]
        A, B, C = poses
        left = se3_compose(se3_compose(A, B), C)
        right = se3_compose(A, se3_compose(B, C))
        p = rng.uniform(-5, 5, 3)
        np.testing.assert_allclose(se3_apply(left, p), se3_apply(right, p), atol=1e-9)


# ---------------------------------------------------------------------------
# cuboids

def test_box_corners_identity():
    corners = box_corners(make_box())
    expected = {(sx * 2.0, sy * 1.0, sz * 1.0) for sx in (1, -1) for sy in (1, -1) for sz in (1, -1)}
    got = {tuple(np.round(c, 12)) for c in corners}
    assert got == expected


def test_box_corners_yaw_quarter_turn_matches_matrix_oracle():
    box = make_box(rotation=quat_from_yaw(math.pi / 2))
    corners = box_corners(box)
    r = rotation_matrix(box.rotation)
    half = np.array([2.0, 1.0, 1.0])
    for i in range(8):
        signs = np.array([1 if not (i & 1) else -1, 1 if not (i & 2) else -1, 1 if not (i & 4) else -1])
        np.testing.assert_allclose(corners[i], r @ (signs * half), atol=1e-12)
    # quarter turn sends (+-2, +-1, z) to (-+1, +-2, z)
    got = {tuple(np.round(c, 9)) for c in corners}
    expected = {(-sy * 1.0, sx * 2.0, sz * 1.0) for sx in (1, -1) for sy in (1, -1) for sz in (1, -1)}
    assert got == expected


def test_box_corners_translation_equivariance():
    base = box_corners(make_box())
    shifted = box_corners(make_box(center=(5.0, 0.0, 0.0)))
    np.testing.assert_array_equal(shifted, base + np.array([5.0, 0.0, 0.0]))


@given(vec3, st.tuples(st.floats(0.1, 10), st.floats(0.1, 10), st.floats(0.1, 10)), unit_quats)
@settings(max_examples=150)
def test_box_corner_centroid_is_center(center, size, q):
    corners = box_corners(make_box(center=center, size=size, rotation=q))
    np.testing.assert_allclose(corners.mean(axis=0), center, atol=1e-9)


def test_point_in_box_examples():
    box = make_box()
    assert point_in_box(box, (1.9, 0.9, 0.9))
    assert not point_in_box(box, (2.1, 0.0, 0.0))
    assert point_in_box(box, (2.0, 1.0, 1.0))  # boundary inclusive


def test_point_in_box_matches_halfspace_oracle():
    rng = np.random.default_rng(13)
    for _ in range(1000):
        box = make_box(
            center=tuple(rng.uniform(-10, 10, 3)),
            size=tuple(rng.uniform(0.2, 6.0, 3)),
            rotation=random_unit_quaternion(rng),
        )
        p = np.asarray(box.center) + rng.uniform(-5, 5, 3)
        assert point_in_box(box, p) == point_in_box_halfspace(box_corners(box), p)


@given(vec3, st.tuples(st.floats(0.1, 10), st.floats(0.1, 10), st.floats(0.1, 10)), unit_quats)
@settings(max_examples=100)
def test_box_center_always_inside(center, size, q):
    assert point_in_box(make_box(center=center, size=size, rotation=q), center)


# ---------------------------------------------------------------------------
# projection

def front_camera(**kw):
    defaults = dict(
        name="cam",
        extrinsic=SE3Pose.identity(),
        fx=1000.0,
        fy=1000.0,
        cx=500.0,
        cy=500.0,
        width=1000,
        height=1000,
    )
    defaults.update(kw)
    return CameraCalibration(**defaults)


def test_project_point_principal_point():
    assert project_point(front_camera(), (0, 0, 10)) == (500.0, 500.0)


def test_project_point_similar_triangles():
    assert project_point(front_camera(), (1, 0, 10)) == (600.0, 500.0)


def test_project_point_behind_camera():
    assert project_point(front_camera(), (0, 0, -5)) is None
    assert project_point(front_camera(), (0, 0, 0.1)) is None  # at the near plane


def test_wireframe_full_box_in_front():
    cam = front_camera()
    box = make_box(center=(0.0, 0.0, 10.0))
    segments = project_box_wireframe(cam, box)
    assert len(segments) == 12
    corners = box_corners(box)
    projected = {tuple(np.round(project_point(cam, c), 9)) for c in corners}
    endpoints = {tuple(np.round(e, 9)) for seg in segments for e in seg}
    assert endpoints == projected


def test_wireframe_box_behind():
    assert project_box_wireframe(front_camera(), make_box(center=(0.0, 0.0, -10.0))) == []


def test_wireframe_straddling_near_plane_matches_clip_oracle():
    cam = front_camera()
    box = make_box(center=(0.0, 0.0, 0.05), size=(1.0, 1.0, 0.2))
    segments = project_box_wireframe(cam, box)
    assert len(segments) == 8  # 4 front-face edges + 4 clipped crossing edges

    corners = box_corners(box)
    cam_pts = np.array([to_camera_frame(cam, c) for c in corners])
    expected = []
    for i, j in BOX_EDGES:
        clipped = clip_segment_near(cam_pts[i].copy(), cam_pts[j].copy(), 0.1)
        if clipped is None:
            continue
        a, b = clipped
        expected.append(
            (
                (cam.fx * a[0] / a[2] + cam.cx, cam.fy * a[1] / a[2] + cam.cy),
                (cam.fx * b[0] / b[2] + cam.cx, cam.fy * b[1] / b[2] + cam.cy),
            )
        )

    def norm(segs):
        return sorted(tuple(np.round(np.asarray(s).ravel(), 6)) for s in segs)

    assert norm(segments) == norm(expected)


# ---------------------------------------------------------------------------
# picking

def test_ray_box_axis_aligned_entry():
    box = make_box(center=(5.0, 0.0, 0.0), size=(2.0, 2.0, 2.0))
    t = ray_box_intersect(Ray((0, 0, 0), (1, 0, 0)), box)
    assert t == pytest.approx(4.0, abs=1e-12)


def test_ray_box_pointing_away():
    box = make_box(center=(5.0, 0.0, 0.0), size=(2.0, 2.0, 2.0))
    assert ray_box_intersect(Ray((0, 0, 0), (-1, 0, 0)), box) is None


def test_ray_box_origin_inside_returns_zero():
    box = make_box(center=(0.0, 0.0, 0.0), size=(2.0, 2.0, 2.0))
    assert ray_box_intersect(Ray((0, 0, 0), (1, 0, 0)), box) == 0.0


def test_ray_box_matches_march_oracle():
    rng = np.random.default_rng(17)
    for _ in range(200):
        box = make_box(
            center=tuple(rng.uniform(-8, 8, 3)),
            size=tuple(rng.uniform(0.5, 5.0, 3)),
            rotation=random_unit_quaternion(rng),
        )
        origin = np.asarray(box.center) + rng.uniform(8, 14) * _random_direction(rng)
        aim = np.asarray(box.center) + rng.uniform(-1.5, 1.5, 3)
        direction = aim - origin
        direction /= np.linalg.norm(direction)
        ray = Ray(tuple(origin), tuple(direction))
        t_impl = ray_box_intersect(ray, box)
        t_march = ray_march_hit(origin, direction, box, lambda pts: points_in_box_mask(box, pts), t_max=40.0)
        if t_impl is None or t_march is None:
            assert t_impl is None and t_march is None
        else:
            assert abs(t_impl - t_march) <= 2e-3


def test_ray_box_hit_lies_on_boundary():
    rng = np.random.default_rng(23)
    for _ in range(300):
        box = make_box(
            center=tuple(rng.uniform(-8, 8, 3)),
            size=tuple(rng.uniform(0.5, 5.0, 3)),
            rotation=random_unit_quaternion(rng),
        )
        origin = np.asarray(box.center) + rng.uniform(8, 14) * _random_direction(rng)
        aim = np.asarray(box.center) + rng.uniform(-1.0, 1.0, 3)
        direction = aim - origin
        direction /= np.linalg.norm(direction)
        t = ray_box_intersect(Ray(tuple(origin), tuple(direction)), box)
        if t is None:
            continue
        hit = origin + t * direction
        assert surface_distance(box_corners(box), hit) <= 1e-6


def _random_direction(rng):
    d = rng.normal(size=3)
    return d / np.linalg.norm(d)


def test_ray_requires_nonzero_direction():
    with pytest.raises(ValueError):
        Ray((0, 0, 0), (0, 0, 0))


def test_ray_normalizes_direction():
    r = Ray((0, 0, 0), (3, 0, 4))
    np.testing.assert_allclose(r.direction, (0.6, 0.0, 0.8), atol=1e-15)


# ---------------------------------------------------------------------------
# drags

def down_ray(x, y, z=10.0):
    return Ray((x, y, z), (0.0, 0.0, -1.0))


def test_drag_horizontal_identity():
    box = make_box(center=(1.0, 2.0, 0.5))
    ray = down_ray(1.0, 1.0)
    assert drag_horizontal(box, ray, ray) == box


def test_drag_horizontal_constructed_delta():
    box = make_box(center=(0.0, 0.0, 0.5))
    out = drag_horizontal(box, down_ray(1.0, 1.0), down_ray(3.0, 2.0))
    assert out.center == (2.0, 1.0, 0.5)
    assert out.size == box.size and out.rotation == box.rotation


def test_drag_horizontal_preserves_z_bitwise():
    box = make_box(center=(0.3, -0.7, 1.2345678901234567))
    grab = Ray((5.0, 5.0, 9.0), (-0.3, -0.2, -0.9))
    release = Ray((4.0, 6.0, 9.0), (-0.1, -0.4, -0.8))
    out = drag_horizontal(box, grab, release)
    assert out.center[2] == box.center[2]
    assert out.size == box.size and out.rotation == box.rotation


def test_drag_horizontal_degenerate_ray():
    box = make_box(center=(0.0, 0.0, 0.5))
    flat = Ray((0.0, -5.0, 0.5), (0.0, 1.0, 0.0))
    with pytest.raises(DegenerateDrag):
        drag_horizontal(box, flat, down_ray(1.0, 1.0))


@given(vec3, st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5))
@settings(max_examples=100)
def test_drag_horizontal_reverse_restores(center, gx, gy, rx, ry):
    box = make_box(center=center)
    grab, release = down_ray(gx, gy), down_ray(rx, ry)
    out = drag_horizontal(drag_horizontal(box, grab, release), release, grab)
    np.testing.assert_allclose(out.center, box.center, atol=1e-9)


def test_drag_vertical_identity():
    box = make_box(center=(0.0, 0.0, 1.0))
    ray = Ray((-5.0, 0.0, 1.0), (1.0, 0.0, 0.0))
    assert drag_vertical(box, ray, ray, (1.0, 0.0, 0.0)) == box


def test_drag_vertical_constructed_delta():
    box = make_box(center=(0.0, 0.0, 1.0))
    grab = Ray((-5.0, 0.0, 1.0), (1.0, 0.0, 0.0))
    release = Ray((-5.0, 0.0, 2.5), (1.0, 0.0, 0.0))
    out = drag_vertical(box, grab, release, (1.0, 0.0, 0.0))
    assert out.center == (0.0, 0.0, 2.5)


def test_drag_vertical_preserves_xy_bitwise():
    box = make_box(center=(0.123456789, -0.987654321, 1.0))
    grab = Ray((-5.0, 0.3, 1.0), (0.9, 0.1, 0.2))
    release = Ray((-5.0, -0.2, 1.5), (0.8, 0.05, 0.3))
    out = drag_vertical(box, grab, release, (0.7, 0.3, -0.2))
    assert out.center[0] == box.center[0]
    assert out.center[1] == box.center[1]


def test_drag_vertical_degenerate_view():
    box = make_box(center=(0.0, 0.0, 1.0))
    ray = Ray((-5.0, 0.0, 1.0), (1.0, 0.0, 0.0))
    with pytest.raises(DegenerateView):
        drag_vertical(box, ray, ray, (0.0, 0.0, 1.0))


# ---------------------------------------------------------------------------
# rotation edit

def test_rotate_about_z_zero_delta():
    box = make_box(rotation=quat_from_yaw(0.3))
    out = rotate_about_z(box, 0.0)
    assert quat_angle(out.rotation, box.rotation) <= 1e-12


def test_rotate_about_z_full_turn():
    box = make_box()
    for _ in range(4):
        box = rotate_about_z(box, math.pi / 2)
    assert quat_angle(box.rotation, Quaternion.identity()) <= 1e-9


def test_rotate_about_z_corners_match_matrix_oracle():
    rng = np.random.default_rng(29)
    for _ in range(100):
        box = make_box(
            center=tuple(rng.uniform(-5, 5, 3)),
            size=tuple(rng.uniform(0.5, 4.0, 3)),
            rotation=random_unit_quaternion(rng),
        )
        delta = rng.uniform(-math.pi, math.pi)
        rotated = rotate_about_z(box, delta)
        c = math.cos(delta)
        s = math.sin(delta)
        rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        center = np.asarray(box.center)
        expected = (box_corners(box) - center) @ rz.T + center
        np.testing.assert_allclose(box_corners(rotated), expected, atol=1e-9)
        assert rotated.center == box.center and rotated.size == box.size


def test_quat_mul_conjugate_inverse():
    rng = np.random.default_rng(31)
    for _ in range(100):
        q = random_unit_quaternion(rng)
        r = quat_mul(q, quat_conjugate(q))
        assert quat_angle(r, Quaternion.identity()) <= 1e-12
