import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aads.geometry import (CameraIntrinsics, Pose, ViewSample, project, project_points, rotation_z, unproject,
                           unproject_points)

CAM = CameraIntrinsics(100.0, 100.0, 50.0, 50.0, 100, 100)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def test_principal_axis_point():
    pix, depth = project([0.0, 0.0, 1.0], CAM, Pose())
    assert np.allclose(pix, [50, 50]) and depth == 1.0


def test_point_beyond_raster_is_out_of_frustum():
    assert project([1.0, 0.0, 1.0], CAM, Pose()) is None
    uv, z, inside = project_points(np.array([[1.0, 0.0, 1.0]]), CAM, Pose())
    assert np.allclose(uv, [[150, 50]]) and z[0] == 1.0 and not inside[0]


def test_point_behind_camera_is_out_of_frustum():
    assert project([0.0, 0.0, -2.0], CAM, Pose()) is None


def test_unproject_examples():
    assert np.allclose(unproject([50, 50], 2.0, CAM, Pose()), [0, 0, 2])
    pose = Pose(rotation_z(0.7) @ Pose.look_at([0, 0, 0], [1, 0, 0]).rotation, [1.0, 2.0, 3.0])
    assert np.allclose(unproject([CAM.cx, CAM.cy], 4.0, CAM, pose), pose.center + 4.0 * pose.optical_axis)


def test_unproject_rejects_non_positive_depth():
    with pytest.raises(ValueError):
        unproject([10, 10], 0.0, CAM, Pose())


def test_round_trip_random_samples():
    rng = np.random.default_rng(0)
    pose = Pose(random_rotation(rng), rng.normal(size=3))
    pix = rng.uniform([0, 0], [99, 99], size=(1000, 2))
    depth = rng.uniform(0.5, 50, 1000)
    world = unproject_points(pix, depth, CAM, pose)
    uv, z, inside = project_points(world, CAM, pose)
    assert inside.all()
    assert np.abs(uv - pix).max() <= 1e-9 and np.abs(z - depth).max() <= 1e-9
    back = unproject_points(uv, z, CAM, pose)
    assert np.abs(back - world).max() <= 1e-9 * max(1.0, np.abs(world).max())


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_pose_algebra(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (Pose(random_rotation(rng), rng.normal(size=3)) for _ in range(3))
    left = a.compose(b).compose(c)
    right = a.compose(b.compose(c))
    assert np.allclose(left.rotation, right.rotation, atol=1e-9)
    assert np.allclose(left.translation, right.translation, atol=1e-9)
    ident = a.compose(a.inverse())
    assert np.allclose(ident.rotation, np.eye(3), atol=1e-9)
    assert np.allclose(ident.translation, 0, atol=1e-9)


def test_pose_validation():
    with pytest.raises(ValueError):
        Pose(np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(ValueError):
        Pose(np.eye(3) * 1.1)


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        CameraIntrinsics(0.0, 1.0, 0.0, 0.0, 10, 10)
    with pytest.raises(ValueError):
        CameraIntrinsics(1.0, 1.0, 10.0, 0.0, 10, 10)


def test_look_at_convention():
    # Camera looking along +y with z up: world +x is image right, the ground is image down.
    intr = CameraIntrinsics.from_fov(64, 48, 70.0)
    pose = Pose.look_at([0, 0, 1.5], [0, 10, 1.5])
    uv, _, _ = project_points(np.array([[1.0, 5.0, 1.5], [0.0, 5.0, 0.0]]), intr, pose)
    assert uv[0, 0] > intr.cx and np.isclose(uv[0, 1], intr.cy)
    assert uv[1, 1] > intr.cy and np.isclose(uv[1, 0], intr.cx)
    assert np.isclose(np.linalg.det(pose.rotation), 1.0)


def test_view_sample_shape_check():
    intr = CameraIntrinsics.from_fov(8, 6, 60.0)
    with pytest.raises(ValueError):
        ViewSample(np.zeros((6, 8, 3)), np.ones((5, 8)), np.zeros((6, 8), int), intr, Pose())
    with pytest.raises(ValueError):
        ViewSample(np.zeros((6, 7, 3)), np.ones((6, 8)), np.zeros((6, 8), int), intr, Pose())
