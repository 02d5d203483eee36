import numpy as np
import pytest

from aads.geometry import CameraIntrinsics, Pose, ViewSample
from aads.scene import demo_scene_spec, make_synthetic_scene

# Filled by tests/test_acceptance.py: criterion number -> (passed, detail).
ACCEPTANCE = {}


def street_cam(x, y=0.0):
    return Pose.look_at([x, y, 1.5], [x, 10.0 + y, 0.8])


REF_SPOTS = [(-0.5, 0.0), (0.5, 0.0), (-0.5, 1.0), (0.5, 1.0)]


@pytest.fixture(scope="session")
def demo_scene():
    return make_synthetic_scene(demo_scene_spec())


@pytest.fixture(scope="session")
def small_refs(demo_scene):
    """Four ray-traced references of the demo scene at 64x48."""
    intr = CameraIntrinsics.from_fov(64, 48, 70.0)
    views = []
    for x, y in REF_SPOTS:
        pose = street_cam(x, y)
        img, depth, lab = demo_scene.render(intr, pose)
        views.append(ViewSample(img, depth, lab, intr, pose))
    return intr, views


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
