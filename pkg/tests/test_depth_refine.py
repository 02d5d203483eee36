import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aads.depth_refine import (RefineConfig, guided_filter, median_prune, poisson_complete, refine_depth,
                               render_point_depth)
from aads.geometry import CameraIntrinsics, Pose

CAM = CameraIntrinsics(100.0, 100.0, 50.0, 50.0, 100, 100)


def dense_harmonic(values, unknown):
    """Direct solve of the 4-neighbor Laplace system with Neumann raster borders."""
    h, w = values.shape
    idx = -np.ones((h, w), int)
    idx[unknown] = np.arange(unknown.sum())
    n = int(unknown.sum())
    a = np.zeros((n, n))
    b = np.zeros(n)
    for (i, j), k in zip(np.argwhere(unknown), idx[unknown]):
        for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            p, q = i + di, j + dj
            if 0 <= p < h and 0 <= q < w:
                a[k, k] += 1
                if unknown[p, q]:
                    a[k, idx[p, q]] -= 1
                else:
                    b[k] += values[p, q]
    out = values.copy()
    out[unknown] = np.linalg.solve(a, b)
    return out


# ---- render_point_depth ----

def test_single_axis_point():
    d = render_point_depth([[0, 0, 10.0]], CAM, Pose())
    assert np.count_nonzero(~np.isnan(d)) == 1 and d[50, 50] == 10.0


def test_point_zbuffer():
    d = render_point_depth([[0, 0, 9.0], [0, 0, 5.0]], CAM, Pose())
    assert d[50, 50] == 5.0


def test_dense_plane():
    g = np.linspace(-6, 6, 600)
    xx, yy = np.meshgrid(g, g)
    cloud = np.column_stack([xx.ravel(), yy.ravel(), np.full(xx.size, 10.0)])
    d = render_point_depth(cloud, CAM, Pose())
    valid = ~np.isnan(d)
    assert valid.all() and np.abs(d[valid] - 10).max() <= 1e-6


def test_empty_cloud():
    with pytest.raises(ValueError):
        render_point_depth(np.zeros((0, 3)), CAM, Pose())


# ---- median_prune ----

def test_constant_patch_unchanged():
    d = np.full((12, 12), 10.0)
    assert np.array_equal(median_prune(d), d)


def test_isolated_outlier_removed():
    d = np.full((9, 9), 10.0)
    d[4, 4] = 100.0
    out = median_prune(d)
    assert np.isnan(out[4, 4]) and np.count_nonzero(np.isnan(out)) == 1


def test_thin_pole_survives():
    d = np.full((15, 15), 20.0)
    d[:, 6:9] = 5.0
    out = median_prune(d)
    assert np.array_equal(out[:, 6:9], d[:, 6:9])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_prune_is_idempotent_and_only_removes(seed):
    rng = np.random.default_rng(seed)
    d = rng.uniform(2, 30, (16, 16))
    d[rng.random(d.shape) < 0.3] = np.nan
    once = median_prune(d)
    assert np.array_equal(median_prune(once), once, equal_nan=True)
    kept = ~np.isnan(once)
    assert np.array_equal(once[kept], d[kept])


def test_refine_config_validation():
    with pytest.raises(ValueError):
        RefineConfig(median_kernel=4)
    with pytest.raises(ValueError):
        RefineConfig(prune_abs=0.0)
    with pytest.raises(ValueError):
        RefineConfig.from_dict({"bogus": 1})


# ---- guided_filter ----

def test_constant_inputs():
    out = guided_filter(np.full((10, 10), 7.0), np.full((10, 10, 3), 0.4))
    assert np.allclose(out, 7.0, atol=1e-12)


def test_large_eps_gives_window_mean(rng):
    d = rng.uniform(5, 15, (20, 24))
    d[rng.random(d.shape) < 0.2] = np.nan
    guide = rng.random((20, 24, 3))
    cfg = RefineConfig(guided_radius=2, guided_eps=1e12)
    out = guided_filter(d, guide, cfg)
    # Oracle: mean over windows of the window means of valid depth (a -> 0, b -> mean).
    h, w = d.shape
    means = np.full(d.shape, np.nan)
    for i in range(h):
        for j in range(w):
            win = d[max(i - 2, 0):i + 3, max(j - 2, 0):j + 3]
            if np.any(~np.isnan(win)):
                means[i, j] = np.nanmean(win)
    expect = np.full(d.shape, np.nan)
    for i in range(h):
        for j in range(w):
            win = means[max(i - 2, 0):i + 3, max(j - 2, 0):j + 3]
            expect[i, j] = np.nanmean(win)
    valid = ~np.isnan(d)
    assert np.isnan(out[~valid]).all()
    assert np.abs(out[valid] - expect[valid]).max() <= 1e-6


def test_step_edge_preserved():
    d = np.where(np.arange(32)[None, :] < 16, 5.0, 20.0) * np.ones((24, 1))
    guide = np.repeat((d == 20.0)[..., None].astype(float), 3, axis=2)
    out = guided_filter(d, guide, RefineConfig(guided_radius=4, guided_eps=1e-4))
    mid = 12.5
    for row in out:
        crossing = np.flatnonzero(np.diff(np.sign(row - mid)))[0]
        assert abs(crossing - 15) <= 1


def test_guide_size_mismatch():
    with pytest.raises(ValueError):
        guided_filter(np.ones((4, 4)), np.ones((5, 4, 3)))


# ---- poisson_complete ----

def test_constant_hole_fill():
    d = np.full((12, 12), 3.5)
    d[4:8, 3:9] = np.nan
    assert np.allclose(poisson_complete(d), 3.5, atol=1e-9)


def test_ramp_recovered():
    x = np.arange(20.0)
    d = 2.0 + 0.3 * x[None, :] * np.ones((16, 1))
    holed = d.copy()
    holed[5:11, 6:14] = np.nan
    out = poisson_complete(holed, RefineConfig(poisson_tol=1e-9))
    assert np.abs(out - d).max() <= 1e-5


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_maximum_principle_against_dense_solve(seed):
    rng = np.random.default_rng(seed)
    d = rng.uniform(1, 20, (14, 14))
    hole = np.zeros(d.shape, bool)
    hole[3:11, 2:12] = True
    hole &= rng.random(d.shape) < 0.9
    holed = np.where(hole, np.nan, d)
    out = poisson_complete(holed, RefineConfig(poisson_tol=1e-10, poisson_max_iter=50000))
    assert np.array_equal(out[~hole], d[~hole])
    expect = dense_harmonic(np.where(hole, 0.0, d), hole)
    assert np.abs(out - expect).max() <= 1e-6
    lo, hi = d[~hole].min(), d[~hole].max()
    assert out[hole].min() >= lo - 1e-9 and out[hole].max() <= hi + 1e-9


def test_border_hole_uses_available_neighbors():
    d = np.full((8, 8), 4.0)
    d[:, :3] = np.nan
    out = poisson_complete(d)
    assert not np.isnan(out).any() and np.allclose(out, 4.0, atol=1e-6)


def test_all_invalid_rejected():
    with pytest.raises(ValueError):
        poisson_complete(np.full((4, 4), np.nan))


def test_refine_is_bit_deterministic(rng):
    d = rng.uniform(5, 15, (24, 32))
    d[rng.random(d.shape) < 0.4] = np.nan
    guide = rng.random((24, 32, 3))
    a = refine_depth(d, guide)
    b = refine_depth(d.copy(), guide.copy())
    assert np.array_equal(a, b) and not np.isnan(a).any()
