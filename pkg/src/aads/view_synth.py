"""Warp reference views into a target camera.

For each reference: forward-map its depth into the target (a depth proxy),
close small proxy holes, then backward-map colors through the proxy with a
depth test against the reference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import (CameraIntrinsics, Pose, ViewSample, depth_to_points, pixel_grid,
                       project_points, unproject_points)
from .laplace import harmonic_fill
from .render import NEAR, splat_points, grid_mesh_triangles, screen_triangle_fragments, zbuffer

FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)
MESH_MAX_RATIO = 1.5


@dataclass
class WarpedView:
    """A reference resampled into the target camera.

    ``occlusion_mask`` is True where the reference cannot supply the pixel;
    there ``depth_proxy`` is NaN and ``color`` is zero.
    """

    color: np.ndarray
    depth_proxy: np.ndarray
    occlusion_mask: np.ndarray
    source_index: int
    ref_pose: Pose | None = None


def axis_angle(pose_a: Pose, pose_b: Pose) -> float:
    """Angle in radians between two cameras' optical axes."""
    c = float(np.clip(pose_a.optical_axis @ pose_b.optical_axis, -1.0, 1.0))
    return float(np.arccos(c))


def reference_score(ref: Pose, target: Pose) -> float:
    """Center distance scaled up by the optical-axis angle: ``d * (1 + angle / pi)``."""
    return float(np.linalg.norm(ref.center - target.center) * (1 + axis_angle(ref, target) / np.pi))


def select_references(target: Pose, dataset, k: int = 4, score=reference_score) -> list:
    """The ``k`` best-scoring references, ascending; ties keep dataset order."""
    dataset = list(dataset)
    if not dataset:
        raise ValueError("select_references: dataset is empty")
    scores = np.array([score(v.pose, target) for v in dataset])
    order = np.argsort(scores, kind="stable")[: min(k, len(dataset))]
    return [dataset[i] for i in order]


def forward_map_depth(ref: ViewSample, intrinsics: CameraIntrinsics, pose: Pose,
                      method: str = "mesh", max_ratio: float = MESH_MAX_RATIO) -> np.ndarray:
    """Forward-map the reference's depth into the target camera.

    ``method="splat"`` scatters each valid pixel as a z-buffered 2x2 splat
    carrying the point's own depth.  ``method="mesh"`` is described below.

    The valid reference pixels are triangulated on the pixel grid and the
    mesh is rasterized with a z-buffer, so planar surfaces keep their exact
    depth under magnification and at grazing angles.  Triangles spanning a
    far/near ratio above ``max_ratio`` are cut out; valid pixels that end up
    in no triangle are splatted to their nearest target pixel.
    """
    h, w = intrinsics.shape
    valid = np.isfinite(ref.depth) & (ref.depth > 0)
    if not valid.any():
        return np.full((h, w), np.nan)
    if method == "splat":
        pts, _ = depth_to_points(ref.depth, ref.intrinsics, ref.pose)
        return splat_points(pts, intrinsics, pose, footprint="2x2")[0]
    if method != "mesh":
        raise ValueError(f"unknown forward-map method {method!r}")
    pts = np.full((ref.depth.size, 3), np.nan)
    world, _ = depth_to_points(ref.depth, ref.intrinsics, ref.pose)
    pts[np.flatnonzero(valid)] = world
    cam = pose.to_camera(pts)
    z = cam[:, 2]
    tris = grid_mesh_triangles(valid, ref.depth, max_ratio)
    front = np.all(z[tris] > NEAR, axis=1)
    tris = tris[front]
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = np.column_stack([intrinsics.fx * cam[:, 0] / z + intrinsics.cx,
                              intrinsics.fy * cam[:, 1] / z + intrinsics.cy])
    pix, zz, ids = screen_triangle_fragments(uv[tris], 1.0 / z[tris], (h, w))
    lone = valid.ravel().copy()
    lone[tris.ravel()] = False
    lone &= z > NEAR
    lone_idx = np.flatnonzero(lone)
    if len(lone_idx):
        cu = np.floor(uv[lone_idx, 0] + 0.5)
        cv = np.floor(uv[lone_idx, 1] + 0.5)
        ok = (cu >= 0) & (cu < w) & (cv >= 0) & (cv < h)
        pix = np.concatenate([pix, (cv[ok] * w + cu[ok]).astype(np.int64)])
        zz = np.concatenate([zz, z[lone_idx[ok]]])
        ids = np.concatenate([ids, len(tris) + lone_idx[ok]])
    depth, _ = zbuffer(pix, zz, ids, h * w)
    return depth.reshape(h, w)


def inpaint_proxy_holes(proxy: np.ndarray, max_hole_px: int = 64, tol: float = 1e-6,
                        max_iter: int = 10000) -> np.ndarray:
    """Harmonically fill 4-connected invalid regions of at most ``max_hole_px`` pixels."""
    holes = np.isnan(proxy)
    if not holes.any() or holes.all():
        return proxy.copy()
    lab, n = ndimage.label(holes, structure=FOUR_CONNECTED)
    sizes = np.bincount(lab.ravel(), minlength=n + 1)
    small = (sizes <= max_hole_px)
    small[0] = False
    fill = small[lab]
    if not fill.any():
        return proxy.copy()
    return harmonic_fill(proxy, fill, tol=tol, max_iter=max_iter)


def bilinear(image: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """Sample ``image`` at float pixel coordinates, clamping to the raster."""
    h, w = image.shape[:2]
    u = np.clip(uv[:, 0], 0, w - 1)
    v = np.clip(uv[:, 1], 0, h - 1)
    u0 = np.minimum(np.floor(u).astype(np.int64), w - 2) if w > 1 else np.zeros(len(u), np.int64)
    v0 = np.minimum(np.floor(v).astype(np.int64), h - 2) if h > 1 else np.zeros(len(v), np.int64)
    fu = (u - u0)[:, None] if w > 1 else np.zeros((len(u), 1))
    fv = (v - v0)[:, None] if h > 1 else np.zeros((len(v), 1))
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    top = image[v0, u0] * (1 - fu) + image[v0, u1] * fu
    bot = image[v1, u0] * (1 - fu) + image[v1, u1] * fu
    return top * (1 - fv) + bot * fv


def sample_depth(depth: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """Bilinear depth where all four texels are valid, nearest texel otherwise.

    Bilinear keeps grazing surfaces (depth changing by meters per row) from
    failing the occlusion test; the nearest fallback keeps silhouettes sharp.
    """
    h, w = depth.shape
    lin = bilinear(depth[..., None], uv)[:, 0]
    ui = np.clip(np.floor(uv[:, 0] + 0.5).astype(np.int64), 0, w - 1)
    vi = np.clip(np.floor(uv[:, 1] + 0.5).astype(np.int64), 0, h - 1)
    return np.where(np.isfinite(lin), lin, depth[vi, ui])


def backward_warp(ref: ViewSample, proxy: np.ndarray, intrinsics: CameraIntrinsics, pose: Pose,
                  depth_tol: float = 0.2, source_index: int = 0) -> WarpedView:
    """Gather reference colors for every valid proxy pixel.

    A pixel is occluded when its proxy is invalid, its surface point projects
    outside the reference raster, the reference depth there is invalid, or the
    reference depth differs from the point's reference-frame depth by more
    than ``depth_tol``.
    """
    shape = intrinsics.shape
    color = np.zeros((*shape, 3))
    depth_out = np.full(shape, np.nan)
    occluded = np.ones(shape, dtype=bool)
    flat = proxy.ravel()
    idx = np.flatnonzero(np.isfinite(flat) & (flat > 0))
    if len(idx):
        world = unproject_points(pixel_grid(intrinsics)[idx], flat[idx], intrinsics, pose)
        uv, z_ref, inside = project_points(world, ref.intrinsics, ref.pose)
        ok = inside.copy()
        sampled = sample_depth(ref.depth, np.where(ok[:, None], uv, 0.0))
        with np.errstate(invalid="ignore"):
            ok &= np.isfinite(sampled) & (np.abs(sampled - z_ref) <= depth_tol)
        good = idx[ok]
        rows, cols = np.unravel_index(good, shape)
        color[rows, cols] = bilinear(ref.image, uv[ok])
        depth_out[rows, cols] = flat[good]
        occluded[rows, cols] = False
    return WarpedView(np.clip(color, 0, 1), depth_out, occluded, source_index, ref.pose)


def warp_reference(ref: ViewSample, intrinsics: CameraIntrinsics, pose: Pose, source_index: int = 0,
                   max_hole_px: int = 64, depth_tol: float = 0.2, method: str = "mesh") -> WarpedView:
    proxy = inpaint_proxy_holes(forward_map_depth(ref, intrinsics, pose, method), max_hole_px)
    return backward_warp(ref, proxy, intrinsics, pose, depth_tol, source_index)
