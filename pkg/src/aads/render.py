"""Z-buffered rendering of point splats and triangles into pinhole rasters."""

from __future__ import annotations

import numpy as np

from .geometry import CameraIntrinsics, Pose

SNAP = 1e-6
NEAR = 1e-6


def zbuffer(pix_index: np.ndarray, z: np.ndarray, ids: np.ndarray, n_pixels: int):
    """Reduce candidate fragments to the nearest one per pixel.

    Ties keep the fragment with the lowest ``ids``.
    """
    depth = np.full(n_pixels, np.nan)
    winner = np.full(n_pixels, -1, dtype=np.int64)
    if len(pix_index) == 0:
        return depth, winner
    order = np.lexsort((ids, z, pix_index))
    pix_sorted = pix_index[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = pix_sorted[1:] != pix_sorted[:-1]
    sel = order[first]
    depth[pix_index[sel]] = z[sel]
    winner[pix_index[sel]] = ids[sel]
    return depth, winner


def splat_points(points_world, intrinsics: CameraIntrinsics, pose: Pose, footprint: str = "nearest"):
    """Z-buffer a point set into a camera.

    Args:
        footprint: ``"nearest"`` writes the single pixel nearest to the
            projection; ``"2x2"`` writes the pixels at the floor and ceil of
            each coordinate (one pixel per axis when it lands on a center).

    Returns:
        ``(depth, winner)``: ``(H, W)`` camera-z map (NaN where empty) and the
        index of the winning point per pixel (-1 where empty).
    """
    pts = np.atleast_2d(np.asarray(points_world, dtype=float))
    h, w = intrinsics.height, intrinsics.width
    pc = pose.to_camera(pts) if len(pts) else np.zeros((0, 3))
    z = pc[:, 2]
    front = z > NEAR
    ids = np.flatnonzero(front)
    z = z[front]
    u = intrinsics.fx * pc[front, 0] / z + intrinsics.cx
    v = intrinsics.fy * pc[front, 1] / z + intrinsics.cy
    if footprint == "nearest":
        frags = [(np.floor(u + 0.5), np.floor(v + 0.5))]
    elif footprint == "2x2":
        ur, vr = np.round(u), np.round(v)
        u = np.where(np.abs(u - ur) < SNAP, ur, u)
        v = np.where(np.abs(v - vr) < SNAP, vr, v)
        frags = [(cu, cv) for cu in (np.floor(u), np.ceil(u)) for cv in (np.floor(v), np.ceil(v))]
    else:
        raise ValueError(f"unknown footprint {footprint!r}")
    all_pix, all_z, all_ids = [], [], []
    for cu, cv in frags:
        ok = (cu >= 0) & (cu < w) & (cv >= 0) & (cv < h)
        all_pix.append((cv[ok] * w + cu[ok]).astype(np.int64))
        all_z.append(z[ok])
        all_ids.append(ids[ok])
    pix = np.concatenate(all_pix)
    zz = np.concatenate(all_z)
    ii = np.concatenate(all_ids)
    # 2x2 duplicates of the same (point, pixel) pair are harmless in the z-buffer.
    depth, winner = zbuffer(pix, zz, ii, h * w)
    return depth.reshape(h, w), winner.reshape(h, w)


def _clip_near(poly: np.ndarray) -> np.ndarray:
    """Clip a camera-frame polygon to ``z >= NEAR`` (Sutherland-Hodgman, one plane)."""
    out = []
    n = len(poly)
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        ina, inb = a[2] >= NEAR, b[2] >= NEAR
        if ina:
            out.append(a)
        if ina != inb:
            t = (NEAR - a[2]) / (b[2] - a[2])
            out.append(a + t * (b - a))
    return np.array(out)


def rasterize_triangles(triangles_world, intrinsics: CameraIntrinsics, pose: Pose):
    """Exact per-pixel ray/triangle intersection with a z-buffer.

    Args:
        triangles_world: ``(T, 3, 3)`` vertices.

    Returns:
        ``(depth, winner)`` like :func:`splat_points`; winner indexes triangles.
    """
    tris = np.asarray(triangles_world, dtype=float).reshape(-1, 3, 3)
    h, w = intrinsics.height, intrinsics.width
    depth = np.full((h, w), np.inf)
    winner = np.full((h, w), -1, dtype=np.int64)
    if len(tris) == 0:
        return np.full((h, w), np.nan), winner
    cam = pose.to_camera(tris.reshape(-1, 3)).reshape(-1, 3, 3)
    for k, tri in enumerate(cam):
        if np.all(tri[:, 2] < NEAR):
            continue
        poly = _clip_near(tri) if np.any(tri[:, 2] < NEAR) else tri
        if len(poly) < 3:
            continue
        pu = intrinsics.fx * poly[:, 0] / poly[:, 2] + intrinsics.cx
        pv = intrinsics.fy * poly[:, 1] / poly[:, 2] + intrinsics.cy
        c0 = max(int(np.floor(pu.min())), 0)
        c1 = min(int(np.ceil(pu.max())), w - 1)
        r0 = max(int(np.floor(pv.min())), 0)
        r1 = min(int(np.ceil(pv.max())), h - 1)
        if c0 > c1 or r0 > r1:
            continue
        dx = ((np.arange(c0, c1 + 1) - intrinsics.cx) / intrinsics.fx)[None, :]
        dy = ((np.arange(r0, r1 + 1) - intrinsics.cy) / intrinsics.fy)[:, None]
        t = _grid_ray_triangle(dx, dy, tri)
        block = depth[r0 : r1 + 1, c0 : c1 + 1]
        closer = t < block
        if not closer.any():
            continue
        block[closer] = t[closer]
        winner[r0 : r1 + 1, c0 : c1 + 1][closer] = k
    depth[~np.isfinite(depth)] = np.nan
    return depth, winner


def _grid_ray_triangle(dx: np.ndarray, dy: np.ndarray, tri: np.ndarray) -> np.ndarray:
    """Moller-Trumbore for camera rays ``(dx, dy, 1)`` from the origin over a pixel block.

    With ``d = (dx, dy, 1)`` the determinant and both barycentric numerators are
    dot products of ``d`` with fixed vectors, so the block costs three affine
    evaluations.  Returns camera z (the ray parameter), inf on a miss.
    """
    v0, v1, v2 = tri
    e1, e2 = v1 - v0, v2 - v0
    tvec = -v0
    k_det, k_u, k_v = np.cross(e2, e1), np.cross(e2, tvec), np.cross(tvec, e1)
    t_num = float(k_v @ e2)
    det = k_det[0] * dx + k_det[1] * dy + k_det[2]
    ok = np.abs(det) > 1e-14
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    u = (k_u[0] * dx + k_u[1] * dy + k_u[2]) * inv
    v = (k_v[0] * dx + k_v[1] * dy + k_v[2]) * inv
    t = t_num * inv
    tol = 1e-12
    hit = ok & (u >= -tol) & (v >= -tol) & (u + v <= 1 + tol) & (t > NEAR)
    return np.where(hit, t, np.inf)


def ray_triangle(origin, dirs: np.ndarray, tri: np.ndarray) -> np.ndarray:
    """Moller-Trumbore; returns the ray parameter per direction, inf on miss."""
    v0, v1, v2 = tri
    e1, e2 = v1 - v0, v2 - v0
    pvec = np.cross(dirs, e2)
    det = pvec @ e1
    ok = np.abs(det) > 1e-14
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    tvec = np.asarray(origin, dtype=float) - v0
    tvec = np.broadcast_to(tvec, dirs.shape)
    u = np.einsum("ij,ij->i", tvec, pvec) * inv
    qvec = np.cross(tvec, e1)
    v = np.einsum("ij,ij->i", dirs, qvec) * inv
    t = (qvec @ e2) * inv
    tol = 1e-12
    hit = ok & (u >= -tol) & (v >= -tol) & (u + v <= 1 + tol) & (t > NEAR)
    return np.where(hit, t, np.inf)


def render_mixed(points_world, triangles_world, intrinsics: CameraIntrinsics, pose: Pose,
                 point_footprint: str = "2x2"):
    """Z-buffer splatted points and triangles together.

    Returns ``(depth, source, index)`` where ``source`` is 0 for empty, 1 for a
    point and 2 for a triangle, and ``index`` is the winning primitive index.
    """
    pd, pw = splat_points(points_world, intrinsics, pose, point_footprint) if len(points_world) else (
        np.full(intrinsics.shape, np.nan), np.full(intrinsics.shape, -1))
    td, tw = rasterize_triangles(triangles_world, intrinsics, pose)
    p_ok = np.isfinite(pd)
    t_ok = np.isfinite(td)
    use_t = t_ok & (~p_ok | (td <= pd))
    use_p = p_ok & ~use_t
    depth = np.where(use_t, td, np.where(use_p, pd, np.nan))
    source = np.where(use_t, 2, np.where(use_p, 1, 0))
    index = np.where(use_t, tw, np.where(use_p, pw, -1))
    return depth, source, index


def screen_triangle_fragments(uv: np.ndarray, inv_z: np.ndarray, shape, max_fragments: int = 4_000_000):
    """Pixel-center coverage of screen-space triangles, fully vectorized.

    Triangles are bucketed by bounding-box size so each bucket tests a fixed
    ``B x B`` block of candidate pixels.  Depth is perspective-correct:
    inverse depth is interpolated linearly in screen space, which is exact
    for planar triangles.

    Args:
        uv: ``(T, 3, 2)`` projected vertices.
        inv_z: ``(T, 3)`` inverse camera depth per vertex.
        shape: ``(H, W)``.

    Returns:
        ``(pixel_index, z, triangle_index)`` fragment arrays.
    """
    h, w = shape
    uv = np.asarray(uv, dtype=float)
    inv_z = np.asarray(inv_z, dtype=float)
    lo = np.ceil(uv.min(axis=1) - 1e-9)
    hi = np.floor(uv.max(axis=1) + 1e-9)
    lo = np.maximum(lo, 0)
    hi = np.minimum(hi, [w - 1, h - 1])
    ext = (hi - lo).max(axis=1)
    a = uv[:, 0]
    e1 = uv[:, 1] - a
    e2 = uv[:, 2] - a
    area = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    keep = (ext >= 0) & (np.abs(area) > 1e-12) & np.all(np.isfinite(uv), axis=(1, 2))
    out_pix, out_z, out_id = [], [], []
    size = 1
    while True:
        sel = np.flatnonzero(keep & (ext < size))
        keep &= ext >= size
        if len(sel):
            oy, ox = np.mgrid[0:size, 0:size]
            ox, oy = ox.ravel(), oy.ravel()
            step = max(1, max_fragments // (size * size))
            for s in range(0, len(sel), step):
                t = sel[s : s + step]
                px = lo[t, 0:1] + ox
                py = lo[t, 1:2] + oy
                dx = px - a[t, 0:1]
                dy = py - a[t, 1:2]
                inv = 1.0 / area[t, None]
                b1 = (dx * e2[t, 1:2] - dy * e2[t, 0:1]) * inv
                b2 = (e1[t, 0:1] * dy - e1[t, 1:2] * dx) * inv
                b0 = 1.0 - b1 - b2
                tol = -1e-9
                hit = (b0 >= tol) & (b1 >= tol) & (b2 >= tol) & (px <= hi[t, 0:1]) & (py <= hi[t, 1:2])
                iz = b0 * inv_z[t, 0:1] + b1 * inv_z[t, 1:2] + b2 * inv_z[t, 2:3]
                hit &= iz > 0
                rows, cols = np.nonzero(hit)
                out_pix.append((py[rows, cols] * w + px[rows, cols]).astype(np.int64))
                out_z.append(1.0 / iz[rows, cols])
                out_id.append(t[rows])
        if not keep.any():
            break
        size *= 2
    if not out_pix:
        return np.zeros(0, np.int64), np.zeros(0), np.zeros(0, np.int64)
    return np.concatenate(out_pix), np.concatenate(out_z), np.concatenate(out_id)


def grid_mesh_triangles(valid: np.ndarray, depth: np.ndarray | None = None, max_ratio: float = np.inf) -> np.ndarray:
    """Split every fully valid pixel quad into two triangles of flat pixel indices.

    Triangles whose vertex depths span more than ``max_ratio`` (far / near)
    are dropped, which cuts the mesh at depth discontinuities.
    """
    h, w = valid.shape
    idx = np.arange(h * w).reshape(h, w)
    p00, p01 = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel()
    p10, p11 = idx[1:, :-1].ravel(), idx[1:, 1:].ravel()
    tris = np.concatenate([np.column_stack([p00, p01, p10]), np.column_stack([p01, p11, p10])])
    v = valid.ravel()
    ok = v[tris].all(axis=1)
    if depth is not None and np.isfinite(max_ratio):
        d = np.where(v, depth.ravel(), 1.0)[tris]
        with np.errstate(divide="ignore", invalid="ignore"):
            ok &= d.max(axis=1) <= max_ratio * d.min(axis=1)
    return tris[ok]
