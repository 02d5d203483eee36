"""Synthetic primitive scenes with an exact ray tracer.

These scenes back the test oracles and the demo pipeline: the same
primitives are exported as sampled point clouds and triangle meshes (what
the scan-based pipeline consumes) and traced analytically (ground truth).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraIntrinsics, Pose, pixel_grid, pixel_rays

EPS = 1e-9
DEFAULT_BACKGROUND = (0.55, 0.7, 0.9)


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def _checker_color(a, b, checker, base):
    if checker is None:
        return np.broadcast_to(np.asarray(base, float), (len(a), 3)).copy()
    s = checker["size"]
    c0, c1 = (np.asarray(c, float) for c in checker["colors"])
    parity = (np.floor(a / s) + np.floor(b / s)).astype(np.int64) % 2
    return np.where(parity[:, None] == 0, c0, c1)


@dataclass
class Plane:
    """Finite rectangle; ``u_axis`` is projected onto the plane."""

    center: np.ndarray
    normal: np.ndarray
    size: tuple = (200.0, 200.0)
    u_axis: np.ndarray | None = None
    color: tuple = (0.5, 0.5, 0.5)
    checker: dict | None = None
    class_id: int = 1

    def __post_init__(self):
        self.center = np.asarray(self.center, float)
        self.normal = _unit(self.normal)
        if self.u_axis is None:
            helper = np.array([1.0, 0, 0]) if abs(self.normal[0]) < 0.9 else np.array([0, 1.0, 0])
        else:
            helper = np.asarray(self.u_axis, float)
        u = helper - (helper @ self.normal) * self.normal
        self.u_axis = _unit(u)
        self.v_axis = np.cross(self.normal, self.u_axis)

    def intersect(self, o, d):
        denom = d @ self.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((self.center - o) @ self.normal) / denom
        t = np.where(np.abs(denom) > 1e-15, t, np.inf)
        p = o + t[:, None] * d
        rel = p - self.center
        a, b = rel @ self.u_axis, rel @ self.v_axis
        inside = (np.abs(a) <= self.size[0] / 2) & (np.abs(b) <= self.size[1] / 2)
        t = np.where(inside & (t > EPS), t, np.inf)
        return t

    def shade(self, p):
        rel = p - self.center
        a, b = rel @ self.u_axis, rel @ self.v_axis
        return _checker_color(a, b, self.checker, self.color)

    def triangles(self):
        hu, hv = self.size[0] / 2 * self.u_axis, self.size[1] / 2 * self.v_axis
        c = self.center
        q = [c - hu - hv, c + hu - hv, c + hu + hv, c - hu + hv]
        return np.array([[q[0], q[1], q[2]], [q[0], q[2], q[3]]])

    def sample(self, spacing):
        na = max(int(np.ceil(self.size[0] / spacing)), 1)
        nb = max(int(np.ceil(self.size[1] / spacing)), 1)
        a = (np.arange(na) + 0.5) / na * self.size[0] - self.size[0] / 2
        b = (np.arange(nb) + 0.5) / nb * self.size[1] - self.size[1] / 2
        aa, bb = np.meshgrid(a, b, indexing="ij")
        return self.center + aa.reshape(-1, 1) * self.u_axis + bb.reshape(-1, 1) * self.v_axis


@dataclass
class Box:
    """Box rotated by ``yaw`` about world +z.  Rays from inside hit the walls."""

    center: np.ndarray
    size: np.ndarray
    yaw: float = 0.0
    color: tuple = (0.8, 0.3, 0.2)
    checker: dict | None = None
    class_id: int = 2

    def __post_init__(self):
        self.center = np.asarray(self.center, float)
        self.size = np.asarray(self.size, float)
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        self.rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])

    def _local(self, p):
        return (p - self.center) @ self.rot

    def intersect(self, o, d):
        ol = self._local(o)
        dl = d @ self.rot
        half = self.size / 2
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (-half - ol) / dl
            t2 = (half - ol) / dl
        tmin = np.where(np.isnan(t1), -np.inf, np.minimum(t1, t2))
        tmax = np.where(np.isnan(t1), np.inf, np.maximum(t1, t2))
        # Rays parallel to a slab: inside the slab -> unconstrained, outside -> miss.
        par = dl == 0
        outside_slab = par & (np.abs(np.broadcast_to(ol, dl.shape)) > half)
        tmin = np.where(par, -np.inf, tmin)
        tmax = np.where(par, np.inf, tmax)
        tn = tmin.max(axis=1)
        tf = tmax.min(axis=1)
        miss = (tn > tf) | outside_slab.any(axis=1)
        t = np.where(tn > EPS, tn, np.where(tf > EPS, tf, np.inf))
        return np.where(miss, np.inf, t)

    def _face_coords(self, p):
        pl = self._local(p)
        half = self.size / 2
        axis = np.argmax(np.abs(pl) / half, axis=1)
        shifted = pl + half
        others = np.array([[1, 2], [0, 2], [0, 1]])[axis]
        rows = np.arange(len(p))
        return shifted[rows, others[:, 0]], shifted[rows, others[:, 1]]

    def shade(self, p):
        a, b = self._face_coords(p)
        return _checker_color(a, b, self.checker, self.color)

    def corners(self):
        half = self.size / 2
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], float)
        return self.center + (signs * half) @ self.rot.T

    def triangles(self):
        return box_triangles(self.center, self.size, self.yaw)

    def sample(self, spacing):
        pts = []
        for tri in self.triangles()[::2]:
            # Each consecutive triangle pair forms one face rectangle q0-q1-q2-q3.
            q0, q1, q2 = tri
            e1, e2 = q1 - q0, q2 - q1
            n1 = max(int(np.ceil(np.linalg.norm(e1) / spacing)), 1)
            n2 = max(int(np.ceil(np.linalg.norm(e2) / spacing)), 1)
            a = (np.arange(n1) + 0.5) / n1
            b = (np.arange(n2) + 0.5) / n2
            aa, bb = np.meshgrid(a, b, indexing="ij")
            pts.append(q0 + aa.reshape(-1, 1) * e1 + bb.reshape(-1, 1) * e2)
        return np.concatenate(pts)


def box_triangles(center, size, yaw) -> np.ndarray:
    """12 triangles of an oriented box, two per face, outward winding."""
    half = np.asarray(size, float) / 2
    c, s = np.cos(yaw), np.sin(yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    faces = []
    for axis in range(3):
        for sign in (-1.0, 1.0):
            u_ax, v_ax = [k for k in range(3) if k != axis]
            if sign < 0:
                u_ax, v_ax = v_ax, u_ax
            quad = []
            for su, sv in ((-1, -1), (1, -1), (1, 1), (-1, 1)):
                p = np.zeros(3)
                p[axis] = sign * half[axis]
                p[u_ax] = su * half[u_ax]
                p[v_ax] = sv * half[v_ax]
                quad.append(p)
            quad = np.array(quad) @ rot.T + np.asarray(center, float)
            faces.append([quad[0], quad[1], quad[2]])
            faces.append([quad[0], quad[2], quad[3]])
    return np.array(faces)


@dataclass
class Sphere:
    center: np.ndarray
    radius: float
    color: tuple = (0.2, 0.6, 0.3)
    class_id: int = 3
    checker: dict | None = None

    def __post_init__(self):
        self.center = np.asarray(self.center, float)

    def intersect(self, o, d):
        oc = o - self.center
        a = np.einsum("ij,ij->i", d, d)
        b = 2 * np.einsum("ij,ij->i", np.broadcast_to(oc, d.shape), d)
        c = np.einsum("ij,ij->i", np.broadcast_to(oc, d.shape), np.broadcast_to(oc, d.shape)) - self.radius**2
        disc = b * b - 4 * a * c
        sq = np.sqrt(np.maximum(disc, 0))
        t0 = (-b - sq) / (2 * a)
        t1 = (-b + sq) / (2 * a)
        t = np.where(t0 > EPS, t0, np.where(t1 > EPS, t1, np.inf))
        return np.where(disc >= 0, t, np.inf)

    def shade(self, p):
        return np.broadcast_to(np.asarray(self.color, float), (len(p), 3)).copy()

    def triangles(self, n_lat=12, n_lon=24):
        th = np.linspace(0, np.pi, n_lat + 1)
        ph = np.linspace(0, 2 * np.pi, n_lon + 1)
        pts = lambda i, j: self.center + self.radius * np.array(
            [np.sin(th[i]) * np.cos(ph[j]), np.sin(th[i]) * np.sin(ph[j]), np.cos(th[i])])
        tris = []
        for i in range(n_lat):
            for j in range(n_lon):
                a, b, c, d = pts(i, j), pts(i + 1, j), pts(i + 1, j + 1), pts(i, j + 1)
                if i > 0:
                    tris.append([a, b, d])
                if i < n_lat - 1:
                    tris.append([b, c, d])
        return np.array(tris)

    def sample(self, spacing):
        n = max(int(4 * np.pi * self.radius**2 / spacing**2), 8)
        k = np.arange(n) + 0.5
        phi = np.arccos(1 - 2 * k / n)
        theta = np.pi * (1 + 5**0.5) * k
        dirs = np.column_stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)])
        return self.center + self.radius * dirs


_FACTORIES = {"plane": Plane, "box": Box, "sphere": Sphere}


@dataclass
class TraceResult:
    t: np.ndarray
    primitive: np.ndarray
    color: np.ndarray
    class_id: np.ndarray


@dataclass
class SyntheticScene:
    primitives: list
    background: tuple = DEFAULT_BACKGROUND
    sample_spacing: float = 0.05
    _mesh: tuple | None = field(default=None, repr=False)

    def trace(self, origins, dirs) -> TraceResult:
        """First hit along ``origins + t * dirs``; ``t`` is inf on a miss."""
        d = np.atleast_2d(np.asarray(dirs, float))
        o = np.broadcast_to(np.asarray(origins, float), d.shape)
        best = np.full(len(d), np.inf)
        prim = np.full(len(d), -1, dtype=np.int64)
        for k, p in enumerate(self.primitives):
            t = p.intersect(o, d)
            closer = t < best
            best[closer] = t[closer]
            prim[closer] = k
        color = np.broadcast_to(np.asarray(self.background, float), (len(d), 3)).copy()
        cls = np.zeros(len(d), dtype=np.int64)
        for k, p in enumerate(self.primitives):
            sel = prim == k
            if sel.any():
                hit = o[sel] + best[sel, None] * d[sel]
                color[sel] = p.shade(hit)
                cls[sel] = p.class_id
        return TraceResult(best, prim, color, cls)

    def render(self, intrinsics: CameraIntrinsics, pose: Pose, supersample: int = 1):
        """Ray-traced ``(image, depth, labels)``; depth is camera z, NaN on a miss.

        ``supersample > 1`` box-averages color over an ``s x s`` sub-pixel grid;
        depth and labels always come from the pixel-center ray.
        """
        pix = pixel_grid(intrinsics)
        d_cam = pixel_rays(pix, intrinsics)
        res = self.trace(pose.center, d_cam @ pose.rotation.T)
        shape = intrinsics.shape
        depth = np.where(np.isfinite(res.t), res.t, np.nan).reshape(shape)
        labels = res.class_id.reshape(shape)
        image = res.color.reshape(*shape, 3)
        if supersample > 1:
            acc = np.zeros_like(image)
            offs = (np.arange(supersample) + 0.5) / supersample - 0.5
            for dv in offs:
                for du in offs:
                    r = self.trace(pose.center, pixel_rays(pix + [du, dv], intrinsics) @ pose.rotation.T)
                    acc += r.color.reshape(*shape, 3)
            image = acc / supersample**2
        return np.clip(image, 0, 1), depth, labels

    def mesh(self):
        """``(triangles, class_ids, colors)`` for every primitive."""
        if self._mesh is None:
            tris, cls, cols = [], [], []
            for p in self.primitives:
                t = p.triangles()
                tris.append(t)
                cls.append(np.full(len(t), p.class_id))
                cols.append(np.tile(np.asarray(p.color, float), (len(t), 1)))
            self._mesh = (np.concatenate(tris), np.concatenate(cls), np.concatenate(cols))
        return self._mesh

    def point_cloud(self, spacing: float | None = None):
        """``(points, colors, class_ids)`` sampled on every primitive surface."""
        spacing = self.sample_spacing if spacing is None else spacing
        pts, cols, cls = [], [], []
        for p in self.primitives:
            s = p.sample(spacing)
            pts.append(s)
            cols.append(p.shade(s))
            cls.append(np.full(len(s), p.class_id))
        return np.concatenate(pts), np.concatenate(cols), np.concatenate(cls)


def make_primitive(spec: dict):
    spec = dict(spec)
    kind = spec.pop("type", None)
    if kind not in _FACTORIES:
        raise ValueError(f"unknown primitive type {kind!r}; expected one of {sorted(_FACTORIES)}")
    return _FACTORIES[kind](**spec)


def make_synthetic_scene(spec) -> SyntheticScene:
    """Build a scene from ``{"primitives": [...], "background": [r, g, b]}`` or a bare list."""
    if isinstance(spec, dict):
        prims = spec.get("primitives", [])
        extra = {k: spec[k] for k in ("background", "sample_spacing") if k in spec}
    else:
        prims, extra = spec, {}
    if not prims:
        raise ValueError("scene spec needs at least one primitive")
    return SyntheticScene([make_primitive(p) for p in prims], **extra)


def demo_scene_spec() -> dict:
    """Street-like box and checkerboard scene used by the demos and acceptance tests."""
    checker = lambda s, a, b: {"size": s, "colors": [a, b]}
    return {
        "primitives": [
            {"type": "plane", "center": [0, 0, 0], "normal": [0, 0, 1], "size": [60, 60],
             "checker": checker(1.0, [0.25, 0.25, 0.28], [0.6, 0.6, 0.55]), "class_id": 1},
            {"type": "plane", "center": [0, 14, 5], "normal": [0, -1, 0], "size": [60, 10],
             "checker": checker(1.5, [0.7, 0.45, 0.35], [0.85, 0.8, 0.7]), "class_id": 4},
            {"type": "box", "center": [-1.5, 8, 1.0], "size": [2.0, 2.0, 2.0], "yaw": 0.3,
             "checker": checker(0.5, [0.15, 0.35, 0.75], [0.9, 0.85, 0.3]), "class_id": 2},
        ]
    }
