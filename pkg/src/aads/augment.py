"""Background cleanup and composition of placed agents into annotated frames."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraIntrinsics, Pose, ViewSample, pixel_rays
from .io import load_json, save_json
from .laplace import harmonic_fill
from .render import rasterize_triangles
from .scene import Box, box_triangles

log = logging.getLogger(__name__)

# Semantic label ids shared by the synthetic scenes and the composer.
LABEL_NONE = 0
LABEL_UNKNOWN = 255
AGENT_LABELS = {"car": 10, "cyclist": 11, "pedestrian": 12}
MOVABLE_LABELS = frozenset(AGENT_LABELS.values())

MIN_MASK_AREA = 8
NEAR_CLIP = 1e-3
FULL_MASK_FILL = 0.5


def remove_moving_objects(view: ViewSample, movable_classes=MOVABLE_LABELS):
    """Cut pixels labeled with a movable class out of a view.

    Returns:
        ``(cleaned, mask)``: the view with those pixels' color zeroed, depth
        invalid and label set to ``LABEL_UNKNOWN``, and the boolean mask.
    """
    mask = np.isin(view.labels, list(movable_classes))
    image = view.image.copy()
    depth = view.depth.copy()
    labels = view.labels.copy()
    image[mask] = 0.0
    depth[mask] = np.nan
    labels[mask] = LABEL_UNKNOWN
    return ViewSample(image, depth, labels, view.intrinsics, view.pose), mask


def diffusion_inpaint(image: np.ndarray, mask: np.ndarray, tol: float = 1e-6, max_iter: int = 10000) -> np.ndarray:
    """Fill masked pixels per channel with the harmonic extension of the rest.

    A fully masked frame has nothing to diffuse from and becomes uniform gray.
    """
    mask = np.asarray(mask, bool)
    if mask.shape != image.shape[:2]:
        raise ValueError(f"mask {mask.shape} does not match image {image.shape[:2]}")
    out = np.array(image, dtype=float)
    if not mask.any():
        return out
    if mask.all():
        out[:] = FULL_MASK_FILL
        return out
    chans = out[..., None] if out.ndim == 2 else out
    for c in range(chans.shape[-1]):
        chans[..., c] = harmonic_fill(chans[..., c], mask, tol=tol, max_iter=max_iter)
    return out


# ----------------------------------------------------------------------------
# composition


@dataclass
class PlacedObject:
    """A 3D box agent in world coordinates (yaw about +z)."""

    cls: str
    center: np.ndarray
    size: np.ndarray
    yaw: float = 0.0
    color: tuple = (0.2, 0.4, 0.9)

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).reshape(3)
        self.size = np.asarray(self.size, dtype=float).reshape(3)

    @property
    def degenerate(self) -> bool:
        return bool(np.any(~np.isfinite(self.size)) or np.any(self.size <= 0))

    def corners(self) -> np.ndarray:
        return Box(self.center, self.size, self.yaw).corners()

    def to_dict(self) -> dict:
        return {"class": self.cls, "center": self.center.tolist(), "size": self.size.tolist(),
                "yaw": float(self.yaw), "color": list(self.color)}

    @classmethod
    def from_dict(cls, d: dict) -> "PlacedObject":
        return cls(d["class"], d["center"], d["size"], float(d.get("yaw", 0.0)),
                   tuple(d.get("color", (0.2, 0.4, 0.9))))


@dataclass
class ObjectAnnotation:
    cls: str
    box2d: list
    center: list
    size: list
    yaw: float
    mask_id: int

    def to_dict(self) -> dict:
        return {"class": self.cls, "box2d": list(self.box2d),
                "box3d": {"center": list(self.center), "size": list(self.size), "yaw": self.yaw},
                "mask_id": self.mask_id}


@dataclass
class Annotation:
    frame: int
    objects: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"frame": self.frame, "objects": [o.to_dict() for o in self.objects]}

    @classmethod
    def from_dict(cls, d: dict) -> "Annotation":
        objs = [ObjectAnnotation(o["class"], list(o["box2d"]), list(o["box3d"]["center"]),
                                 list(o["box3d"]["size"]), float(o["box3d"]["yaw"]), int(o["mask_id"]))
                for o in d.get("objects", [])]
        return cls(int(d["frame"]), objs)

    def save(self, path) -> None:
        save_json(path, self.to_dict())

    @classmethod
    def load(cls, path) -> "Annotation":
        return cls.from_dict(load_json(path))


BOX_EDGES = [(a, b) for a in range(8) for b in range(a + 1, 8) if bin(a ^ b).count("1") == 1]


def box2d_from_corners(corners_world, intrinsics: CameraIntrinsics, pose: Pose):
    """Tight image bound of a box's part in front of the camera, clipped to the raster.

    The visible solid is the box cut by the plane ``z = NEAR_CLIP``; its
    projection is bounded by the projected corners in front of that plane and
    the points where box edges cross it.  The bound is clipped to the raster
    extent ``[-0.5, W - 0.5] x [-0.5, H - 0.5]``.

    Returns:
        ``[x0, y0, x1, y1]`` or None when nothing is in front of the camera or
        the bound misses the raster.
    """
    pc = pose.to_camera(np.asarray(corners_world, float).reshape(8, 3))
    pts = [pc[pc[:, 2] > NEAR_CLIP]]
    for a, b in BOX_EDGES:
        za, zb = pc[a, 2] - NEAR_CLIP, pc[b, 2] - NEAR_CLIP
        if za * zb < 0:
            t = za / (za - zb)
            pts.append((pc[a] + t * (pc[b] - pc[a]))[None])
    pts = np.concatenate(pts)
    if len(pts) == 0:
        return None
    u = intrinsics.fx * pts[:, 0] / pts[:, 2] + intrinsics.cx
    v = intrinsics.fy * pts[:, 1] / pts[:, 2] + intrinsics.cy
    w, h = intrinsics.width, intrinsics.height
    x0, x1 = max(u.min(), -0.5), min(u.max(), w - 0.5)
    y0, y1 = max(v.min(), -0.5), min(v.max(), h - 0.5)
    if x0 > x1 or y0 > y1:
        return None
    return [float(x0), float(y0), float(x1), float(y1)]


def _face_normals(tris: np.ndarray) -> np.ndarray:
    n = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
    return n / np.linalg.norm(n, axis=1, keepdims=True)


def compose_frame(background: np.ndarray, background_depth: np.ndarray, objects, intrinsics: CameraIntrinsics,
                  pose: Pose, frame: int = 0, min_mask_area: int = MIN_MASK_AREA):
    """Render box agents over a background and annotate them.

    Boxes are flat shaded with a headlight, depth-tested against each other
    and against the background depth (invalid background depth counts as
    infinitely far).  Instance ids start at 1 in input order; 0 is no object.
    Objects with fewer than ``min_mask_area`` visible pixels, entirely behind
    the camera, or with a non-positive size are left out (the last with a
    logged diagnostic).

    Returns:
        ``(image, instance_mask uint16, Annotation, labels)`` where ``labels``
        is the agent semantic id per pixel (0 elsewhere).
    """
    h, w = intrinsics.shape
    if background.shape[:2] != (h, w) or background_depth.shape != (h, w):
        raise ValueError("background image/depth must match the camera raster")
    image = np.array(background, dtype=float)
    bg = np.where(np.isfinite(background_depth), background_depth, np.inf)
    zbuf = bg.copy()
    inst = np.zeros((h, w), np.uint16)
    labels = np.zeros((h, w), np.uint16)
    rays = pixel_rays(np.stack(np.meshgrid(np.arange(w), np.arange(h)), -1).reshape(-1, 2), intrinsics)
    view_dirs = (rays / np.linalg.norm(rays, axis=1, keepdims=True)) @ pose.rotation.T
    kept = []
    for k, obj in enumerate(objects, start=1):
        if obj.degenerate:
            log.warning("object %d (%s) has degenerate size %s; skipped", k, obj.cls, obj.size.tolist())
            continue
        tris = box_triangles(obj.center, obj.size, obj.yaw)
        depth, tri_idx = rasterize_triangles(tris, intrinsics, pose)
        wins = np.isfinite(depth) & (depth < zbuf)
        if not wins.any():
            continue
        normals = _face_normals(tris)[tri_idx[wins]]
        cos = np.abs(np.einsum("ij,ij->i", normals, view_dirs.reshape(h, w, 3)[wins]))
        image[wins] = np.clip(np.asarray(obj.color, float)[None] * (0.35 + 0.65 * cos[:, None]), 0, 1)
        zbuf[wins] = depth[wins]
        inst[wins] = k
        labels[wins] = AGENT_LABELS.get(obj.cls, LABEL_UNKNOWN)
        kept.append((k, obj))
    ann = Annotation(frame)
    for k, obj in kept:
        area = int(np.count_nonzero(inst == k))
        if area < min_mask_area:
            # Too small to annotate; the pixels stay rendered but unowned.
            inst[inst == k] = 0
            continue
        box = box2d_from_corners(obj.corners(), intrinsics, pose)
        if box is None:
            inst[inst == k] = 0
            continue
        ann.objects.append(ObjectAnnotation(obj.cls, box, obj.center.tolist(), obj.size.tolist(),
                                            float(obj.yaw), k))
    return image, inst, ann, labels
