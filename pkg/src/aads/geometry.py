"""Pinhole cameras, rigid poses and the raster containers shared across the package.

Conventions: camera frame is +z forward, +x right, +y down.  Pixel (0, 0) is
the top-left pixel and pixel centers sit at integer coordinates.

Depth maps are plain ``(H, W)`` float64 arrays holding camera-frame z in
meters with NaN marking invalid pixels.  Images are ``(H, W, 3)`` float64
arrays with channels in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("raster size must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} raster"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @classmethod
    def from_fov(cls, width: int, height: int, hfov_deg: float) -> "CameraIntrinsics":
        """Square-pixel camera with the principal point at the raster center."""
        f = 0.5 * width / np.tan(np.radians(hfov_deg) / 2)
        return cls(f, f, (width - 1) / 2, (height - 1) / 2, width, height)


def _check_rotation(r: np.ndarray) -> None:
    if r.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got {r.shape}")
    if not np.allclose(r.T @ r, np.eye(3), atol=ORTHO_TOL, rtol=0):
        raise ValueError("rotation is not orthonormal")
    if abs(np.linalg.det(r) - 1.0) > ORTHO_TOL:
        raise ValueError("rotation must have determinant +1")


@dataclass(frozen=True)
class Pose:
    """Camera-to-world rigid transform; ``translation`` is the camera center."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        _check_rotation(r)
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @property
    def center(self) -> np.ndarray:
        return self.translation

    @property
    def optical_axis(self) -> np.ndarray:
        return self.rotation[:, 2]

    def compose(self, other: "Pose") -> "Pose":
        """``self ∘ other``: apply ``other`` first, then ``self``."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    __matmul__ = compose

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def to_world(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts, dtype=float) @ self.rotation.T + self.translation

    def to_camera(self, pts: np.ndarray) -> np.ndarray:
        return (np.asarray(pts, dtype=float) - self.translation) @ self.rotation

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0)) -> "Pose":
        """Camera at ``eye`` looking towards ``target`` with image-up along ``up``."""
        eye = np.asarray(eye, dtype=float)
        z = np.asarray(target, dtype=float) - eye
        if np.linalg.norm(z) < 1e-12:
            raise ValueError("look_at: eye and target coincide")
        z /= np.linalg.norm(z)
        x = np.cross(z, np.asarray(up, dtype=float))
        if np.linalg.norm(x) < 1e-12:
            raise ValueError("viewing direction parallel to up vector")
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        return cls(np.column_stack([x, y, z]), eye)


def rotation_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def project_points(points_world, intrinsics: CameraIntrinsics, pose: Pose):
    """Vectorized projection.

    Returns:
        ``(pixels, depth, inside)``: ``(N, 2)`` pixel coordinates, ``(N,)``
        camera-frame z, and a mask of points in front of the camera whose
        pixel lands on the raster.  Pixels of points with z <= 0 are NaN.
    """
    pc = pose.to_camera(np.atleast_2d(points_world))
    z = pc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        front = z > 0
        u = np.where(front, intrinsics.fx * pc[:, 0] / z + intrinsics.cx, np.nan)
        v = np.where(front, intrinsics.fy * pc[:, 1] / z + intrinsics.cy, np.nan)
    inside = (
        front
        & (u >= -0.5) & (u < intrinsics.width - 0.5)
        & (v >= -0.5) & (v < intrinsics.height - 0.5)
    )
    return np.column_stack([u, v]), z, inside


def project(point_world, intrinsics: CameraIntrinsics, pose: Pose):
    """Project a single world point.

    Returns ``(pixel, depth)`` or ``None`` when the point is out of frustum.
    """
    px, z, inside = project_points(np.asarray(point_world, dtype=float).reshape(1, 3), intrinsics, pose)
    if not inside[0]:
        return None
    return px[0], float(z[0])


def pixel_rays(pixels, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Camera-frame rays with unit z for the given ``(N, 2)`` pixel coordinates."""
    pixels = np.atleast_2d(np.asarray(pixels, dtype=float))
    x = (pixels[:, 0] - intrinsics.cx) / intrinsics.fx
    y = (pixels[:, 1] - intrinsics.cy) / intrinsics.fy
    return np.column_stack([x, y, np.ones_like(x)])


def unproject_points(pixels, depth, intrinsics: CameraIntrinsics, pose: Pose) -> np.ndarray:
    depth = np.asarray(depth, dtype=float)
    if np.any(~(depth > 0)):
        raise ValueError("unproject requires positive depth")
    pc = pixel_rays(pixels, intrinsics) * depth.reshape(-1, 1)
    return pose.to_world(pc)


def unproject(pixel, depth: float, intrinsics: CameraIntrinsics, pose: Pose) -> np.ndarray:
    if not depth > 0:
        raise ValueError(f"unproject requires positive depth, got {depth}")
    return unproject_points(np.asarray(pixel, dtype=float).reshape(1, 2), [depth], intrinsics, pose)[0]


def pixel_grid(intrinsics: CameraIntrinsics) -> np.ndarray:
    """``(H*W, 2)`` array of pixel-center coordinates in row-major order."""
    v, u = np.mgrid[0 : intrinsics.height, 0 : intrinsics.width]
    return np.column_stack([u.ravel(), v.ravel()]).astype(float)


def depth_to_points(depth: np.ndarray, intrinsics: CameraIntrinsics, pose: Pose):
    """World points for every valid pixel of a depth map, plus their flat indices."""
    flat = depth.ravel()
    idx = np.flatnonzero(np.isfinite(flat) & (flat > 0))
    pix = pixel_grid(intrinsics)[idx]
    return unproject_points(pix, flat[idx], intrinsics, pose), idx


def luminance(image: np.ndarray) -> np.ndarray:
    return image[..., 0] * 0.299 + image[..., 1] * 0.587 + image[..., 2] * 0.114


def invalid_depth(shape) -> np.ndarray:
    return np.full(shape, np.nan)


def validate_depth(depth: np.ndarray) -> None:
    valid = ~np.isnan(depth)
    if np.any(~np.isfinite(depth[valid])) or np.any(depth[valid] <= 0):
        raise ValueError("depth map values must be finite and positive where valid")


def validate_image(image: np.ndarray) -> None:
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"image must be (H, W, 3), got {image.shape}")
    if np.any(image < 0) or np.any(image > 1):
        raise ValueError("image channels must lie in [0, 1]")


@dataclass(frozen=True)
class ViewSample:
    """One captured reference: color, depth, labels and its camera."""

    image: np.ndarray
    depth: np.ndarray
    labels: np.ndarray
    intrinsics: CameraIntrinsics
    pose: Pose

    def __post_init__(self):
        shape = self.intrinsics.shape
        for name in ("depth", "labels"):
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} shape {getattr(self, name).shape} != camera raster {shape}")
        if self.image.shape[:2] != shape:
            raise ValueError(f"image shape {self.image.shape[:2]} != camera raster {shape}")
