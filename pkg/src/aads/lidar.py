"""Spinning multi-beam LiDAR simulation by cube-map depth lookup.

The sensor frame is x forward, y left, z up; the sensor spins about its z
axis.  A scan renders the scene once into six 90 degree depth faces around
the sensor and then reads every (beam, azimuth) direction from the face it
falls on.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import CameraIntrinsics, Pose
from .io import read_ply, write_ply
from .render import render_mixed

log = logging.getLogger(__name__)

DEFAULT_BEAMS = tuple(np.linspace(-24.33, 2.0, 64).tolist())
MIN_BEAM_POINTS = 10

# (forward, right, down) of each face in the sensor frame; right x down = forward.
FACE_AXES = {
    "+x": ((1, 0, 0), (0, -1, 0), (0, 0, -1)),
    "-x": ((-1, 0, 0), (0, 1, 0), (0, 0, -1)),
    "+y": ((0, 1, 0), (1, 0, 0), (0, 0, -1)),
    "-y": ((0, -1, 0), (-1, 0, 0), (0, 0, -1)),
    "+z": ((0, 0, 1), (1, 0, 0), (0, 1, 0)),
    "-z": ((0, 0, -1), (1, 0, 0), (0, -1, 0)),
}
FACE_NAMES = tuple(FACE_AXES)

# Noise stream ids inside the counter hash.
_STREAM_AZIMUTH = 1
_STREAM_RANGE = 2
_STREAM_DROPOUT = 3


def face_rotation(name: str) -> np.ndarray:
    """Camera-to-sensor rotation of a face: columns are (right, down, forward)."""
    fwd, right, down = (np.asarray(a, float) for a in FACE_AXES[name])
    return np.column_stack([right, down, fwd])


@dataclass(frozen=True)
class BeamModel:
    """Vertical beam angles (degrees, ascending) plus noise and range limits."""

    beams: tuple = DEFAULT_BEAMS
    azimuth_step: float = 0.16
    sigma_range: float = 0.005
    sigma_azimuth: float = 0.05
    max_range: float = 120.0
    rng_seed: int = 0
    dropout: float = 0.0

    def __post_init__(self):
        beams = tuple(float(b) for b in np.atleast_1d(self.beams))
        object.__setattr__(self, "beams", beams)
        if not beams:
            raise ValueError("BeamModel needs at least one beam")
        if any(b2 < b1 for b1, b2 in zip(beams, beams[1:])):
            raise ValueError("BeamModel beams must be sorted ascending")
        if len(beams) > 256:
            raise ValueError("at most 256 beams fit the uint8 beam_id")
        if not 0 < self.azimuth_step <= 360:
            raise ValueError(f"azimuth_step must be in (0, 360], got {self.azimuth_step}")
        if self.sigma_range < 0 or self.sigma_azimuth < 0:
            raise ValueError("noise sigmas must be >= 0")
        if not self.max_range > 0:
            raise ValueError("max_range must be positive")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")
        if not 0 <= int(self.rng_seed) < 2**64:
            raise ValueError("rng_seed must fit in 64 unsigned bits")

    @property
    def n_azimuth(self) -> int:
        return int(np.ceil(360.0 / self.azimuth_step - 1e-9))

    def azimuths(self) -> np.ndarray:
        return np.arange(self.n_azimuth) * self.azimuth_step

    def noiseless(self) -> "BeamModel":
        return BeamModel(self.beams, self.azimuth_step, 0.0, 0.0, self.max_range, self.rng_seed, 0.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["beams"] = list(self.beams)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BeamModel":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown beam model keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class LidarScene:
    """Geometry a LiDAR can see: class-labeled points and triangles in world space."""

    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    point_classes: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    triangles: np.ndarray = field(default_factory=lambda: np.zeros((0, 3, 3)))
    triangle_classes: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))

    def __post_init__(self):
        self.points = np.asarray(self.points, float).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, float).reshape(-1, 3, 3)
        self.point_classes = np.broadcast_to(np.asarray(self.point_classes, np.int64), len(self.points)).copy()
        self.triangle_classes = np.broadcast_to(np.asarray(self.triangle_classes, np.int64),
                                                len(self.triangles)).copy()

    @property
    def empty(self) -> bool:
        return len(self.points) == 0 and len(self.triangles) == 0

    @classmethod
    def from_synthetic(cls, scene, with_points: bool = False) -> "LidarScene":
        tris, tcls, _ = scene.mesh()
        if with_points:
            pts, _, pcls = scene.point_cloud()
            return cls(pts, pcls, tris, tcls)
        return cls(triangles=tris, triangle_classes=tcls)


@dataclass
class CubeMapDepth:
    """Six square depth faces around ``origin`` with per-texel class ids.

    ``depth[f]`` holds the face-camera z (NaN where empty) and ``class_id[f]``
    the winning primitive's class (0 where empty); faces follow ``FACE_NAMES``.
    """

    depth: np.ndarray
    class_id: np.ndarray
    origin: Pose

    def __post_init__(self):
        if self.depth.ndim != 3 or self.depth.shape[0] != 6 or self.depth.shape[1] != self.depth.shape[2]:
            raise ValueError(f"cube map depth must be (6, R, R), got {self.depth.shape}")
        if self.class_id.shape != self.depth.shape:
            raise ValueError("class_id must match depth shape")

    @property
    def resolution(self) -> int:
        return self.depth.shape[1]

    def face(self, name: str) -> np.ndarray:
        return self.depth[FACE_NAMES.index(name)]

    def lookup(self, dirs: np.ndarray):
        """Nearest-texel range and class along unit sensor-frame directions.

        Returns ``(range, class_id)``; range is NaN where the texel is empty.
        """
        dirs = np.asarray(dirs, float).reshape(-1, 3)
        res = self.resolution
        f = res / 2.0
        c = (res - 1) / 2.0
        axis = np.argmax(np.abs(dirs), axis=1)
        sign = np.sign(dirs[np.arange(len(dirs)), axis])
        face = 2 * axis + (sign < 0)
        rng = np.full(len(dirs), np.nan)
        cls = np.zeros(len(dirs), np.int64)
        for k, name in enumerate(FACE_NAMES):
            sel = np.flatnonzero(face == k)
            if not len(sel):
                continue
            rot = face_rotation(name)
            local = dirs[sel] @ rot  # (right, down, forward) components
            u = np.clip(np.floor(f * local[:, 0] / local[:, 2] + c + 0.5), 0, res - 1).astype(np.int64)
            v = np.clip(np.floor(f * local[:, 1] / local[:, 2] + c + 0.5), 0, res - 1).astype(np.int64)
            z = self.depth[k, v, u]
            rng[sel] = z / local[:, 2]
            cls[sel] = self.class_id[k, v, u]
        return rng, cls


@dataclass
class LidarScan:
    """One frame of returns; points are in world coordinates."""

    points: np.ndarray
    ranges: np.ndarray
    beam_ids: np.ndarray
    azimuths: np.ndarray  # nominal firing azimuth, degrees
    class_ids: np.ndarray
    pose: Pose
    frame_id: int = 0

    def __len__(self) -> int:
        return len(self.ranges)

    def to_ply(self, path, binary: bool = True) -> None:
        write_ply(path, {
            "x": (self.points[:, 0], "f4"),
            "y": (self.points[:, 1], "f4"),
            "z": (self.points[:, 2], "f4"),
            "range": (self.ranges, "f4"),
            "beam_id": (self.beam_ids, "u1"),
            "azimuth": (self.azimuths, "f4"),
            "class_id": (self.class_ids, "u2"),
        }, binary=binary)


def load_scan_ply(path, pose: Pose | None = None, frame_id: int = 0) -> LidarScan:
    props = read_ply(path)
    pts = np.column_stack([props["x"], props["y"], props["z"]]).astype(float)
    return LidarScan(pts, props["range"].astype(float), props["beam_id"].astype(np.int64),
                     props["azimuth"].astype(float), props["class_id"].astype(np.int64),
                     pose if pose is not None else Pose(), frame_id)


def beam_directions(elevation_deg, azimuth_deg) -> np.ndarray:
    """Unit sensor-frame directions for broadcastable elevation/azimuth arrays (degrees)."""
    e = np.radians(elevation_deg)
    a = np.radians(azimuth_deg)
    e, a = np.broadcast_arrays(e, a)
    return np.stack([np.cos(e) * np.cos(a), np.cos(e) * np.sin(a), np.sin(e)], axis=-1)


def elevation_of(points_sensor: np.ndarray) -> np.ndarray:
    p = np.asarray(points_sensor, float).reshape(-1, 3)
    return np.degrees(np.arctan2(p[:, 2], np.hypot(p[:, 0], p[:, 1])))


def fit_beam_model(labeled_beams, **kwargs) -> BeamModel:
    """Fit one cone per beam (apex at the sensor) to labeled sensor-frame points.

    Each beam's vertical angle is the mean elevation of its points.  The
    angular noise is the pooled standard deviation of elevations about the
    beam means and the range noise the pooled spread of the points' distance
    to their cone, ``r * sin(e - mean_e)``.  Remaining ``BeamModel`` fields
    may be passed as keyword arguments.

    Raises:
        ValueError: a beam has fewer than 10 points.
    """
    angles, ang_res, rad_res = [], [], []
    for i, pts in enumerate(labeled_beams):
        pts = np.asarray(pts, float).reshape(-1, 3)
        if len(pts) < MIN_BEAM_POINTS:
            raise ValueError(f"beam {i} has {len(pts)} points; at least {MIN_BEAM_POINTS} are needed")
        e = elevation_of(pts)
        mean = e.mean()
        angles.append(mean)
        ang_res.append(e - mean)
        rad_res.append(np.linalg.norm(pts, axis=1) * np.sin(np.radians(e - mean)))
    if not angles:
        raise ValueError("fit_beam_model needs at least one beam")
    dof = sum(len(r) for r in ang_res) - len(angles)
    sigma_az = float(np.sqrt(sum((r**2).sum() for r in ang_res) / max(dof, 1)))
    sigma_r = float(np.sqrt(sum((r**2).sum() for r in rad_res) / max(dof, 1)))
    params = {"sigma_azimuth": sigma_az, "sigma_range": sigma_r}
    params.update(kwargs)
    return BeamModel(beams=tuple(sorted(angles)), **params)


def render_cube_map(scene: LidarScene, origin: Pose, resolution: int = 1024,
                    point_footprint: str = "2x2") -> CubeMapDepth:
    """Render six 90 degree faces from ``origin`` (sensor-to-world pose)."""
    if scene.empty:
        raise ValueError("render_cube_map: scene is empty")
    if resolution < 1:
        raise ValueError("resolution must be positive")
    intr = CameraIntrinsics(resolution / 2.0, resolution / 2.0, (resolution - 1) / 2.0, (resolution - 1) / 2.0,
                            resolution, resolution)
    depth = np.full((6, resolution, resolution), np.nan)
    cls = np.zeros((6, resolution, resolution), np.int64)
    for k, name in enumerate(FACE_NAMES):
        face_pose = Pose(origin.rotation @ face_rotation(name), origin.translation)
        d, source, index = render_mixed(scene.points, scene.triangles, intr, face_pose, point_footprint)
        depth[k] = d
        pt = source == 1
        tr = source == 2
        cls[k][pt] = scene.point_classes[index[pt]]
        cls[k][tr] = scene.triangle_classes[index[tr]]
    return CubeMapDepth(depth, cls, origin)


_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    x = (x + np.uint64(0x9E3779B97F4A7C15)) & _MASK64
    x = ((x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _MASK64
    x = ((x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _MASK64
    return x ^ (x >> np.uint64(31))


def counter_uniform(seed: int, frame: int, beam, azimuth_index, stream: int, draw: int = 0) -> np.ndarray:
    """Uniforms in (0, 1) that depend only on the key, never on evaluation order."""
    beam = np.asarray(beam, dtype=np.uint64)
    az = np.asarray(azimuth_index, dtype=np.uint64)
    with np.errstate(over="ignore"):
        h = _splitmix64(np.uint64(seed % 2**64) ^ np.uint64(0xD1B54A32D192ED03))
        h = _splitmix64(h ^ np.uint64(frame % 2**64))
        h = _splitmix64(h ^ (np.uint64(stream) << np.uint64(8)) ^ np.uint64(draw))
        h = _splitmix64(h ^ beam)
        h = _splitmix64(h ^ az)
    # 53 random bits, offset by half a step so 0 and 1 never occur.
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) / 2.0**53


def counter_normal(seed: int, frame: int, beam, azimuth_index, stream: int) -> np.ndarray:
    """Standard normals by Box-Muller over two counter uniforms."""
    u1 = counter_uniform(seed, frame, beam, azimuth_index, stream, 0)
    u2 = counter_uniform(seed, frame, beam, azimuth_index, stream, 1)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def cast_scan(model: BeamModel, cube: CubeMapDepth, pose: Pose | None = None, frame_id: int = 0) -> LidarScan:
    """Fire every (beam, azimuth) pair against the cube map.

    The azimuth of each firing is perturbed by ``N(0, sigma_azimuth)``, the
    range along the perturbed direction is read from the cube map and then
    perturbed by ``N(0, sigma_range)``.  Returns with an empty texel, a
    non-positive range or a range beyond ``max_range`` are dropped.
    """
    pose = cube.origin if pose is None else pose
    n_b, n_a = len(model.beams), model.n_azimuth
    beam_idx, az_idx = np.meshgrid(np.arange(n_b), np.arange(n_a), indexing="ij")
    beam_idx, az_idx = beam_idx.ravel(), az_idx.ravel()
    elev = np.asarray(model.beams)[beam_idx]
    nominal = az_idx * model.azimuth_step
    az = nominal
    if model.sigma_azimuth > 0:
        az = nominal + model.sigma_azimuth * counter_normal(model.rng_seed, frame_id, beam_idx, az_idx,
                                                            _STREAM_AZIMUTH)
    dirs = beam_directions(elev, az)
    rng, cls = cube.lookup(dirs)
    if model.sigma_range > 0:
        rng = rng + model.sigma_range * counter_normal(model.rng_seed, frame_id, beam_idx, az_idx, _STREAM_RANGE)
    with np.errstate(invalid="ignore"):
        keep = np.isfinite(rng) & (rng > 0) & (rng <= model.max_range)
    if model.dropout > 0:
        keep &= counter_uniform(model.rng_seed, frame_id, beam_idx, az_idx, _STREAM_DROPOUT) >= model.dropout
    pts_sensor = dirs[keep] * rng[keep, None]
    return LidarScan(pose.to_world(pts_sensor), rng[keep], beam_idx[keep].astype(np.int64), nominal[keep],
                     cls[keep], pose, frame_id)


def simulate_sequence(scene: LidarScene, trajectory, model: BeamModel, resolution: int = 1024,
                      first_frame: int = 0) -> list:
    """One scan per pose, re-rendering the cube map at every pose."""
    trajectory = list(trajectory)
    if not trajectory:
        raise ValueError("simulate_sequence: trajectory is empty")
    scans = []
    for i, pose in enumerate(trajectory):
        cube = render_cube_map(scene, pose, resolution)
        scans.append(cast_scan(model, cube, pose, first_frame + i))
        log.debug("frame %d: %d returns", first_frame + i, len(scans[-1]))
    return scans
