"""End-to-end run: clean references, refine depth, simulate traffic, synthesize
views, compose agents and simulate LiDAR for every frame.

Everything is driven by one JSON config; :func:`demo_config` is a complete
example built on the bundled synthetic street scene.
"""

from __future__ import annotations

import copy
import hashlib
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .augment import AGENT_LABELS, PlacedObject, compose_frame, diffusion_inpaint, remove_moving_objects
from .depth_refine import RefineConfig, refine_depth, render_point_depth
from .geometry import CameraIntrinsics, Pose, ViewSample, rotation_z
from .io import save_depth, save_image, save_json, save_mask16, save_view, write_trajectories
from .lidar import BeamModel, LidarScene, cast_scan, render_cube_map
from .scene import box_triangles, demo_scene_spec, make_synthetic_scene
from .stitch import EnergyWeights, SynthConfig, synthesize_view
from .traffic import (LaneMap, TrafficConfig, VelocityBank, canonical_class, frames_to_rows, init_agents,
                      load_velocity_bank, simulate)

log = logging.getLogger(__name__)

AGENT_SIZE = {"car": (4.4, 1.8, 1.5), "cyclist": (1.8, 0.6, 1.7), "pedestrian": (0.5, 0.5, 1.75)}
AGENT_COLOR = {"car": (0.75, 0.1, 0.1), "cyclist": (0.1, 0.6, 0.2), "pedestrian": (0.9, 0.6, 0.1)}


class ConfigError(ValueError):
    """The run config is missing a field or holds an unusable value."""


class PipelineError(RuntimeError):
    def __init__(self, stage: str, frame, cause: Exception):
        where = f"stage {stage!r}" + ("" if frame is None else f", frame {frame}")
        super().__init__(f"{where}: {cause}")
        self.stage, self.frame, self.cause = stage, frame, cause


def demo_config(seed: int = 7) -> dict:
    """A small but complete config on the demo street scene."""
    cams = [{"eye": [x, y, 1.5], "target": [x, 10 + y, 0.8]} for x, y in ((-0.5, 0.0), (0.5, 0.0),
                                                                       (-0.5, 1.0), (0.5, 1.0))]
    return {
        "seed": seed,
        "scene": demo_scene_spec(),
        "camera": {"width": 96, "height": 72, "hfov": 70.0},
        "references": cams,
        "capture_objects": [{"class": "car", "center": [2.5, 6.0, 0.75], "size": [4.4, 1.8, 1.5], "yaw": 0.0}],
        "scan_spacing": 0.1,
        "refine": {},
        "synth": {"trws_max_iter": 30},
        "weights": {},
        "traffic": {
            "enabled": True,
            "lanes": {"lanes": [{"centerline": [[-12, 4.0], [12, 4.0]], "width": 3.5, "direction": 1},
                                {"centerline": [[12, 7.5], [-12, 7.5]], "width": 3.5, "direction": 1}]},
            "bank": {"mixture": {"car": [[0.5, 6.0, 1.0], [0.5, 10.0, 1.5]]}, "samples": 2000},
            "counts": {"car": 6},
            "steps": 10,
            "config": {},
        },
        "frames": {"cameras": [{"eye": [0.0, 0.5, 1.5], "target": [0.0, 10.5, 0.8]},
                               {"eye": [1.0, 0.5, 1.5], "target": [1.0, 10.5, 0.8]}],
                   "stride": 5},
        "lidar": {"enabled": True, "model": {"azimuth_step": 0.5}, "resolution": 128, "mount_height": 1.8},
    }


def _require(cfg: dict, dotted: str):
    node = cfg
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node or node[part] in (None, ""):
            raise ConfigError(f"config field {dotted!r} is required")
        node = node[part]
    return node


def validate_config(cfg: dict) -> None:
    """Raise :class:`ConfigError` naming the first missing or empty required field."""
    for key in ("scene", "camera", "camera.width", "camera.height", "references", "frames", "frames.cameras"):
        _require(cfg, key)
    for key in ("references", "frames.cameras"):
        node = cfg
        for part in key.split("."):
            node = node[part]
        if not isinstance(node, list) or not node:
            raise ConfigError(f"config field {key!r} must be a non-empty list of cameras")
        for i, c in enumerate(node):
            if not isinstance(c, dict) or "eye" not in c or "target" not in c:
                raise ConfigError(f"config field '{key}[{i}]' needs 'eye' and 'target'")
    if cfg.get("traffic", {}).get("enabled", False):
        _require(cfg, "traffic.lanes")
        _require(cfg, "traffic.bank")


def _camera(cfg: dict) -> CameraIntrinsics:
    cam = _require(cfg, "camera")
    return CameraIntrinsics.from_fov(int(cam["width"]), int(cam["height"]), float(cam.get("hfov", 70.0)))


def _look_at(c: dict) -> Pose:
    return Pose.look_at(c["eye"], c["target"])


def mixture_bank(spec: dict, samples: int, rng: np.random.Generator) -> VelocityBank:
    """Bank of heading-frame velocities from per-class Gaussian speed mixtures.

    ``spec[cls]`` lists ``[weight, mean_speed, std_speed]`` components; a
    small lateral jitter (0.1 m/s) is added.
    """
    out = {}
    for cls, comps in spec.items():
        comps = np.asarray(comps, float).reshape(-1, 3)
        w = comps[:, 0] / comps[:, 0].sum()
        k = rng.choice(len(comps), size=samples, p=w)
        speed = np.clip(rng.normal(comps[k, 1], comps[k, 2]), 0.0, None)
        out[canonical_class(cls)] = np.column_stack([speed, rng.normal(0.0, 0.1, samples)])
    return VelocityBank(out)


def agent_objects(agents) -> list:
    objs = []
    for a in agents:
        size = AGENT_SIZE[a.cls]
        objs.append(PlacedObject(a.cls, [a.position[0], a.position[1], size[2] / 2], size, a.heading,
                                 AGENT_COLOR[a.cls]))
    return objs


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def resolve_threads(threads: int | None) -> int:
    if threads is None:
        env = os.environ.get("AADS_THREADS")
        threads = int(env) if env else 1
    return max(1, int(threads))


def _stage(name, frame, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (ConfigError, PipelineError):
        raise
    except Exception as exc:  # noqa: BLE001 - every stage failure is reported with its location
        raise PipelineError(name, frame, exc) from exc


def prepare_references(cfg: dict, scene, intr: CameraIntrinsics) -> list:
    """Capture reference views with the movers present, cut them out and refine depth from the scan."""
    movers = [PlacedObject.from_dict(o) for o in cfg.get("capture_objects", [])]
    capture = make_synthetic_scene({"primitives": [*_scene_prims(cfg), *(
        {"type": "box", "center": m.center.tolist(), "size": m.size.tolist(), "yaw": m.yaw,
         "color": list(m.color), "class_id": AGENT_LABELS.get(m.cls, 255)} for m in movers)]})
    cloud, _, _ = scene.point_cloud(float(cfg.get("scan_spacing", 0.1)))
    rcfg = RefineConfig.from_dict(cfg.get("refine", {}))
    views = []
    for i, c in enumerate(_require(cfg, "references")):
        pose = _look_at(c)
        image, depth, labels = _stage("capture", None, capture.render, intr, pose)
        view = ViewSample(image, depth, labels.astype(np.int64), intr, pose)
        cleaned, mask = _stage("remove", None, remove_moving_objects, view)
        image = _stage("remove", None, diffusion_inpaint, cleaned.image, mask)
        raw = _stage("refine", None, render_point_depth, cloud, intr, pose)
        dense = _stage("refine", None, refine_depth, raw, image, rcfg)
        views.append(ViewSample(image, dense, cleaned.labels, intr, pose))
        log.info("reference %d: removed %d moving pixels", i, int(mask.sum()))
    return views


def _scene_prims(cfg: dict) -> list:
    spec = _require(cfg, "scene")
    return list(spec["primitives"] if isinstance(spec, dict) else spec)


def run_traffic(cfg: dict, n_steps: int):
    tcfg = cfg.get("traffic", {})
    if not tcfg.get("enabled", False):
        return None, None
    lanes_spec = _require(cfg, "traffic.lanes")
    bank_spec = _require(cfg, "traffic.bank")
    lanes = LaneMap.load(lanes_spec) if isinstance(lanes_spec, (str, Path)) else LaneMap.from_dict(lanes_spec)
    seed = int(cfg.get("seed", 0))
    tc = TrafficConfig.from_dict({**tcfg.get("config", {}), "seed": seed})
    if isinstance(bank_spec, (str, Path)):
        bank = load_velocity_bank(bank_spec)
    else:
        bank = mixture_bank(bank_spec["mixture"], int(bank_spec.get("samples", 1000)),
                            np.random.default_rng([seed, 0xBA4C]))
    agents = init_agents(lanes, tcfg.get("counts", {}), tc, bank)
    frames = simulate(agents, bank, lanes, max(n_steps, int(tcfg.get("steps", 0))), tc)
    return frames, tc


def _lidar_scene(scene, objects) -> LidarScene:
    tris, tcls, _ = scene.mesh()
    extra = [box_triangles(o.center, o.size, o.yaw) for o in objects]
    if extra:
        tris = np.concatenate([tris, *extra])
        tcls = np.concatenate([tcls, *[np.full(12, AGENT_LABELS[o.cls]) for o in objects]])
    return LidarScene(triangles=tris, triangle_classes=tcls)


def _render_frame(k: int, cam: dict, cfg: dict, scene, refs, intr, objects, weights, scfg, seed):
    pose = _stage("camera", k, _look_at, cam)
    res = _stage("synth-view", k, synthesize_view, intr, pose, refs, weights, scfg)
    image, inst, ann, _ = _stage("compose", k, compose_frame, res.image, res.depth, objects, intr, pose, k)
    scan = None
    lcfg = cfg.get("lidar", {})
    if lcfg.get("enabled", False):
        model = BeamModel.from_dict({**lcfg.get("model", {}), "rng_seed": (seed ^ k) % 2**64})
        origin = Pose(rotation_z(0.0), [cam["eye"][0], cam["eye"][1], float(lcfg.get("mount_height", 1.8))])
        cube = _stage("lidar-sim", k, render_cube_map, _lidar_scene(scene, objects), origin,
                      int(lcfg.get("resolution", 256)))
        scan = _stage("lidar-sim", k, cast_scan, model, cube, origin, k)
    return res, image, inst, ann, scan


def run_pipeline(cfg: dict, out_dir, threads: int | None = None) -> dict:
    """Execute the whole pipeline into ``out_dir``; returns the written manifest.

    The manifest maps every output file (relative path) to its SHA-256 so two
    runs can be compared by hash.
    """
    cfg = copy.deepcopy(cfg)
    validate_config(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = int(cfg.get("seed", 0))
    intr = _camera(cfg)
    try:
        scene = make_synthetic_scene({"primitives": _scene_prims(cfg)})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config field 'scene': {exc}") from exc
    weights = EnergyWeights.from_dict(cfg.get("weights", {}))
    scfg = SynthConfig.from_dict(cfg.get("synth", {}))
    refs = prepare_references(cfg, scene, intr)
    written = []
    ref_entries = [save_view(out / "refs", f"ref_{i:02d}", v) for i, v in enumerate(refs)]
    save_json(out / "refs" / "manifest.json", {"views": ref_entries})
    written += [out / "refs" / "manifest.json"] + [out / "refs" / e[k] for e in ref_entries for k in e]

    fcfg = _require(cfg, "frames")
    cams = fcfg["cameras"]
    stride = int(fcfg.get("stride", 1))
    traffic, tc = _stage("traffic-sim", None, run_traffic, cfg, stride * (len(cams) - 1))
    if traffic is not None:
        traj = out / "traffic" / "sim.csv"
        traj.parent.mkdir(exist_ok=True)
        write_trajectories(traj, frames_to_rows(traffic), tc.dt)
        written += [traj, traj.with_suffix(".json")]

    def job(k):
        objects = agent_objects(traffic[k * stride]) if traffic is not None else []
        return _render_frame(k, cams[k], cfg, scene, refs, intr, objects, weights, scfg, seed)

    n_threads = resolve_threads(threads)
    if n_threads > 1:
        with ThreadPoolExecutor(n_threads) as pool:
            results = list(pool.map(job, range(len(cams))))
    else:
        results = [job(k) for k in range(len(cams))]

    fdir = out / "frames"
    fdir.mkdir(exist_ok=True)
    for k, (res, image, inst, ann, scan) in enumerate(results):
        stem = fdir / f"frame_{k:04d}"
        paths = [stem.with_name(stem.name + s) for s in ("_bg.png", ".png", "_depth.drf", "_mask.png",
                                                         "_src.png", ".ann.json")]
        save_image(paths[0], res.image)
        save_image(paths[1], image)
        save_depth(paths[2], res.depth)
        save_mask16(paths[3], inst)
        save_mask16(paths[4], (res.provenance + 1).astype(np.uint16))
        ann.save(paths[5])
        written += paths
        if scan is not None:
            p = stem.with_name(stem.name + "_scan.ply")
            scan.to_ply(p)
            written.append(p)
    manifest = {"seed": seed, "files": {str(p.relative_to(out)): file_hash(p) for p in sorted(written)}}
    save_json(out / "manifest.json", manifest)
    return manifest
