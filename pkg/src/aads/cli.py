"""``aads`` command-line entry point.

Exit codes: 0 ok, 1 usage, 2 input parse, 3 numerical failure.  ``--seed``,
``--threads`` and ``--config`` are accepted before or after the subcommand;
``AADS_THREADS`` applies when ``--threads`` is absent.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .augment import PlacedObject, compose_frame
from .depth_refine import RefineConfig, refine_depth, render_point_depth
from .geometry import ViewSample
from .lidar import BeamModel, LidarScene, cast_scan, render_cube_map
from .pipeline import ConfigError, PipelineError, demo_config, resolve_threads, run_pipeline
from .render import splat_points
from .scene import demo_scene_spec, make_synthetic_scene
from .stitch import EnergyWeights, SynthConfig, synthesize_view
from .traffic import (LaneMap, TrafficConfig, eval_distributions, frames_to_rows, histogram, init_agents, l1_distance,
                      load_velocity_bank, rows_to_frames, simulate, frame_samples)
from .view_synth import warp_reference

log = logging.getLogger("aads")

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _section(cfg: dict, key: str) -> dict:
    """A subcommand's part of a config: ``cfg[key]`` when present, else the whole file."""
    return dict(cfg.get(key, cfg)) if cfg else {}


# ----------------------------------------------------------------------------
# subcommands


def cmd_refine_depth(args, cfg):
    pts, colors, _ = io.load_cloud(args.cloud)
    intr, pose = io.load_camera(args.view)
    raw = render_point_depth(pts, intr, pose)
    if args.guide:
        guide = io.load_image(args.guide)
    elif colors is not None:
        _, winner = splat_points(pts, intr, pose, footprint="nearest")
        guide = np.where(winner[..., None] >= 0, colors[np.maximum(winner, 0)], 0.0)
    else:
        guide = np.nan_to_num(raw)  # no color anywhere: depth guides itself
    depth = refine_depth(raw, guide, RefineConfig.from_dict(_section(cfg, "refine")))
    io.save_depth(args.out, depth)


def cmd_warp(args, cfg):
    refs = io.load_dataset(args.refs)
    intr, pose = io.load_camera(args.target)
    sc = SynthConfig.from_dict(_section(cfg, "synth"))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for j, ref in enumerate(refs):
        w = warp_reference(ref, intr, pose, j, sc.max_hole_px, sc.depth_tol, sc.forward_method)
        io.save_image(out / f"warp_{j:02d}.png", w.color)
        io.save_depth(out / f"warp_{j:02d}.drf", w.depth_proxy)
        io.save_mask16(out / f"warp_{j:02d}_mask.png", w.occlusion_mask.astype(np.uint16))


def cmd_synth_view(args, cfg):
    refs = io.load_dataset(args.dataset)
    intr, pose = io.load_camera(args.target)
    wd = io.load_json(args.weights) if args.weights else cfg.get("weights", {})
    res = synthesize_view(intr, pose, refs, EnergyWeights.from_dict(wd), SynthConfig.from_dict(cfg.get("synth", {})))
    io.save_image(args.out, res.image)
    if args.out_depth:
        io.save_depth(args.out_depth, res.depth)
    if args.out_src:
        io.save_mask16(args.out_src, (res.provenance + 1).astype(np.uint16))


def cmd_lidar_sim(args, cfg):
    spec = io.load_json(args.scene)
    scene = LidarScene.from_synthetic(make_synthetic_scene(spec))
    poses = io.load_poses(args.traj)
    mdict = io.load_json(args.model) if args.model else _section(cfg, "lidar").get("model", {})
    if args.seed is not None:
        mdict = {**mdict, "rng_seed": args.seed}
    model = BeamModel.from_dict(mdict)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def one(k):
        cube = render_cube_map(scene, poses[k], args.resolution)
        cast_scan(model, cube, poses[k], k).to_ply(out / f"scan_{k:04d}.ply", binary=not args.ascii)

    with ThreadPoolExecutor(resolve_threads(args.threads)) as pool:
        list(pool.map(one, range(len(poses))))


def parse_counts(text: str) -> dict:
    counts = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        name, sep, n = item.partition("=")
        if not sep:
            raise UsageError(f"--counts entry {item!r} is not class=N")
        counts[name.strip()] = int(n)
    return counts


def cmd_traffic_sim(args, cfg):
    lanes = LaneMap.load(args.lanes)
    tcfg = _section(cfg, "traffic")
    tcfg = dict(tcfg.get("config", tcfg))
    if args.seed is not None:
        tcfg["seed"] = args.seed
    tc = TrafficConfig.from_dict(tcfg)
    bank = load_velocity_bank(args.bank, tc.dt)
    agents = init_agents(lanes, parse_counts(args.counts), tc, bank)
    frames = simulate(agents, bank, lanes, args.steps, tc)
    io.write_trajectories(args.out, frames_to_rows(frames), tc.dt)


def _hist_dict(h):
    return {"edges": h.edges.tolist(), "probs": h.probs.tolist(), "n_samples": h.n_samples}


def write_ppm_plot(path, sim_probs, ref_probs, height: int = 120, bar: int = 6) -> None:
    """Side-by-side bar chart (reference gray, simulated red) as a binary PPM."""
    n = len(sim_probs)
    img = np.full((height, n * 2 * bar + bar, 3), 255, np.uint8)
    top = max(float(np.max(sim_probs, initial=0)), float(np.max(ref_probs, initial=0)), 1e-12)
    for i, (s, r) in enumerate(zip(sim_probs, ref_probs)):
        x = bar + 2 * bar * i
        for off, p, col in ((0, r, (128, 128, 128)), (bar // 2, s, (200, 30, 30))):
            hgt = int(round(p / top * (height - 1)))
            if hgt:
                img[height - hgt:, x + off:x + off + bar // 2] = col
    with open(path, "wb") as fh:
        fh.write(f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        fh.write(img.tobytes())


def cmd_eval_dist(args, cfg):
    sim, _ = io.read_trajectories(args.traj)
    ref, _ = io.read_trajectories(args.ref)
    sim_f, ref_f = rows_to_frames(sim), rows_to_frames(ref)
    s_speed, s_dist = frame_samples(sim_f)
    r_speed, r_dist = frame_samples(ref_f)
    vmax = float(max(s_speed.max(initial=0), r_speed.max(initial=0)))
    dmax = float(max(s_dist.max(initial=0), r_dist.max(initial=0)))
    sh, sd = eval_distributions(sim_f, args.bins, vmax, dmax or None)
    rh, rd = histogram(r_speed, args.bins, vmax), histogram(r_dist, args.bins, dmax or None)
    report = {"bins": args.bins,
              "speed": {"sim": _hist_dict(sh), "ref": _hist_dict(rh), "l1": l1_distance(sh, rh)},
              "min_distance": {"sim": _hist_dict(sd), "ref": _hist_dict(rd),
                               "l1": l1_distance(sd, rd) if sd.n_samples and rd.n_samples else None}}
    io.save_json(args.out, report)
    if args.plot:
        write_ppm_plot(args.plot, sh.probs, rh.probs)
    print(f"speed L1 {report['speed']['l1']:.4f}")


def load_agents(path) -> list:
    data = io.load_json(path)
    items = data.get("objects", []) if isinstance(data, dict) else data
    try:
        return [PlacedObject.from_dict(o) for o in items]
    except (KeyError, TypeError, ValueError) as exc:
        raise io.FormatError(f"{path}: bad agent entry: {exc}") from None


def cmd_compose(args, cfg):
    bg = io.load_image(args.bg)
    depth = io.load_depth(args.bg_depth)
    intr, pose = io.load_camera(args.cam)
    data = io.load_json(args.agents)
    frame = args.frame if args.frame is not None else int(data.get("frame", 0)) if isinstance(data, dict) else 0
    image, inst, ann, _ = compose_frame(bg, depth, load_agents(args.agents), intr, pose, frame)
    io.save_image(args.out, image)
    ann.save(args.ann)
    mask = args.mask or str(Path(args.out).with_name(Path(args.out).stem + "_mask.png"))
    io.save_mask16(mask, inst)


def cmd_run(args, cfg):
    cfg = cfg or demo_config()
    if args.seed is not None:
        cfg["seed"] = args.seed
    manifest = run_pipeline(cfg, args.out_dir, args.threads)
    print(f"{len(manifest['files'])} files written to {args.out_dir}")


def cmd_make_scene(args, cfg):
    from .geometry import CameraIntrinsics, Pose

    spec = io.load_json(args.spec) if args.spec else (cfg.get("scene") if cfg else None) or demo_scene_spec()
    scene = make_synthetic_scene(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.save_json(out / "scene.json", spec)
    pts, cols, cls = scene.point_cloud(args.spacing)
    io.save_cloud(out / "cloud.ply", pts, cols, cls)
    cams = io.load_json(args.cameras) if args.cameras else demo_config()["references"]
    intr = CameraIntrinsics.from_fov(args.width, args.height, args.hfov)
    entries = []
    for i, c in enumerate(cams):
        pose = Pose.look_at(c["eye"], c["target"])
        image, depth, labels = scene.render(intr, pose, args.supersample)
        entries.append(io.save_view(out / "views", f"view_{i:02d}", ViewSample(image, depth, labels, intr, pose)))
    for e in entries:
        for k in e:
            e[k] = f"views/{e[k]}"
    io.save_json(out / "manifest.json", {"views": entries, "cloud": "cloud.ply"})


# ----------------------------------------------------------------------------
# parser


def _common(sub: bool) -> argparse.ArgumentParser:
    # Subparser copies default to SUPPRESS so they never clobber a value given before the subcommand.
    d = argparse.SUPPRESS if sub else None
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=d, help="base random seed")
    p.add_argument("--threads", type=int, default=d, help="worker threads (default: $AADS_THREADS or 1)")
    p.add_argument("--config", default=d, help="JSON config overriding defaults")
    p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if sub else False)
    return p


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="aads", parents=[_common(False)], description="Augmented driving-data simulation tools.")
    sp = ap.add_subparsers(dest="command", parser_class=_Parser, required=True)
    common = [_common(True)]

    p = sp.add_parser("refine-depth", parents=common, help="dense depth for a view from a point cloud")
    p.add_argument("--cloud", required=True)
    p.add_argument("--view", required=True, help="camera JSON")
    p.add_argument("--guide", help="guide image (default: cloud colors splatted into the view)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_refine_depth)

    p = sp.add_parser("warp", parents=common, help="warp every reference of a manifest into a target camera")
    p.add_argument("--refs", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_warp)

    p = sp.add_parser("synth-view", parents=common, help="synthesize a novel view")
    p.add_argument("--dataset", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--weights")
    p.add_argument("--out", required=True)
    p.add_argument("--out-depth")
    p.add_argument("--out-src")
    p.set_defaults(func=cmd_synth_view)

    p = sp.add_parser("lidar-sim", parents=common, help="simulate LiDAR scans along a trajectory")
    p.add_argument("--scene", required=True, help="scene spec JSON")
    p.add_argument("--traj", required=True, help="poses JSON (sensor-to-world)")
    p.add_argument("--model", help="beam model JSON")
    p.add_argument("--resolution", type=int, default=1024)
    p.add_argument("--ascii", action="store_true")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_lidar_sim)

    p = sp.add_parser("traffic-sim", parents=common, help="simulate traffic from a velocity bank")
    p.add_argument("--lanes", required=True)
    p.add_argument("--bank", required=True)
    p.add_argument("--counts", required=True, help="e.g. car=20,ped=5")
    p.add_argument("--steps", type=int, default=600)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_traffic_sim)

    p = sp.add_parser("eval-dist", parents=common, help="compare speed and distance histograms")
    p.add_argument("--traj", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--bins", type=int, default=30)
    p.add_argument("--out", required=True)
    p.add_argument("--plot")
    p.set_defaults(func=cmd_eval_dist)

    p = sp.add_parser("compose", parents=common, help="composite agents over a background view")
    p.add_argument("--bg", required=True)
    p.add_argument("--bg-depth", required=True)
    p.add_argument("--agents", required=True)
    p.add_argument("--cam", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ann", required=True)
    p.add_argument("--mask")
    p.add_argument("--frame", type=int)
    p.set_defaults(func=cmd_compose)

    p = sp.add_parser("run", parents=common, help="run the full pipeline (demo config when --config is absent)")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_run)

    p = sp.add_parser("make-scene", parents=common, help="write a synthetic scene, its cloud and rendered views")
    p.add_argument("--spec")
    p.add_argument("--cameras", help="JSON list of {eye, target}")
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--height", type=int, default=96)
    p.add_argument("--hfov", type=float, default=70.0)
    p.add_argument("--spacing", type=float, default=0.05)
    p.add_argument("--supersample", type=int, default=1)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_make_scene)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads is not None and args.threads < 1:
        print("aads: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = io.load_json(args.config) if args.config else {}
        args.func(args, cfg)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (io.FormatError, ConfigError, FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        print(f"aads {args.command}: input error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (PipelineError, ValueError, ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"aads {args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
