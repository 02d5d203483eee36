"""Acceptance criteria, each at its stated tolerance.

Every test records one pass/fail line (shown in the terminal summary) before
asserting, so a red criterion still reports its measured numbers.  Run this
file directly to print the lines without pytest's summary.
"""

import itertools
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE, REF_SPOTS, street_cam

from aads import cli
from aads.augment import PlacedObject, compose_frame
from aads.depth_refine import poisson_complete
from aads.geometry import CameraIntrinsics, Pose, ViewSample
from aads.laplace import harmonic_fill
from aads.lidar import BeamModel, LidarScene, cast_scan, render_cube_map
from aads.scene import Box, demo_scene_spec, make_synthetic_scene
from aads.stitch import EnergyWeights, Labeling, poisson_blend, synthesize_view
from aads.traffic import (TrafficConfig, VelocityBank, eval_distributions, histogram, init_agents,
                          l1_distance, simulate, straight_road)
from aads.trws import MRF, icm, trws
from aads.view_synth import WarpedView


def record(n, ok, detail):
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    return bool(ok)


def assert_no_occluded_choice(result) -> int:
    """Count pixels whose chosen candidate has infinite unary cost (must be zero)."""
    lab = result.labeling.labels.ravel()
    sel = lab >= 0
    cost = result.problem.unary[np.flatnonzero(sel), lab[sel]]
    return int(np.count_nonzero(~np.isfinite(cost)))


# Pixels selecting an E2 = inf candidate, accumulated over every stitching run in this file.
OCCLUDED_CHOICES = {"runs": 0, "bad": 0}


def _synth(intr, pose, refs, **kw):
    res = synthesize_view(intr, pose, refs, **kw)
    OCCLUDED_CHOICES["runs"] += 1
    OCCLUDED_CHOICES["bad"] += assert_no_occluded_choice(res)
    return res


# ----------------------------------------------------------------------------
# 1


def test_c1_energy_weight_defaults():
    w = EnergyWeights()
    got = (w.lambda1, w.lambda2, w.lambda3, w.lambda4, w.lambda5, w.tau_c, w.tau_d, w.angle_hook)
    want = (200.0, 1.0, 200.0, 100.0, 50.0, 0.5, 5.0, 0.01)
    ok = got == want
    record(1, ok, f"defaults {got}")
    assert ok


# ----------------------------------------------------------------------------
# 2


def brute_force(mrf: MRF) -> float:
    n, k = mrf.unary.shape
    states = np.array(list(itertools.product(range(k), repeat=n)), dtype=np.int64)
    e = mrf.unary[np.arange(n), states].sum(axis=1)
    for idx, (a, b) in enumerate(mrf.edges):
        e = e + mrf.pairwise[idx][states[:, a], states[:, b]]
    return float(e.min())


def random_tree(rng, n, chain):
    if chain:
        return [(i, i + 1) for i in range(n - 1)]
    return [(int(rng.integers(0, i)), i) for i in range(1, n)]


def test_c2_trws_exact_on_trees_and_bounded_on_grids():
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    tree_fail = 0
    for it in range(200):
        k = int(rng.integers(1, 5))
        n_max = 12 if k <= 3 else 9  # keeps exhaustive enumeration at most 3**12 states
        n = int(rng.integers(1, n_max + 1))
        edges = random_tree(rng, n, chain=it % 2 == 0)
        mrf = MRF(rng.uniform(0, 10, (n, k)), np.array(edges).reshape(-1, 2), rng.uniform(0, 10, (len(edges), k, k)))
        res = trws(mrf)
        # Equal optima up to summation order (the two sides add the same terms differently).
        if abs(res.energy - brute_force(mrf)) > 1e-9 or abs(mrf.energy(res.labels) - res.energy) > 1e-9:
            tree_fail += 1
    grid_fail = 0
    for _ in range(50):
        n, k = 9, 3
        edges = [(r * 3 + c, r * 3 + c + 1) for r in range(3) for c in range(2)]
        edges += [(r * 3 + c, (r + 1) * 3 + c) for r in range(2) for c in range(3)]
        mrf = MRF(rng.uniform(0, 10, (n, k)), np.array(edges), rng.uniform(0, 10, (len(edges), k, k)))
        res = trws(mrf)
        opt = brute_force(mrf)
        e_icm = mrf.energy(icm(mrf))
        if not (res.lower_bound <= opt + 1e-9 and opt <= res.energy + 1e-9 and res.energy <= e_icm + 1e-9):
            grid_fail += 1
    dt = time.perf_counter() - t0
    ok = tree_fail == 0 and grid_fail == 0 and dt < 10.0
    record(2, ok, f"tree mismatches {tree_fail}/200, grid bound violations {grid_fail}/50, {dt:.2f} s")
    assert ok


# ----------------------------------------------------------------------------
# 4 and 5 share the 128x96 ray-traced street scene


@pytest.fixture(scope="module")
def street():
    scene = make_synthetic_scene(demo_scene_spec())
    intr = CameraIntrinsics.from_fov(128, 96, 70.0)
    refs = []
    for x, y in REF_SPOTS:
        pose = street_cam(x, y)
        img, depth, lab = scene.render(intr, pose, supersample=3)
        refs.append(ViewSample(img, depth, lab, intr, pose))
    return scene, intr, refs


def test_c4_self_reprojection(street):
    _, intr, refs = street
    worst = np.inf
    for ref in refs[:2]:
        res = _synth(intr, ref.pose, refs)
        ok_pix = (res.labeling.labels >= 0) & np.isfinite(ref.depth)
        mse = np.mean((res.image[ok_pix] - ref.image[ok_pix]) ** 2)
        worst = min(worst, 10 * np.log10(1.0 / max(mse, 1e-300)))
    ok = worst >= 40.0
    record(4, ok, f"min PSNR {worst:.1f} dB (need >= 40)")
    assert ok


def seam_jumps(result, image=None):
    """Color jumps across label boundaries.

    Returns ``(literal, excess)``: the largest raw ``|dI|`` over boundary pixel
    pairs, and the largest jump in excess of what a source image shows over
    the same pair.  For each pair the excess is the smallest, over the two
    labels valid at both pixels, of ``max_rgb |dI - dC_label|``; pairs where
    neither label covers both pixels fall back to the raw jump.
    """
    img = result.image if image is None else image
    lab = result.labeling.labels
    colors = [w.color for w in result.warps]
    valid = [~w.occlusion_mask for w in result.warps]
    literal, excess = 0.0, 0.0
    h, w = lab.shape
    for dr, dc in ((0, 1), (1, 0)):
        p_lab = lab[: h - dr, : w - dc]
        q_lab = lab[dr:, dc:]
        seam = (p_lab != q_lab) & (p_lab >= 0) & (q_lab >= 0)
        if not seam.any():
            continue
        di = img[dr:, dc:] - img[: h - dr, : w - dc]
        raw = np.abs(di).max(-1)[seam]
        literal = max(literal, float(raw.max()))
        best = np.full(raw.shape, np.inf)
        for cand in (p_lab, q_lab):
            lj = cand[seam]
            rr, cc = np.nonzero(seam)
            for j in np.unique(lj):
                sel = lj == j
                r0, c0 = rr[sel], cc[sel]
                both = valid[j][r0, c0] & valid[j][r0 + dr, c0 + dc]
                dcj = colors[j][r0 + dr, c0 + dc] - colors[j][r0, c0]
                e = np.abs(di[r0, c0] - dcj).max(-1)
                idx = np.flatnonzero(sel)[both]
                best[idx] = np.minimum(best[idx], e[both])
        best = np.where(np.isfinite(best), best, raw)
        excess = max(excess, float(best.max()))
    return literal, excess


def test_c5_novel_view_fidelity(street):
    scene, intr, refs = street
    lines, ok = [], True
    for name, (x, y) in (("interp", (0.0, 0.5)), ("extrap", (1.0, 0.5))):
        pose = street_cam(x, y)
        res = _synth(intr, pose, refs)
        gt, _, _ = scene.render(intr, pose, supersample=3)
        rms = float(np.sqrt(np.mean((res.image - gt) ** 2)))
        literal, excess = seam_jumps(res)
        gt_literal = seam_jumps(res, gt)[0]
        ok &= rms <= 0.05 and excess <= 0.1
        lines.append(f"{name}: RMS {rms:.4f}, seam excess jump {excess:.3f} "
                     f"(raw {literal:.3f}; ground truth itself {gt_literal:.3f})")
    record(5, ok, "; ".join(lines))
    assert ok


def test_c3_no_occluded_candidate_selected(street, small_refs):
    # Add a few more stitching runs with strong occlusion (behind the box) to the tally.
    intr, refs = small_refs
    for x, y in ((-1.0, 0.5), (0.0, -0.5), (0.25, 1.5)):
        _synth(intr, street_cam(x, y), refs)
    ok = OCCLUDED_CHOICES["bad"] == 0 and OCCLUDED_CHOICES["runs"] >= 3
    record(3, ok, f"{OCCLUDED_CHOICES['bad']} occluded selections over {OCCLUDED_CHOICES['runs']} stitching runs")
    assert ok


# ----------------------------------------------------------------------------
# 6


def dense_blend_oracle(lab, colors, valid, fixed, screen, target):
    """Least squares over the same objective, assembled row by row and solved densely.

    Edge rows only join covered pixels; the guidance across a seam is the mean
    gradient of the labels valid on both pixels.  Returns the (H, W, 3) result.
    """
    h, w = lab.shape
    n = h * w
    idx = np.arange(n).reshape(h, w)
    out = np.zeros((h, w, 3))
    for ch in range(3):
        rows, rhs = [], []
        for r in range(h):
            for c in range(w):
                for dr, dc in ((0, 1), (1, 0)):
                    r2, c2 = r + dr, c + dc
                    if r2 >= h or c2 >= w or lab[r, c] < 0 or lab[r2, c2] < 0:
                        continue
                    la, lb = lab[r, c], lab[r2, c2]
                    cands = [la] if la == lb else [j for j in (la, lb) if valid[j][r, c] and valid[j][r2, c2]]
                    g = np.mean([colors[j][r2, c2, ch] - colors[j][r, c, ch] for j in cands]) if cands else 0.0
                    row = np.zeros(n)
                    row[idx[r2, c2]], row[idx[r, c]] = 1.0, -1.0
                    rows.append(row)
                    rhs.append(g)
        for p in range(n):
            if screen.ravel()[p] > 0:
                row = np.zeros(n)
                row[p] = np.sqrt(screen.ravel()[p])
                rows.append(row)
                rhs.append(np.sqrt(screen.ravel()[p]) * target[..., ch].ravel()[p])
        a, b = np.array(rows), np.array(rhs)
        fx = fixed.ravel()
        free = ~fx
        b = b - a[:, fx] @ target[..., ch].ravel()[fx]
        x = np.linalg.lstsq(a[:, free], b, rcond=None)[0]
        u = target[..., ch].ravel().copy()
        u[free] = x
        out[..., ch] = u.reshape(h, w)
    return out


def test_c6_poisson_solvers():
    rng = np.random.default_rng(6)
    # Completion reproduces linear ramps.
    yy, xx = np.mgrid[0:32, 0:32]
    ramp = 3.0 + 0.25 * xx - 0.1 * yy
    holes = np.zeros_like(ramp, bool)
    holes[5:27, 8:20] = True
    d = np.where(holes, np.nan, ramp)
    ramp_err = float(np.abs(poisson_complete(d) - ramp).max())

    # Blending against a dense direct solve on a 20x24 two-source problem.
    h, w = 20, 24
    base = rng.uniform(0.2, 0.8, (h, w, 3))
    c0 = np.clip(base + 0.05 * np.sin(xx[:h, :w, None] / 3.0), 0, 1)
    c1 = np.clip(base + 0.15, 0, 1)
    lab = np.where(xx[:h, :w] + 0.5 * yy[:h, :w] < 14, 0, 1)
    warps = [WarpedView(c, np.ones((h, w)), np.zeros((h, w), bool), j) for j, c in enumerate((c0, c1))]
    mosaic = np.where(lab[..., None] == 0, c0, c1)
    labeling = Labeling(lab, np.zeros((h, w), bool), 0.0, 0.0, [0.0])
    blended = poisson_blend(mosaic, labeling, warps, 0, screen=1e-3, tol=1e-12)
    pad = np.pad(lab, 1, constant_values=-1)
    differs = np.zeros((h, w), bool)
    for dr, dc in ((0, 1), (2, 1), (1, 0), (1, 2)):
        nb = pad[dr:dr + h, dc:dc + w]
        differs |= (nb != lab) & (nb != -1)
    fixed = (lab == 0) & differs
    oracle = np.clip(dense_blend_oracle(lab, [c0, c1], [np.ones((h, w), bool)] * 2, fixed,
                                        np.full((h, w), 1e-3), mosaic), 0, 1)
    blend_err = float(np.abs(blended - oracle).max())

    # Maximum principle on random Dirichlet data.
    mp_fail = 0
    for _ in range(100):
        n = int(rng.integers(4, 20))
        vals = rng.uniform(-5, 5, (n, n))
        unknown = rng.random((n, n)) < 0.6
        if unknown.all():
            unknown[0, 0] = False
        filled = harmonic_fill(vals, unknown, tol=1e-10, max_iter=100000)
        known = vals[~unknown]
        if filled[unknown].min() < known.min() - 1e-9 or filled[unknown].max() > known.max() + 1e-9:
            mp_fail += 1
    ok = ramp_err <= 1e-5 and blend_err <= 1e-5 and mp_fail == 0
    record(6, ok, f"ramp err {ramp_err:.2e}, blend vs dense {blend_err:.2e}, max-principle failures {mp_fail}/100")
    assert ok


# ----------------------------------------------------------------------------
# 7 and 8


def test_c7_lidar_ground_range_and_beam_span():
    big = 500.0
    ground = np.array([[[-big, -big, 0], [big, -big, 0], [big, big, 0]],
                       [[-big, -big, 0], [big, big, 0], [-big, big, 0]]])
    pose = Pose(np.eye(3), [0.0, 0.0, 2.0])
    cube = render_cube_map(LidarScene(triangles=ground, triangle_classes=1), pose, 1024)
    model = BeamModel().noiseless()
    scan = cast_scan(model, cube, pose)
    expected = 2.0 / np.sin(np.radians(24.33))
    r = scan.ranges[scan.beam_ids == 0]
    err = float(np.abs(r - expected).max())
    beams = np.asarray(BeamModel().beams)
    span_ok = len(beams) == 64 and beams[0] == -24.33 and beams[-1] == 2.0 and np.all(np.diff(beams) > 0)
    ok = err <= 0.02 and span_ok and len(r) == model.n_azimuth
    record(7, ok, f"beam -24.33 range {r.mean():.4f} m vs {expected:.4f} (max err {err:.4f}, tol 0.02); "
                  f"beams {beams[0]}..{beams[-1]} x{len(beams)}")
    assert ok


def enclosing_box(half):
    return Box([0, 0, 0], [2 * half[0], 2 * half[1], 2 * half[2]]).triangles()


def test_c8_lidar_noise_statistics_and_speed():
    half = np.array([12.0, 12.0, 12.0])
    scene = LidarScene(triangles=enclosing_box(half), triangle_classes=4)
    pose = Pose()
    model = BeamModel(rng_seed=11)
    t0 = time.perf_counter()
    cube = render_cube_map(scene, pose, 1024)
    t1 = time.perf_counter()
    scan = cast_scan(model, cube, pose)
    t2 = time.perf_counter()
    p = scan.points
    d = p / np.linalg.norm(p, axis=1, keepdims=True)
    # Exact range along each return's own (perturbed) direction to the enclosing box.
    true_r = np.min(half[None] / np.maximum(np.abs(d), 1e-300), axis=1)
    range_std = float(np.std(scan.ranges - true_r))
    az = np.degrees(np.arctan2(p[:, 1], p[:, 0]))
    az_err = (az - scan.azimuths + 180.0) % 360.0 - 180.0
    az_std = float(np.std(az_err))
    n = len(scan)
    full = len(model.beams) * model.n_azimuth
    total = t2 - t0
    ok = (n >= 100_000 and abs(range_std / 0.005 - 1) <= 0.05 and abs(az_std / 0.05 - 1) <= 0.05
          and total < 2.0 and model.n_azimuth == 2250)
    record(8, ok, f"{n} returns of {full}; range std {range_std * 1000:.3f} mm (0.005 m +-5%), "
                  f"azimuth std {az_std:.4f} deg (0.05 +-5%); cube {t1 - t0:.2f} s + scan {t2 - t1:.2f} s")
    assert ok


# ----------------------------------------------------------------------------
# 9


def mixture_bank(rng, n=20000):
    comp = rng.random(n) < 0.4
    speed = np.where(comp, rng.normal(8.0, 1.5, n), rng.normal(16.0, 2.0, n))
    speed = np.clip(speed, 0.0, 30.0)
    lateral = rng.normal(0.0, 0.2, n)
    return VelocityBank({"car": np.column_stack([speed, lateral])})


def test_c9_traffic_distribution():
    rng = np.random.default_rng(9)
    bank = mixture_bank(rng)
    lanes = straight_road(3000.0, 4, 3.5)
    cfg = TrafficConfig(seed=9)
    agents = init_agents(lanes, {"car": 40}, cfg, bank)
    frames = simulate(agents, bank, lanes, 1000, cfg)
    vmax = 30.0
    sim_speed, _ = eval_distributions(frames, 30, speed_max=vmax)
    bank_hist = histogram(bank.speeds("car"), 30, vmax)
    # Baseline: every agent draws a uniformly random velocity each frame.
    base = rng.uniform(0.0, vmax, len(frames) * len(agents))
    base_hist = histogram(base, 30, vmax)
    l1_sim = l1_distance(sim_speed, bank_hist)
    l1_base = l1_distance(base_hist, bank_hist)
    min_gap = np.inf
    for fr in frames:
        pos = np.array([a.position for a in fr])
        rad = np.array([a.radius for a in fr])
        dd = np.linalg.norm(pos[:, None] - pos[None], axis=-1) - rad[:, None] - rad[None]
        np.fill_diagonal(dd, np.inf)
        min_gap = min(min_gap, float(dd.min()))
    sums = abs(sim_speed.probs.sum() - 1) <= 1e-9 and abs(bank_hist.probs.sum() - 1) <= 1e-9
    parts = {"L1 < 0.2": l1_sim < 0.2, "L1 < baseline": l1_sim < l1_base,
             "gap >= safe_gap": min_gap >= cfg.safe_gap - 1e-9, "sums": sums}
    ok = all(parts.values())
    failed = [k for k, v in parts.items() if not v]
    record(9, ok, f"speed L1 {l1_sim:.3f} vs uniform baseline {l1_base:.3f}; min surface gap {min_gap:.3f} m "
                  f"(safe_gap {cfg.safe_gap}); histogram sums ok={sums}"
                  + (f"; failing: {', '.join(failed)}" if failed else ""))
    assert ok


# ----------------------------------------------------------------------------
# 10


def test_c10_run_determinism(tmp_path):
    hashes = []
    for k, threads in enumerate(("1", "2")):
        out = tmp_path / f"run{k}"
        rc = cli.main(["run", "--seed", "7", "--threads", threads, "--out-dir", str(out)])
        assert rc == 0
        hashes.append((out / "manifest.json").read_bytes())
    ok = hashes[0] == hashes[1]
    import json
    n = len(json.loads(hashes[0])["files"])
    record(10, ok, f"two demo runs (1 and 2 threads) -> {'identical' if ok else 'different'} hashes over {n} files")
    assert ok


# ----------------------------------------------------------------------------
# 11


def corner_bound_oracle(obj, intr, pose):
    """Bound of the 8 projected corners (all in front of the camera) clipped to the raster."""
    c = obj.corners()
    cam = (c - pose.translation) @ pose.rotation
    u = intr.fx * cam[:, 0] / cam[:, 2] + intr.cx
    v = intr.fy * cam[:, 1] / cam[:, 2] + intr.cy
    return [max(u.min(), -0.5), max(v.min(), -0.5), min(u.max(), intr.width - 0.5), min(v.max(), intr.height - 0.5)]


def test_c11_annotation_boxes_and_z_order():
    rng = np.random.default_rng(11)
    intr = CameraIntrinsics.from_fov(160, 120, 70.0)
    pose = street_cam(0.0)
    bg = np.full((*intr.shape, 3), 0.5)
    bg_depth = np.full(intr.shape, np.nan)
    box_err, missing, n_checked = 0.0, 0, 0
    for _ in range(100):
        obj = PlacedObject("car", [rng.uniform(-4, 4), rng.uniform(5, 25), rng.uniform(0.5, 1.5)],
                           [rng.uniform(1, 5), rng.uniform(1, 3), rng.uniform(1, 2)], rng.uniform(-np.pi, np.pi))
        if np.any(pose.to_camera(obj.corners())[:, 2] <= 0.1):
            obj.center[1] += 10.0
        _, inst, ann, _ = compose_frame(bg, bg_depth, [obj], intr, pose)
        area = int(np.count_nonzero(inst == 1))
        if area < 8:
            continue
        n_checked += 1
        if len(ann.objects) != 1:
            missing += 1
            continue
        box_err = max(box_err, float(np.abs(np.subtract(ann.objects[0].box2d, corner_bound_oracle(obj, intr, pose))).max()))

    # Z-order: owner of each pixel must be the box the ray hits first (independent ray tracer).
    z_bad, z_pix = 0, 0
    from aads.geometry import pixel_grid, pixel_rays
    rays = pixel_rays(pixel_grid(intr), intr) @ pose.rotation.T
    for _ in range(20):
        objs = [PlacedObject("car", [rng.uniform(-2, 2), rng.uniform(6, 14), 0.75], [3.0, 1.6, 1.5],
                             rng.uniform(-np.pi, np.pi)) for _ in range(3)]
        _, inst, _, _ = compose_frame(bg, bg_depth, objs, intr, pose, min_mask_area=1)
        ts = np.stack([Box(o.center, o.size, o.yaw).intersect(np.broadcast_to(pose.center, rays.shape), rays)
                       for o in objs])
        srt = np.sort(ts, axis=0)
        hit = np.isfinite(srt[0])
        # Skip pixels where the two nearest surfaces are within rounding of each other.
        with np.errstate(invalid="ignore"):
            clear = hit & ~(np.isfinite(srt[1]) & (srt[1] - srt[0] < 1e-6))
        owner = np.where(hit, np.argmin(ts, axis=0) + 1, 0).reshape(intr.shape)
        m = clear.reshape(intr.shape)
        z_pix += int(m.sum())
        z_bad += int(np.count_nonzero(owner[m] != inst[m]))
    ok = box_err <= 1e-9 and missing == 0 and z_bad == 0
    record(11, ok, f"{n_checked} boxes: max |box2d - oracle| {box_err:.1e} px, missing {missing}; "
                   f"z-order mismatches {z_bad}/{z_pix} pixels")
    assert ok


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q"]))
