"""Fuse warped references into one image.

Each target pixel picks one warped candidate by minimizing a pairwise MRF
energy (view-angle data term, occlusion exclusion, truncated color and depth
seam costs, gradient seam cost) with TRW-S.  A screened Poisson pass then
hides the remaining seams and fills holes with zero-gradient color.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import CameraIntrinsics, Pose, pixel_grid, unproject_points
from .laplace import grid_edges, harmonic_fill, screened_poisson
from .trws import MRF, TRWS
from .view_synth import axis_angle, select_references, warp_reference

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EnergyWeights:
    lambda1: float = 200.0
    lambda2: float = 1.0
    lambda3: float = 200.0
    lambda4: float = 100.0
    lambda5: float = 50.0
    tau_c: float = 0.5
    tau_d: float = 5.0
    angle_hook: float = 0.01
    # Unit scalers for the camera-distance (m) and axis-angle (rad) factors.
    pos_scale: float = 1.0
    dir_scale: float = 1.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise ValueError(f"{k} must be non-negative")
        if not (self.tau_c > 0 and self.tau_d > 0):
            raise ValueError("tau_c and tau_d must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "EnergyWeights":
        unknown = set(d) - set(asdict(cls()))
        if unknown:
            raise ValueError(f"unknown weight keys: {sorted(unknown)}")
        return cls(**d)

    def scaled(self, factor: float) -> "EnergyWeights":
        d = asdict(self)
        for k in ("lambda1", "lambda2", "lambda3", "lambda4", "lambda5"):
            d[k] *= factor
        return EnergyWeights(**d)


# ----------------------------------------------------------------------------
# costs


def _ray_angle(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    cross = np.linalg.norm(np.cross(a, b), axis=-1)
    return np.arctan2(cross, np.einsum("...k,...k->...", a, b))


def label_weight(ref_pose: Pose, target: Pose, weights: EnergyWeights) -> float:
    d_pos = weights.pos_scale * float(np.linalg.norm(ref_pose.center - target.center))
    d_dir = weights.dir_scale * axis_angle(ref_pose, target)
    return d_pos * d_dir


def unary_costs(warps, intrinsics: CameraIntrinsics, target: Pose, weights: EnergyWeights = EnergyWeights()):
    """``(H*W, k)`` data costs; +inf wherever a candidate is occluded."""
    shape = intrinsics.shape
    pix = pixel_grid(intrinsics)
    cost = np.full((shape[0] * shape[1], len(warps)), np.inf)
    for j, w in enumerate(warps):
        flat = w.depth_proxy.ravel()
        ok = ~w.occlusion_mask.ravel() & np.isfinite(flat)
        if not ok.any():
            continue
        x = unproject_points(pix[ok], flat[ok], intrinsics, target)
        e_angle = _ray_angle(x - target.center, x - w.ref_pose.center)
        e1 = np.maximum(e_angle, weights.angle_hook) * label_weight(w.ref_pose, target, weights)
        cost[ok, j] = weights.lambda1 * e1
    return cost


def _features(warps):
    """Per-candidate color, depth, forward-difference gradients and validity, stacked on axis 0."""
    colors = np.stack([w.color for w in warps])
    depths = np.stack([w.depth_proxy for w in warps])
    valid = np.stack([~w.occlusion_mask for w in warps])
    gx = np.zeros_like(colors)
    gy = np.zeros_like(colors)
    okx = valid[:, :, :-1] & valid[:, :, 1:]
    oky = valid[:, :-1, :] & valid[:, 1:, :]
    gx[:, :, :-1] = np.where(okx[..., None], colors[:, :, 1:] - colors[:, :, :-1], 0.0)
    gy[:, :-1, :] = np.where(oky[..., None], colors[:, 1:, :] - colors[:, :-1, :], 0.0)
    return colors, depths, valid, gx, gy


def _seam_terms(colors, depths, valid, gx, gy, pix, weights):
    """Label-pair seam cost at flat pixel indices ``pix``; shape ``(len(pix), k, k)``."""
    k = colors.shape[0]
    c = colors.reshape(k, -1, 3)[:, pix].transpose(1, 0, 2)
    d = depths.reshape(k, -1)[:, pix].T
    v = valid.reshape(k, -1)[:, pix].T
    both = v[:, :, None] & v[:, None, :]
    dc = np.sum((c[:, :, None, :] - c[:, None, :, :]) ** 2, axis=-1)
    e3 = np.where(both, np.minimum(dc, weights.tau_c), weights.tau_c)
    with np.errstate(invalid="ignore"):
        dd = np.abs(d[:, :, None] - d[:, None, :])
    e4 = np.where(both, np.minimum(dd, weights.tau_d), weights.tau_d)
    gxx = gx.reshape(k, -1, 3)[:, pix].transpose(1, 0, 2)
    gyy = gy.reshape(k, -1, 3)[:, pix].transpose(1, 0, 2)
    e5 = (np.linalg.norm(gxx[:, :, None] - gxx[:, None, :], axis=-1)
          + np.linalg.norm(gyy[:, :, None] - gyy[:, None, :], axis=-1))
    e5 = np.where(both, e5, 0.0)
    return e3, e4, e5


def pairwise_tables(warps, edges_p, edges_q, weights: EnergyWeights = EnergyWeights()) -> np.ndarray:
    """``(m, k, k)`` costs for grid edges between flat pixels ``edges_p`` and ``edges_q``."""
    feats = _features(warps)
    k = len(warps)
    total = np.zeros((len(edges_p), k, k))
    for pix in (edges_p, edges_q):
        e3, e4, e5 = _seam_terms(*feats, pix, weights)
        total += weights.lambda3 * e3 + weights.lambda4 * e4 + weights.lambda5 * e5
    total[:, np.arange(k), np.arange(k)] = 0.0
    return total


def pairwise_cost(pixel_i, pixel_j, label_a: int, label_b: int, warps,
                  weights: EnergyWeights = EnergyWeights()) -> float:
    """Seam cost for assigning ``label_a`` to ``pixel_i`` and ``label_b`` to ``pixel_j``.

    Pixels are ``(row, col)`` 4-neighbors.  Identical labels cost nothing.
    """
    if label_a == label_b:
        return 0.0
    (ri, ci), (rj, cj) = pixel_i, pixel_j
    if abs(ri - rj) + abs(ci - cj) != 1:
        raise ValueError("pairwise_cost needs 4-neighboring pixels")
    w = warps[0].color.shape[1]
    table = pairwise_tables(warps, np.array([ri * w + ci]), np.array([rj * w + cj]), weights)
    return float(table[0, label_a, label_b])


# ----------------------------------------------------------------------------
# problem and solver


@dataclass
class StitchProblem:
    width: int
    height: int
    candidates: list
    unary: np.ndarray
    edges: np.ndarray
    pairwise: np.ndarray
    hole: np.ndarray = field(init=False)

    def __post_init__(self):
        self.hole = ~np.isfinite(self.unary).any(axis=1)

    def energy(self, labels_flat: np.ndarray) -> float:
        """Energy of a labeling over non-hole pixels, recomputed from the cost tables."""
        ok = ~self.hole
        e = float(self.unary[np.flatnonzero(ok), labels_flat[ok]].sum())
        keep = ok[self.edges[:, 0]] & ok[self.edges[:, 1]]
        a, b = self.edges[keep, 0], self.edges[keep, 1]
        e += float(self.pairwise[np.flatnonzero(keep), labels_flat[a], labels_flat[b]].sum())
        return e


def build_problem(warps, intrinsics: CameraIntrinsics, target: Pose,
                  weights: EnergyWeights = EnergyWeights()) -> StitchProblem:
    if not warps:
        raise ValueError("build_problem needs at least one warped view")
    h, w = intrinsics.shape
    for wv in warps:
        if wv.color.shape[:2] != (h, w):
            raise ValueError("warped views must share the target raster size")
    unary = unary_costs(warps, intrinsics, target, weights)
    (hp, hq), (vp, vq) = grid_edges((h, w))
    p = np.concatenate([hp, vp])
    q = np.concatenate([hq, vq])
    # Row-major node order: sort edges by (p, q) so sweeps are deterministic.
    order = np.lexsort((q, p))
    p, q = p[order], q[order]
    pw = pairwise_tables(warps, p, q, weights)
    return StitchProblem(w, h, list(warps), unary, np.column_stack([p, q]), pw)


@dataclass
class Labeling:
    labels: np.ndarray  # (H, W) candidate index, -1 on holes
    hole: np.ndarray
    energy: float
    lower_bound: float
    bounds: list


def trws_solve(problem: StitchProblem, max_iter: int = 100, bound_tol: float = 1e-6) -> Labeling:
    """TRW-S over the non-hole pixels; holes are cut out of the grid."""
    shape = (problem.height, problem.width)
    keep = ~problem.hole
    node = np.full(keep.size, -1, dtype=np.int64)
    node[keep] = np.arange(keep.sum())
    labels = np.full(keep.size, -1, dtype=np.int64)
    if not keep.any():
        return Labeling(labels.reshape(shape), problem.hole.reshape(shape), 0.0, 0.0, [0.0])
    ek = keep[problem.edges[:, 0]] & keep[problem.edges[:, 1]]
    mrf = MRF(problem.unary[keep], node[problem.edges[ek]], problem.pairwise[ek])
    res = TRWS(mrf).run(max_iter=max_iter, bound_tol=bound_tol)
    labels[keep] = res.labels
    return Labeling(labels.reshape(shape), problem.hole.reshape(shape), res.energy, res.lower_bound, res.bounds)


# ----------------------------------------------------------------------------
# blending


def compose_mosaic(labeling: Labeling, warps) -> np.ndarray:
    lab = labeling.labels
    mosaic = np.zeros((*lab.shape, 3))
    for j, w in enumerate(warps):
        sel = lab == j
        mosaic[sel] = w.color[sel]
    return mosaic


def blend_guidance(labeling: Labeling, warps):
    """Target gradients ``(gh, gv)`` of shape ``(H, W-1, 3)`` and ``(H-1, W, 3)``.

    Inside a source region the gradient is that source's.  Across a seam it is
    the mean of the two sources' gradients where they are defined.  Any edge
    touching a hole has zero gradient.
    """
    lab = labeling.labels
    colors = np.stack([w.color for w in warps])
    valid = np.stack([~w.occlusion_mask for w in warps])

    def along(axis):
        if axis == 1:
            lp, lq = lab[:, :-1], lab[:, 1:]
            cp, cq = colors[:, :, :-1], colors[:, :, 1:]
            vp, vq = valid[:, :, :-1], valid[:, :, 1:]
        else:
            lp, lq = lab[:-1, :], lab[1:, :]
            cp, cq = colors[:, :-1, :], colors[:, 1:, :]
            vp, vq = valid[:, :-1, :], valid[:, 1:, :]
        g_all = cq - cp
        v_all = vp & vq
        lp0, lq0 = np.maximum(lp, 0), np.maximum(lq, 0)
        ii, jj = np.indices(lp.shape)
        ga, va = g_all[lp0, ii, jj], v_all[lp0, ii, jj]
        gb, vb = g_all[lq0, ii, jj], v_all[lq0, ii, jj]
        na = va.astype(float)[..., None]
        nb = vb.astype(float)[..., None]
        cnt = na + nb
        g = np.where(cnt > 0, (ga * na + gb * nb) / np.where(cnt > 0, cnt, 1), 0.0)
        g = np.where(((lp < 0) | (lq < 0))[..., None], 0.0, g)
        return g

    return along(1), along(0)


def poisson_blend(mosaic: np.ndarray, labeling: Labeling, warps, nearest_ref_index: int = 0,
                  screen: float = 1e-3, tol: float = 1e-8) -> np.ndarray:
    """Gradient-domain seam hiding and hole filling.

    Pixels of the nearest reference lying on its region boundary keep their
    mosaic color (Dirichlet).  Every non-hole pixel is weakly attached to the
    mosaic with weight ``screen``.  Covered pixels are solved first using only
    edges between covered pixels; holes are then filled with zero gradient,
    i.e. harmonically from the blended colors around them, so a hole never
    drags its surroundings.
    """
    lab = labeling.labels
    h, w = lab.shape
    hole = lab < 0
    if hole.all():
        raise ValueError("poisson_blend: labeling has no covered pixel")
    nearest = lab == nearest_ref_index
    pad = np.pad(lab, 1, constant_values=-2)
    differs = np.zeros_like(nearest)
    for dr, dc in ((0, 1), (2, 1), (1, 0), (1, 2)):
        nb = pad[dr : dr + h, dc : dc + w]
        differs |= (nb != lab) & (nb != -2)
    fixed = nearest & differs
    gh, gv = blend_guidance(labeling, warps)
    covered = ~hole
    wh = (covered[:, :-1] & covered[:, 1:]).astype(float)
    wv = (covered[:-1, :] & covered[1:, :]).astype(float)
    scr = np.where(hole, 0.0, screen)
    out = np.empty_like(mosaic)
    for c in range(3):
        chan = mosaic[..., c]
        anchor_c = float(chan[covered].mean())
        # Hole pixels are decoupled placeholders in the first solve.
        out[..., c] = screened_poisson((h, w), gh[..., c], gv[..., c], fixed | hole, np.where(hole, 0.0, chan),
                                       scr, chan, tol=tol, anchor_mean=anchor_c, weight_h=wh, weight_v=wv)
        if hole.any():
            out[..., c] = harmonic_fill(out[..., c], hole, tol=tol)
    return np.clip(out, 0.0, 1.0)


# ----------------------------------------------------------------------------
# orchestration


@dataclass(frozen=True)
class SynthConfig:
    k: int = 4
    max_hole_px: int = 64
    depth_tol: float = 0.2
    forward_method: str = "mesh"
    trws_max_iter: int = 100
    bound_tol: float = 1e-6
    blend_screen: float = 1e-3
    blend_tol: float = 1e-8

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        unknown = set(d) - set(asdict(cls()))
        if unknown:
            raise ValueError(f"unknown synth config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class SynthResult:
    image: np.ndarray
    depth: np.ndarray
    provenance: np.ndarray  # dataset index per pixel, -1 on holes
    labeling: Labeling
    warps: list
    references: list
    mosaic: np.ndarray
    problem: StitchProblem


def synthesize_view(intrinsics: CameraIntrinsics, target: Pose, dataset,
                    weights: EnergyWeights = EnergyWeights(), config: SynthConfig = SynthConfig()) -> SynthResult:
    """Render a novel view from the nearest references."""
    dataset = list(dataset)
    if not dataset:
        raise ValueError("synthesize_view: dataset is empty")
    refs = select_references(target, dataset, config.k)
    ref_ids = [next(i for i, v in enumerate(dataset) if v is r) for r in refs]
    warps = [warp_reference(r, intrinsics, target, j, config.max_hole_px, config.depth_tol,
                            config.forward_method)
             for j, r in enumerate(refs)]
    problem = build_problem(warps, intrinsics, target, weights)
    labeling = trws_solve(problem, config.trws_max_iter, config.bound_tol)
    mosaic = compose_mosaic(labeling, warps)
    image = poisson_blend(mosaic, labeling, warps, 0, config.blend_screen, config.blend_tol)
    depth = np.full(intrinsics.shape, np.nan)
    for j, w in enumerate(warps):
        sel = labeling.labels == j
        depth[sel] = w.depth_proxy[sel]
    prov = np.where(labeling.labels >= 0, np.asarray(ref_ids)[np.maximum(labeling.labels, 0)], -1)
    return SynthResult(image, depth, prov, labeling, warps, refs, mosaic, problem)
