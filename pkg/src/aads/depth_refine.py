"""Dense, reliable depth from sparse point-cloud renders.

Pipeline: :func:`render_point_depth` -> :func:`median_prune` ->
:func:`guided_filter` -> :func:`poisson_complete` (see :func:`refine_depth`).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .geometry import CameraIntrinsics, Pose, luminance
from .laplace import harmonic_fill
from .render import splat_points

MIN_WINDOW_SUPPORT = 3


@dataclass(frozen=True)
class RefineConfig:
    median_kernel: int = 5
    prune_rel: float = 0.1
    prune_abs: float = 0.3
    guided_radius: int = 8
    guided_eps: float = 1e-3
    poisson_tol: float = 1e-6
    poisson_max_iter: int = 10000

    def __post_init__(self):
        if self.median_kernel < 3 or self.median_kernel % 2 == 0:
            raise ValueError(f"median_kernel must be odd and >= 3, got {self.median_kernel}")
        for name in ("prune_rel", "prune_abs", "guided_eps", "poisson_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.guided_radius < 0 or self.poisson_max_iter < 1:
            raise ValueError("guided_radius must be >= 0 and poisson_max_iter >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "RefineConfig":
        known = set(asdict(cls()))
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown refine config keys: {sorted(unknown)}")
        return cls(**d)


def render_point_depth(cloud, intrinsics: CameraIntrinsics, pose: Pose) -> np.ndarray:
    """Z-buffer a point cloud into a depth map, one pixel per point."""
    cloud = np.asarray(cloud, dtype=float).reshape(-1, 3)
    if len(cloud) == 0:
        raise ValueError("render_point_depth needs a non-empty cloud")
    depth, _ = splat_points(cloud, intrinsics, pose, footprint="nearest")
    return depth


def _window_medians(depth: np.ndarray, k: int):
    r = k // 2
    pad = np.pad(depth, r, constant_values=np.nan)
    win = sliding_window_view(pad, (k, k)).reshape(*depth.shape, k * k)
    count = np.count_nonzero(~np.isnan(win), axis=-1)
    med = np.full(depth.shape, np.nan)
    ok = count > 0
    med[ok] = np.nanmedian(win[ok], axis=-1)
    return med, count


def _prune_once(depth: np.ndarray, cfg: RefineConfig) -> np.ndarray:
    med, count = _window_medians(depth, cfg.median_kernel)
    valid = ~np.isnan(depth)
    thresh = np.maximum(cfg.prune_rel * med, cfg.prune_abs)
    with np.errstate(invalid="ignore"):
        bad = valid & (count >= MIN_WINDOW_SUPPORT) & (np.abs(depth - med) > thresh)
    return bad


def median_prune(depth: np.ndarray, cfg: RefineConfig = RefineConfig()) -> np.ndarray:
    """Remove pixels that disagree with their windowed median.

    A pixel is dropped when ``|d - median| > max(prune_rel * median, prune_abs)``
    with the median taken over the valid pixels of the window.  Windows with
    fewer than three valid pixels leave their center alone.  The rule is
    re-applied until nothing changes, which makes the filter idempotent.
    """
    out = np.array(depth, dtype=float)
    while True:
        bad = _prune_once(out, cfg)
        if not bad.any():
            return out
        out[bad] = np.nan


def box_sum(a: np.ndarray, r: int) -> np.ndarray:
    """Sum over the ``(2r+1)^2`` window clipped to the raster."""
    h, w = a.shape
    c = np.zeros((h + 1, w + 1))
    c[1:, 1:] = a.cumsum(0).cumsum(1)
    i0 = np.clip(np.arange(h) - r, 0, h)
    i1 = np.clip(np.arange(h) + r + 1, 0, h)
    j0 = np.clip(np.arange(w) - r, 0, w)
    j1 = np.clip(np.arange(w) + r + 1, 0, w)
    return c[i1][:, j1] - c[i0][:, j1] - c[i1][:, j0] + c[i0][:, j0]


def guided_filter(depth: np.ndarray, guide: np.ndarray, cfg: RefineConfig = RefineConfig()) -> np.ndarray:
    """Edge-aware smoothing of depth with the guide image's luminance.

    Every window fits ``depth ~ a * I + b`` over its valid pixels; the output at
    a valid pixel averages the models of all windows that contain it and saw
    at least one valid pixel.  Invalid pixels stay invalid.
    """
    if guide.shape[:2] != depth.shape:
        raise ValueError(f"guide {guide.shape[:2]} and depth {depth.shape} differ in size")
    lum = luminance(guide) if guide.ndim == 3 else np.asarray(guide, float)
    r = cfg.guided_radius
    valid = ~np.isnan(depth)
    w = valid.astype(float)
    p = np.where(valid, depth, 0.0)
    n = box_sum(w, r)
    has = n > 0
    safe_n = np.where(has, n, 1.0)
    mean_i = box_sum(w * lum, r) / safe_n
    mean_p = box_sum(p, r) / safe_n
    corr_ip = box_sum(w * lum * p, r) / safe_n
    var_i = np.maximum(box_sum(w * lum * lum, r) / safe_n - mean_i**2, 0.0)
    a = (corr_ip - mean_i * mean_p) / (var_i + cfg.guided_eps)
    b = mean_p - a * mean_i
    a = np.where(has, a, 0.0)
    b = np.where(has, b, 0.0)
    k = box_sum(has.astype(float), r)
    q = (box_sum(a, r) * lum + box_sum(b, r)) / np.where(k > 0, k, 1.0)
    return np.where(valid, q, np.nan)


def poisson_complete(depth: np.ndarray, cfg: RefineConfig = RefineConfig()) -> np.ndarray:
    """Fill every invalid pixel with the discrete harmonic extension of the valid ones."""
    holes = np.isnan(depth)
    if holes.all():
        raise ValueError("poisson_complete: depth map has no valid pixel")
    return harmonic_fill(depth, holes, tol=cfg.poisson_tol, max_iter=cfg.poisson_max_iter)


def refine_depth(depth: np.ndarray, guide: np.ndarray, cfg: RefineConfig = RefineConfig()) -> np.ndarray:
    return poisson_complete(guided_filter(median_prune(depth, cfg), guide, cfg), cfg)
