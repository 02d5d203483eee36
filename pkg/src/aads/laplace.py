"""Discrete Laplace and screened Poisson solvers on 4-connected pixel grids.

Two solvers live here:

* :func:`harmonic_fill` fills unknown pixels so they satisfy the 4-neighbor
  Laplace equation with the known pixels as Dirichlet data.  The raster
  border is a natural (Neumann) boundary.  Red-black SOR, fixed sweep order.
* :func:`screened_poisson` minimizes a gradient-matching quadratic with
  optional per-pixel data attachment and Dirichlet pixels, via Jacobi
  preconditioned conjugate gradients on a sparse system.
"""

from __future__ import annotations

import logging

import numpy as np
import scipy.sparse as sp
from scipy import ndimage

logger = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    pass


def _neighbor_sum(u: np.ndarray) -> np.ndarray:
    pad = np.pad(u, 1)
    return pad[:-2, 1:-1] + pad[2:, 1:-1] + pad[1:-1, :-2] + pad[1:-1, 2:]


def _degree(shape) -> np.ndarray:
    deg = np.full(shape, 4.0)
    deg[0, :] -= 1
    deg[-1, :] -= 1
    deg[:, 0] -= 1
    deg[:, -1] -= 1
    return deg


def laplace_residual(u: np.ndarray, unknown: np.ndarray) -> float:
    """Max over unknown pixels of ``|mean(neighbors) - u|``."""
    if not unknown.any():
        return 0.0
    r = _neighbor_sum(u) / _degree(u.shape) - u
    return float(np.abs(r[unknown]).max())


def harmonic_fill(values: np.ndarray, unknown: np.ndarray, tol: float = 1e-6,
                  max_iter: int = 10000) -> np.ndarray:
    """Fill ``unknown`` pixels of a 2-D array with the discrete harmonic interpolant.

    Args:
        values: 2-D array; entries under ``unknown`` are ignored.
        unknown: boolean mask of pixels to solve for.
        tol: stop once the max normalized Laplace residual is at most this.
        max_iter: cap on red-black sweeps.

    Returns:
        A new array with known pixels copied verbatim.
    """
    values = np.asarray(values, dtype=float)
    unknown = np.asarray(unknown, dtype=bool)
    out = values.copy()
    if not unknown.any():
        return out
    if unknown.all():
        raise ValueError("harmonic_fill needs at least one known pixel")

    # Work on the bounding box of the unknowns grown by one pixel.
    rows = np.flatnonzero(unknown.any(axis=1))
    cols = np.flatnonzero(unknown.any(axis=0))
    r0, r1 = max(rows[0] - 1, 0), min(rows[-1] + 2, values.shape[0])
    c0, c1 = max(cols[0] - 1, 0), min(cols[-1] + 2, values.shape[1])
    sub_unknown = unknown[r0:r1, c0:c1]

    # Initial guess: value of the nearest finite known pixel (deterministic).
    _, (ii, jj) = ndimage.distance_transform_edt(unknown | ~np.isfinite(values), return_indices=True)
    out[unknown] = values[ii[unknown], jj[unknown]]
    u = out[r0:r1, c0:c1].copy()

    # Border pixels of the full raster lose neighbors; interior cut edges of the
    # sub-window keep them since the grown window contains the known values.
    deg = np.full(u.shape, 4.0)
    if r0 == 0:
        deg[0, :] -= 1
    if r1 == values.shape[0]:
        deg[-1, :] -= 1
    if c0 == 0:
        deg[:, 0] -= 1
    if c1 == values.shape[1]:
        deg[:, -1] -= 1

    ext = max(u.shape)
    omega = 2.0 / (1.0 + np.sin(np.pi / (ext + 1)))
    parity = np.add.outer(np.arange(u.shape[0]), np.arange(u.shape[1])) % 2
    red = sub_unknown & (parity == 0)
    black = sub_unknown & (parity == 1)

    # Unknown pixels sit at least one pixel inside the grown window, so the zero
    # padding at non-raster window edges never reaches them.
    res = np.inf
    for it in range(max_iter):
        for color in (red, black):
            gs = _neighbor_sum(u) / deg
            u[color] += omega * (gs[color] - u[color])
        res = float(np.abs(_neighbor_sum(u) / deg - u)[sub_unknown].max())
        if res <= tol:
            break
    else:
        logger.warning("harmonic_fill hit max_iter=%d with residual %.3g", max_iter, res)
    out[r0:r1, c0:c1][sub_unknown] = u[sub_unknown]
    return out


def grid_edges(shape):
    """Horizontal and vertical 4-neighbor edges as flat index pairs ``(p, q)``, q right/below p."""
    h, w = shape
    idx = np.arange(h * w).reshape(h, w)
    hp, hq = idx[:, :-1].ravel(), idx[:, 1:].ravel()
    vp, vq = idx[:-1, :].ravel(), idx[1:, :].ravel()
    return (hp, hq), (vp, vq)


def conjugate_gradient(a, b: np.ndarray, tol: float, max_iter: int) -> np.ndarray:
    """Jacobi-preconditioned CG; stops when ``max|b - A x| <= tol``."""
    x = np.zeros_like(b)
    r = b - a @ x
    diag = a.diagonal()
    inv_d = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 1.0)
    z = inv_d * r
    p = z.copy()
    rz = r @ z
    for _ in range(max_iter):
        if np.abs(r).max() <= tol:
            return x
        ap = a @ p
        denom = p @ ap
        if denom <= 0:
            break
        alpha = rz / denom
        x += alpha * p
        r -= alpha * ap
        z = inv_d * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    if np.abs(r).max() > tol:
        raise ConvergenceError(f"CG residual {np.abs(r).max():.3g} above tolerance {tol}")
    return x


def screened_poisson(shape, grad_h: np.ndarray, grad_v: np.ndarray, fixed: np.ndarray,
                     fixed_values: np.ndarray, screen: np.ndarray, target: np.ndarray,
                     tol: float = 1e-9, max_iter: int = 20000, anchor_mean: float | None = None,
                     weight_h: np.ndarray | None = None, weight_v: np.ndarray | None = None):
    """Solve the gradient-domain least squares problem on a single channel.

    Minimizes ``sum_edges w_pq (u_q - u_p - g_pq)^2 + sum_p screen_p (u_p - target_p)^2``
    over non-fixed pixels with ``u = fixed_values`` on ``fixed``.

    Args:
        shape: ``(H, W)``.
        grad_h: ``(H, W-1)`` desired ``u[:, 1:] - u[:, :-1]``.
        grad_v: ``(H-1, W)`` desired ``u[1:, :] - u[:-1, :]``.
        fixed: boolean Dirichlet mask.
        fixed_values: values used on ``fixed`` pixels.
        screen: non-negative per-pixel data weights.
        target: data values for the screening term.
        anchor_mean: if the system has no fixed pixel and no screening, the
            solution (defined up to a constant) is shifted to this mean.
        weight_h, weight_v: optional non-negative edge weights shaped like
            the gradients (default 1).
    """
    h, w = shape
    n = h * w
    (hp, hq), (vp, vq) = grid_edges(shape)
    p = np.concatenate([hp, vp])
    q = np.concatenate([hq, vq])
    g = np.concatenate([np.asarray(grad_h, float).ravel(), np.asarray(grad_v, float).ravel()])
    if weight_h is None and weight_v is None:
        ew = np.ones(len(p))
    else:
        wh = np.ones(len(hp)) if weight_h is None else np.asarray(weight_h, float).ravel()
        wv = np.ones(len(vp)) if weight_v is None else np.asarray(weight_v, float).ravel()
        ew = np.concatenate([wh, wv])
    g = g * ew

    deg = np.bincount(p, weights=ew, minlength=n) + np.bincount(q, weights=ew, minlength=n)
    scr = np.asarray(screen, float).ravel()
    rhs = np.bincount(q, weights=g, minlength=n) - np.bincount(p, weights=g, minlength=n)
    rhs = rhs + scr * np.nan_to_num(np.asarray(target, float).ravel())
    lap = sp.coo_matrix(
        (np.concatenate([-ew, -ew]), (np.concatenate([p, q]), np.concatenate([q, p]))),
        shape=(n, n),
    ).tocsr()
    a = (lap + sp.diags(deg + scr)).tocsr()

    fixed = np.asarray(fixed, bool).ravel()
    u = np.zeros(n)
    u[fixed] = np.asarray(fixed_values, float).ravel()[fixed]
    free = ~fixed
    if not free.any():
        return u.reshape(shape)
    a_ff = a[free][:, free]
    b = rhs[free] - a[free][:, fixed] @ u[fixed]
    singular = not fixed.any() and not np.any(scr > 0)
    if singular:
        # Consistent singular Neumann system: project out the constant mode.
        b = b - b.mean()
    u[free] = conjugate_gradient(a_ff, b, tol, max_iter)
    if singular:
        u += (0.0 if anchor_mean is None else anchor_mean) - u.mean()
    return u.reshape(shape)
