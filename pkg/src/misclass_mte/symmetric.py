"""Identification when false-positive and false-negative rates coincide.

Symmetric misclassification makes the observed propensity an affine map of the
true one, q = alpha + (1 - 2 alpha) P, so every admissible alpha yields one
candidate MTE curve, MTE(p; alpha) = (1 - 2 alpha) LIV((1 - 2 alpha) p + alpha).
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import minimize_scalar

from .model import BoundCurve, Interval
from .probkit import Grid

HALF_GAP = 1e-6


def alpha_grid(alpha_bar, size, upper_branch=False):
    """Uniform grid on [0, alpha_bar] kept a HALF_GAP away from 1/2.

    With ``upper_branch`` the grid covers (1/2, alpha_bar] instead.
    """
    if not 0.0 <= alpha_bar <= 1.0:
        raise ValueError("alpha_bar outside [0,1]")
    size = int(size)
    if upper_branch:
        if alpha_bar <= 0.5 + HALF_GAP:
            return np.empty(0)
        return np.linspace(0.5 + HALF_GAP, alpha_bar, size)
    top = min(alpha_bar, 0.5 - HALF_GAP)
    if top == 0.0 or size == 1:
        return np.array([top])
    return np.linspace(0.0, top, size)


def alpha_identified_set(q_values, alpha_bar, grid_size, upper_branch=False):
    """Grid values of alpha for which (q - alpha) / (1 - 2 alpha) lies in [0, 1]
    for every observed propensity q."""
    q = np.asarray(q_values, dtype=float)
    if q.size == 0:
        raise ValueError("q_values must be nonempty")
    grid = alpha_grid(alpha_bar, grid_size, upper_branch)
    lo, hi = q.min(), q.max()
    slope = 1.0 - 2.0 * grid
    inv_lo = (lo - grid) / slope
    inv_hi = (hi - grid) / slope
    tol = 1e-12
    ok = (np.minimum(inv_lo, inv_hi) >= -tol) & (np.maximum(inv_lo, inv_hi) <= 1.0 + tol)
    return grid[ok]


def true_pscore_from_alpha(q, alpha):
    if abs(alpha - 0.5) < 1e-15:
        raise ValueError("alpha = 1/2 is a singularity of the inversion")
    q = np.asarray(q, dtype=float)
    p = (q - alpha) / (1.0 - 2.0 * alpha)
    if np.any((p < -1e-12) | (p > 1.0 + 1e-12)):
        raise ValueError("inverted propensity falls outside [0,1]; alpha is infeasible")
    p = np.clip(p, 0.0, 1.0)
    return p if p.ndim else float(p)


def mte_symmetric(p, alpha, liv):
    """(1 - 2 alpha) * liv((1 - 2 alpha) p + alpha)."""
    if abs(alpha - 0.5) < 1e-15:
        raise ValueError("alpha = 1/2 is a singularity of the inversion")
    slope = 1.0 - 2.0 * alpha
    return slope * liv(slope * np.asarray(p, dtype=float) + alpha)


def _interior(domain):
    """``domain`` shrunk by a relative 1e-9 so endpoints count as outside."""
    pad = 1e-9 * max(1.0, domain[1] - domain[0])
    return domain[0] + pad, domain[1] - pad


def _usable_alpha_range(p, lo, hi, domain):
    """Sub-interval of [lo, hi] whose evaluation point alpha (1 - 2 p) + p
    lies strictly inside ``domain``."""
    if domain is None:
        return lo, hi
    d0, d1 = _interior(domain)
    c = 1.0 - 2.0 * p
    if abs(c) < 1e-15:
        return (lo, hi) if d0 <= p <= d1 else None
    a0, a1 = sorted(((d0 - p) / c, (d1 - p) / c))
    a0, a1 = max(a0, lo), min(a1, hi)
    return (a0, a1) if a0 <= a1 else None


def _refine_extremes(p, alphas, liv, domain):
    """Continuous min and max of MTE(p; a) over a in [alphas[0], alphas[-1]].

    A dense scan locates the extremes and a bounded scalar search polishes
    them, so the envelope does not depend on where the grid nodes fall.
    """
    rng = _usable_alpha_range(p, float(alphas[0]), float(alphas[-1]), domain)
    if rng is None:
        return None
    a0, a1 = rng
    f = lambda a: float(mte_symmetric(p, a, liv))
    if a1 - a0 < 1e-12:
        v = f(a0)
        return (v, a0), (v, a0)
    scan = np.linspace(a0, a1, 257)
    vals = np.array([f(a) for a in scan])
    step = scan[1] - scan[0]
    out = []
    for sign in (1.0, -1.0):
        i = int(np.argmin(sign * vals))
        best = (vals[i], scan[i])
        lo_b, hi_b = max(a0, scan[i] - step), min(a1, scan[i] + step)
        res = minimize_scalar(lambda a: sign * f(a), bounds=(lo_b, hi_b), method="bounded",
                              options={"xatol": 1e-12})
        if res.success and res.fun < sign * best[0]:
            best = (sign * res.fun, float(res.x))
        out.append(best)
    return out[0], out[1]


def symmetric_family_curve(p_grid, alphas, liv, liv_domain=None, truth=None, refine=False) -> BoundCurve:
    """Envelope over ``alphas`` of the candidate MTE curves.

    Members whose evaluation point (1 - 2 alpha) p + alpha is not strictly
    inside ``liv_domain`` are skipped at that p; a p with no usable member gets an
    empty interval. ``extra['members']`` holds the (len(alphas), len(p_grid))
    array with NaN where skipped.

    With ``refine`` the envelope is taken over the whole interval spanned by
    ``alphas`` rather than its nodes. This only makes sense for a cheap,
    smooth ``liv`` such as a closed form.
    """
    grid = p_grid if isinstance(p_grid, Grid) else Grid(p_grid)
    p = grid.points
    alphas = np.atleast_1d(np.asarray(alphas, dtype=float))
    members = np.full((alphas.size, p.size), np.nan)
    for j, a in enumerate(alphas):
        slope = 1.0 - 2.0 * a
        at = slope * p + a
        usable = np.ones(p.size, bool)
        if liv_domain is not None:
            d0, d1 = _interior(liv_domain)
            usable = (at >= d0) & (at <= d1)
        if usable.any():
            members[j, usable] = slope * np.asarray(liv(at[usable]), dtype=float)
    intervals = []
    for i, col in enumerate(members.T):
        if refine:
            ext = _refine_extremes(p[i], alphas, liv, liv_domain)
            if ext is not None:
                (lo, a_lo), (hi, a_hi) = ext
                intervals.append(Interval(lo, hi, (f"alpha={a_lo:.6g}", f"alpha={a_hi:.6g}")))
                continue
        if not np.isfinite(col).any():
            intervals.append(Interval(np.nan, np.nan, ("", ""), empty=True))
            continue
        lo_i = int(np.nanargmin(col))
        hi_i = int(np.nanargmax(col))
        intervals.append(Interval(col[lo_i], col[hi_i],
                                  (f"alpha={alphas[lo_i]:.6g}", f"alpha={alphas[hi_i]:.6g}")))
    tr = None if truth is None else np.asarray(truth(p), dtype=float)
    return BoundCurve(grid, intervals, truth=tr, extra={"alphas": alphas, "members": members})
