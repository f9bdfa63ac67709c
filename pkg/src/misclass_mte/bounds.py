"""Identification bounds under a misclassified binary treatment.

Everything here works on :class:`CellStats`, the per-instrument-cell summary
of the joint law of (Y, D) given Z. Cells come either from data
(:func:`cell_stats`) or from population oracles
(:meth:`misclass_mte.simulator.CopulaOracle.cell_stats`).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import BoundCurve, IdentConfig, InsufficientDataError, Interval, Sample
from .probkit import Grid

COUNTING_MEASURE_MAX_LEVELS = 20


@dataclass
class CellStats:
    z_value: float
    n_cell: int | None
    pD1: float
    joint_hist: np.ndarray  # shape (2, nbins); row d holds P(Y in bin, D = d | Z = z)
    mean_y: float
    y_edges: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.joint_hist = np.asarray(self.joint_hist, dtype=float)
        total = self.joint_hist.sum()
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"cell masses sum to {total}, not 1")
        if abs(self.joint_hist[1].sum() - self.pD1) > 1e-9:
            raise ValueError("pD1 disagrees with the d = 1 mass")


@dataclass(frozen=True)
class TvPair:
    tv1: float
    tv0: float
    tv_y: float

    @property
    def max(self):
        return max(self.tv1, self.tv0)


# ---------------------------------------------------------------------------
# propensity bounds


def pointwise_pscore_bounds(q, alpha_bar) -> Interval:
    """Sharp pointwise bounds on P(z) from q = P(D = 1 | Z = z) and alpha <= alpha_bar."""
    if not 0.0 <= q <= 1.0:
        raise ValueError("q outside [0,1]")
    if not 0.0 <= alpha_bar <= 1.0:
        raise ValueError("alpha_bar outside [0,1]")
    lo = max(q - alpha_bar, 0.0)
    hi = min(q + alpha_bar, 1.0)
    return Interval(lo, hi, ("q-alpha_bar" if lo > 0 else "zero", "q+alpha_bar" if hi < 1 else "one"))


def pointwise_pscore_bounds_search(q, alpha_bar, n=10_000, breakpoints=True):
    """Brute-force version of :func:`pointwise_pscore_bounds` over an alpha grid.

    Both objectives are piecewise linear in alpha with kinks at q and 1 - q;
    ``breakpoints`` adds those (when inside [0, alpha_bar]) to the uniform grid
    so the search is exact rather than accurate to the grid step.
    """
    a = np.linspace(0.0, alpha_bar, n)
    if breakpoints:
        kinks = np.array([q, 1.0 - q])
        a = np.concatenate([a, kinks[(kinks >= 0.0) & (kinks <= alpha_bar)]])
    lo = np.min(np.maximum(q - a, a - q))
    hi = np.max(np.minimum(q + a, (1.0 - a) + (1.0 - q)))
    return lo, hi


def pscore_midpoint(q, alpha_bar):
    iv = pointwise_pscore_bounds(q, alpha_bar)
    return 0.5 * (iv.lo + iv.hi)


def pdiff_upper(delta_dz, alpha):
    return min(1.0, 2.0 * alpha + delta_dz, 2.0 * (1.0 - alpha) - delta_dz)


def pscore_diff_bounds(tv: TvPair, delta_dz, alpha) -> Interval:
    """Bounds on P(z) - P(z') for a given misclassification rate ``alpha``."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha outside [0,1]")
    lo = tv.max
    hi = pdiff_upper(delta_dz, alpha)
    binding = ("tv1" if tv.tv1 >= tv.tv0 else "tv0",
               "one" if hi == 1.0 else "2a+ddz" if hi == 2 * alpha + delta_dz else "2(1-a)-ddz")
    return Interval(lo, hi, binding, empty=lo > hi)


# ---------------------------------------------------------------------------
# cell summaries


def y_edges_for(y, y_bins=50):
    """Shared outcome bin edges, open ended at both sides.

    Few distinct values get one bin per value (counting measure); otherwise
    equal-width bins over the sample range.
    """
    y = np.asarray(y, dtype=float)
    levels = np.unique(y)
    if levels.size <= COUNTING_MEASURE_MAX_LEVELS:
        inner = 0.5 * (levels[1:] + levels[:-1])
    else:
        inner = np.linspace(levels[0], levels[-1], int(y_bins) + 1)[1:-1]
    return np.concatenate([[-np.inf], inner, [np.inf]])


def _z_assignment(z, z_cells, n_cells):
    levels = np.unique(z)
    if z_cells is None and levels.size <= COUNTING_MEASURE_MAX_LEVELS:
        return np.searchsorted(levels, z), levels.size, levels
    if z_cells is None:
        inner = np.quantile(z, np.linspace(0, 1, n_cells + 1)[1:-1])
        if np.any(np.diff(inner) <= 0):
            raise ValueError("instrument has too many ties for quantile cells; pass z_cells")
    else:
        edges = np.asarray(z_cells, dtype=float)
        if edges.size < 2 or np.any(np.diff(edges) <= 0):
            raise ValueError("z_cells must be at least two strictly increasing bin edges")
        # Observations outside the outer edges are dropped, not folded in.
        keep = (z >= edges[0]) & (z <= edges[-1])
        idx = np.searchsorted(edges[1:-1], z, side="right")
        idx[~keep] = -1
        return idx, edges.size - 1, None
    idx = np.searchsorted(inner, z, side="right")
    return idx, inner.size + 1, None


def cell_stats(sample: Sample, z_cells=None, y_bins=50, n_cells=20, y_edges=None):
    """Summaries of (Y, D) within instrument cells.

    Discrete instruments (at most 20 levels) use their exact levels. A
    continuous instrument is cut at ``z_cells`` (bin edges) or, by default,
    into ``n_cells`` equal-count cells. ``z_value`` is the within-cell mean of Z.
    """
    n = len(sample)
    if n == 0:
        raise InsufficientDataError("no observations")
    z_cells = z_cells.points if isinstance(z_cells, Grid) else z_cells
    idx, ncell, _ = _z_assignment(sample.z, z_cells, n_cells)
    edges = y_edges_for(sample.y, y_bins) if y_edges is None else np.asarray(y_edges, dtype=float)
    ybin = np.clip(np.searchsorted(edges, sample.y, side="right") - 1, 0, edges.size - 2)
    nb = edges.size - 1
    counts = np.bincount(idx[idx >= 0], minlength=ncell)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise InsufficientDataError(f"empty instrument cell(s): {empty.tolist()}")
    keep = idx >= 0
    flat = (idx[keep] * 2 + sample.d[keep]) * nb + ybin[keep]
    hist = np.bincount(flat, minlength=ncell * 2 * nb).reshape(ncell, 2, nb).astype(float)
    zsum = np.bincount(idx[keep], weights=sample.z[keep], minlength=ncell)
    ysum = np.bincount(idx[keep], weights=sample.y[keep], minlength=ncell)
    out = []
    for c in range(ncell):
        m = hist[c] / counts[c]
        out.append(CellStats(z_value=zsum[c] / counts[c], n_cell=int(counts[c]),
                             pD1=float(m[1].sum()), joint_hist=m,
                             mean_y=ysum[c] / counts[c], y_edges=edges))
    return out


def tv_distances(a: CellStats, b: CellStats) -> TvPair:
    if a.joint_hist.shape != b.joint_hist.shape or not np.array_equal(a.y_edges, b.y_edges):
        raise ValueError("cells use different outcome bin edges")
    diff = np.abs(a.joint_hist - b.joint_hist)
    tv_y = 0.5 * np.abs(a.joint_hist.sum(0) - b.joint_hist.sum(0)).sum()
    return TvPair(float(diff[1].sum()), float(diff[0].sum()), float(tv_y))


# ---------------------------------------------------------------------------
# MTE bounds


def _ratio_interval(num, den, labels=("zero", "ratio")):
    """[min(0, num/den), max(0, num/den)] with explicit handling of den = 0."""
    if den <= 0.0:
        if num == 0.0:
            return Interval(0.0, 0.0, labels)
        if num > 0:
            return Interval(0.0, np.inf, labels, unbounded=True)
        return Interval(-np.inf, 0.0, labels[::-1], unbounded=True)
    r = num / den
    return Interval(0.0, r, labels) if r >= 0 else Interval(r, 0.0, labels[::-1])


def _point(num, den, label):
    if den == 0.0:
        return Interval(-np.inf, np.inf, (label, label), unbounded=True)
    r = num / den
    return Interval(r, r, (label, label))


def _sorted(cells):
    return sorted(cells, key=lambda c: c.z_value)


def _locate(cells, cfg, pscore):
    z = np.array([c.z_value for c in cells])
    if pscore is not None:
        return np.asarray(pscore(z), dtype=float)
    return np.array([pscore_midpoint(c.pD1, cfg.alpha_bar) for c in cells])


def _default_fd_step(z):
    return 2.0 * float(np.median(np.diff(z))) if z.size > 1 else 0.0


def _fd_pair(z, i, fd_step):
    """Cells nearest z_i -/+ fd_step / 2 on each side of cell i (inclusive).

    Where cells are sparser than the step both searches land on i itself; the
    adjacent cells are used then, one-sided at the edges of the support.
    """
    a = int(np.argmin(np.abs(z[: i + 1] - (z[i] - fd_step / 2))))
    b = i + int(np.argmin(np.abs(z[i:] - (z[i] + fd_step / 2))))
    if a == b:
        a, b = max(i - 1, 0), min(i + 1, z.size - 1)
    if a == b:
        raise InsufficientDataError(f"insufficient support: no bracketing pair around z = {z[i]:g}")
    return a, b


def _pair_interval(a, b, cfg, lb_kind):
    tv = tv_distances(a, b)
    dyz = b.mean_y - a.mean_y
    ddz = b.pD1 - a.pD1
    if cfg.alpha_bar == 0.0:
        iv = _point(dyz, ddz, "wald")
    elif lb_kind == "tv":
        iv = _ratio_interval(dyz, tv.max)
    elif lb_kind == "tv_y":
        iv = _ratio_interval(dyz, tv.tv_y)
    elif lb_kind == "delta_dz":
        iv = _ratio_interval(dyz, abs(ddz))
    else:
        raise ValueError(f"unknown lb_kind {lb_kind!r}")
    liv = dyz / ddz if ddz != 0 else np.nan
    return iv, liv


def mte_bounds_at(p_eval, cells, cfg: IdentConfig, pscore=None, lb_kind="tv") -> Interval:
    """Bounds on MTE(p_eval) from a finite-difference approximation of the limit.

    The cell whose located propensity is nearest ``p_eval`` is paired with the
    cells at distance ``fd_step / 2`` on either side in z (one-sided at the
    edge of the support). Cells are located with ``pscore`` when a true
    propensity map is supplied, otherwise with the midpoint of the pointwise
    propensity bounds. P is taken to be nondecreasing in z.

    ``lb_kind`` selects the lower bound on P(z) - P(z'): ``tv`` (max of the two
    joint total variations), ``tv_y`` (outcome-only total variation, valid
    without instrument/misreporting independence) or ``delta_dz`` (|Delta_DZ|).
    """
    return _bounds_and_liv(p_eval, cells, cfg, pscore, lb_kind)[0]


def _bounds_and_liv(p_eval, cells, cfg, pscore, lb_kind):
    cells = _sorted(cells)
    if len(cells) < 2:
        raise InsufficientDataError("insufficient support: need at least two cells")
    z = np.array([c.z_value for c in cells])
    located = _locate(cells, cfg, pscore)
    if np.ptp(located) == 0.0:
        raise ValueError("propensity locator is not injective; pass a pscore map or use per-cell bounds")
    i = int(np.argmin(np.abs(located - p_eval)))
    fd = cfg.fd_step if cfg.fd_step is not None else _default_fd_step(z)
    a, b = _fd_pair(z, i, fd)
    return _pair_interval(cells[a], cells[b], cfg, lb_kind)


def robust_mte_bounds_at(p_eval, cells, cfg: IdentConfig, pscore=None) -> Interval:
    """Bounds that drop independence between the instrument and misreporting."""
    return mte_bounds_at(p_eval, cells, cfg, pscore, lb_kind="tv_y")


def mte_bound_curve(cells, cfg: IdentConfig, pscore=None, lb_kind="tv", truth=None) -> BoundCurve:
    """Bounds at every point of ``cfg.p_grid``; ``truth`` is an optional callable."""
    out = [_bounds_and_liv(p, cells, cfg, pscore, lb_kind) for p in cfg.p_grid]
    tr = None if truth is None else np.array([truth(p) for p in cfg.p_grid])
    return BoundCurve(cfg.p_grid, [o[0] for o in out], liv=np.array([o[1] for o in out]), truth=tr)


def mte_bounds_by_cell(cells, cfg: IdentConfig, lb_kind="tv", pscore=None) -> BoundCurve:
    """Bounds indexed by instrument cell rather than by propensity.

    The curve's grid is the cell z values. ``extra`` carries the observed
    propensity and the pointwise propensity bounds and their midpoint (or the
    supplied true propensity) for each cell.
    """
    cells = _sorted(cells)
    z = np.array([c.z_value for c in cells])
    fd = cfg.fd_step if cfg.fd_step is not None else _default_fd_step(z)
    intervals, livs = [], []
    for i in range(len(cells)):
        a, b = _fd_pair(z, i, fd)
        iv, liv = _pair_interval(cells[a], cells[b], cfg, lb_kind)
        intervals.append(iv)
        livs.append(liv)
    q = np.array([c.pD1 for c in cells])
    pb = [pointwise_pscore_bounds(min(max(v, 0.0), 1.0), cfg.alpha_bar) for v in q]
    extra = dict(q=q, p_lo=np.array([iv.lo for iv in pb]), p_hi=np.array([iv.hi for iv in pb]))
    extra["p"] = (np.asarray(pscore(z), dtype=float) if pscore is not None
                  else 0.5 * (extra["p_lo"] + extra["p_hi"]))
    return BoundCurve(Grid(z), intervals, liv=np.array(livs), extra=extra)


# ---------------------------------------------------------------------------
# discrete instruments


@dataclass(frozen=True)
class LateBounds:
    late: Interval
    pdiff: Interval
    ura_late: Interval
    ura_pdiff: Interval


def ura_pdiff_lower(tv: TvPair) -> float:
    return 0.5 * tv.tv1 + 0.5 * tv.tv0


def _late_interval(dyz, lb, ub):
    if ub < lb - 1e-15:
        return Interval(np.nan, np.nan, ("", ""), empty=True)
    ends = []
    unbounded = False
    for den in (lb, ub):
        if den <= 0.0:
            if dyz != 0.0:
                unbounded = True
                ends.append(np.copysign(np.inf, dyz))
            else:
                ends.append(0.0)
        else:
            ends.append(dyz / den)
    return Interval(min(ends), max(ends), ("ub", "lb") if dyz >= 0 else ("lb", "ub"), unbounded=unbounded)


def _pdiff_bounds_discrete(maxtv_adj, ddz_adj, maxtv_end, ddz_end, ell, alpha):
    others = [k for k in range(len(maxtv_adj)) if k != ell]
    ub_adj = [pdiff_upper(d, alpha) for d in ddz_adj]
    lb1 = maxtv_adj[ell]
    lb2 = maxtv_end - sum(ub_adj[k] for k in others)
    ub1 = ub_adj[ell]
    ub2 = pdiff_upper(ddz_end, alpha) - sum(maxtv_adj[k] for k in others)
    return max(lb1, lb2), min(ub1, ub2)


def late_bounds_from_stats(maxtv_adj, ddz_adj, maxtv_end, ddz_end, dyz, ell, alpha_bar,
                           ura_tv: TvPair | None = None) -> LateBounds:
    """LATE bounds for the adjacent pair ``ell`` (0-based over the K-1 pairs).

    ``maxtv_adj[k]`` and ``ddz_adj[k]`` describe pair (z_k, z_{k+1}); the
    ``_end`` values describe (z_1, z_K). The misclassification rate is only
    known to lie in [0, alpha_bar]; the result is the union over that range,
    evaluated at the endpoints and at every kink of the piecewise-linear
    upper bounds, where the extremes are attained.
    """
    maxtv_adj = np.asarray(maxtv_adj, dtype=float)
    ddz_adj = np.asarray(ddz_adj, dtype=float)
    if not 0 <= ell < maxtv_adj.size:
        raise ValueError("ell out of range")
    if not 0.0 <= alpha_bar <= 1.0:
        raise ValueError("alpha_bar outside [0,1]")
    kinks = (1.0 - np.concatenate([ddz_adj, [ddz_end]])) / 2.0
    alphas = np.unique(np.concatenate([[0.0, alpha_bar], kinks[(kinks > 0) & (kinks < alpha_bar)]]))
    pairs = [_pdiff_bounds_discrete(maxtv_adj, ddz_adj, maxtv_end, ddz_end, ell, a) for a in alphas]
    feasible = [(lb, ub) for lb, ub in pairs if lb <= ub + 1e-15]
    if not feasible:
        lb, ub = min(p[0] for p in pairs), max(p[1] for p in pairs)
        pdiff = Interval(lb, ub, ("LB", "UB"), empty=True)
        late = Interval(np.nan, np.nan, ("", ""), empty=True)
    else:
        lb = max(0.0, min(p[0] for p in feasible))
        ub = max(p[1] for p in feasible)
        pdiff = Interval(lb, ub, ("LB", "UB"))
        late = _late_interval(dyz, lb, ub)
    ura_lb = ura_pdiff_lower(ura_tv) if ura_tv is not None else None
    ura_pd = Interval(ura_lb, 1.0, ("ura", "one")) if ura_lb is not None else None
    ura_late = _late_interval(dyz, ura_lb, 1.0) if ura_lb is not None else None
    return LateBounds(late, pdiff, ura_late, ura_pd)


def late_bounds_discrete(cells, ell, alpha_bar, ranks=None) -> LateBounds:
    """LATE(p_{ell-1}, p_ell) bounds for a discrete instrument (``ell`` is 1-based).

    Cells are ordered by ``ranks`` (the assumed order of the true propensity)
    or, by default, by their observed propensity.
    """
    cells = list(cells)
    if len(cells) < 2:
        raise InsufficientDataError("need at least two instrument cells")
    if ranks is None:
        order = np.argsort([c.pD1 for c in cells], kind="stable")
    else:
        ranks = np.asarray(ranks)
        if sorted(ranks.tolist()) != list(range(len(cells))):
            raise ValueError("ranks must be a permutation of 0..K-1")
        order = np.argsort(ranks)
    cells = [cells[i] for i in order]
    if not 1 <= ell < len(cells):
        raise ValueError("ell must lie in 1..K-1")
    tvs = [tv_distances(cells[k], cells[k + 1]) for k in range(len(cells) - 1)]
    ddz = [cells[k + 1].pD1 - cells[k].pD1 for k in range(len(cells) - 1)]
    tv_end = tv_distances(cells[0], cells[-1])
    dyz = cells[ell].mean_y - cells[ell - 1].mean_y
    return late_bounds_from_stats([t.max for t in tvs], ddz, tv_end.max, cells[-1].pD1 - cells[0].pD1,
                                  dyz, ell - 1, alpha_bar, ura_tv=tvs[ell - 1])


# ---------------------------------------------------------------------------
# sharp-set constraints


@dataclass
class ConstraintReport:
    residuals: dict
    singular_points: int

    def feasible(self, tol=1e-6):
        return all(v <= tol for v in self.residuals.values())

    def violated(self, tol=1e-6):
        return [k for k, v in self.residuals.items() if v > tol]


def _unique_by_p(p, values):
    order = np.argsort(p, kind="stable")
    p, values = p[order], values[order]
    uniq, start = np.unique(p, return_index=True)
    means = np.add.reduceat(values, start, axis=0) / np.diff(np.append(start, p.size))[
        (slice(None),) + (None,) * (values.ndim - 1)]
    return uniq, means


def _slope_on(grid, px, fx):
    """Piecewise-linear derivative of f(p) through the points (px, fx)."""
    if px.size < 2:
        return np.zeros((grid.size,) + fx.shape[1:])
    slopes = np.diff(fx, axis=0) / np.diff(px)[(slice(None),) + (None,) * (fx.ndim - 1)]
    seg = np.clip(np.searchsorted(px, grid, side="right") - 1, 0, px.size - 2)
    return slopes[seg]


def _extrapolate(target, px, fx):
    if px.size < 2:
        return fx[0]
    j = 0 if target <= px[0] else px.size - 2
    if px[0] < target < px[-1]:
        j = int(np.clip(np.searchsorted(px, target) - 1, 0, px.size - 2))
    w = (target - px[j]) / (px[j + 1] - px[j])
    return fx[j] + w * (fx[j + 1] - fx[j])


def sharp_constraint_residuals(alpha, pscore, cells, p_grid, dq=None, kappa1=None, kappa0=None,
                               top=None, bottom=None, weights=None, singular_tol=1e-10) -> ConstraintReport:
    """Worst-case violations of the sharp-set constraints for a candidate P.

    ``pscore`` gives the candidate P at each cell. ``dq`` is the derivative of
    P(D = 1 | P(Z) = p) on ``p_grid``; ``kappa1``/``kappa0`` (shape
    (len(p_grid), nbins)) are the derivatives of P(Y in bin, D = d | P(Z) = p);
    ``top``/``bottom`` are P(Y in bin, D = 1 | P(Z) = 1) and at P(Z) = 0. Any of
    these left as None is estimated from the cells by piecewise-linear
    interpolation over the distinct candidate values (a constant candidate
    therefore has zero slope). ``weights`` are quadrature weights on
    ``p_grid`` for the integral constraints (trapezoid by default).

    Outcome sets range over unions of bins, so the potential-outcome
    probability checks use the sums of negative and positive bin parts.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    grid = np.asarray(p_grid.points if isinstance(p_grid, Grid) else p_grid, dtype=float)
    pscore = np.asarray(pscore, dtype=float)
    if pscore.size != len(cells):
        raise ValueError("one candidate propensity per cell required")
    hist = np.array([c.joint_hist for c in cells])
    pd1 = np.array([c.pD1 for c in cells])
    px, pd1_u = _unique_by_p(pscore, pd1)
    _, hist_u = _unique_by_p(pscore, hist)

    if dq is None:
        dq = _slope_on(grid, px, pd1_u)
    if kappa1 is None or kappa0 is None:
        k = _slope_on(grid, px, hist_u)
        kappa1 = k[:, 1, :] if kappa1 is None else kappa1
        kappa0 = k[:, 0, :] if kappa0 is None else kappa0
    if top is None:
        top = _extrapolate(1.0, px, hist_u)[1]
    if bottom is None:
        bottom = _extrapolate(0.0, px, hist_u)[1]
    dq = np.asarray(dq, dtype=float)
    kappa1 = np.asarray(kappa1, dtype=float)
    kappa0 = np.asarray(kappa0, dtype=float)
    if weights is None:
        weights = np.zeros_like(grid)
        if grid.size > 1:
            h = np.diff(grid)
            weights[:-1] += h / 2
            weights[1:] += h / 2
    weights = np.asarray(weights, dtype=float)

    f0 = (1.0 + dq) / (2.0 * (1.0 - alpha))
    f1 = (1.0 - dq) / (2.0 * alpha)
    a0 = (1.0 - alpha) * f0
    a1 = alpha * f1
    res = {
        "P1": max(0.0, -float(f0.min())),
        "P2": max(0.0, -float(f1.min())),
        "P3": abs(float(weights @ f0) - 1.0),
        "P4": abs(float(weights @ f1) - 1.0),
    }
    den = a1 - a0
    ok = np.abs(den) > singular_tol
    y1 = np.zeros_like(kappa1)
    y0 = np.zeros_like(kappa1)
    y1[ok] = (a1[ok, None] * kappa0[ok] - a0[ok, None] * kappa1[ok]) / den[ok, None]
    y0[ok] = (a0[ok, None] * kappa0[ok] - a1[ok, None] * kappa1[ok]) / den[ok, None]

    def prob_violation(vals):
        if not ok.any():
            return 0.0
        neg = -np.minimum(vals[ok], 0.0).sum(axis=1)
        over = np.maximum(vals[ok], 0.0).sum(axis=1) - 1.0
        return float(max(0.0, neg.max(), over.max()))

    res["P5"] = prob_violation(y1)
    res["P6"] = prob_violation(y0)
    res["P8"] = float(np.abs(weights @ (a0[:, None] * y1) - np.asarray(top)).max())
    res["P9"] = float(np.abs(weights @ (a1[:, None] * y0) - np.asarray(bottom)).max())

    worst = 0.0
    for p in px:
        group = hist[pscore == p]
        if len(group) > 1:
            spread = np.abs(group[:, None] - group[None, :]).sum(axis=(2, 3)).max()
            worst = max(worst, float(spread))
    res["P7"] = worst
    res = {k: res[k] for k in ("P1", "P2", "P3", "P4", "P5", "P6", "P7", "P8", "P9")}
    return ConstraintReport(res, int((~ok).sum()))
