"""Closed-form reproductions of the numerical illustrations.

Each ``*_panel`` function returns a :class:`BoundCurve` for one panel. The
``*_rows`` helpers flatten a full figure into dict rows whose ``bounds``
entry is an :class:`Interval`. With ``mc_n`` set, panels whose design has a
valid joint covariance also carry a Monte Carlo overlay from a simulated
sample.
"""

from __future__ import annotations

import numpy as np

from .bounds import cell_stats, mte_bound_curve
from .model import DEFAULT_MEAN, BoundCurve, DgpSpec, IdentConfig, MisclassSpec, default_cov
from .probkit import Grid, std_normal_quantile
from .simulator import CopulaOracle, observed_pscore, sample_dgp, true_liv_rho0, true_mte
from .symmetric import alpha_grid, symmetric_family_curve

FIG1_ALPHAS = (0.1, 0.3, 0.5, 0.7, 0.9)
FIG1_RHOS = (-0.5, 0.0, 0.5)
FIG2_ALPHAS = (0.1, 0.3, 0.4)
FIG2_ALPHA_BARS = (0.1, 0.3, 0.4)
DEFAULT_P_GRID = Grid.linspace(0.05, 0.95, 21)
# Outcome bins for the closed-form cells; wide enough that the open outer
# bins carry negligible mass in the default design.
ORACLE_Y_EDGES = np.linspace(-4.0, 12.0, 161)
ORACLE_FD_STEP = 1e-3


def _grid(p_grid):
    if p_grid is None:
        return DEFAULT_P_GRID
    return p_grid if isinstance(p_grid, Grid) else Grid(p_grid)


def oracle_cells_for(oracle, p_grid, fd_step=ORACLE_FD_STEP, edges=ORACLE_Y_EDGES):
    """Population cells at the instrument values mapping to ``p_grid`` under
    the default propensity map, plus neighbours at +/- fd_step / 2."""
    zc = np.asarray(std_normal_quantile(p_grid.points)) / 2.0
    zs = np.sort(np.concatenate([zc - fd_step / 2, zc, zc + fd_step / 2]))
    return oracle.cell_stats(zs, edges)


def fig1_panel(alpha, rho, p_grid=None, alpha_bar=1.0, fd_step=ORACLE_FD_STEP) -> BoundCurve:
    """Bounds, LIV and truth for one (alpha, rho) design, located by the true P."""
    grid = _grid(p_grid)
    oracle = CopulaOracle(MisclassSpec.copula(alpha, rho))
    cells = oracle_cells_for(oracle, grid, fd_step)
    cfg = IdentConfig(alpha_bar=alpha_bar, p_grid=grid, fd_step=fd_step)
    return mte_bound_curve(cells, cfg, pscore=oracle.pscore, truth=true_mte)


def fig2_panel(alpha_true, alpha_bar, p_grid=None, grid_size=15, refine=True) -> BoundCurve:
    """Envelope of MTE(p; a) for a in [0, alpha_bar] when the truth has
    symmetric misreporting at rate ``alpha_true`` (rho = 0)."""
    grid = _grid(p_grid)

    def liv(q):
        return true_liv_rho0(q, alpha_true)

    domain = (alpha_true, 1.0 - alpha_true)
    return symmetric_family_curve(grid, alpha_grid(alpha_bar, grid_size), liv, domain,
                                  truth=true_mte, refine=refine)


def fig4_panel(alpha, p_grid=None) -> BoundCurve:
    """Figure-1 style panel at rho = 0; ``extra['liv_closed_form']`` holds the
    closed-form LIV at the observed propensity when alpha < 1/2."""
    curve = fig1_panel(alpha, 0.0, p_grid)
    if alpha < 0.5:
        q = observed_pscore(curve.at.points, MisclassSpec.copula(alpha, 0.0))
        curve.extra["liv_closed_form"] = true_liv_rho0(q, alpha)
    return curve


def _mc_spec(alpha, rho, n, seed):
    try:
        return DgpSpec(MisclassSpec.copula(alpha, rho), n=n, seed=seed, mean=DEFAULT_MEAN,
                       cov=tuple(map(tuple, default_cov(rho))))
    except ValueError:
        return None


def mc_prop2_overlay(alpha, rho, p_grid, n, seed, n_cells=40, y_bins=50, threads=1):
    """Data-mode bounds from a simulated sample (true P as locator), or None
    when the design's covariance is not a valid joint covariance."""
    spec = _mc_spec(alpha, rho, n, seed)
    if spec is None:
        return None
    sample = sample_dgp(spec, threads=threads)
    cells = cell_stats(sample, y_bins=y_bins, n_cells=n_cells)
    cfg = IdentConfig(alpha_bar=1.0, p_grid=_grid(p_grid))
    return mte_bound_curve(cells, cfg, pscore=spec.pscore)


def mc_symmetric_overlay(alpha_true, alpha_bar, p_grid, n, seed, grid_size=15, threads=1):
    from .estimator import symmetric_region_from_data

    spec = _mc_spec(alpha_true, 0.0, n, seed)
    sample = sample_dgp(spec, threads=threads)
    cfg = IdentConfig(alpha_bar=alpha_bar, alpha_grid_size=grid_size, p_grid=_grid(p_grid))
    return symmetric_region_from_data(sample.y, sample.d, sample.z, cfg)


def _rows(curve, keys, overlay=None):
    rows = []
    for i, p in enumerate(curve.at.points):
        iv = curve.intervals[i]
        row = dict(keys, p=float(p), bounds=iv)
        if curve.liv is not None:
            row["liv"] = float(curve.liv[i])
        if curve.truth is not None:
            row["truth"] = float(curve.truth[i])
        if "liv_closed_form" in curve.extra:
            row["liv_closed_form"] = float(curve.extra["liv_closed_form"][i])
        if overlay is not None:
            row["mc_bounds"] = overlay.intervals[i]
        rows.append(row)
    return rows


def fig1_rows(p_grid=None, mc_n=None, seed=0, threads=1):
    rows = []
    for a in FIG1_ALPHAS:
        for r in FIG1_RHOS:
            curve = fig1_panel(a, r, p_grid)
            over = mc_prop2_overlay(a, r, p_grid, mc_n, seed, threads=threads) if mc_n else None
            rows += _rows(curve, {"alpha": a, "rho": r}, over)
    return rows


def fig2_rows(p_grid=None, grid_size=15, mc_n=None, seed=0, threads=1):
    rows = []
    for a in FIG2_ALPHAS:
        for ab in FIG2_ALPHA_BARS:
            curve = fig2_panel(a, ab, p_grid, grid_size)
            over = (mc_symmetric_overlay(a, ab, p_grid, mc_n, seed, grid_size, threads)
                    if mc_n else None)
            rows += _rows(curve, {"alpha": a, "alpha_bar": ab}, over)
    return rows


def fig4_rows(p_grid=None, mc_n=None, seed=0, threads=1):
    rows = []
    for a in FIG1_ALPHAS:
        curve = fig4_panel(a, p_grid)
        over = mc_prop2_overlay(a, 0.0, p_grid, mc_n, seed, threads=threads) if mc_n else None
        rows += _rows(curve, {"alpha": a, "rho": 0.0}, over)
    return rows
