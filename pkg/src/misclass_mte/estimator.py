"""Estimation pipeline: logit first stage, local polynomial LIV, Robinson
partialling-out with covariates, MTE aggregation and bootstrap inference.

The sklearn-style :class:`MisclassifiedMTE` ties the pieces together. For each
candidate misclassification rate a on a grid it inverts the first-stage
propensity into P = (q - a) / (1 - 2a), trims, fits the partially linear
model, and reports the range of the resulting MTE curves and aggregates.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize, special
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .model import AggregateKind, AggregateName, InsufficientDataError
from .probkit import Grid, KernelKind, spawn_rngs, trapezoid_integral


class ConvergenceError(RuntimeError):
    """Iterative fit stopped at its iteration cap."""


# ---------------------------------------------------------------- first stage


def fit_logit(features, labels, max_iter=100, tol=1e-8, ridge=0.0):
    """Logistic regression by Newton-Raphson.

    ``features`` must carry its own intercept column. Convergence is declared
    when the sup-norm of the score is at most ``tol``, or when the Newton step
    drops below floating-point resolution. A rank-deficient design triggers a
    warning and a small ridge penalty.
    """
    X = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=float).ravel()
    if X.ndim == 1:
        X = X[:, None]
    n, k = X.shape
    if y.size != n:
        raise ValueError("features and labels differ in length")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be binary")
    if ridge == 0.0 and np.linalg.matrix_rank(X) < k:
        warnings.warn("rank-deficient logit design; falling back to a ridge penalty", RuntimeWarning)
        ridge = 1e-6
    pen = ridge * n

    def loglik(b):
        eta = X @ b
        return float(y @ eta - np.logaddexp(0.0, eta).sum() - 0.5 * pen * b @ b)

    beta = np.zeros(k)
    ll = loglik(beta)
    grad_norm = np.inf
    for _ in range(max_iter):
        mu = special.expit(X @ beta)
        grad = X.T @ (y - mu) - pen * beta
        grad_norm = float(np.max(np.abs(grad)))
        if grad_norm <= tol:
            return beta
        hess = (X * (mu * (1.0 - mu))[:, None]).T @ X + pen * np.eye(k)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        if np.max(np.abs(step)) <= 1e-13 * (1.0 + np.max(np.abs(beta))):
            # the score is at its floating-point floor
            return beta + step
        t = 1.0
        while t > 1e-10:
            trial = beta + t * step
            ll_trial = loglik(trial)
            if ll_trial >= ll - 1e-12 * abs(ll):
                break
            t *= 0.5
        beta, ll = trial, ll_trial
    raise ConvergenceError(f"logit did not converge in {max_iter} iterations "
                           f"(final gradient norm {grad_norm:.3e})")


def fit_misclassified_logit(features, labels, alpha_max=0.5 - 1e-6, starts=(0.01, 0.1, 0.25)):
    """Maximum likelihood for q(w) = a + (1 - 2a) / (1 + exp(-w'g)).

    This is the reported-treatment probability when the latent treatment
    follows a logit and reports flip with probability a in both directions.
    Returns ``(a, g)``.
    """
    X = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=float).ravel()
    n, k = X.shape
    g0 = fit_logit(X, y)

    def nll(theta):
        a, g = theta[0], theta[1:]
        lam = special.expit(X @ g)
        q = np.clip(a + (1.0 - 2.0 * a) * lam, 1e-300, 1.0 - 1e-16)
        val = -(y * np.log(q) + (1.0 - y) * np.log1p(-q)).sum() / n
        score = (y - q) / (q * (1.0 - q))
        da = -(score * (1.0 - 2.0 * lam)).sum() / n
        dg = -X.T @ (score * (1.0 - 2.0 * a) * lam * (1.0 - lam)) / n
        return val, np.concatenate(([da], dg))

    best = None
    bounds = [(0.0, alpha_max)] + [(None, None)] * k
    for a0 in starts:
        # Steepen the logit start so its range can shrink into [a, 1-a].
        res = optimize.minimize(nll, np.concatenate(([a0], g0 * 1.5)), jac=True,
                                method="L-BFGS-B", bounds=bounds,
                                options={"maxiter": 2000, "gtol": 1e-10, "ftol": 1e-14})
        if best is None or res.fun < best.fun:
            best = res
    return float(best.x[0]), best.x[1:]


class LogitFirstStage(BaseEstimator, TransformerMixin):
    """First-stage propensity q(z, x) = P(D = 1 | Z, X).

    ``misclassified=True`` fits the symmetric-misreporting logit and exposes
    the estimated flip rate as ``alpha_``.
    """

    def __init__(self, misclassified=False, max_iter=100, tol=1e-8):
        self.misclassified = misclassified
        self.max_iter = max_iter
        self.tol = tol

    @staticmethod
    def _design(X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        return np.column_stack([np.ones(len(X)), X])

    def fit(self, X, y):
        W = self._design(X)
        if self.misclassified:
            self.alpha_, self.coef_ = fit_misclassified_logit(W, y)
        else:
            self.alpha_, self.coef_ = 0.0, fit_logit(W, y, self.max_iter, self.tol)
        return self

    def transform(self, X):
        if not hasattr(self, "coef_"):
            raise NotFittedError("LogitFirstStage is not fitted yet")
        lam = special.expit(self._design(X) @ self.coef_)
        return self.alpha_ + (1.0 - 2.0 * self.alpha_) * lam

    predict_proba = transform


# ------------------------------------------------------------ local polynomial


def local_poly_fit(x, y, eval_points, degree=2, kernel=KernelKind.GAUSSIAN, h=0.27, min_points=None,
                   chunk_elems=1 << 22):
    """Kernel-weighted polynomial fits of each column of ``y`` on ``x``.

    Returns ``(coef, defined)``: ``coef[i, j]`` is the j-th derivative of the
    local fit at ``eval_points[i]`` divided by j!, with one trailing axis per
    column of ``y``; ``defined[i]`` is False where the local design is
    singular. Windows near the edge of the data are simply one-sided.
    Evaluation points are processed in blocks of about ``chunk_elems``
    kernel weights.
    """
    kernel = KernelKind.parse(kernel)
    if degree < 0 or int(degree) != degree:
        raise ValueError("degree must be a nonnegative integer")
    if not h > 0:
        raise ValueError("bandwidth must be positive")
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float)
    squeeze = y.ndim == 1
    Y = y.reshape(x.size, -1)
    pts = np.asarray(eval_points, dtype=float).ravel()
    need = degree + 1 if min_points is None else min_points
    m = Y.shape[1]
    coef = np.full((pts.size, degree + 1, m), np.nan)
    defined = np.zeros(pts.size, bool)
    scale = float(h) ** np.arange(degree + 1)
    idx = np.add.outer(np.arange(degree + 1), np.arange(degree + 1))
    step = max(1, int(chunk_elems // max(x.size, 1)))
    for s0 in range(0, pts.size, step):
        block = pts[s0:s0 + step]
        U = (x[None, :] - block[:, None]) / h
        W = kernel(U)
        W[W < 1e-300] = 0.0
        # moments sum_i w u^k for k = 0..2 degree, and sum_i w u^j y_i
        mom = np.empty((block.size, 2 * degree + 1))
        rhs = np.empty((block.size, degree + 1, m))
        WU = W.copy()
        for k in range(2 * degree + 1):
            mom[:, k] = WU.sum(axis=1)
            if k <= degree:
                rhs[:, k, :] = WU @ Y
            WU *= U
        A = mom[:, idx]
        live = (W > 0).sum(axis=1) >= need
        with np.errstate(all="ignore"):
            ok = live & (np.linalg.cond(A) <= 1e12)
        if ok.any():
            sol = np.linalg.solve(A[ok], rhs[ok])
            coef[s0:s0 + step][ok] = sol / scale[None, :, None]
            defined[s0:s0 + step][ok] = True
    if squeeze:
        coef = coef[..., 0]
    return coef, defined


def local_poly_deriv(x, y, eval_points, degree=2, kernel=KernelKind.GAUSSIAN, h=0.27):
    """First-derivative estimates at ``eval_points`` from a local polynomial of
    the given degree. Returns ``(deriv, defined)``; undefined points are NaN."""
    if degree < 1:
        raise ValueError("degree must be at least 1 for a derivative")
    pts = eval_points.points if isinstance(eval_points, Grid) else eval_points
    coef, defined = local_poly_fit(x, y, pts, degree, kernel, h)
    return coef[:, 1], defined


def _kernel_moment(kernel, j, squared=False):
    lo, hi = kernel.support
    f = (lambda u: u ** j * kernel(u) ** 2) if squared else (lambda u: u ** j * kernel(u))
    return integrate.quad(f, lo, hi)[0]


def equivalent_kernel_constant(kernel, nu=1, degree=2):
    """Constant of the asymptotically optimal bandwidth for estimating the
    nu-th derivative with a local polynomial of ``degree``, computed from the
    equivalent kernel."""
    kernel = KernelKind.parse(kernel)
    p = degree
    S = np.array([[_kernel_moment(kernel, i + j) for j in range(p + 1)] for i in range(p + 1)])
    S2 = np.array([[_kernel_moment(kernel, i + j, True) for j in range(p + 1)] for i in range(p + 1)])
    c = np.array([_kernel_moment(kernel, p + 1 + i) for i in range(p + 1)])
    e = np.linalg.solve(S, np.eye(p + 1)[nu])
    var = e @ S2 @ e
    bias = e @ c
    num = math.factorial(p + 1) ** 2 * (2 * nu + 1) * var
    den = 2 * (p + 1 - nu) * bias ** 2
    return (num / den) ** (1.0 / (2 * p + 3))


def rule_of_thumb_bandwidth(x, y, kernel=KernelKind.GAUSSIAN, nu=1, degree=2):
    """Rule-of-thumb bandwidth from a global polynomial pilot of order
    degree + 3, weighted to the central 90% of ``x``."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    order = degree + 3
    V = np.vander(x, order + 1, increasing=True)
    coef, *_ = np.linalg.lstsq(V, y, rcond=None)
    resid = y - V @ coef
    sigma2 = resid @ resid / max(x.size - order - 1, 1)
    # derivative of order degree + 1 of the pilot polynomial
    k = degree + 1
    dcoef = np.array([coef[j] * math.perm(j, k) for j in range(k, order + 1)])
    deriv = np.vander(x, order + 1 - k, increasing=True) @ dcoef
    lo, hi = np.quantile(x, [0.05, 0.95])
    inside = (x >= lo) & (x <= hi)
    denom = np.sum(deriv[inside] ** 2)
    if not denom > 1e-20 * max(1.0, float(y @ y)):
        raise ValueError("pilot fit has a vanishing higher derivative; choose a bandwidth manually")
    C = equivalent_kernel_constant(kernel, nu, degree)
    return float(C * (sigma2 * (hi - lo) / denom) ** (1.0 / (2 * degree + 3)))


# ------------------------------------------------------------------- Robinson


@dataclass
class PartialLinearFit:
    """Y = X b0 + P X (b1 - b0) + K(P) + error, with the derivative of the
    nonparametric part reported on ``p_grid``."""

    beta0: np.ndarray
    beta_diff: np.ndarray
    residual_series: np.ndarray
    p_grid: np.ndarray
    k_prime: np.ndarray
    defined: np.ndarray
    control_function_tag: str = "K(P)"
    p: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.p is not None and len(self.residual_series) != len(self.p):
            raise ValueError("residual series must match the sample size")

    def mte(self, x=None):
        """MTE curve on ``p_grid`` at covariate vector ``x`` (default: none)."""
        shift = 0.0 if x is None or self.beta_diff.size == 0 else float(np.asarray(x) @ self.beta_diff)
        return shift + self.k_prime


def trim_mask(p, delta):
    p = np.asarray(p, dtype=float)
    return (p >= delta) & (p <= 1.0 - delta)


def _residualize(p, cols, kernel, h, n_nodes=201):
    """cols minus their local-linear regression on p, via an interpolated
    grid of fits."""
    lo, hi = p.min(), p.max()
    nodes = np.linspace(lo, hi, n_nodes) if hi > lo else np.array([lo])
    coef, defined = local_poly_fit(p, cols, nodes, degree=1, kernel=kernel, h=h)
    if not defined.all():
        keep = defined
        if keep.sum() < 2:
            raise InsufficientDataError("too few points to residualize on the propensity score")
        nodes, coef = nodes[keep], coef[keep]
    fitted = np.column_stack([np.interp(p, nodes, coef[:, 0, j]) for j in range(cols.shape[1])])
    return cols - fitted


def robinson_fit(y, x, p, cfg, degree=2, p_grid=None) -> PartialLinearFit:
    """Robinson double-residual estimator followed by a local polynomial
    derivative of the partialled-out outcome.

    ``p`` must already be trimmed to [delta, 1 - delta]. With no covariates
    this is ``local_poly_deriv`` of Y on P.
    """
    y = np.asarray(y, dtype=float).ravel()
    p = np.asarray(p, dtype=float).ravel()
    if y.size != p.size:
        raise ValueError("y and p differ in length")
    if not np.all(trim_mask(p, cfg.trim_delta)):
        raise ValueError("propensity scores must be trimmed to [delta, 1 - delta] first")
    grid = cfg.p_grid.points if p_grid is None else np.asarray(p_grid, dtype=float)
    X = np.empty((y.size, 0)) if x is None else np.asarray(x, dtype=float).reshape(y.size, -1)
    k = X.shape[1]
    if k:
        cols = np.column_stack([y, X, X * p[:, None]])
        res = _residualize(p, cols, cfg.kernel, cfg.bandwidth)
        ry, M = res[:, 0], res[:, 1:]
        norms = np.linalg.norm(M, axis=0)
        raw = np.linalg.norm(np.column_stack([X, X * p[:, None]]), axis=0)
        if np.any(norms <= 1e-8 * np.maximum(raw, 1.0)) or np.linalg.cond(M) > 1e10:
            raise ValueError("residualized covariates are collinear")
        coef, *_ = np.linalg.lstsq(M, ry, rcond=None)
        beta0, beta_diff = coef[:k], coef[k:]
        R = y - X @ beta0 - (X * p[:, None]) @ beta_diff
    else:
        beta0 = beta_diff = np.empty(0)
        R = y
    deriv, defined = local_poly_deriv(p, R, grid, degree, cfg.kernel, cfg.bandwidth)
    return PartialLinearFit(beta0, beta_diff, R, np.asarray(grid), deriv, defined, p=p)


# ---------------------------------------------------------------- aggregation


@dataclass(frozen=True)
class WeightFn:
    """Normalised weights on ``p_grid``. Integration runs over the grid
    points flagged by ``support`` (all of them unless the kind has a window)."""

    kind: AggregateKind
    p_grid: np.ndarray
    weights: np.ndarray
    support: np.ndarray

    def integrate(self, values):
        values = np.asarray(values, dtype=float)
        if values.shape[-1] != self.p_grid.size:
            raise ValueError("curve and weight grid differ in length")
        s = self.support
        return trapezoid_integral(self.p_grid[s], values[..., s] * self.weights[s])

    @property
    def total(self):
        return float(self.integrate(np.ones(self.p_grid.size)))


def _ecdf(sample, at):
    s = np.sort(np.asarray(sample, dtype=float))
    return np.searchsorted(s, at, side="right") / s.size


def aggregate_weight_fn(kind, pscore_sample, p_grid) -> WeightFn:
    """Weights that turn an MTE curve into the aggregate ``kind``.

    Distribution-dependent weights use the empirical distribution of
    ``pscore_sample``; every weight is rescaled so that it integrates to one
    on the grid.
    """
    kind = AggregateKind.parse(kind) if isinstance(kind, str) else kind
    grid = p_grid.points if isinstance(p_grid, Grid) else np.asarray(p_grid, dtype=float)
    sample = None if pscore_sample is None else np.asarray(pscore_sample, dtype=float).ravel()
    support = np.ones(grid.size, bool)
    name = kind.name
    if name not in (AggregateName.ATE, AggregateName.LATE) and (sample is None or sample.size == 0):
        raise ValueError(f"{kind.label} weights need a nonempty propensity sample")
    if name is AggregateName.ATE:
        raw = np.ones(grid.size)
    elif name in (AggregateName.ATT, AggregateName.ATU):
        if np.ptp(sample) == 0:
            raise ValueError("propensity sample is a single atom")
        cdf = _ecdf(sample, grid)
        raw = 1.0 - cdf if name is AggregateName.ATT else cdf
    elif name is AggregateName.LATE:
        support = (grid >= kind.p_lo - 1e-12) & (grid <= kind.p_hi + 1e-12)
        if support.sum() < 2:
            raise ValueError("LATE window holds fewer than two grid points")
        raw = support.astype(float)
    elif name is AggregateName.PRTE:
        shifted = sample + kind.a * (1.0 - sample)
        raw = _ecdf(sample, grid) - _ecdf(shifted, grid)
    else:
        raw = (np.abs(sample[None, :] - grid[:, None]) < kind.zeta).mean(axis=1)
    mass = trapezoid_integral(grid[support], raw[support])
    if not mass > 0:
        raise ValueError(f"{kind.label} weights vanish on the grid")
    weights = np.where(support, raw / mass, 0.0)
    return WeightFn(kind, grid, weights, support)


def aggregate_mte(mte_curve, w: WeightFn, p_grid=None):
    if p_grid is not None:
        pts = p_grid.points if isinstance(p_grid, Grid) else np.asarray(p_grid, dtype=float)
        if pts.shape != w.p_grid.shape or not np.allclose(pts, w.p_grid, rtol=0, atol=1e-12):
            raise ValueError("curve grid differs from the weight grid")
    return float(w.integrate(mte_curve))


def amte(mte_curve, pscore_sample, zeta, p_grid):
    return aggregate_mte(mte_curve, aggregate_weight_fn(AggregateKind(AggregateName.AMTE, zeta=zeta),
                                                        pscore_sample, p_grid))


# ------------------------------------------------------------------ bootstrap


@dataclass
class BootstrapResult:
    lo: np.ndarray
    hi: np.ndarray
    estimates: np.ndarray
    failures: int
    errors: list = field(default_factory=list)

    @property
    def se(self):
        return np.nanstd(self.estimates, axis=0, ddof=1)


def _resample(data, idx):
    # ndarray.take flattens without an axis, so only duck-type non-arrays
    if hasattr(data, "take") and not isinstance(data, np.ndarray):
        return data.take(idx)
    return np.asarray(data)[idx]


def bootstrap_ci(statistic, data, B=250, level=0.95, seed=0, threads=1) -> BootstrapResult:
    """Percentile bootstrap over rows of ``data``.

    ``statistic(resampled, seed)`` may return a scalar or an array. Draws
    that raise are counted as failures and left out. Results do not depend on
    ``threads``.
    """
    if int(B) != B or B < 2:
        raise ValueError("B must be an integer >= 2")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    n = len(data)
    rngs = spawn_rngs(seed, B)

    def one(b):
        rng = rngs[b]
        idx = rng.integers(0, n, size=n)
        sub_seed = int(rng.integers(0, 2 ** 63 - 1))
        try:
            return np.asarray(statistic(_resample(data, idx), sub_seed), dtype=float), None
        except (ValueError, ArithmeticError, np.linalg.LinAlgError, ConvergenceError) as exc:
            return None, f"draw {b}: {exc}"

    if threads > 1:
        with ThreadPoolExecutor(max_workers=int(threads)) as pool:
            results = list(pool.map(one, range(B)))
    else:
        results = [one(b) for b in range(B)]
    good = [r for r, _ in results if r is not None]
    errors = [e for _, e in results if e is not None]
    if not good:
        raise InsufficientDataError("every bootstrap draw failed")
    est = np.stack(good)
    tail = (1.0 - level) / 2.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        lo = np.nanquantile(est, tail, axis=0, method="inverted_cdf")
        hi = np.nanquantile(est, 1.0 - tail, axis=0, method="inverted_cdf")
    return BootstrapResult(lo, hi, est, len(errors), errors)


def union_confidence_region(bands):
    """Pointwise outer envelope of a sequence of (lo, hi) bands."""
    bands = list(bands)
    if not bands:
        raise ValueError("no bands supplied")
    los = [np.asarray(lo, dtype=float) for lo, _ in bands]
    his = [np.asarray(hi, dtype=float) for _, hi in bands]
    if any(a.shape != los[0].shape for a in los + his):
        raise ValueError("bands live on different grids")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return np.nanmin(np.stack(los), axis=0), np.nanmax(np.stack(his), axis=0)


# ------------------------------------------------------------------ estimator


def _as_kinds(aggregates):
    return [a if isinstance(a, AggregateKind) else AggregateKind.parse(a) for a in aggregates]


class MisclassifiedMTE(BaseEstimator):
    """MTE bounds under symmetric misreporting of a binary treatment.

    Parameters follow the pipeline order: the first stage (``first_stage`` is
    ``"logit"`` or ``"misclassified-logit"``), the candidate rates
    ``linspace(0, alpha_bar, alpha_grid_size)``, trimming, the local
    polynomial for the derivative, aggregation and the bootstrap (skipped
    when ``n_boot`` is 0).

    After ``fit`` the per-rate curves sit in ``mte_`` (rates by grid points)
    and the aggregate ranges in ``bounds_``; ``predict`` returns the union
    envelope.
    """

    def __init__(self, alpha_bar=0.139, alpha_grid_size=15, p_grid=None, bandwidth=0.27,
                 kernel="gaussian", degree=2, trim_delta=1e-4, first_stage="logit",
                 aggregates=("ate", "att", "atu"), n_boot=0, level=0.95, random_state=0,
                 threads=1, min_trimmed=50):
        self.alpha_bar = alpha_bar
        self.alpha_grid_size = alpha_grid_size
        self.p_grid = p_grid
        self.bandwidth = bandwidth
        self.kernel = kernel
        self.degree = degree
        self.trim_delta = trim_delta
        self.first_stage = first_stage
        self.aggregates = aggregates
        self.n_boot = n_boot
        self.level = level
        self.random_state = random_state
        self.threads = threads
        self.min_trimmed = min_trimmed

    # configuration -----------------------------------------------------
    def _config(self):
        from .model import IdentConfig, validate

        grid = self.p_grid if self.p_grid is not None else Grid.linspace(0.05, 0.95, 19)
        if not isinstance(grid, Grid):
            grid = Grid(grid)
        if self.first_stage not in ("logit", "misclassified-logit"):
            raise ValueError(f"unknown first stage {self.first_stage!r}")
        if not 0.0 <= self.alpha_bar < 0.5:
            raise ValueError("alpha_bar must lie in [0, 1/2) for the symmetric pipeline")
        return validate(IdentConfig(alpha_bar=self.alpha_bar, alpha_grid_size=self.alpha_grid_size,
                                    p_grid=grid, bandwidth=self.bandwidth,
                                    kernel=KernelKind.parse(self.kernel), trim_delta=self.trim_delta))

    # core --------------------------------------------------------------
    def _point_estimates(self, y, d, z, X, cfg, kinds, alphas):
        """Curves (len(alphas), len(grid)) and aggregates (len(alphas), len(kinds))."""
        Z = z.reshape(len(z), -1)
        W = Z if X is None else np.column_stack([Z, X])
        fs = LogitFirstStage(misclassified=self.first_stage == "misclassified-logit").fit(W, d)
        q = fs.transform(W)
        grid = cfg.p_grid.points
        x_bar = None if X is None else X.mean(axis=0)
        curves = np.full((alphas.size, grid.size), np.nan)
        aggs = np.full((alphas.size, len(kinds)), np.nan)
        fits = []
        for j, a in enumerate(alphas):
            p = (q - a) / (1.0 - 2.0 * a)
            keep = trim_mask(p, cfg.trim_delta)
            if keep.sum() < self.min_trimmed:
                raise InsufficientDataError(f"only {int(keep.sum())} observations survive trimming at alpha={a:g}")
            fit = robinson_fit(y[keep], None if X is None else X[keep], p[keep], cfg, self.degree)
            curves[j] = fit.mte(x_bar)
            fits.append(fit)
            for m, kind in enumerate(kinds):
                w = aggregate_weight_fn(kind, p[keep], grid)
                aggs[j, m] = aggregate_mte(curves[j], w)
        return fs, q, fits, curves, aggs

    @staticmethod
    def _arrays(X, y, d, z):
        y = np.asarray(y, dtype=float).ravel()
        d = np.asarray(d, dtype=float).ravel()
        z = np.asarray(z, dtype=float)
        n = y.size
        if d.size != n or z.shape[0] != n:
            raise ValueError("y, d and z differ in length")
        if X is not None:
            X = np.asarray(X, dtype=float).reshape(n, -1)
            if X.shape[1] == 0:
                X = None
        return X, y, d, z

    def fit(self, X, y, d, z):
        """Fit on covariates ``X`` (may be None), outcome ``y``, reported
        treatment ``d`` and instrument(s) ``z``."""
        cfg = self._config()
        X, y, d, z = self._arrays(X, y, d, z)
        kinds = _as_kinds(self.aggregates)
        alphas = cfg.alpha_grid(0.5 - 1e-6)
        fs, q, fits, curves, aggs = self._point_estimates(y, d, z, X, cfg, kinds, alphas)
        self.config_ = cfg
        self.kinds_ = kinds
        self.alphas_ = alphas
        self.first_stage_ = fs
        self.q_ = q
        self.fits_ = fits
        self.mte_ = curves
        self.aggregates_ = aggs
        self.bounds_ = {k.label: (float(np.nanmin(aggs[:, m])), float(np.nanmax(aggs[:, m])))
                        for m, k in enumerate(kinds)}
        self.bootstrap_ = None
        if self.n_boot:
            self._bootstrap(X, y, d, z, cfg, kinds, alphas)
        return self

    def _bootstrap(self, X, y, d, z, cfg, kinds, alphas):
        n = y.size
        data = np.arange(n)
        G = cfg.p_grid.points.size

        def stat(idx, _seed):
            sub_X = None if X is None else X[idx]
            _, _, _, curves, aggs = self._point_estimates(y[idx], d[idx], z[idx], sub_X, cfg, kinds, alphas)
            return np.concatenate([curves.ravel(), aggs.ravel()])

        res = bootstrap_ci(stat, data, int(self.n_boot), self.level, self.random_state, self.threads)
        A, K = alphas.size, len(kinds)
        self.bootstrap_ = res
        self.mte_band_ = (res.lo[:A * G].reshape(A, G), res.hi[:A * G].reshape(A, G))
        self.aggregate_ci_ = (res.lo[A * G:].reshape(A, K), res.hi[A * G:].reshape(A, K))
        self.mte_union_band_ = union_confidence_region(zip(*self.mte_band_))
        lo, hi = self.aggregate_ci_
        self.aggregate_union_ci_ = {k.label: (float(np.nanmin(lo[:, m])), float(np.nanmax(hi[:, m])))
                                    for m, k in enumerate(kinds)}
        self.aggregate_se_ = res.se[A * G:].reshape(A, K)

    def _check(self):
        if not hasattr(self, "mte_"):
            raise NotFittedError("MisclassifiedMTE is not fitted yet")

    def predict(self, p):
        """Union envelope [lb, ub] of the per-rate MTE curves at ``p``,
        linearly interpolated between grid points. Shape (len(p), 2)."""
        self._check()
        grid = self.config_.p_grid.points
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            lo, hi = np.nanmin(self.mte_, axis=0), np.nanmax(self.mte_, axis=0)
        p = np.atleast_1d(np.asarray(p, dtype=float))
        if np.any((p < grid[0]) | (p > grid[-1])):
            raise ValueError("p outside the fitted grid")
        return np.column_stack([np.interp(p, grid, lo), np.interp(p, grid, hi)])

    def report(self):
        """Plain-dict summary suitable for JSON."""
        self._check()
        per_alpha = []
        for j, a in enumerate(self.alphas_):
            entry = {"alpha": float(a), "aggregates": {}}
            fit = self.fits_[j]
            entry["beta0"] = fit.beta0.tolist()
            entry["beta_diff"] = fit.beta_diff.tolist()
            for m, k in enumerate(self.kinds_):
                row = {"estimate": _num(self.aggregates_[j, m])}
                if self.bootstrap_ is not None:
                    row["ci_lo"] = _num(self.aggregate_ci_[0][j, m])
                    row["ci_hi"] = _num(self.aggregate_ci_[1][j, m])
                    row["se"] = _num(self.aggregate_se_[j, m])
                entry["aggregates"][k.label] = row
            per_alpha.append(entry)
        union = {}
        for k in self.kinds_:
            lb, ub = self.bounds_[k.label]
            row = {"lb": _num(lb), "ub": _num(ub)}
            if self.bootstrap_ is not None:
                row["ci_lo"], row["ci_hi"] = map(_num, self.aggregate_union_ci_[k.label])
            union[k.label] = row
        out = {
            "alpha_bar": float(self.alpha_bar),
            "alpha_grid": [float(a) for a in self.alphas_],
            "first_stage": {"kind": self.first_stage, "coef": self.first_stage_.coef_.tolist(),
                            "alpha": float(self.first_stage_.alpha_)},
            "bandwidth": float(self.bandwidth),
            "kernel": KernelKind.parse(self.kernel).value,
            "degree": int(self.degree),
            "trim_delta": float(self.trim_delta),
            "per_alpha": per_alpha,
            "bounds": union,
        }
        if self.bootstrap_ is not None:
            out["bootstrap"] = {"B": int(self.n_boot), "level": float(self.level),
                                "failures": int(self.bootstrap_.failures)}
        return out


def _num(v):
    v = float(v)
    return v if math.isfinite(v) else None


# ------------------------------------------------------ symmetric, from data


def symmetric_region_from_data(y, d, z, cfg, first_stage="misclassified-logit", truth=None,
                               n_liv_nodes=201):
    """Union of the candidate MTE curves (1 - 2a) LIV((1 - 2a) p + a) over
    ``a`` in the configured grid, with the LIV estimated from data.

    The LIV is the local polynomial derivative of Y on the fitted first-stage
    propensity q, tabulated over the observed range of q and interpolated.
    ``extra`` reports the first-stage fit, the smallest and largest fitted q
    and the grid values of ``a`` compatible with the fitted q.
    """
    from .symmetric import alpha_grid, alpha_identified_set, symmetric_family_curve

    y = np.asarray(y, dtype=float).ravel()
    d = np.asarray(d, dtype=float).ravel()
    z = np.asarray(z, dtype=float)
    fs = LogitFirstStage(misclassified=first_stage == "misclassified-logit").fit(z, d)
    q = fs.transform(z)
    lo, hi = float(q.min()), float(q.max())
    if not hi > lo:
        raise ValueError("first-stage propensity is constant; the instrument has no power")
    nodes = np.linspace(lo, hi, n_liv_nodes)
    deriv, ok = local_poly_deriv(q, y, nodes, 2, cfg.kernel, cfg.bandwidth)
    if ok.sum() < 2:
        raise InsufficientDataError("LIV undefined on the support of the fitted propensity")

    def liv(v):
        return np.interp(v, nodes[ok], deriv[ok])

    alphas = alpha_grid(cfg.alpha_bar, cfg.alpha_grid_size)
    curve = symmetric_family_curve(cfg.p_grid, alphas, liv, (lo, hi), truth=truth)
    p = cfg.p_grid.points
    inside = (p >= lo) & (p <= hi)
    curve.liv = np.where(inside, liv(np.clip(p, lo, hi)), np.nan)
    curve.extra.update(alpha_hat=float(fs.alpha_), first_stage_coef=fs.coef_.tolist(),
                       q_min=lo, q_max=hi,
                       identified_alphas=alpha_identified_set(q, cfg.alpha_bar, cfg.alpha_grid_size))
    return curve
