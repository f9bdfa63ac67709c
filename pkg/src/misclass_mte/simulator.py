"""Sampling from the copula selection model and its closed-form oracles.

The latent normal vector is ordered (beta, U, V*, xi*, Z). Potential outcomes
are Y0 = U + X b0 and Y1 = beta + U + X b1, the true treatment is
D* = 1{V <= P(Z, X)} with V = Phi(V*), and the reported treatment flips D*
whenever the misreporting indicator is one.
"""

from __future__ import annotations

import numpy as np
from scipy import special

from .model import (
    DEFAULT_MEAN,
    LATENT_COLUMNS,
    PSCORE_MAPS,
    DgpSpec,
    Mechanism,
    MisclassSpec,
    Sample,
    default_cov,
)
from .probkit import (
    bvn_cdf,
    gaussian_copula,
    spawn_rngs,
    std_normal_cdf,
    std_normal_pdf,
    std_normal_quantile,
)

BLOCK_ROWS = 1 << 16


def _factor(cov):
    # Eigen factor rather than Cholesky: the default covariance is singular at rho = 0.
    vals, vecs = np.linalg.eigh(cov)
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def _draw_block(spec, rng, rows, A):
    k = spec.n_covariates
    normals = rng.standard_normal((rows, 5 + k))
    lat = normals[:, :5] @ A.T + np.asarray(spec.mean)
    beta, u, vstar, xistar, z = lat.T
    x = normals[:, 5:] if k else None
    v = std_normal_cdf(vstar)
    xi = std_normal_cdf(xistar)
    alpha = spec.misclass.alpha
    mech = spec.misclass.mechanism
    if mech is Mechanism.COPULA:
        eps = xi <= alpha
    elif mech is Mechanism.THRESHOLD_LOW:
        eps = v <= alpha
    else:
        eps = v > 1.0 - alpha
    dstar = v <= spec.pscore(z, x)
    y0 = u.copy()
    y1 = beta + u
    if k:
        y0 += x @ np.array(spec.x_coef0)
        y1 += x @ np.array(spec.x_coef1)
    eps = eps.astype(np.int8)
    dstar = dstar.astype(np.int8)
    d = dstar * (1 - eps) + (1 - dstar) * eps
    y = np.where(dstar == 1, y1, y0)
    latent = dict(y0=y0, y1=y1, v=v, dstar=dstar, eps=eps, beta=beta, u=u, xi=xi)
    return y, d, z, x, latent


def sample_dgp(spec: DgpSpec, latent=False, threads=1) -> Sample:
    """Draw ``spec.n`` rows.

    Rows are generated in fixed blocks of ``BLOCK_ROWS`` with one random
    substream per block, so the output does not depend on ``threads``.
    """
    n = int(spec.n)
    A = _factor(spec.cov_matrix)
    nblocks = max(1, -(-n // BLOCK_ROWS))
    rngs = spawn_rngs(spec.seed, nblocks)
    sizes = [min(BLOCK_ROWS, n - i * BLOCK_ROWS) for i in range(nblocks)]
    jobs = [(rng, rows) for rng, rows in zip(rngs, sizes) if rows > 0]

    if threads and threads > 1 and len(jobs) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda job: _draw_block(spec, job[0], job[1], A), jobs))
    else:
        parts = [_draw_block(spec, rng, rows, A) for rng, rows in jobs]

    if not parts:
        empty = np.empty(0)
        x = np.empty((0, spec.n_covariates)) if spec.n_covariates else None
        lat = {c: empty for c in LATENT_COLUMNS} if latent else None
        return Sample(empty, empty.astype(np.int8), empty, x, lat)

    y = np.concatenate([p[0] for p in parts])
    d = np.concatenate([p[1] for p in parts])
    z = np.concatenate([p[2] for p in parts])
    x = np.concatenate([p[3] for p in parts]) if spec.n_covariates else None
    lat = None
    if latent:
        lat = {c: np.concatenate([p[4][c] for p in parts]) for c in LATENT_COLUMNS}
    return Sample(y, d, z, x, lat)


# ---------------------------------------------------------------------------
# closed forms


def true_mte(p):
    """MTE of the default design: 2 - Phi^{-1}(p) / 2."""
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0.0) | (p >= 1.0)):
        raise ValueError("true_mte requires p in (0, 1)")
    out = 2.0 - 0.5 * special.ndtri(p)
    return out if out.ndim else float(out)


def _check_unit(name, value):
    value = np.asarray(value, dtype=float)
    if np.any((value < 0.0) | (value > 1.0)) or np.any(np.isnan(value)):
        raise ValueError(f"{name} outside [0,1]")
    return value


def observed_pscore(p_true, mis: MisclassSpec):
    """P(D = 1 | Z = z) implied by the true propensity ``p_true``."""
    p = _check_unit("p_true", p_true)
    a = mis.alpha
    if mis.mechanism is Mechanism.COPULA:
        out = p + a - 2.0 * gaussian_copula(p, a, mis.rho)
    elif mis.mechanism is Mechanism.THRESHOLD_LOW:
        out = np.abs(p - a)
    else:
        out = np.where(p <= 1.0 - a, p + a, 2.0 - a - p)
    out = np.clip(out, 0.0, 1.0)
    return out if np.ndim(out) else float(out)


def invert_observed_pscore(q, mis: MisclassSpec, branch="upper"):
    """Recover the true propensity from ``q`` for the threshold mechanisms.

    ``branch`` selects the piece of the piecewise-linear map: ``upper`` is
    p >= alpha (low) or p <= 1 - alpha (high).
    """
    q = _check_unit("q", q)
    a = mis.alpha
    if mis.mechanism is Mechanism.THRESHOLD_LOW:
        out = q + a if branch == "upper" else a - q
    elif mis.mechanism is Mechanism.THRESHOLD_HIGH:
        out = q - a if branch == "upper" else 2.0 - a - q
    elif mis.rho == 0.0:
        if a == 0.5:
            raise ValueError("alpha = 1/2 makes q constant")
        out = (q - a) / (1.0 - 2.0 * a)
    else:
        raise ValueError("closed-form inversion needs rho = 0 or a threshold mechanism")
    return out if np.ndim(out) else float(out)


def cond_cdf_v_given_eps(mis: MisclassSpec, p, e):
    """F_{V | eps = e}(p)."""
    p = _check_unit("p", p)
    a = mis.alpha
    if e == 1 and a == 0.0:
        raise ValueError("P(eps = 1) = 0: conditioning event has probability zero")
    if e == 0 and a == 1.0:
        raise ValueError("P(eps = 0) = 0: conditioning event has probability zero")
    if mis.mechanism is Mechanism.COPULA:
        joint1 = gaussian_copula(p, a, mis.rho)
    elif mis.mechanism is Mechanism.THRESHOLD_LOW:
        joint1 = np.minimum(p, a)
    else:
        joint1 = np.maximum(0.0, p - (1.0 - a))
    out = joint1 / a if e == 1 else (p - joint1) / (1.0 - a)
    out = np.clip(out, 0.0, 1.0)
    return out if np.ndim(out) else float(out)


def true_liv_rho0(p_obs, alpha):
    """LIV estimand of the default design under independent misreporting."""
    if not 0.0 <= alpha < 0.5:
        raise ValueError("alpha must lie in [0, 1/2)")
    p_obs = np.asarray(p_obs, dtype=float)
    if alpha > 0 and np.any((p_obs <= alpha) | (p_obs >= 1.0 - alpha)):
        raise ValueError("p_obs outside (alpha, 1 - alpha)")
    slope = 1.0 - 2.0 * alpha
    out = true_mte((p_obs - alpha) / slope) / slope
    return out if np.ndim(out) else float(out)


def mte_upper_limit_oracle(p, alpha, rho):
    """Limit of Delta_YZ / |Delta_DZ| as z' -> z in the default design.

    dq/dp = 1 - 2 dC(p, alpha; rho)/dp, and the copula derivative is
    Phi((Phi^{-1}(alpha) - rho Phi^{-1}(p)) / sqrt(1 - rho^2)). P is taken to
    be increasing in z.
    """
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    if not 0.0 <= alpha <= 1.0 or not -1.0 <= rho <= 1.0:
        raise ValueError("alpha outside [0,1] or rho outside [-1,1]")
    mte = true_mte(p)
    if alpha in (0.0, 1.0):
        return mte
    a_star = std_normal_quantile(alpha)
    p_star = std_normal_quantile(p)
    if abs(rho) == 1.0:
        if np.isclose(a_star, rho * p_star, rtol=0.0, atol=1e-12):
            raise ValueError("limit does not exist")
        return mte
    slope = 1.0 - 2.0 * std_normal_cdf((a_star - rho * p_star) / np.sqrt(1.0 - rho * rho))
    if abs(slope) < 1e-12:
        raise ValueError("limit does not exist")
    return mte / abs(slope)


# ---------------------------------------------------------------------------
# population quantities of a copula design, by quadrature over V*

_T_MAX = 8.5
_GL_T, _GL_TW = np.polynomial.legendre.leggauss(48)


def _nodes(lo, hi):
    """Gauss-Legendre nodes/weights on [lo, hi] for each row of lo/hi."""
    lo = np.asarray(lo, dtype=float)[..., None]
    hi = np.asarray(hi, dtype=float)[..., None]
    half = 0.5 * (hi - lo)
    return lo + half * (1.0 + _GL_T), half * _GL_TW


class CopulaOracle:
    """Exact population objects for the copula mechanism.

    Only the (Y_d, V*, xi*) covariance blocks are used, so designs whose full
    5x5 covariance is indefinite (the default one at rho = +/-0.5) are still
    admissible as long as those blocks are valid. Given V* = t, each potential outcome and xi* are jointly normal, so every
    quantity below is a one-dimensional integral over t of bivariate normal
    probabilities.
    """

    def __init__(self, misclass: MisclassSpec, mean=DEFAULT_MEAN, cov=None, pscore_map="probit2"):
        if misclass.mechanism is not Mechanism.COPULA:
            raise ValueError("oracle needs the copula mechanism")
        rho = misclass.rho
        if abs(rho) >= 1.0:
            raise ValueError("oracle needs |rho| < 1")
        S = default_cov(rho) if cov is None else np.asarray(cov, dtype=float)
        if not np.isclose(S[2, 3], rho):
            raise ValueError("cov[V*, xi*] must equal the copula parameter rho")
        self.misclass = misclass
        self.pscore = PSCORE_MAPS[pscore_map]
        self.alpha = misclass.alpha
        self.rho = rho
        self.cut = -np.inf if self.alpha == 0 else np.inf if self.alpha == 1 else std_normal_quantile(self.alpha)
        mu = np.asarray(mean, dtype=float)
        self.sd_xi = np.sqrt(1.0 - rho * rho)
        self._arms = {}
        for d, a in ((1, np.array([1.0, 1.0, 0.0, 0.0, 0.0])), (0, np.array([0.0, 1.0, 0.0, 0.0, 0.0]))):
            var = a @ S @ a
            block = np.array([[var, a @ S[:, 2], a @ S[:, 3]],
                              [a @ S[:, 2], 1.0, rho], [a @ S[:, 3], rho, 1.0]])
            if np.linalg.eigvalsh(block).min() < -1e-10:
                raise ValueError(f"(Y{d}, V*, xi*) covariance block is not positive semidefinite")
            cov_v = a @ S[:, 2]
            cov_xi = a @ S[:, 3]
            var_c = var - cov_v ** 2
            cov_c = cov_xi - cov_v * rho
            sd = np.sqrt(var_c)
            corr = np.clip(cov_c / (sd * self.sd_xi), -1.0, 1.0)
            self._arms[d] = dict(m=a @ mu, b=cov_v, sd=sd, cov=cov_c, corr=corr)
        self.mte_slope = S[0, 2]
        self.mte_level = mu[0]

    @classmethod
    def from_spec(cls, spec: DgpSpec):
        if spec.n_covariates:
            raise ValueError("oracle does not cover covariates")
        return cls(spec.misclass, spec.mean, spec.cov_matrix, spec.pscore_map)

    def mte(self, p):
        return self.mte_level + self.mte_slope * std_normal_quantile(p)

    def _joint_cdf(self, d, y, t, eps):
        """P(Y_d <= y, eps = e | V* = t), or the marginal P(Y_d <= y | t) when
        ``eps`` is None. ``y`` broadcasts against ``t``."""
        arm = self._arms[d]
        yz = (y - arm["m"] - arm["b"] * t) / arm["sd"]
        marg = std_normal_cdf(yz)
        if eps is None:
            return marg
        if self.alpha == 0.0:
            low = np.zeros_like(marg)
        elif self.alpha == 1.0:
            low = marg
        else:
            xz = np.broadcast_to((self.cut - self.rho * t) / self.sd_xi, np.shape(yz))
            low = bvn_cdf(yz, xz, arm["corr"])
        return low if eps == 1 else marg - low

    def _kinks(self, d, edges):
        """t at which the degenerate joint CDF of arm ``d`` switches branch."""
        arm = self._arms[d]
        if abs(arm["corr"]) < 1.0 or self.alpha in (0.0, 1.0):
            return None
        sign = np.sign(arm["corr"])
        # corr = +1: h(t) = k(t); corr = -1: h(t) = -k(t).
        slope = -arm["b"] / arm["sd"] + sign * self.rho / self.sd_xi
        level = (edges - arm["m"]) / arm["sd"] - sign * self.cut / self.sd_xi
        if slope == 0.0:
            return None
        return np.where(np.isfinite(level), -level / slope, 0.0)

    def _arm_integrals(self, d, edges, lo, hi):
        """Integrals over t in [lo, hi] of phi(t) P(Y_d <= y, eps = 1 | t) and of
        phi(t) P(Y_d <= y | t), for every edge y: two arrays (len(lo), len(edges))."""
        kinks = self._kinks(d, edges)
        if kinks is None:
            t, w = _nodes(lo, hi)
            w = w * std_normal_pdf(t)
            low = self._joint_cdf(d, edges[None, None, :], t[..., None], 1)
            marg = self._joint_cdf(d, edges[None, None, :], t[..., None], None)
            return np.einsum("pn,pne->pe", w, low), np.einsum("pn,pne->pe", w, marg)
        # Split each interval at the kink so both pieces are smooth.
        cut = np.clip(kinks[None, :], lo[:, None], hi[:, None])
        total_low = 0.0
        total_marg = 0.0
        for a, b in ((np.broadcast_to(lo[:, None], cut.shape), cut),
                     (cut, np.broadcast_to(hi[:, None], cut.shape))):
            t, w = _nodes(a, b)
            w = w * std_normal_pdf(t)
            ye = edges[None, :, None]
            total_low = total_low + (w * self._joint_cdf(d, ye, t, 1)).sum(-1)
            total_marg = total_marg + (w * self._joint_cdf(d, ye, t, None)).sum(-1)
        return total_low, total_marg

    def joint_masses(self, pscores, edges):
        """P(Y in bin_k, D = d | P(Z) = p) for each p: shape (len(p), 2, nbins).

        ``edges`` are interior bin edges; the outer bins are open ended.
        """
        pscores = np.atleast_1d(np.asarray(pscores, dtype=float))
        edges = np.asarray(edges, dtype=float)
        tp = np.clip(special.ndtri(pscores), -_T_MAX, _T_MAX)
        floor = np.full_like(tp, -_T_MAX)
        ceil = np.full_like(tp, _T_MAX)
        # Treated part (V <= p) uses Y1, untreated part (V > p) uses Y0.
        low1, marg1 = self._arm_integrals(1, edges, floor, tp)
        low0, marg0 = self._arm_integrals(0, edges, tp, ceil)
        p_treated = std_normal_cdf(tp) - std_normal_cdf(-_T_MAX)
        p_untreated = std_normal_cdf(_T_MAX) - std_normal_cdf(tp)
        mass_t = std_normal_cdf(-_T_MAX)

        def cum(x, total):
            # Append the open upper end: P(Y_d <= inf, .) is the arm's total mass.
            return np.concatenate([np.zeros((x.shape[0], 1)), x, total[:, None]], axis=1)

        eps1_t = self._eps_mass(1, floor, tp)
        eps1_u = self._eps_mass(0, tp, ceil)
        d1 = cum(marg1 - low1, p_treated - eps1_t) + cum(low0, eps1_u)
        d0 = cum(low1, eps1_t) + cum(marg0 - low0, p_untreated - eps1_u)
        out = np.stack([np.diff(d0, axis=1), np.diff(d1, axis=1)], axis=1)
        out = np.clip(out, 0.0, None)
        # Renormalise away the (1e-17) tail mass beyond |t| = T_MAX.
        return out / (1.0 - 2.0 * mass_t)

    def _eps_mass(self, d, lo, hi):
        """Integral over t in [lo, hi] of phi(t) P(eps = 1 | V* = t)."""
        t, w = _nodes(lo, hi)
        w = w * std_normal_pdf(t)
        if self.alpha in (0.0, 1.0):
            return w.sum(-1) * self.alpha
        return (w * std_normal_cdf((self.cut - self.rho * t) / self.sd_xi)).sum(-1)

    def mean_y(self, pscores):
        """E[Y | P(Z) = p]."""
        pscores = np.atleast_1d(np.asarray(pscores, dtype=float))
        tp = np.clip(special.ndtri(pscores), -_T_MAX, _T_MAX)
        t_lo, w_lo = _nodes(np.full_like(tp, -_T_MAX), tp)
        t_hi, w_hi = _nodes(tp, np.full_like(tp, _T_MAX))
        a1, a0 = self._arms[1], self._arms[0]
        treated = ((a1["m"] + a1["b"] * t_lo) * std_normal_pdf(t_lo) * w_lo).sum(-1)
        untreated = ((a0["m"] + a0["b"] * t_hi) * std_normal_pdf(t_hi) * w_hi).sum(-1)
        return treated + untreated

    def observed_pscore(self, pscores):
        return observed_pscore(pscores, self.misclass)

    def cell_stats(self, z_values, edges):
        """Population cell summaries at the instrument values ``z_values``."""
        from .bounds import CellStats

        z_values = np.asarray(z_values, dtype=float)
        p = self.pscore(z_values)
        masses = self.joint_masses(p, edges)
        means = self.mean_y(p)
        full_edges = np.concatenate([[-np.inf], np.asarray(edges, dtype=float), [np.inf]])
        return [CellStats(z_value=float(z), n_cell=None, pD1=float(m[1].sum()), joint_hist=m,
                          mean_y=float(my), y_edges=full_edges)
                for z, m, my in zip(z_values, masses, means)]

    def kappa(self, pscores, edges):
        """Derivatives in p of P(Y in bin, D = d | P(Z) = p): (kappa1, kappa0),
        each of shape (len(p), nbins)."""
        pscores = np.atleast_1d(np.asarray(pscores, dtype=float))
        edges = np.concatenate([[-np.inf], np.asarray(edges, dtype=float), [np.inf]])
        t = special.ndtri(pscores)[:, None]
        y1_e0 = np.diff(self._joint_cdf(1, edges[None, :], t, 0), axis=-1)
        y1_e1 = np.diff(self._joint_cdf(1, edges[None, :], t, 1), axis=-1)
        y0_e0 = np.diff(self._joint_cdf(0, edges[None, :], t, 0), axis=-1)
        y0_e1 = np.diff(self._joint_cdf(0, edges[None, :], t, 1), axis=-1)
        return y1_e0 - y0_e1, y1_e1 - y0_e0

    def dq(self, pscores):
        """Derivative of the observed propensity in the true one."""
        pscores = np.asarray(pscores, dtype=float)
        if self.alpha in (0.0, 1.0):
            return np.full_like(pscores, 1.0 if self.alpha == 0 else -1.0)
        return 1.0 - 2.0 * std_normal_cdf((self.cut - self.rho * special.ndtri(pscores)) / self.sd_xi)

    def _density(self, d, y, t, eps):
        arm = self._arms[d]
        mean = arm["m"] + arm["b"] * t
        dens = std_normal_pdf((y - mean) / arm["sd"]) / arm["sd"]
        if self.alpha in (0.0, 1.0):
            prob1 = np.full_like(dens, float(self.alpha))
        else:
            mu_xi = self.rho * t + arm["cov"] / arm["sd"] ** 2 * (y - mean)
            var_xi = self.sd_xi ** 2 - arm["cov"] ** 2 / arm["sd"] ** 2
            if var_xi > 1e-14:
                prob1 = std_normal_cdf((self.cut - mu_xi) / np.sqrt(var_xi))
            else:
                prob1 = (mu_xi <= self.cut).astype(float)
        return dens * (prob1 if eps == 1 else 1.0 - prob1)

    def tv_rates(self, p, n_y=40001):
        """Limits of TV_(Y,D=d)(z', z) / (P(z) - P(z')) as z' -> z: (d=1, d=0)."""
        t = std_normal_quantile(p)
        lo = min(a["m"] + a["b"] * t - 12 * a["sd"] for a in self._arms.values())
        hi = max(a["m"] + a["b"] * t + 12 * a["sd"] for a in self._arms.values())
        y = np.linspace(lo, hi, n_y)
        g1 = self._density(1, y, t, 0) - self._density(0, y, t, 1)
        g0 = self._density(1, y, t, 1) - self._density(0, y, t, 0)
        return np.trapezoid(np.abs(g1), y), np.trapezoid(np.abs(g0), y)

    def prop2_limit(self, p):
        """Closed-form limit of Delta_YZ / max(TV1, TV0) at p."""
        return self.mte(p) / max(self.tv_rates(p))
