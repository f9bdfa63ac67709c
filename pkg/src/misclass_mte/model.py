"""Domain types shared by simulation, identification and estimation."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .probkit import Grid, KernelKind, std_normal_cdf


class InsufficientDataError(ValueError):
    """The data cannot support the requested computation (empty cells,
    too few points in a window, too few observations after trimming)."""


@dataclass(frozen=True)
class Observation:
    """One observed row: outcome, reported treatment, instrument, covariates."""

    y: float
    d: int
    z: float
    x: tuple = ()

    def __post_init__(self):
        if self.d not in (0, 1):
            raise ValueError("d must be 0 or 1")
        if not (np.isfinite(self.y) and np.isfinite(self.z)):
            raise ValueError("y and z must be finite")


@dataclass(frozen=True)
class LatentDraw:
    y0: float
    y1: float
    v: float
    dstar: int
    eps: int
    beta: float
    u: float
    xi: float


@dataclass
class Sample:
    """Column-oriented observed data, the form every numerical routine consumes.

    ``latent`` holds the unobserved columns (``y0, y1, v, dstar, eps, beta, u,
    xi``) when the sample was simulated and they were requested.
    """

    y: np.ndarray
    d: np.ndarray
    z: np.ndarray
    x: np.ndarray | None = None
    latent: dict | None = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.d = np.asarray(self.d).astype(np.int8)
        self.z = np.asarray(self.z, dtype=float)
        n = self.y.size
        if self.d.size != n or self.z.size != n:
            raise ValueError("y, d and z must have the same length")
        if self.x is not None:
            self.x = np.asarray(self.x, dtype=float).reshape(n, -1)
        if not np.isin(self.d, (0, 1)).all():
            raise ValueError("d must be binary")
        if not (np.isfinite(self.y).all() and np.isfinite(self.z).all()):
            raise ValueError("y and z must be finite")

    def __len__(self):
        return self.y.size

    @property
    def n_covariates(self):
        return 0 if self.x is None else self.x.shape[1]

    def take(self, idx):
        latent = None if self.latent is None else {k: v[idx] for k, v in self.latent.items()}
        x = None if self.x is None else self.x[idx]
        return Sample(self.y[idx], self.d[idx], self.z[idx], x, latent)

    def observations(self):
        xs = self.x if self.x is not None else np.empty((len(self), 0))
        return [Observation(float(y), int(d), float(z), tuple(xr))
                for y, d, z, xr in zip(self.y, self.d, self.z, xs)]

    def latent_draws(self):
        if self.latent is None:
            raise ValueError("sample carries no latent columns")
        L = self.latent
        return [LatentDraw(*(t(L[c][i]) for c, t in _LATENT_TYPES)) for i in range(len(self))]

    @classmethod
    def from_observations(cls, rows):
        rows = list(rows)
        x = np.array([r.x for r in rows], dtype=float) if rows and rows[0].x else None
        return cls([r.y for r in rows], [r.d for r in rows], [r.z for r in rows], x)


_LATENT_TYPES = (("y0", float), ("y1", float), ("v", float), ("dstar", int),
                 ("eps", int), ("beta", float), ("u", float), ("xi", float))
LATENT_COLUMNS = tuple(c for c, _ in _LATENT_TYPES)


class Mechanism(str, enum.Enum):
    COPULA = "copula"
    THRESHOLD_LOW = "threshold_low"
    THRESHOLD_HIGH = "threshold_high"


@dataclass(frozen=True)
class MisclassSpec:
    """How the misreporting indicator is generated.

    ``copula``: eps = 1{xi <= alpha} with (V, xi) linked by a Gaussian copula
    with parameter ``rho``. ``threshold_low``: eps = 1{V <= alpha}.
    ``threshold_high``: eps = 1{V > 1 - alpha}.
    """

    alpha: float
    mechanism: Mechanism = Mechanism.COPULA
    rho: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "mechanism", Mechanism(self.mechanism))
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha outside [0,1]")
        if not -1.0 <= self.rho <= 1.0:
            raise ValueError("rho outside [-1,1]")

    @classmethod
    def copula(cls, alpha, rho=0.0):
        return cls(alpha, Mechanism.COPULA, rho)

    @classmethod
    def threshold_low(cls, alpha):
        return cls(alpha, Mechanism.THRESHOLD_LOW)

    @classmethod
    def threshold_high(cls, alpha):
        return cls(alpha, Mechanism.THRESHOLD_HIGH)


# Order of the latent normal vector: (beta, U, V*, xi*, Z).
DEFAULT_MEAN = (2.0, 2.0, 0.0, 0.0, 2.0)


def default_cov(rho=0.0):
    return np.array([
        [1.0, 0.5, -0.5, 0.5, 0.0],
        [0.5, 1.0, 0.5, 0.5, 0.0],
        [-0.5, 0.5, 1.0, rho, 0.0],
        [0.5, 0.5, rho, 1.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 1.0],
    ])


def nde_cov(rho=0.0):
    """Default covariance with the misreporting driver uncorrelated with
    (beta, U), so misclassification is non-differential."""
    cov = default_cov(rho)
    cov[0, 3] = cov[3, 0] = cov[1, 3] = cov[3, 1] = 0.0
    return cov


PSCORE_MAPS: dict[str, Callable] = {
    "probit2": lambda z: std_normal_cdf(2.0 * np.asarray(z, dtype=float)),
}


@dataclass(frozen=True)
class DgpSpec:
    misclass: MisclassSpec
    n: int = 10_000
    seed: int = 0
    mean: tuple = DEFAULT_MEAN
    cov: tuple | None = None
    pscore_map: str = "probit2"
    x_coef0: tuple = ()
    x_coef1: tuple = ()
    x_pscore: tuple = ()

    def __post_init__(self):
        cov = default_cov(self.misclass.rho) if self.cov is None else np.asarray(self.cov, dtype=float)
        if cov.shape != (5, 5):
            raise ValueError("cov must be 5x5 over (beta, U, V*, xi*, Z)")
        if not np.allclose(cov, cov.T, atol=1e-12):
            raise ValueError("cov must be symmetric")
        if np.linalg.eigvalsh(cov).min() < -1e-10:
            raise ValueError("cov is not positive semidefinite")
        if not (np.isclose(cov[2, 2], 1.0) and np.isclose(cov[3, 3], 1.0)):
            raise ValueError("V* and xi* must have unit variance")
        if len(self.mean) != 5 or self.mean[2] != 0.0 or self.mean[3] != 0.0:
            raise ValueError("mean must have 5 entries with zeros for V* and xi*")
        if self.pscore_map not in PSCORE_MAPS:
            raise ValueError(f"unknown pscore_map {self.pscore_map!r}")
        if self.n < 0:
            raise ValueError("n must be nonnegative")
        if self.misclass.mechanism is Mechanism.COPULA and not np.isclose(cov[2, 3], self.misclass.rho):
            raise ValueError("cov[V*, xi*] must equal the copula parameter rho")
        k = len(self.x_coef0)
        if len(self.x_coef1) != k or len(self.x_pscore) != k:
            raise ValueError("x_coef0, x_coef1 and x_pscore must have equal length")
        for name in ("x_coef0", "x_coef1", "x_pscore"):
            object.__setattr__(self, name, tuple(float(c) for c in getattr(self, name)))
        object.__setattr__(self, "cov", tuple(map(tuple, cov)))
        object.__setattr__(self, "mean", tuple(float(m) for m in self.mean))
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def cov_matrix(self):
        return np.array(self.cov)

    @property
    def n_covariates(self):
        return len(self.x_coef0)

    def pscore(self, z, x=None):
        """True propensity P(z, x). Covariates shift the probit index."""
        z = np.asarray(z, dtype=float)
        if x is None or not self.n_covariates:
            return PSCORE_MAPS[self.pscore_map](z)
        index = 2.0 * z + np.asarray(x, dtype=float) @ np.array(self.x_pscore)
        return std_normal_cdf(index)

    def with_(self, **kw):
        return replace(self, **kw)


@dataclass(frozen=True)
class IdentConfig:
    alpha_bar: float = 0.139
    alpha_grid_size: int = 15
    p_grid: Grid = field(default_factory=lambda: Grid.linspace(0.05, 0.95, 21))
    z_grid: Grid | None = None
    bandwidth: float = 0.27
    kernel: KernelKind = KernelKind.GAUSSIAN
    fd_step: float | None = None
    y_bins: int = 50
    trim_delta: float = 1e-4

    def alpha_grid(self, cap=None):
        top = self.alpha_bar if cap is None else min(self.alpha_bar, cap)
        if self.alpha_grid_size == 1 or top == 0.0:
            return np.array([0.0]) if top == 0.0 else np.array([top])
        return np.linspace(0.0, top, self.alpha_grid_size)

    def with_(self, **kw):
        return validate(replace(self, **kw))


def validate(config: IdentConfig) -> IdentConfig:
    """Return ``config`` unchanged if every field is admissible."""
    if not 0.0 <= config.alpha_bar <= 1.0:
        raise ValueError("alpha_bar outside [0,1]")
    if int(config.alpha_grid_size) != config.alpha_grid_size or config.alpha_grid_size < 1:
        raise ValueError("alpha_grid_size must be a positive integer")
    if not isinstance(config.p_grid, Grid):
        raise ValueError("p_grid must be a Grid")
    if config.z_grid is not None and not isinstance(config.z_grid, Grid):
        raise ValueError("z_grid must be a Grid")
    if not config.bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    if not isinstance(config.kernel, KernelKind):
        raise ValueError("kernel must be a KernelKind")
    if config.fd_step is not None and not config.fd_step > 0:
        raise ValueError("fd_step must be positive")
    if int(config.y_bins) != config.y_bins or config.y_bins < 1:
        raise ValueError("y_bins must be a positive integer")
    if not 0.0 <= config.trim_delta < 0.5:
        raise ValueError("trim_delta outside [0, 0.5)")
    return config


@dataclass(frozen=True)
class Interval:
    """Bound pair. ``empty`` marks lo > hi as a reported state; ``unbounded``
    marks a side that diverges (the matching endpoint is +/- inf)."""

    lo: float
    hi: float
    binding: tuple = ("", "")
    empty: bool = False
    unbounded: bool = False

    def __post_init__(self):
        if not self.empty and not self.lo <= self.hi + 1e-12:
            raise ValueError(f"interval with lo={self.lo} > hi={self.hi} must be flagged empty")

    def __contains__(self, value):
        return (not self.empty) and self.lo - 1e-12 <= value <= self.hi + 1e-12

    @property
    def width(self):
        return float("nan") if self.empty else self.hi - self.lo

    def contains_interval(self, other, tol=1e-12):
        if other.empty:
            return True
        return (not self.empty) and self.lo <= other.lo + tol and other.hi <= self.hi + tol


@dataclass
class BoundCurve:
    at: Grid
    intervals: list
    liv: np.ndarray | None = None
    truth: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.at)
        if len(self.intervals) != n:
            raise ValueError("one interval per grid point required")
        for name in ("liv", "truth"):
            col = getattr(self, name)
            if col is not None:
                col = np.asarray(col, dtype=float)
                if col.size != n:
                    raise ValueError(f"{name} length differs from grid length")
                setattr(self, name, col)

    @property
    def lo(self):
        return np.array([iv.lo for iv in self.intervals])

    @property
    def hi(self):
        return np.array([iv.hi for iv in self.intervals])

    def covers(self, values):
        return np.array([v in iv for v, iv in zip(np.asarray(values, dtype=float), self.intervals)])


class AggregateName(str, enum.Enum):
    ATE = "ate"
    ATT = "att"
    ATU = "atu"
    LATE = "late"
    PRTE = "prte"
    AMTE = "amte"


@dataclass(frozen=True)
class AggregateKind:
    name: AggregateName
    p_lo: float | None = None
    p_hi: float | None = None
    a: float | None = None
    zeta: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "name", AggregateName(self.name))
        if self.name is AggregateName.LATE:
            if self.p_lo is None or self.p_hi is None or not 0.0 <= self.p_lo < self.p_hi <= 1.0:
                raise ValueError("LATE requires 0 <= p_lo < p_hi <= 1")
        if self.name is AggregateName.PRTE and (self.a is None or not 0.0 < self.a < 1.0):
            raise ValueError("PRTE requires a in (0,1)")
        if self.name is AggregateName.AMTE and (self.zeta is None or not self.zeta > 0.0):
            raise ValueError("AMTE requires zeta > 0")

    @property
    def label(self):
        if self.name is AggregateName.LATE:
            return f"late:{self.p_lo:g}-{self.p_hi:g}"
        if self.name is AggregateName.PRTE:
            return f"prte:{self.a:g}"
        if self.name is AggregateName.AMTE:
            return f"amte:{self.zeta:g}"
        return self.name.value

    @classmethod
    def parse(cls, text):
        """Parse ``ate``, ``prte:0.05``, ``amte:0.1`` or ``late:0.2-0.6``."""
        name, _, arg = text.strip().lower().partition(":")
        try:
            kind = AggregateName(name)
        except ValueError:
            raise ValueError(f"unknown aggregate {text!r}") from None
        if kind is AggregateName.PRTE:
            return cls(kind, a=float(arg))
        if kind is AggregateName.AMTE:
            return cls(kind, zeta=float(arg))
        if kind is AggregateName.LATE:
            lo, _, hi = arg.partition("-")
            return cls(kind, p_lo=float(lo), p_hi=float(hi))
        if arg:
            raise ValueError(f"{name} takes no argument")
        return cls(kind)
