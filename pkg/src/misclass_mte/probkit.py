"""Numerical primitives: normal distribution functions, the Gaussian copula,
smoothing kernels, trapezoid quadrature and seeded random streams."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import special

_TWO_PI = 2.0 * np.pi
# Gauss-Legendre rules on [-1, 1]; the order grows with |r| as in Genz's scheme.
_GL = {n: np.polynomial.legendre.leggauss(n) for n in (6, 12, 20)}
_GL_X, _GL_W = _GL[20]


def std_normal_cdf(x):
    """Standard normal CDF, elementwise. Accepts +/- infinity."""
    out = special.ndtr(np.asarray(x, dtype=float))
    return out if out.ndim else float(out)


def std_normal_quantile(p):
    """Inverse of :func:`std_normal_cdf` on the open unit interval."""
    p = np.asarray(p, dtype=float)
    if np.any(~((p > 0.0) & (p < 1.0))):
        raise ValueError("std_normal_quantile requires p in (0, 1)")
    out = special.ndtri(p)
    return out if out.ndim else float(out)


def std_normal_pdf(x):
    x = np.asarray(x, dtype=float)
    out = np.exp(-0.5 * x * x) / np.sqrt(_TWO_PI)
    return out if out.ndim else float(out)


def _bvnu(h, k, r):
    """Upper orthant probability P(X > h, Y > k) for a standard bivariate
    normal with correlation r, |r| < 1.

    Vectorised port of Genz's ``bvnu`` (Drezner-Wesolowsky style Gauss-Legendre
    integration with a separate expansion for |r| >= 0.925).
    """
    h, k, r = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (h, k, r)))
    h = h.astype(float).ravel()
    k = k.astype(float).ravel()
    r = r.astype(float).ravel()
    out = np.empty_like(h)

    inf_h = np.isinf(h)
    inf_k = np.isinf(k)
    edge = inf_h | inf_k
    if edge.any():
        he, ke = h[edge], k[edge]
        val = np.where(
            (he == np.inf) | (ke == np.inf),
            0.0,
            np.where(
                he == -np.inf,
                np.where(ke == -np.inf, 1.0, special.ndtr(-ke)),
                special.ndtr(-he),
            ),
        )
        out[edge] = val

    absr = np.abs(r)
    for n, band in ((6, absr < 0.3), (12, (absr >= 0.3) & (absr < 0.75)), (20, (absr >= 0.75) & (absr < 0.925))):
        sel = ~edge & band
        if sel.any():
            out[sel] = _bvnu_low(h[sel], k[sel], r[sel], *_GL[n])

    high = ~edge & (absr >= 0.925)
    if high.any():
        out[high] = _bvnu_high(h[high], k[high], r[high])

    return np.clip(out, 0.0, 1.0)


def _bvnu_low(h, k, r, x, w):
    hk = h * k
    hs = 0.5 * (h * h + k * k)
    asr = 0.5 * np.arcsin(r)
    sn = np.sin(asr[:, None] * (1.0 + x[None, :]))
    terms = np.exp((sn * hk[:, None] - hs[:, None]) / (1.0 - sn * sn))
    return (terms @ w) * asr / _TWO_PI + special.ndtr(-h) * special.ndtr(-k)


def _bvnu_high(h, k, r):
    neg = r < 0
    k = np.where(neg, -k, k)
    hk = h * k
    bvn = np.zeros_like(h)

    inner = np.abs(r) < 1.0
    if inner.any():
        hi, ki, hki, ri = h[inner], k[inner], hk[inner], r[inner]
        as_ = 1.0 - ri * ri
        a = np.sqrt(as_)
        bs = (hi - ki) ** 2
        c = (4.0 - hki) / 8.0
        d = (12.0 - hki) / 80.0
        asr = -(bs / as_ + hki) / 2.0
        acc = np.where(
            asr > -100.0,
            a * np.exp(np.maximum(asr, -100.0)) * (1.0 - c * (bs - as_) * (1.0 - d * bs) / 3.0 + c * d * as_ * as_),
            0.0,
        )
        b = np.sqrt(bs)
        sp = np.sqrt(_TWO_PI) * special.ndtr(-b / a)
        acc = acc - np.where(
            hki > -100.0,
            np.exp(-np.maximum(hki, -100.0) / 2.0) * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0),
            0.0,
        )
        a2 = a / 2.0
        xs = (a2[:, None] * (1.0 + _GL_X[None, :])) ** 2
        asr2 = -(bs[:, None] / xs + hki[:, None]) / 2.0
        keep = asr2 > -100.0
        sp2 = 1.0 + c[:, None] * xs * (1.0 + 5.0 * d[:, None] * xs)
        rs = np.sqrt(1.0 - xs)
        ep = np.exp(-(hki[:, None] / 2.0) * xs / (1.0 + rs) ** 2) / rs
        summand = np.where(keep, np.exp(np.where(keep, asr2, 0.0)) * (sp2 - ep), 0.0)
        bvn[inner] = (a2 * (summand @ _GL_W) - acc) / _TWO_PI

    pos = ~neg
    res = np.empty_like(h)
    res[pos] = bvn[pos] + special.ndtr(-np.maximum(h[pos], k[pos]))
    hn, kn, bn = h[neg], k[neg], bvn[neg]
    lower = np.where(hn < 0, special.ndtr(kn) - special.ndtr(hn), special.ndtr(-hn) - special.ndtr(-kn))
    res[neg] = np.where(hn >= kn, -bn, lower - bn)
    return res


def bvn_cdf(x, y, rho):
    """P(X <= x, Y <= y) for standard bivariate normal margins, correlation rho.

    rho = +1 and rho = -1 are handled as the comonotone and countermonotone
    limits.
    """
    x, y, rho = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (x, y, rho)))
    shape = x.shape
    x, y, rho = x.ravel(), y.ravel(), rho.ravel()
    if np.any(np.abs(rho) > 1.0) or np.any(np.isnan(rho)):
        raise ValueError("rho must lie in [-1, 1]")
    out = np.empty_like(x)
    up = rho >= 1.0
    down = rho <= -1.0
    mid = ~(up | down)
    out[up] = special.ndtr(np.minimum(x[up], y[up]))
    out[down] = np.maximum(0.0, special.ndtr(x[down]) + special.ndtr(y[down]) - 1.0)
    if mid.any():
        out[mid] = _bvnu(-x[mid], -y[mid], rho[mid])
    out = out.reshape(shape)
    return out if out.ndim else float(out)


def gaussian_copula(u, v, rho):
    """Bivariate Gaussian copula C(u, v; rho)."""
    u, v, rho = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (u, v, rho)))
    if np.any((u < 0) | (u > 1) | (v < 0) | (v > 1)):
        raise ValueError("copula arguments must lie in [0, 1]")
    if np.any(np.abs(rho) > 1.0):
        raise ValueError("rho must lie in [-1, 1]")
    out = bvn_cdf(special.ndtri(u), special.ndtri(v), rho)
    # Clamp tiny quadrature excursions back into the Frechet-Hoeffding box.
    out = np.clip(out, np.maximum(0.0, u + v - 1.0), np.minimum(u, v))
    return out if np.ndim(out) else float(out)


class KernelKind(str, enum.Enum):
    GAUSSIAN = "gaussian"
    EPANECHNIKOV = "epanechnikov"

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        if self is KernelKind.GAUSSIAN:
            return std_normal_pdf(u)
        return np.where(np.abs(u) <= 1.0, 0.75 * (1.0 - u * u), 0.0)

    @property
    def support(self):
        return (-np.inf, np.inf) if self is KernelKind.GAUSSIAN else (-1.0, 1.0)

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown kernel {value!r}; expected one of "
                             f"{[k.value for k in cls]}") from None


@dataclass(frozen=True)
class Grid:
    """Strictly increasing, finite evaluation points."""

    points: np.ndarray
    uniform: bool = field(init=False)
    step: float | None = field(init=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).ravel()
        if pts.size == 0:
            raise ValueError("grid must contain at least one point")
        if not np.all(np.isfinite(pts)):
            raise ValueError("grid points must be finite")
        diffs = np.diff(pts)
        if np.any(diffs <= 0):
            raise ValueError("grid points must be strictly increasing")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        uniform = pts.size < 3 or bool(np.allclose(diffs, diffs[0], rtol=1e-9, atol=0.0))
        object.__setattr__(self, "uniform", uniform)
        object.__setattr__(self, "step", float(diffs[0]) if uniform and pts.size > 1 else None)

    @classmethod
    def linspace(cls, start, stop, num):
        return cls(np.linspace(start, stop, int(num)))

    def __len__(self):
        return self.points.size

    def __iter__(self):
        return iter(self.points)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.points, dtype=dtype)


def trapezoid_integral(grid, values):
    pts = grid.points if isinstance(grid, Grid) else np.asarray(grid, dtype=float)
    values = np.asarray(values, dtype=float)
    if values.shape[-1] != pts.size:
        raise ValueError(f"length mismatch: {values.shape[-1]} values on {pts.size} grid points")
    return np.trapezoid(values, pts, axis=-1)


def make_rng(seed):
    """Counter-based (Philox) generator from a 64-bit seed."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def spawn_rngs(seed, n):
    """Independent substreams indexed by task number."""
    children = np.random.SeedSequence(int(seed)).spawn(int(n))
    return [np.random.Generator(np.random.Philox(c)) for c in children]
