"""Acceptance gate.

Each criterion is a plain function returning ``(ok, detail)``. The pytest
wrappers assert on them and record a one-line verdict that the terminal
summary prints. Running this file directly prints the same lines:

    python3 tests/test_acceptance.py
"""

import csv
import json
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import norm

from misclass_mte.bounds import (
    TvPair,
    late_bounds_from_stats,
    mte_bound_curve,
    pointwise_pscore_bounds,
    pointwise_pscore_bounds_search,
    sharp_constraint_residuals,
)
from misclass_mte.cli import EMPTY, main as cli_main
from misclass_mte.estimator import (
    aggregate_mte,
    aggregate_weight_fn,
    bootstrap_ci,
    local_poly_deriv,
    robinson_fit,
)
from misclass_mte.model import IdentConfig, MisclassSpec, nde_cov
from misclass_mte.probkit import Grid, gaussian_copula
from misclass_mte.replicate import FIG1_ALPHAS, FIG1_RHOS, fig1_panel, fig2_panel, oracle_cells_for
from misclass_mte.simulator import (
    CopulaOracle,
    cond_cdf_v_given_eps,
    observed_pscore,
    true_liv_rho0,
    true_mte,
)

GRID21 = Grid.linspace(0.05, 0.95, 21)
RESULTS = {}


def c1_oracles():
    u = np.linspace(0, 1, 100)
    U, V = np.meshgrid(u, u)
    cop = np.abs(gaussian_copula(U, V, 0.0) - U * V).max()
    checks = {
        "mte(.5)": true_mte(0.5) == 2.0,
        "liv(.5,.3)": abs(true_liv_rho0(0.5, 0.3) - 5.0) <= 1e-9,
        "q(.5)": abs(observed_pscore(0.5, MisclassSpec.copula(0.1, 0.0)) - 0.5) <= 1e-12,
        "copula": cop <= 1e-9,
    }
    failed = [k for k, v in checks.items() if not v]
    return not failed, f"copula max err {cop:.1e}" + (f"; failed {failed}" if failed else "")


def c2_mixture():
    p = np.linspace(0, 1, 1001)
    worst = 0.0
    for mech in ("copula", "threshold_low", "threshold_high"):
        for a in np.round(np.arange(0.1, 1.0, 0.1), 1):
            mis = MisclassSpec(a, mech, 0.0)
            mix = a * cond_cdf_v_given_eps(mis, p, 1) + (1 - a) * cond_cdf_v_given_eps(mis, p, 0)
            worst = max(worst, np.abs(mix - p).max())
    return worst <= 1e-9, f"max |mixture - p| = {worst:.1e}"


def c3_prop1():
    rng = np.random.default_rng(0)
    worst = 0.0
    for q, ab in rng.uniform(0, 1, (1000, 2)):
        iv = pointwise_pscore_bounds(q, ab)
        lo, hi = pointwise_pscore_bounds_search(q, ab, n=10_000)
        worst = max(worst, abs(iv.lo - lo), abs(iv.hi - hi))
    ends = all((pointwise_pscore_bounds(q, 1.0).lo, pointwise_pscore_bounds(q, 1.0).hi) == (0.0, 1.0)
               and pointwise_pscore_bounds(q, 0.0).lo == pointwise_pscore_bounds(q, 0.0).hi == q
               for q in rng.uniform(0, 1, 50))
    return worst <= 1e-12 and ends, f"max gap {worst:.1e}, endpoint cases {'ok' if ends else 'wrong'}"


def c4_fig1():
    misses, wrong_sign = [], []
    for a in FIG1_ALPHAS:
        for r in FIG1_RHOS:
            c = fig1_panel(a, r, GRID21)
            for iv, t, p in zip(c.intervals, c.truth, GRID21.points):
                if iv.empty or not iv.lo - 1e-9 <= t <= iv.hi + 1e-9:
                    misses.append((a, r, p))
                if not iv.empty and not (iv.lo >= 0 and iv.hi > 0) == (t > 0):
                    wrong_sign.append((a, r, p))
    return not misses and not wrong_sign, f"{len(misses)} misses, {len(wrong_sign)} sign mismatches of 315"


def c5_alpha_bar_invariance():
    worst = 0.0
    for a in (0.1, 0.3):
        o = CopulaOracle(MisclassSpec.copula(a, 0.0))
        cells = oracle_cells_for(o, GRID21)
        c1 = mte_bound_curve(cells, IdentConfig(alpha_bar=0.1, p_grid=GRID21), pscore=o.pscore)
        c2 = mte_bound_curve(cells, IdentConfig(alpha_bar=1.0, p_grid=GRID21), pscore=o.pscore)
        worst = max(worst, np.abs(c1.lo - c2.lo).max(), np.abs(c1.hi - c2.hi).max())
    return worst <= 1e-12, f"max difference {worst:.1e}"


def c6_fig2():
    wide = fig2_panel(0.3, 0.4, GRID21)
    narrow = fig2_panel(0.3, 0.1, GRID21)
    covered = int(wide.covers(wide.truth).sum())
    missed = int((~narrow.covers(narrow.truth)).sum())
    return covered == 21 and missed >= 1, f"alpha_bar=.4 covers {covered}/21, alpha_bar=.1 misses {missed}"


def c7_fig4():
    q = observed_pscore(0.5, MisclassSpec.copula(0.3, 0.0))
    liv, mte = true_liv_rho0(q, 0.3), true_mte(0.5)
    return abs(liv - mte) >= 0.5, f"LIV {liv:.4f} vs MTE {mte:.4f}"


def c8_late_vs_ura():
    rng = np.random.default_rng(2)
    not_subset = not_narrower = 0
    for _ in range(1000):
        tv1, tv0 = rng.uniform(0.01, 1.0, 2)
        ddz = rng.uniform(-1, 1) * min(tv1, tv0)
        top = max(tv1, tv0)
        lb = late_bounds_from_stats([top], [ddz], top, ddz, rng.normal(), 0, rng.uniform(0, 1),
                                    ura_tv=TvPair(tv1, tv0, 0.0))
        not_subset += not lb.ura_late.contains_interval(lb.late, tol=1e-12)
        if tv1 != tv0 and not lb.late.empty:
            not_narrower += not lb.late.width < lb.ura_late.width
    return not_subset == 0 and not_narrower == 0, f"{not_subset} not nested, {not_narrower} not narrower"


def c9_monte_carlo():
    with tempfile.TemporaryDirectory() as d:
        d = Path(d)
        data, out, rep = d / "sim.csv", d / "region.csv", d / "report.json"
        codes = [cli_main(["simulate", "--out", str(data), "--n", "100000", "--alpha", "0.3",
                           "--rho", "0", "--seed", "42"]),
                 cli_main(["identify", str(data), "--mode", "symmetric", "--alpha-bar", "0.4",
                           "--out", str(out), "--report", str(rep)])]
        if any(codes):
            return False, f"exit codes {codes}"
        with open(out, newline="") as fh:
            rows = list(csv.DictReader(fh))
        report = json.loads(rep.read_text())
    hit = sum(r["lb"] != EMPTY and float(r["lb"]) - 1e-9 <= float(r["truth"]) <= float(r["ub"]) + 1e-9
              for r in rows)
    share = hit / len(rows)
    gap = abs(report["q_min"] - 0.3)
    return share >= 0.95 and gap <= 0.02, f"coverage {hit}/{len(rows)}, |inf q - alpha| = {gap:.4f}"


def c10_estimator():
    notes = []
    rng = np.random.default_rng(3)
    x = rng.uniform(0, 1, 500)
    pts = np.linspace(0.1, 0.9, 17)
    poly = 0.0
    for c in ([1.5], [0.7, -2.0], [3.0, -1.0, 0.25]):
        got, _ = local_poly_deriv(x, np.polyval(c, x), pts, 2, h=0.3)
        want = np.polyval(np.polyder(c), pts) if len(c) > 1 else 0.0
        poly = max(poly, np.abs(got - want).max())
    notes.append(f"poly err {poly:.1e}")

    n = 5000
    P = rng.uniform(0.02, 0.98, n)
    X = rng.normal(size=(n, 2)) + P[:, None]
    truth = np.array([0.5, -1.0, 1.0, 0.3])
    y = X @ truth[:2] + (P[:, None] * X) @ truth[2:] + np.sin(3 * P) + rng.normal(size=n)
    cfg = IdentConfig()
    fit = robinson_fit(y, X, P, cfg)
    est = np.r_[fit.beta0, fit.beta_diff]

    def stat(D, _seed):
        f = robinson_fit(D[:, 0], D[:, 1:3], D[:, 3], cfg)
        return np.r_[f.beta0, f.beta_diff]

    boot = bootstrap_ci(stat, np.column_stack([y, X, P]), B=100, seed=1)
    zmax = np.max(np.abs(est - truth) / boot.se)
    notes.append(f"Robinson max |z| {zmax:.2f}")

    fine = Grid.linspace(0.0005, 0.9995, 1999)
    sample = (np.arange(20_000) + 0.5) / 20_000
    kinds = ["ate", "att", "atu", "late:0.2-0.6", "prte:0.05", "amte:0.1"]
    norm_err = max(abs(aggregate_weight_fn(k, sample, fine).total - 1.0) for k in kinds)
    notes.append(f"weight norm err {norm_err:.1e}")
    ate = aggregate_mte(true_mte(fine.points), aggregate_weight_fn("ate", None, fine))
    notes.append(f"ATE {ate:.5f}")
    ok = poly <= 1e-9 and zmax <= 3 and norm_err <= 1e-6 and abs(ate - 2.0) <= 1e-3
    return ok, ", ".join(notes)


def c11_sharp():
    edges = np.linspace(-4, 12, 81)
    tn, tw = np.polynomial.legendre.leggauss(200)
    T = 7.5
    pg, w = norm.cdf(T * tn), T * tw * norm.pdf(T * tn)
    o = CopulaOracle(MisclassSpec.copula(0.3, 0.0), cov=nde_cov(0.0))
    z = np.linspace(-2, 2, 41)
    cells = o.cell_stats(z, edges)
    k1, k0 = o.kappa(pg, edges)
    rep = sharp_constraint_residuals(0.3, o.pscore(z), cells, pg, dq=o.dq(pg), kappa1=k1, kappa0=k0,
                                     top=o.joint_masses([1.0], edges)[0, 1],
                                     bottom=o.joint_masses([0.0], edges)[0, 1], weights=w)
    worst = max(rep.residuals.values())
    const = sharp_constraint_residuals(0.3, np.full(z.size, 0.5), cells, pg, weights=w)
    failed = set(const.violated(1e-6))
    ok = rep.feasible(1e-6) and {"P3", "P4"} <= failed
    return ok, f"oracle max residual {worst:.1e}; constant candidate violates {sorted(failed)}"


def c12_estimate_smoke():
    cfg = {"dgp": {"alpha": 0.1, "rho": 0.0, "n": 5000, "seed": 7, "mean": [2, 2, 0, 0, 0],
                   "x_coef0": [0.5, -0.3, 0.2], "x_coef1": [1.0, 0.2, -0.1], "x_pscore": [0.3, -0.2, 0.1]},
           "estimate": {"B": 250, "aggregates": ["ate", "att", "atu", "prte:0.05", "amte:0.1"]}}
    with tempfile.TemporaryDirectory() as d:
        d = Path(d)
        (d / "cfg.json").write_text(json.dumps(cfg))
        codes = [cli_main(["simulate", "--config", str(d / "cfg.json"), "--out", str(d / "cov.csv")]),
                 cli_main(["estimate", str(d / "cov.csv"), "--config", str(d / "cfg.json"),
                           "--out-json", str(d / "r.json"), "--out-csv", str(d / "r.csv")])]
        if any(codes):
            return False, f"exit codes {codes}"
        rep = json.loads((d / "r.json").read_text())
    need = {"ate", "att", "atu", "prte:0.05", "amte:0.1"}
    b = rep["bounds"]
    complete = need <= set(b) and all(
        all(b[k][f] is not None for f in ("lb", "ub", "ci_lo", "ci_hi")) and b[k]["ci_lo"] <= b[k]["ci_hi"]
        for k in need)
    ok = complete and rep["schema_version"] == 1 and rep["bootstrap"]["B"] == 250
    return ok, f"aggregates {sorted(b)}, bootstrap failures {rep['bootstrap']['failures']}"


CRITERIA = [
    (1, "closed-form oracles", c1_oracles, 1.0),
    (2, "mixture identity", c2_mixture, 1.0),
    (3, "propensity bounds vs grid search", c3_prop1, 5.0),
    (4, "figure 1 coverage and sign", c4_fig1, 30.0),
    (5, "alpha-bar invariance", c5_alpha_bar_invariance, None),
    (6, "figure 2 coverage and miss", c6_fig2, 5.0),
    (7, "figure 4 LIV bias", c7_fig4, None),
    (8, "LATE interval inside Ura interval", c8_late_vs_ura, 5.0),
    (9, "Monte Carlo symmetric region", c9_monte_carlo, 120.0),
    (10, "estimator suite", c10_estimator, None),
    (11, "sharp-constraint checker", c11_sharp, 5.0),
    (12, "estimate pipeline smoke test", c12_estimate_smoke, 600.0),
]


def evaluate(num, name, fn, budget):
    t0 = time.perf_counter()
    ok, detail = fn()
    dt = time.perf_counter() - t0
    in_time = budget is None or dt < budget
    ok = bool(ok and in_time)
    limit = f" / {budget:g} s" if budget else ""
    line = f"criterion {num:2d} {'PASS' if ok else 'FAIL'}  {name}: {detail} [{dt:.2f} s{limit}]"
    RESULTS[num] = line
    return ok, line


@pytest.mark.acceptance
@pytest.mark.parametrize("num,name,fn,budget", CRITERIA, ids=[f"c{c[0]}" for c in CRITERIA])
def test_criterion(num, name, fn, budget):
    ok, line = evaluate(num, name, fn, budget)
    print(line)
    assert ok, line


if __name__ == "__main__":
    results = [evaluate(*c) for c in CRITERIA]
    for _, line in results:
        print(line)
    sys.exit(0 if all(ok for ok, _ in results) else 1)
