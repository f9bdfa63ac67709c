"""Command-line front end.

Exit codes: 0 success, 2 invalid flags or config, 3 I/O failure, 4 the data
cannot support the computation (including too many failed bootstrap draws).
Intervals that are empty or diverge are written as ``EMPTY`` / ``UNBOUNDED``.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .model import (
    DEFAULT_MEAN,
    LATENT_COLUMNS,
    DgpSpec,
    IdentConfig,
    InsufficientDataError,
    Interval,
    MisclassSpec,
    Sample,
    default_cov,
    nde_cov,
    validate,
)
from .probkit import Grid, KernelKind

SCHEMA_VERSION = 1
EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_DATA = 0, 2, 3, 4
EMPTY, UNBOUNDED = "EMPTY", "UNBOUNDED"

CONFIG_KEYS = {
    "dgp": {"alpha", "mechanism", "rho", "n", "seed", "mean", "cov", "pscore_map",
            "x_coef0", "x_coef1", "x_pscore"},
    "ident": {"alpha_bar", "alpha_grid_size", "p_grid", "bandwidth", "kernel", "fd_step",
              "y_bins", "trim_delta", "n_cells"},
    "estimate": {"covariates", "B", "level", "aggregates", "first_stage", "seed", "degree"},
}


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


# ------------------------------------------------------------------ helpers


def fmt(v):
    """Shortest round-trip text for a number; blank for missing values."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return ""
    if math.isinf(v):
        return UNBOUNDED
    return repr(v)


def interval_cells(iv: Interval):
    if iv.empty:
        return EMPTY, EMPTY
    return fmt(iv.lo), fmt(iv.hi)


def write_csv(path, header, rows):
    """``rows`` are dicts; missing keys become blanks."""
    try:
        fh = sys.stdout if path in (None, "-") else open(path, "w", newline="", encoding="utf-8")
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {path}: {exc}") from exc
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([row.get(h, "") for h in header])
    finally:
        if fh is not sys.stdout:
            fh.close()


def write_json(path, obj):
    text = json.dumps(obj, indent=2, sort_keys=False, allow_nan=False)
    if path in (None, "-"):
        sys.stdout.write(text + "\n")
        return
    try:
        Path(path).write_text(text + "\n", encoding="utf-8")
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {path}: {exc}") from exc


def load_config(path):
    if path is None:
        return {"dgp": {}, "ident": {}, "estimate": {}}
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_USAGE, f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise CliError(EXIT_USAGE, "config must be a JSON object")
    unknown = set(raw) - set(CONFIG_KEYS)
    if unknown:
        raise CliError(EXIT_USAGE, f"unknown config section(s): {sorted(unknown)}")
    out = {}
    for section, allowed in CONFIG_KEYS.items():
        body = raw.get(section, {})
        if not isinstance(body, dict):
            raise CliError(EXIT_USAGE, f"config section {section!r} must be an object")
        bad = set(body) - allowed
        if bad:
            raise CliError(EXIT_USAGE, f"unknown key(s) in {section!r}: {sorted(bad)}")
        out[section] = dict(body)
    return out


def resolve_seed(flag, config_value=None):
    if flag is not None:
        return int(flag)
    if config_value is not None:
        return int(config_value)
    env = os.environ.get("MTE_SEED")
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError as exc:
            raise CliError(EXIT_USAGE, f"MTE_SEED is not an integer: {env!r}") from exc
    return 0


def resolve_threads(n):
    n = int(n)
    if n < 0:
        raise CliError(EXIT_USAGE, "--threads must be >= 0")
    return (os.cpu_count() or 1) if n == 0 else n


def parse_grid(text):
    """``lo:hi:n`` or a comma-separated list; a JSON list gives the points."""
    if isinstance(text, (list, tuple)):
        return Grid([float(v) for v in text])
    if ":" in text:
        lo, hi, n = text.split(":")
        return Grid.linspace(float(lo), float(hi), int(n))
    return Grid([float(v) for v in text.split(",") if v.strip()])


def meta_path(data_path):
    return Path(data_path).with_suffix(".meta.json")


def read_data(path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read {path}: {exc}") from exc
    if not rows:
        raise CliError(EXIT_USAGE, f"{path} is empty; a header row is required")
    header = [h.strip() for h in rows[0]]
    for col in ("y", "d", "z"):
        if col not in header:
            raise CliError(EXIT_USAGE, f"{path} lacks required column {col!r}")
    try:
        arr = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float).reshape(-1, len(header))
    except ValueError as exc:
        raise CliError(EXIT_USAGE, f"{path} has a non-numeric or ragged row: {exc}") from exc
    cols = {h: arr[:, i] for i, h in enumerate(header)}
    xcols = [h for h in header if h.startswith("x") and h[1:].isdigit()]
    x = np.column_stack([cols[c] for c in xcols]) if xcols else None
    try:
        sample = Sample(cols["y"], cols["d"], cols["z"], x)
    except ValueError as exc:
        raise CliError(EXIT_USAGE, f"{path}: {exc}") from exc
    return sample, cols, xcols


def read_meta(data_path):
    """The simulation spec recorded next to ``data_path``, or None."""
    mp = meta_path(data_path)
    if not mp.exists():
        return None
    try:
        meta = json.loads(mp.read_text(encoding="utf-8"))
        return dgp_from_dict(meta["spec"])
    except (OSError, KeyError, ValueError, TypeError):
        return None


# --------------------------------------------------------------- simulation


def dgp_from_dict(d):
    d = dict(d)
    rho = float(d.get("rho", 0.0))
    misclass = MisclassSpec(float(d.get("alpha", 0.0)), d.get("mechanism", "copula"), rho)
    cov = d.get("cov", "default")
    if cov == "default":
        cov = default_cov(rho)
    elif cov == "nde":
        cov = nde_cov(rho)
    elif isinstance(cov, str):
        raise ValueError(f"unknown cov preset {cov!r}")
    return DgpSpec(misclass, n=int(d.get("n", 10_000)), seed=int(d.get("seed", 0)),
                   mean=tuple(d.get("mean", DEFAULT_MEAN)), cov=tuple(map(tuple, np.asarray(cov, float))),
                   pscore_map=d.get("pscore_map", "probit2"), x_coef0=tuple(d.get("x_coef0", ())),
                   x_coef1=tuple(d.get("x_coef1", ())), x_pscore=tuple(d.get("x_pscore", ())))


def dgp_to_dict(spec: DgpSpec):
    return {"alpha": spec.misclass.alpha, "mechanism": spec.misclass.mechanism.value,
            "rho": spec.misclass.rho, "n": spec.n, "seed": spec.seed, "mean": list(spec.mean),
            "cov": [list(r) for r in spec.cov], "pscore_map": spec.pscore_map,
            "x_coef0": list(spec.x_coef0), "x_coef1": list(spec.x_coef1),
            "x_pscore": list(spec.x_pscore)}


def cmd_simulate(args):
    from .simulator import sample_dgp

    cfg = load_config(args.config)["dgp"]
    for key in ("alpha", "rho", "n", "mechanism", "cov"):
        val = getattr(args, key)
        if val is not None:
            cfg[key] = val
    cfg["seed"] = resolve_seed(args.seed, cfg.get("seed"))
    try:
        spec = dgp_from_dict(cfg)
    except (ValueError, TypeError) as exc:
        raise CliError(EXIT_USAGE, f"invalid simulation config: {exc}") from exc
    sample = sample_dgp(spec, latent=args.latent, threads=resolve_threads(args.threads))
    header = ["y", "d", "z"] + [f"x{j + 1}" for j in range(sample.n_covariates)]
    cols = [sample.y, sample.d, sample.z] + ([sample.x[:, j] for j in range(sample.n_covariates)])
    if args.latent:
        header += list(LATENT_COLUMNS)
        cols += [sample.latent[c] for c in LATENT_COLUMNS]
    ints = {"d", "dstar", "eps"}
    kinds = [h in ints for h in header]
    try:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            fh.write(",".join(header) + "\n")
            for row in zip(*cols):
                fh.write(",".join(str(int(v)) if k else repr(float(v)) for v, k in zip(row, kinds)) + "\n")
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {args.out}: {exc}") from exc
    write_json(meta_path(args.out), {"schema_version": SCHEMA_VERSION, "version": __version__,
                                     "seed": spec.seed, "spec": dgp_to_dict(spec)})
    return EXIT_OK


# ----------------------------------------------------------- identification


def ident_config(args, section):
    kw = {}
    mapping = {"alpha_bar": "alpha_bar", "alpha_grid": "alpha_grid_size", "fd_step": "fd_step",
               "y_bins": "y_bins", "bandwidth": "bandwidth", "kernel": "kernel",
               "trim_delta": "trim_delta"}
    for key in ("alpha_bar", "alpha_grid_size", "fd_step", "y_bins", "bandwidth", "kernel", "trim_delta"):
        if key in section:
            kw[key] = section[key]
    for flag, key in mapping.items():
        val = getattr(args, flag, None)
        if val is not None:
            kw[key] = val
    grid = getattr(args, "p_grid", None) or section.get("p_grid")
    try:
        if grid is not None:
            kw["p_grid"] = parse_grid(grid)
        if "kernel" in kw:
            kw["kernel"] = KernelKind.parse(kw["kernel"])
        return validate(IdentConfig(**kw))
    except (ValueError, TypeError) as exc:
        raise CliError(EXIT_USAGE, f"invalid identification settings: {exc}") from exc


def _truth_fn(spec):
    """MTE(p) = E[beta | V = p] for a simulated design (covariates at zero)."""
    from .probkit import std_normal_quantile

    if spec is None:
        return None
    mean_beta, cov_beta_v = spec.mean[0], spec.cov_matrix[0, 2]

    def truth(p):
        return mean_beta + cov_beta_v * std_normal_quantile(p)

    return truth


def _curve_rows(curve, truth=None, extra_cols=(), p=None):
    rows = []
    p = curve.at.points if p is None else p
    for i, pv in enumerate(p):
        lb, ub = interval_cells(curve.intervals[i])
        row = {"p": fmt(pv), "lb": lb, "ub": ub}
        row["liv"] = fmt(curve.liv[i]) if curve.liv is not None else ""
        if truth is not None:
            row["truth"] = fmt(truth[i])
        for name, values in extra_cols:
            row[name] = fmt(values[i])
        rows.append(row)
    return rows


def cmd_identify(args):
    from .bounds import cell_stats, late_bounds_discrete, mte_bound_curve, mte_bounds_by_cell

    config = load_config(args.config)
    section = config["ident"]
    cfg = ident_config(args, section)
    sample, _, _ = read_data(args.data)
    spec = read_meta(args.data)
    truth_fn = _truth_fn(spec)
    n_cells = args.n_cells or section.get("n_cells", 20)

    if args.mode == "symmetric":
        from .estimator import symmetric_region_from_data

        if cfg.alpha_bar >= 0.5:
            raise CliError(EXIT_USAGE, "symmetric mode needs --alpha-bar below 1/2")
        curve = symmetric_region_from_data(sample.y, sample.d, sample.z, cfg, args.first_stage,
                                           truth=truth_fn)
        alphas = curve.extra["alphas"]
        members = curve.extra["members"]
        extra = [(f"mte_alpha={fmt(a)}", members[j]) for j, a in enumerate(alphas)]
        header = ["p", "lb", "ub", "liv"] + (["truth"] if truth_fn else []) + [e[0] for e in extra]
        write_csv(args.out, header, _curve_rows(curve, curve.truth, extra))
        if args.report:
            write_json(args.report, {
                "schema_version": SCHEMA_VERSION, "mode": "symmetric",
                "alpha_hat": curve.extra["alpha_hat"], "q_min": curve.extra["q_min"],
                "q_max": curve.extra["q_max"], "first_stage_coef": curve.extra["first_stage_coef"],
                "alpha_grid": [float(a) for a in alphas],
                "identified_alphas": [float(a) for a in curve.extra["identified_alphas"]],
            })
        return EXIT_OK

    if args.mode == "discrete-late":
        levels = np.unique(sample.z)
        if levels.size < 2 or levels.size > 20:
            raise CliError(EXIT_USAGE, f"discrete-late needs 2..20 instrument levels, found {levels.size}")
        cells = cell_stats(sample, y_bins=cfg.y_bins)
        order = sorted(range(len(cells)), key=lambda i: cells[i].pD1)
        rows = []
        for ell in range(1, len(cells)):
            lb = late_bounds_discrete(cells, ell, cfg.alpha_bar)
            lo_c, hi_c = cells[order[ell - 1]], cells[order[ell]]
            late = interval_cells(lb.late)
            pdiff = interval_cells(lb.pdiff)
            ura = interval_cells(lb.ura_late)
            rows.append({"ell": ell, "z_lo": fmt(lo_c.z_value), "z_hi": fmt(hi_c.z_value),
                         "lb": late[0], "ub": late[1], "pdiff_lb": pdiff[0], "pdiff_ub": pdiff[1],
                         "ura_lb": ura[0], "ura_ub": ura[1], "ura_pdiff_lb": fmt(lb.ura_pdiff.lo)})
        write_csv(args.out, ["ell", "z_lo", "z_hi", "lb", "ub", "pdiff_lb", "pdiff_ub",
                             "ura_lb", "ura_ub", "ura_pdiff_lb"], rows)
        return EXIT_OK

    lb_kind = "tv" if args.mode == "prop2" else "tv_y"
    cells = cell_stats(sample, y_bins=cfg.y_bins, n_cells=int(n_cells))
    pscore = spec.pscore if (spec is not None and not spec.n_covariates) else None
    index = args.index
    if index == "auto":
        index = "grid" if pscore is not None else "cell"
    if index == "grid":
        try:
            curve = mte_bound_curve(cells, cfg, pscore=pscore, lb_kind=lb_kind, truth=truth_fn)
        except InsufficientDataError:
            raise
        except ValueError as exc:
            raise CliError(EXIT_USAGE, f"{exc}; try --index cell") from exc
        header = ["p", "lb", "ub", "liv"] + (["truth"] if truth_fn else [])
        write_csv(args.out, header, _curve_rows(curve, curve.truth))
        return EXIT_OK
    curve = mte_bounds_by_cell(cells, cfg, lb_kind=lb_kind, pscore=pscore)
    ex = curve.extra
    truth = None
    if truth_fn is not None:
        truth = truth_fn(np.clip(spec.pscore(curve.at.points), 1e-12, 1 - 1e-12))
    rows = _curve_rows(curve, truth, [("z", curve.at.points), ("q", ex["q"]), ("p_lo", ex["p_lo"]),
                                      ("p_hi", ex["p_hi"])], p=ex["p"])
    header = ["p", "lb", "ub", "liv"] + (["truth"] if truth is not None else []) + ["z", "q", "p_lo", "p_hi"]
    write_csv(args.out, header, rows)
    return EXIT_OK


# --------------------------------------------------------------- estimation


def cmd_estimate(args):
    from .estimator import MisclassifiedMTE

    config = load_config(args.config)
    est_cfg = config["estimate"]
    cfg = ident_config(args, config["ident"])
    sample, cols, xcols = read_data(args.data)

    cov_spec = args.covariates if args.covariates is not None else est_cfg.get("covariates", "all")
    if isinstance(cov_spec, str):
        names = xcols if cov_spec == "all" else [] if cov_spec in ("", "none") else \
            [c.strip() for c in cov_spec.split(",") if c.strip()]
    else:
        names = list(cov_spec)
    missing = [c for c in names if c not in cols]
    if missing:
        raise CliError(EXIT_USAGE, f"covariate column(s) not in data: {missing}")
    X = np.column_stack([cols[c] for c in names]) if names else None

    aggs = args.aggregates or est_cfg.get("aggregates", "ate,att,atu")
    if isinstance(aggs, str):
        aggs = [a for a in aggs.split(",") if a.strip()]
    B = args.B if args.B is not None else int(est_cfg.get("B", 250))
    level = args.level if args.level is not None else float(est_cfg.get("level", 0.95))
    first_stage = args.first_stage or est_cfg.get("first_stage", "logit")
    degree = int(est_cfg.get("degree", 2))
    seed = resolve_seed(args.seed, est_cfg.get("seed"))
    if B != 0 and B < 2:
        raise CliError(EXIT_USAGE, "--B must be 0 or at least 2")
    if not 0 < level < 1:
        raise CliError(EXIT_USAGE, "--level must lie in (0, 1)")

    model = MisclassifiedMTE(alpha_bar=cfg.alpha_bar, alpha_grid_size=cfg.alpha_grid_size,
                             p_grid=cfg.p_grid, bandwidth=cfg.bandwidth, kernel=cfg.kernel.value,
                             degree=degree, trim_delta=cfg.trim_delta, first_stage=first_stage,
                             aggregates=tuple(aggs), n_boot=B, level=level, random_state=seed,
                             threads=resolve_threads(args.threads))

    model.fit(X, sample.y, sample.d, sample.z)
    report = {"schema_version": SCHEMA_VERSION, "version": __version__, "n": len(sample),
              "covariates": names, "seed": seed, **model.report()}
    failures = model.bootstrap_.failures if model.bootstrap_ is not None else 0
    write_json(args.out_json, report)

    if args.out_csv:
        grid = model.config_.p_grid.points
        rows = []
        for j, a in enumerate(model.alphas_):
            for i, p in enumerate(grid):
                row = {"curve": f"alpha={fmt(a)}", "p": fmt(p), "lb": fmt(model.mte_[j, i]),
                       "ub": fmt(model.mte_[j, i])}
                if model.bootstrap_ is not None:
                    row["ci_lo"] = fmt(model.mte_band_[0][j, i])
                    row["ci_hi"] = fmt(model.mte_band_[1][j, i])
                rows.append(row)
        env = model.predict(grid)
        for i, p in enumerate(grid):
            row = {"curve": "union", "p": fmt(p), "lb": fmt(env[i, 0]), "ub": fmt(env[i, 1])}
            if model.bootstrap_ is not None:
                row["ci_lo"] = fmt(model.mte_union_band_[0][i])
                row["ci_hi"] = fmt(model.mte_union_band_[1][i])
            rows.append(row)
        write_csv(args.out_csv, ["curve", "p", "lb", "ub", "ci_lo", "ci_hi"], rows)

    if B and failures > 0.1 * B:
        raise CliError(EXIT_DATA, f"{failures} of {B} bootstrap draws failed")
    return EXIT_OK


# -------------------------------------------------------------- replication


def cmd_replicate(args):
    from . import replicate as rep

    grid = parse_grid(args.p_grid) if args.p_grid else None
    seed = resolve_seed(args.seed)
    threads = resolve_threads(args.threads)
    if args.figure == "fig1":
        rows = rep.fig1_rows(grid, args.mc_n, seed, threads)
        keys = ["alpha", "rho"]
    elif args.figure == "fig2":
        rows = rep.fig2_rows(grid, args.alpha_grid, args.mc_n, seed, threads)
        keys = ["alpha", "alpha_bar"]
    else:
        rows = rep.fig4_rows(grid, args.mc_n, seed, threads)
        keys = ["alpha", "rho"]
    out_rows = []
    for r in rows:
        row = {k: fmt(r[k]) for k in keys + ["p"]}
        row["lb"], row["ub"] = interval_cells(r["bounds"])
        for k in ("liv", "truth", "liv_closed_form"):
            if k in r:
                row[k] = fmt(r[k])
        if "mc_bounds" in r:
            row["mc_lb"], row["mc_ub"] = interval_cells(r["mc_bounds"])
        out_rows.append(row)
    header = keys + ["p", "lb", "ub"]
    for k in ("liv", "truth", "liv_closed_form", "mc_lb", "mc_ub"):
        if any(k in r for r in out_rows):
            header.append(k)
    try:
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot create {args.out_dir}: {exc}") from exc
    write_csv(Path(args.out_dir) / f"{args.figure}.csv", header, out_rows)
    return EXIT_OK


# ------------------------------------------------------------------ parser


def _ident_flags(p):
    p.add_argument("--alpha-bar", type=float, help="upper bound on the misclassification rate")
    p.add_argument("--alpha-grid", type=int, help="number of candidate rates in [0, alpha-bar]")
    p.add_argument("--p-grid", help="evaluation grid, lo:hi:n or comma list")
    p.add_argument("--bandwidth", type=float)
    p.add_argument("--kernel", choices=[k.value for k in KernelKind])
    p.add_argument("--trim-delta", type=float)


def build_parser():
    parser = argparse.ArgumentParser(prog="mte-misclass",
                                     description="Bounds on marginal treatment effects with a misreported treatment.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="draw a synthetic dataset")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--alpha", type=float)
    s.add_argument("--rho", type=float)
    s.add_argument("--mechanism", choices=["copula", "threshold_low", "threshold_high"])
    s.add_argument("--cov", choices=["default", "nde"])
    s.add_argument("--latent", action="store_true", help="also write the unobserved columns")
    s.add_argument("--threads", type=int, default=1, help="0 = all cores")
    s.set_defaults(func=cmd_simulate)

    i = sub.add_parser("identify", help="identified bounds from a dataset")
    i.add_argument("data")
    i.add_argument("--mode", choices=["prop2", "robust", "symmetric", "discrete-late"], default="prop2")
    i.add_argument("--config")
    _ident_flags(i)
    i.add_argument("--fd-step", type=float)
    i.add_argument("--y-bins", type=int)
    i.add_argument("--n-cells", type=int)
    i.add_argument("--index", choices=["auto", "grid", "cell"], default="auto",
                   help="rows per p-grid point or per instrument cell")
    i.add_argument("--first-stage", choices=["logit", "misclassified-logit"], default="misclassified-logit")
    i.add_argument("--report", help="symmetric mode: write first-stage diagnostics as JSON")
    i.add_argument("--out", help="CSV path (default: stdout)")
    i.add_argument("--threads", type=int, default=1)
    i.set_defaults(func=cmd_identify)

    e = sub.add_parser("estimate", help="MTE and aggregate bounds with bootstrap intervals")
    e.add_argument("data")
    e.add_argument("--config")
    _ident_flags(e)
    e.add_argument("--covariates", help="comma list, 'all' (default) or 'none'")
    e.add_argument("--B", type=int, help="bootstrap replications (0 to skip)")
    e.add_argument("--level", type=float)
    e.add_argument("--aggregates", help="e.g. ate,att,atu,prte:0.05,amte:0.1,late:0.2-0.6")
    e.add_argument("--first-stage", choices=["logit", "misclassified-logit"])
    e.add_argument("--seed", type=int)
    e.add_argument("--threads", type=int, default=1)
    e.add_argument("--out-json", help="report path (default: stdout)")
    e.add_argument("--out-csv", help="MTE curves per candidate rate")
    e.set_defaults(func=cmd_estimate)

    r = sub.add_parser("replicate", help="plot data for the numerical illustrations")
    r.add_argument("figure", choices=["fig1", "fig2", "fig4"])
    r.add_argument("--out-dir", default=".")
    r.add_argument("--p-grid")
    r.add_argument("--alpha-grid", type=int, default=15)
    r.add_argument("--mc-n", type=int, help="add a Monte Carlo overlay from n simulated rows")
    r.add_argument("--seed", type=int)
    r.add_argument("--threads", type=int, default=1)
    r.set_defaults(func=cmd_replicate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except InsufficientDataError as exc:
        print(f"error: insufficient data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
