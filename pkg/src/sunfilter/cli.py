"""Command-line interface.

Subcommands: ``simulate``, ``filter``, ``smooth``, ``predict``, ``marglik``,
``evaluate``, ``selftest``.  Configuration is a JSON document; tabular I/O is
RFC 4180 CSV with a mandatory header row.  Every flag can be overridden by an
environment variable named ``SUNFILTER_<FLAG>`` (upper case, dashes to
underscores).  Exit codes: 0 success, 1 usage/config/I-O error, 2
numeric or validation error.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import warnings

import numpy as np

from . import evaluate as ev
from . import filtering, samplers, smoothing
from .errors import ConfigError, SunFilterError, ValidationError
from .model import BinarySeries, ModelSpec, simulate as simulate_model
from .seeds import substream

USAGE_ERROR = 1
NUMERIC_ERROR = 2
ENV_PREFIX = "SUNFILTER_"


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def _write_csv(path: str, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([c if isinstance(c, str) else _fmt(c) for c in row])


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _cfg_array(cfg: dict, key: str, pointer: str):
    try:
        return np.asarray(cfg[key], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"not a numeric array: {exc}", pointer) from exc


def load_config(path: str, covariates: np.ndarray | None = None):
    """Parse and validate a model-specification JSON document.

    Unspecified blocks fall back to weakly informative defaults (zero prior
    mean, prior variance 3 per coordinate, state-noise variance 0.01, unit
    observation noise, identity transitions).  With
    ``"design": "intercept+covariates"`` the per-step design rows are built
    as (1, x_t...) from the covariate columns supplied alongside the data.
    Raises :class:`ConfigError` with a JSON-pointer path on schema problems.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("document must be a JSON object", "/")
    for key in ("m", "p", "n"):
        if key not in cfg:
            raise ConfigError("required field missing", f"/{key}")
        if not isinstance(cfg[key], int) or cfg[key] < 1:
            raise ConfigError("must be a positive integer", f"/{key}")
    m, p, n = cfg["m"], cfg["p"], cfg["n"]
    design = cfg.get("design", "explicit")
    if design not in ("explicit", "intercept+covariates"):
        raise ConfigError("must be 'explicit' or 'intercept+covariates'", "/design")

    if design == "intercept+covariates":
        if covariates is None:
            raise ConfigError("design needs covariate columns in the data file", "/design")
        k = covariates.shape[1]
        if p != k + 1:
            raise ConfigError(f"p={p} but intercept+covariates implies p={k + 1}", "/p")
        if covariates.shape[0] < n:
            raise ConfigError(f"covariates supply {covariates.shape[0]} rows, need n={n}",
                              "/n")
        if m != 1:
            raise ConfigError("intercept+covariates design is univariate (m=1)", "/m")
        F = np.stack([np.concatenate([[1.0], covariates[t]])[None, :] for t in range(n)])
    elif "F" in cfg:
        F = _cfg_array(cfg, "F", "/F")
    else:
        F = np.ones((m, p))

    V = _cfg_array(cfg, "V", "/V") if "V" in cfg else np.eye(m)
    G = _cfg_array(cfg, "G", "/G") if "G" in cfg else np.eye(p)
    W = _cfg_array(cfg, "W", "/W") if "W" in cfg else 0.01 * np.eye(p)
    a0 = _cfg_array(cfg, "a0", "/a0") if "a0" in cfg else np.zeros(p)
    P0 = _cfg_array(cfg, "P0", "/P0") if "P0" in cfg else 3.0 * np.eye(p)
    try:
        spec = ModelSpec.create(m, p, n, F=F, V=V, G=G, W=W, a0=a0, P0=P0)
    except ValidationError as exc:
        raise ConfigError(str(exc), "/") from exc
    options = {k: cfg[k] for k in cfg
               if k not in ("m", "p", "n", "F", "V", "G", "W", "a0", "P0", "design")}
    return spec, options


def read_series(path: str):
    """Read a binary series CSV: header ``t,y1..ym[,x1..xk]``."""
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"empty CSV file: {path}") from None
        rows = [r for r in reader if r]
    y_cols = [i for i, c in enumerate(header) if c.startswith("y")]
    x_cols = [i for i, c in enumerate(header) if c.startswith("x")]
    if not y_cols:
        raise ConfigError(f"no y columns in {path} (header: {header})")
    y = np.array([[float(r[i]) for i in y_cols] for r in rows])
    covs = (np.array([[float(r[i]) for i in x_cols] for r in rows])
            if x_cols else None)
    return BinarySeries(y=y.astype(int), covariates=covs)


def write_series(path: str, series: BinarySeries):
    m = series.m
    header = ["t"] + [f"y{j + 1}" for j in range(m)]
    k = series.covariates.shape[1] if series.covariates is not None else 0
    header += [f"x{j + 1}" for j in range(k)]
    rows = []
    for t in range(series.n):
        row = [t + 1] + [int(v) for v in series.y[t]]
        if k:
            row += list(series.covariates[t])
        rows.append(row)
    _write_csv(path, header, rows)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _load_spec_and_data(args, need_data: bool):
    covs = None
    series = None
    if getattr(args, "data", None):
        series = read_series(args.data)
        covs = series.covariates
    spec, options = load_config(args.config, covariates=covs)
    if need_data and series is None:
        raise ConfigError("this subcommand needs --data")
    if series is not None and series.m != spec.m:
        raise ConfigError(
            f"data has m={series.m} but the specification has m={spec.m}")
    return spec, options, series


def cmd_simulate(args) -> int:
    covs = read_series(args.data).covariates if args.data else None
    spec, _ = load_config(args.config, covariates=covs)
    _, series = simulate_model(spec, substream(args.seed, "simulate"))
    out = BinarySeries(y=series.y, covariates=covs[:spec.n] if covs is not None else None)
    write_series(args.out, out)
    print(f"wrote {spec.n}x{spec.m} series to {args.out}")
    return 0


def cmd_filter(args) -> int:
    spec, _, series = _load_spec_and_data(args, need_data=True)
    n = min(spec.n, series.n)
    seed = substream(args.seed, "filter")
    rows = []
    if args.method == "iid":
        for t in range(1, n + 1):
            sm = samplers.filtering_sampler(spec, series.y, args.R, substream(seed, t), t=t)
            mean = sm.values.mean(axis=0)
            var = sm.values.var(axis=0, ddof=1)
            rows.append([t, *mean, *var, float(args.R)])
    elif args.method in ("opf", "bpf"):
        run = samplers.optimal_pf if args.method == "opf" else samplers.bootstrap_pf
        for cloud in run(spec, series.y[:n], args.R, seed):
            d = cloud.values - cloud.mean()
            var = np.diag((d * cloud.weights[:, None]).T @ d)
            rows.append([cloud.t, *cloud.mean(), *var, cloud.ess])
    elif args.method == "rbpf":
        for step in samplers.rb_pf(spec, series.y[:n], args.R, seed):
            rows.append([step.t, *step.mean, *np.diag(step.cov), step.ess])
    elif args.method == "ekf":
        for step in samplers.ekf(spec, series.y[:n]):
            rows.append([step.t, *step.mean, *np.diag(step.cov), float("nan")])
    else:
        raise ConfigError(f"unknown method {args.method!r}")
    header = (["t"] + [f"mean{j + 1}" for j in range(spec.p)]
              + [f"var{j + 1}" for j in range(spec.p)] + ["ess"])
    _write_csv(args.out, header, rows)
    print(f"wrote per-step summaries ({args.method}) to {args.out}")
    return 0


def cmd_smooth(args) -> int:
    spec, _, series = _load_spec_and_data(args, need_data=True)
    n = min(spec.n, series.n)
    sm = samplers.smoothing_sampler(spec.with_horizon(n), series.y[:n], args.R,
                                    substream(args.seed, "smooth"))
    draws = sm.values  # (R, p*n)
    rows = []
    for t in range(n):
        for j in range(spec.p):
            col = draws[:, spec.p * t + j]
            q25, med, q75 = np.percentile(col, [25, 50, 75])
            rows.append([t + 1, j + 1, med, q25, q75])
    _write_csv(args.out, ["t", "coordinate", "median", "q25", "q75"], rows)
    print(f"wrote smoothing quantile bands to {args.out}")
    return 0


def cmd_predict(args) -> int:
    spec, _, series = _load_spec_and_data(args, need_data=True)
    n = min(spec.n, series.n)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", filtering.LatentDimensionWarning)
        probs, ses = filtering.predictive_series(
            spec, series.y[:n], seed=substream(args.seed, "predict"), rel_tol=args.cdf_tol)
    header = ["t"] + [f"p{j + 1}" for j in range(spec.m)] + [f"se{j + 1}" for j in range(spec.m)]
    rows = [[t + 1, *probs[t], *ses[t]] for t in range(n)]
    _write_csv(args.out, header, rows)
    print(f"wrote one-step-ahead probabilities to {args.out}")
    return 0


def cmd_marglik(args) -> int:
    spec, _, series = _load_spec_and_data(args, need_data=True)
    lo, hi, k = args.grid
    axis = np.logspace(np.log10(lo), np.log10(hi), int(k))
    if spec.p == 1:
        grid = [(w,) for w in axis]
    else:
        # grid over the first two diagonal entries; further coordinates reuse w2
        grid = [(w1,) + (w2,) * (spec.p - 1) for w1 in axis for w2 in axis]
    res = smoothing.marglik_grid(spec, series.y, grid, seed=substream(args.seed, "marglik"),
                                 threads=args.threads)
    header = [f"W{j + 1}{j + 1}" for j in range(spec.p)] + ["loglik", "std_error"]
    rows = [[*w, float(np.log(like)) if like > 0 else float("-inf"), se]
            for (w, like, se) in res.rows]
    _write_csv(args.out, header, rows)
    best = res.best
    print(f"wrote marginal-likelihood grid to {args.out}")
    print(f"argmax: W={best[0]} likelihood={best[1]:.6e}")
    return 0


def cmd_evaluate(args) -> int:
    spec, _, series = _load_spec_and_data(args, need_data=True)
    methods = args.method.split(",") if args.method else ["iid", "rbpf", "bpf", "ekf"]
    res = ev.ranking_experiment(spec, series.y, methods, args.replications, args.R,
                                substream(args.seed, "evaluate"), threads=args.threads)
    _write_csv(args.out + "_distances.csv",
               ["replication", "method", "coordinate", "distance", "rank"],
               list(res.rows()))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", filtering.LatentDimensionWarning)
        probs, _ = filtering.predictive_series(
            spec, series.y, seed=substream(args.seed, "evaluate", "predict"),
            rel_tol=args.cdf_tol)
    rep = ev.classification_report(probs[:, 0], series.y[:spec.n, 0])
    _write_csv(args.out + "_calibration.csv",
               ["bin_lo", "bin_hi", "count", "mean_prob", "frac_positive"], rep.bins)
    summary = {
        "methods": methods,
        "replications": args.replications,
        "R": args.R,
        "mean_distances": {mname: res.mean_distances[i].tolist()
                           for i, mname in enumerate(methods)},
        "rank1_share": {mname: res.rank1_share[i].tolist()
                        for i, mname in enumerate(methods)},
        "classification_rate": rep.rate,
    }
    with open(args.out + "_summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {args.out}_distances.csv, {args.out}_calibration.csv, "
          f"{args.out}_summary.json")
    print(f"classification rate: {rep.rate:.4f}")
    return 0


def cmd_selftest(args) -> int:
    from . import acceptance
    results = acceptance.run_all(fast=args.fast, criteria=args.criteria)
    failures = [r for r in results if not r.passed]
    for r in results:
        print(r.line())
    print(f"{len(results) - len(failures)}/{len(results)} criteria passed")
    return 0 if not failures else NUMERIC_ERROR


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(USAGE_ERROR)


def _env_default(flag: str, fallback, cast):
    raw = os.environ.get(ENV_PREFIX + flag.upper().replace("-", "_"))
    if raw is None:
        return fallback
    try:
        return cast(raw)
    except ValueError:
        return fallback


def _grid_spec(text: str):
    try:
        lo, hi, k = text.split(":")
        lo, hi, k = float(lo), float(hi), int(k)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"grid must look like 'lo:hi:k', got {text!r}") from None
    if lo <= 0 or hi <= lo or k < 1:
        raise argparse.ArgumentTypeError(f"invalid grid range {text!r}")
    return lo, hi, k


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sunfilter",
                     description="Exact inference and Monte Carlo tools for "
                                 "dynamic probit state-space models")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data_required=False, needs_R=False):
        p.add_argument("--config", required=True, help="model specification JSON")
        p.add_argument("--data", required=data_required, help="series CSV")
        p.add_argument("--out", required=True, help="output path (or prefix)")
        p.add_argument("--seed", type=int, default=_env_default("seed", 0, int))
        p.add_argument("--threads", type=int, default=_env_default("threads", None, int))
        p.add_argument("--cdf-tol", dest="cdf_tol", type=float,
                       default=_env_default("cdf_tol", 1e-4, float))
        if needs_R:
            p.add_argument("--R", type=int, default=_env_default("r", 10000, int))

    p = sub.add_parser("simulate", help="draw a synthetic series from the model")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("filter", help="streaming per-step state summaries")
    common(p, data_required=True, needs_R=True)
    p.add_argument("--method", choices=("iid", "opf", "bpf", "rbpf", "ekf"),
                   default=_env_default("method", "opf", str))
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("smooth", help="batch smoothing quantile bands")
    common(p, data_required=True, needs_R=True)
    p.set_defaults(func=cmd_smooth)

    p = sub.add_parser("predict", help="one-step-ahead event probabilities")
    common(p, data_required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("marglik", help="marginal-likelihood grid search over state variances")
    common(p, data_required=True)
    p.add_argument("--grid", type=_grid_spec, default=(1e-3, 1e1, 5),
                   help="log-spaced axis 'lo:hi:k' (default 1e-3:1e1:5)")
    p.set_defaults(func=cmd_marglik)

    p = sub.add_parser("evaluate", help="sampling-scheme ranking and classification report")
    common(p, data_required=True, needs_R=True)
    p.add_argument("--method", default=_env_default("method", "", str),
                   help="comma-separated methods (default iid,rbpf,bpf,ekf)")
    p.add_argument("--replications", type=int,
                   default=_env_default("replications", 20, int))
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("selftest", help="run the acceptance criteria")
    p.add_argument("--fast", action="store_true",
                   help="reduced sizes (smoke check, not the normative gate)")
    p.add_argument("--criteria", default=None,
                   help="comma-separated criterion numbers (default: all)")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else USAGE_ERROR
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except SunFilterError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return NUMERIC_ERROR


if __name__ == "__main__":
    sys.exit(main())
