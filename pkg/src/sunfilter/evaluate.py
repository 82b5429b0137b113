"""Evaluation harness: exact density grids, Wasserstein distances, method
ranking experiments, classification metrics and functional estimation."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.special import ndtr
from scipy.stats import wasserstein_distance

from .errors import ValidationError
from .gauss import SampleMatrix, chol_spd, mvn_cdf_batch
from .model import BinarySeries, ModelSpec
from .samplers import (bootstrap_pf, ekf, filtering_sampler, optimal_pf, rb_pf,
                       rbpf_marginal_draws, resample)
from .seeds import as_seed_sequence
from .smoothing import marginal_smoothing
from .sun import SunParams, _gaussian_logpdf, _skew_pieces, marginal as sun_marginal, mc_moments

__all__ = ["ClassificationReport", "GridDensity", "RankingResult", "classification_report",
           "functional_estimate", "grid_density", "ranking_experiment", "wasserstein1d"]

METHOD_NAMES = ("iid", "opf", "bpf", "rbpf", "ekf")


# ---------------------------------------------------------------------------
# exact density on a grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridDensity:
    """A one-dimensional density tabulated on an equally spaced grid,
    normalized so that sum(pdf) * spacing = 1."""

    grid: np.ndarray
    pdf: np.ndarray
    std_error: np.ndarray | None = None

    @property
    def spacing(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def cdf(self) -> np.ndarray:
        return np.cumsum(self.pdf) * self.spacing

    def as_weighted_sample(self):
        w = self.pdf * self.spacing
        return self.grid, w / w.sum()


def grid_density(params: SunParams, axis: int, grid, seed=0, *,
                 cdf_points: int = 512, max_cdf_evals: int = 256) -> GridDensity:
    """Exact one-dimensional marginal density evaluated on a grid.

    The skewing orthant probabilities are evaluated with one
    common-random-numbers batch.  With common randomness the estimated
    log-skew factor is a smooth function of the grid coordinate, so for
    latent dimensions above 2 it is evaluated on at most ``max_cdf_evals``
    points and interpolated (shape-preserving, on the log scale) onto the
    full grid.  The result is renormalized on the grid, so the
    (point-independent) normalizing constant is never needed.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ValidationError("grid must be a 1-D array with at least 2 points")
    marg = sun_marginal(params, [axis]) if params.p > 1 else params
    dev = (grid - marg.xi[0])[:, None]
    base = np.exp(_gaussian_logpdf(dev, marg.Omega))
    if marg.h == 0:
        vals, ses = base, np.zeros_like(base)
    else:
        slope, cond_cov = _skew_pieces(marg)
        if marg.h <= 2 or grid.size <= max_cdf_evals:
            limits = marg.gamma + dev @ slope.T
            num, num_se = mvn_cdf_batch(limits, cond_cov, seed=seed, n_points=cdf_points)
        else:
            idx = np.unique(np.linspace(0, grid.size - 1, max_cdf_evals).round().astype(int))
            limits = marg.gamma + dev[idx] @ slope.T
            sub, sub_se = mvn_cdf_batch(limits, cond_cov, seed=seed, n_points=cdf_points)
            with np.errstate(divide="ignore"):
                logv = np.log(np.clip(sub, 1e-300, None))
            interp = PchipInterpolator(dev[idx, 0], logv, extrapolate=True)
            num = np.exp(interp(dev[:, 0]))
            rel = np.zeros_like(sub)
            nz = sub > 0
            rel[nz] = sub_se[nz] / sub[nz]
            num_se = num * np.interp(dev[:, 0], dev[idx, 0], rel)
        vals = base * num
        ses = base * num_se
    dx = grid[1] - grid[0]
    z = vals.sum() * dx
    if z <= 0:
        raise ValidationError("density grid sums to zero; widen or shift the grid")
    return GridDensity(grid=grid, pdf=vals / z, std_error=ses / z)


def moment_grid(params: SunParams, axis: int, seed=0, *, n_points: int = 2000,
                span: float = 6.0, R: int = 20000) -> np.ndarray:
    """Equally spaced grid covering mean +- span posterior standard deviations
    of the selected coordinate (moments estimated by Monte Carlo)."""
    marg = sun_marginal(params, [axis]) if params.p > 1 else params
    mm = mc_moments(marg, R, seed)
    sd = math.sqrt(float(mm.cov[0, 0]))
    center = float(mm.mean[0])
    return np.linspace(center - span * sd, center + span * sd, n_points)


# ---------------------------------------------------------------------------
# Wasserstein distance
# ---------------------------------------------------------------------------

def _as_values_weights(x):
    if isinstance(x, GridDensity):
        return x.as_weighted_sample()
    if isinstance(x, SampleMatrix):
        x = x.values
    if isinstance(x, tuple) and len(x) == 2:
        v, w = np.asarray(x[0], dtype=float).ravel(), np.asarray(x[1], dtype=float).ravel()
        return v, w / w.sum()
    v = np.asarray(x, dtype=float).ravel()
    return v, None


def wasserstein1d(a, b) -> float:
    """Order-1 Wasserstein distance between one-dimensional distributions.

    Inputs may be sample arrays, (values, weights) pairs, or
    :class:`GridDensity` tables (quantile-function integration against the
    discretized density).
    """
    va, wa = _as_values_weights(a)
    vb, wb = _as_values_weights(b)
    if va.size == 0 or vb.size == 0:
        raise ValidationError("wasserstein1d needs nonempty inputs")
    return float(wasserstein_distance(va, vb, u_weights=wa, v_weights=wb))


# ---------------------------------------------------------------------------
# method ranking experiment
# ---------------------------------------------------------------------------

def _method_marginal(name: str, spec: ModelSpec, y, R: int, seed, resampling: str):
    """Terminal-time equal-weight particle set (R, p) for one method."""
    if name == "iid":
        return filtering_sampler(spec, y, R, seed).values
    if name in ("opf", "bpf"):
        run = optimal_pf if name == "opf" else bootstrap_pf
        cloud = run(spec, y, R, seed, resampling=resampling)[-1]
        return resample(cloud, resampling, as_seed_sequence(seed).spawn(1)[0]).values
    if name == "rbpf":
        step = rb_pf(spec, y, R, seed, resampling=resampling)[-1]
        return rbpf_marginal_draws(step, R, as_seed_sequence(seed).spawn(1)[0])
    if name == "ekf":
        step = ekf(spec, y)[-1]
        rng = np.random.Generator(np.random.PCG64(as_seed_sequence(seed)))
        L = chol_spd(step.cov)
        return step.mean + rng.standard_normal((R, spec.p)) @ L.T
    raise ValidationError(f"unknown method {name!r}; choose from {METHOD_NAMES}")


@dataclass
class RankingResult:
    """Distances, ranks and summaries of a replicated sampling-scheme comparison."""

    methods: list
    distances: np.ndarray   # (replications, methods, p)
    ranks: np.ndarray       # (replications, methods, p); 1 = closest
    grids: list             # per-coordinate GridDensity references
    mean_distances: np.ndarray = field(init=False)  # (methods, p)
    rank1_share: np.ndarray = field(init=False)     # (methods, p)

    def __post_init__(self):
        self.mean_distances = self.distances.mean(axis=0)
        self.rank1_share = (self.ranks == 1).mean(axis=0)

    def rows(self):
        """Long-format rows: (replication, method, coordinate, distance, rank)."""
        reps, nm, p = self.distances.shape
        for r in range(reps):
            for i, name in enumerate(self.methods):
                for j in range(p):
                    yield (r, name, j, float(self.distances[r, i, j]),
                           int(self.ranks[r, i, j]))


def ranking_experiment(spec: ModelSpec, y, methods, replications: int, R: int, seed,
                       *, t: int | None = None, grid_points: int = 2000,
                       grid_span: float = 6.0, resampling: str = "multinomial",
                       threads: int | None = None) -> RankingResult:
    """Replicated comparison of sampling schemes at the terminal time.

    The data are fixed; each replication reruns every method with a fresh
    derived substream and measures the Wasserstein distance of its terminal
    state marginal to the exact density tabulated on a grid.  Particle
    methods default to plain multinomial resampling here (the textbook SISR
    scheme this comparison protocol assumes).  Deterministic given the
    master seed.
    """
    methods = list(methods)
    if not methods:
        raise ValidationError("methods list must be nonempty")
    for name in methods:
        if name not in METHOD_NAMES:
            raise ValidationError(f"unknown method {name!r}; choose from {METHOD_NAMES}")
    Y = np.atleast_2d(np.asarray(y.y if isinstance(y, BinarySeries) else y))
    t = Y.shape[0] if t is None else int(t)
    sub = spec.with_horizon(t)
    Yt = Y[:t]
    root = as_seed_sequence(seed)
    s_grid, s_reps = root.spawn(2)
    exact = marginal_smoothing(sub, Yt, t)
    grids = []
    for j, s in zip(range(spec.p), s_grid.spawn(spec.p)):
        g_axis, g_dens = s.spawn(2)
        grid = moment_grid(exact, j, g_axis, n_points=grid_points, span=grid_span)
        grids.append(grid_density(exact, j, grid, seed=g_dens))

    rep_streams = s_reps.spawn(replications)

    def one_rep(args):
        r, stream = args
        method_streams = stream.spawn(len(methods))
        d = np.empty((len(methods), spec.p))
        for i, name in enumerate(methods):
            vals = _method_marginal(name, sub, Yt, R, method_streams[i], resampling)
            for j in range(spec.p):
                d[i, j] = wasserstein1d(vals[:, j], grids[j])
        return r, d

    dist = np.empty((replications, len(methods), spec.p))
    tasks = list(enumerate(rep_streams))
    if threads is not None and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            for r, d in ex.map(one_rep, tasks):
                dist[r] = d
    else:
        for r, d in map(one_rep, tasks):
            dist[r] = d
    order = np.argsort(dist, axis=1)
    ranks = np.empty_like(order)
    reps_idx = np.arange(replications)[:, None, None]
    coord_idx = np.arange(spec.p)[None, None, :]
    ranks[reps_idx, order, coord_idx] = np.arange(1, len(methods) + 1)[None, :, None]
    return RankingResult(methods=methods, distances=dist, ranks=ranks, grids=grids)


# ---------------------------------------------------------------------------
# classification metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClassificationReport:
    """One-step-ahead classification rate and a decile calibration table."""

    rate: float
    bins: list  # rows: (lo, hi, count, mean_prob, frac_positive)


def classification_report(probs, y) -> ClassificationReport:
    """Threshold-0.5 classification of predicted probabilities against
    realized outcomes; ties (probability exactly 0.5) classify as 1."""
    p = np.asarray(probs, dtype=float).ravel()
    yy = np.asarray(y).ravel()
    if p.size != yy.size:
        raise ValidationError(f"length mismatch: {p.size} probabilities, {yy.size} outcomes")
    if np.any((p < 0) | (p > 1)):
        raise ValidationError("probabilities must lie in [0, 1]")
    pred = (p >= 0.5).astype(int)
    rate = float(np.mean(pred == yy))
    edges = np.linspace(0.0, 1.0, 11)
    rows = []
    for k in range(10):
        lo, hi = edges[k], edges[k + 1]
        mask = (p >= lo) & (p < hi) if k < 9 else (p >= lo) & (p <= hi)
        cnt = int(mask.sum())
        rows.append((float(lo), float(hi), cnt,
                     float(p[mask].mean()) if cnt else float("nan"),
                     float(yy[mask].mean()) if cnt else float("nan")))
    return ClassificationReport(rate=rate, bins=rows)


# ---------------------------------------------------------------------------
# functional estimation
# ---------------------------------------------------------------------------

def _jackknife_mean_se(vals: np.ndarray):
    R = vals.size
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(R))


def functional_estimate(samples, g: str, *, coord: int = 0, f=None, v: float = 1.0,
                        c: float = 0.0):
    """Monte Carlo estimate of a registered functional with jackknife errors.

    Registered names: ``mean``, ``variance`` (of one coordinate),
    ``probit`` (average of Phi(f . theta / sqrt(v))), and ``indicator``
    (frequency of theta_coord > c).
    """
    x = samples.values if isinstance(samples, SampleMatrix) else np.atleast_2d(np.asarray(samples, dtype=float))
    R = x.shape[0]
    if R < 2:
        raise ValidationError("functional estimation needs at least 2 samples")
    if g == "mean":
        return _jackknife_mean_se(x[:, coord])
    if g == "variance":
        d = x[:, coord] - x[:, coord].mean()
        s2 = d @ d
        est = s2 / (R - 1)
        loo = (s2 - d ** 2 * R / (R - 1)) / (R - 2)
        se = math.sqrt(max((R - 1) / R * np.sum((loo - loo.mean()) ** 2), 0.0))
        return float(est), se
    if g == "probit":
        if f is None:
            raise ValidationError("probit functional needs the design row f")
        fv = np.atleast_1d(np.asarray(f, dtype=float))
        return _jackknife_mean_se(ndtr(x @ fv / math.sqrt(v)))
    if g == "indicator":
        return _jackknife_mean_se((x[:, coord] > c).astype(float))
    raise ValidationError(f"unregistered functional {g!r}")
