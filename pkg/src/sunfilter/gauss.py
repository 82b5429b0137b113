"""Gaussian computational substrate.

Two workhorses live here:

* ``mvn_cdf`` evaluates orthant probabilities ``P(Z <= gamma)`` for a centered
  multivariate normal.  One and two dimensions use deterministic closed-form /
  quadrature paths (reported standard error 0); higher dimensions use a
  separation-of-variables transform with variable reordering, integrated by
  randomized quasi-Monte Carlo over a fixed number of independent shifts, so a
  Monte Carlo standard error is always reported.

* ``tmvn_sample`` draws exact i.i.d. samples from a centered multivariate
  normal restricted to ``{u : u > lower}`` via exponentially tilted rejection
  sampling.  Above a configurable dimension cap an explicitly flagged Gibbs
  fallback (non-i.i.d.) is available.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg.lapack import dpotrf
from scipy.special import log_ndtr, ndtr, ndtri

from .errors import (
    ConvergenceError,
    DimensionError,
    InfeasibleRegionError,
    MatrixError,
    NumericalError,
    ValidationError,
)
from .seeds import as_seed_sequence, generator

__all__ = [
    "OrthantProblem",
    "SampleMatrix",
    "bvn_cdf",
    "chol_spd",
    "ln_normal_prob",
    "mvn_cdf",
    "mvn_cdf_batch",
    "orthant_prob",
    "tmvn_sample",
    "trandn",
]

_SQRT_2PI = math.sqrt(2.0 * math.pi)
_LOG_TINY = math.log(1e-300)


# ---------------------------------------------------------------------------
# linear algebra helpers
# ---------------------------------------------------------------------------

def chol_spd(M: np.ndarray, *, sym_tol: float = 1e-8) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive-definite matrix.

    Raises :class:`MatrixError` naming the failing pivot when the matrix is
    not positive definite within tolerance.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise MatrixError(f"expected a square matrix, got shape {M.shape}")
    n = M.shape[0]
    if n == 0:
        return M.reshape(0, 0).copy()
    if not np.all(np.isfinite(M)):
        raise MatrixError("matrix has non-finite entries")
    scale = max(1.0, float(np.abs(M).max()))
    if not np.allclose(M, M.T, rtol=0.0, atol=sym_tol * scale):
        raise MatrixError("matrix is not symmetric")
    c, info = dpotrf(M, lower=1, clean=1, overwrite_a=0)
    if info > 0:
        raise MatrixError(f"matrix is not positive definite (pivot {info} of {n} failed)")
    if info < 0:
        raise MatrixError(f"invalid argument {-info} passed to Cholesky routine")
    return c


def _as_correlation(Gamma: np.ndarray):
    """Split a covariance into (scale vector, correlation matrix)."""
    d = np.diag(Gamma).copy()
    if np.any(d <= 0):
        raise MatrixError("matrix has a non-positive diagonal entry")
    s = np.sqrt(d)
    return s, Gamma / np.outer(s, s)


# ---------------------------------------------------------------------------
# univariate truncated-normal primitives
# ---------------------------------------------------------------------------

def ln_normal_prob(a, b):
    """log P(a < Z < b) for standard normal Z, accurate in both tails.

    Accepts +-inf limits; broadcasting applies.
    """
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    a = np.atleast_1d(a)
    b = np.atleast_1d(b)
    p = np.full(a.shape, -np.inf)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        upper = a > 0  # both limits in the upper tail
        if np.any(upper):
            pa = log_ndtr(-a[upper])
            pb = log_ndtr(-b[upper])
            p[upper] = pa + np.log1p(-np.exp(pb - pa))
        lower = b < 0  # both limits in the lower tail
        if np.any(lower):
            pa = log_ndtr(a[lower])
            pb = log_ndtr(b[lower])
            p[lower] = pb + np.log1p(-np.exp(pa - pb))
        mid = ~(upper | lower)
        if np.any(mid):
            pa = ndtr(a[mid])
            pb = ndtr(-b[mid])
            p[mid] = np.log1p(-pa - pb)
    return p


def _ntail(rng: np.random.Generator, lb: np.ndarray, ub: np.ndarray) -> np.ndarray:
    # Rayleigh rejection for the upper tail, lb > 0 (Marsaglia-style).
    c = 0.5 * lb ** 2
    with np.errstate(over="ignore"):
        f = np.expm1(c - 0.5 * ub ** 2)
    n = lb.size
    x = c - np.log1p(rng.random(n) * f)
    reject = np.flatnonzero(rng.random(n) ** 2 * x > c)
    while reject.size:
        cr = c[reject]
        y = cr - np.log1p(rng.random(reject.size) * f[reject])
        ok = rng.random(reject.size) ** 2 * y < cr
        x[reject[ok]] = y[ok]
        reject = reject[~ok]
    return np.sqrt(2.0 * x)


def _trnd(rng: np.random.Generator, lb: np.ndarray, ub: np.ndarray) -> np.ndarray:
    # plain rejection from N(0,1); efficient when the interval is wide
    x = rng.standard_normal(lb.size)
    reject = np.flatnonzero((x < lb) | (x > ub))
    while reject.size:
        y = rng.standard_normal(reject.size)
        ok = (y > lb[reject]) & (y < ub[reject])
        x[reject[ok]] = y[ok]
        reject = reject[~ok]
    return x


def _tn(rng: np.random.Generator, lb: np.ndarray, ub: np.ndarray) -> np.ndarray:
    # central region: rejection when the interval is wide, inverse CDF otherwise
    x = np.empty_like(lb)
    wide = np.abs(ub - lb) > 2.0
    if np.any(wide):
        x[wide] = _trnd(rng, lb[wide], ub[wide])
    narrow = ~wide
    if np.any(narrow):
        pl = ndtr(lb[narrow])
        pu = ndtr(ub[narrow])
        u = pl + (pu - pl) * rng.random(int(narrow.sum()))
        x[narrow] = ndtri(np.clip(u, 1e-300, 1.0 - 1e-16))
    return x


def trandn(rng: np.random.Generator, lb, ub) -> np.ndarray:
    """Exact draws from N(0,1) truncated to (lb, ub), elementwise.

    Handles infinite limits and far tails without loss of accuracy.
    """
    lb, ub = np.broadcast_arrays(np.asarray(lb, dtype=float), np.asarray(ub, dtype=float))
    shape = lb.shape
    lb = np.atleast_1d(lb).ravel()
    ub = np.atleast_1d(ub).ravel()
    if np.any(ub <= lb):
        raise ValidationError("truncation requires lb < ub elementwise")
    x = np.empty_like(lb)
    a = 0.66
    hi = lb > a
    if np.any(hi):
        x[hi] = _ntail(rng, lb[hi], ub[hi])
    lo = ub < -a
    if np.any(lo):
        x[lo] = -_ntail(rng, -ub[lo], -lb[lo])
    mid = ~(hi | lo)
    if np.any(mid):
        x[mid] = _tn(rng, lb[mid], ub[mid])
    return x.reshape(shape)


# ---------------------------------------------------------------------------
# variable-reordered Cholesky (separation-of-variables preprocessing)
# ---------------------------------------------------------------------------

def ordered_cholesky(Sigma: np.ndarray, lower: np.ndarray, upper: np.ndarray):
    """Cholesky factor with greedy variable reordering.

    At each stage the remaining variable with the smallest conditional
    interval probability is pivoted next; this ordering reduces the variance
    of separation-of-variables integration and raises rejection-sampling
    acceptance rates.

    Returns ``(L, perm, lo, up)`` where ``perm[i]`` is the original index of
    position ``i`` and ``lo``/``up`` are the reordered limits.
    """
    A = np.array(Sigma, dtype=float, copy=True)
    lo = np.array(lower, dtype=float, copy=True)
    up = np.array(upper, dtype=float, copy=True)
    d = lo.size
    L = np.zeros_like(A)
    z = np.zeros(d)
    perm = np.arange(d)
    eps = 1e-12 * max(1.0, float(np.abs(np.diag(A)).max()))
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for j in range(d):
            s2 = np.diag(A)[j:] - np.sum(L[j:, :j] ** 2, axis=1)
            s = np.sqrt(np.clip(s2, eps, None))
            proj = L[j:, :j] @ z[:j]
            pr = ln_normal_prob((lo[j:] - proj) / s, (up[j:] - proj) / s)
            k = j + int(np.argmin(pr))
            if k != j:
                jk, kj = [j, k], [k, j]
                A[jk, :] = A[kj, :]
                A[:, jk] = A[:, kj]
                L[jk, :] = L[kj, :]
                lo[jk] = lo[kj]
                up[jk] = up[kj]
                perm[jk] = perm[kj]
            s2jj = A[j, j] - L[j, :j] @ L[j, :j]
            if s2jj < -0.01 * max(1.0, A[j, j]):
                raise MatrixError(f"matrix is not positive semi-definite (pivot {j + 1})")
            L[j, j] = np.sqrt(max(s2jj, eps))
            if j + 1 < d:
                L[j + 1:, j] = (A[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
            tl = (lo[j] - L[j, :j] @ z[:j]) / L[j, j]
            tu = (up[j] - L[j, :j] @ z[:j]) / L[j, j]
            w = ln_normal_prob(tl, tu)[0]
            el = 0.0 if np.isinf(tl) else math.exp(-0.5 * tl * tl - w)
            eu = 0.0 if np.isinf(tu) else math.exp(-0.5 * tu * tu - w)
            z[j] = (el - eu) / _SQRT_2PI
    return L, perm, lo, up


# ---------------------------------------------------------------------------
# bivariate normal CDF (deterministic quadrature)
# ---------------------------------------------------------------------------

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(48)


def bvn_cdf(x, y, rho):
    """P(Z1 <= x, Z2 <= y) for standard bivariate normal with correlation rho.

    Deterministic: a smooth one-dimensional quadrature after the substitution
    t = sin(phi), exact to near machine precision.  Vectorized over x, y.
    """
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    x = np.atleast_1d(x)
    y = np.atleast_1d(y)
    rho = float(rho)
    if not -1.0 <= rho <= 1.0:
        raise ValidationError(f"correlation {rho} outside [-1, 1]")
    if rho >= 1.0 - 1e-14:
        return ndtr(np.minimum(x, y))
    if rho <= -1.0 + 1e-14:
        return np.clip(ndtr(x) + ndtr(y) - 1.0, 0.0, None)
    out = ndtr(x) * ndtr(y)
    if rho != 0.0:
        theta = math.asin(rho)
        phi = 0.5 * theta * (_GL_NODES + 1.0)
        w = 0.5 * theta * _GL_WEIGHTS
        sin_phi = np.sin(phi)
        cos2 = np.cos(phi) ** 2
        xf = np.where(np.isfinite(x), x, 0.0)
        yf = np.where(np.isfinite(y), y, 0.0)
        with np.errstate(over="ignore", under="ignore"):
            expo = np.exp(
                -(xf[..., None] ** 2 - 2.0 * sin_phi * xf[..., None] * yf[..., None]
                  + yf[..., None] ** 2) / (2.0 * cos2)
            )
        corr = (expo * w).sum(axis=-1) / (2.0 * math.pi)
        # infinite limits: the correction term vanishes (one factor is 0 or 1)
        corr = np.where(np.isinf(x) | np.isinf(y), 0.0, corr)
        out = out + corr
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# multivariate normal CDF (randomized quasi-Monte Carlo)
# ---------------------------------------------------------------------------

def _first_primes(k: int) -> np.ndarray:
    if k <= 0:
        return np.zeros(0)
    bound = max(16, int(k * (math.log(k + 2) + math.log(math.log(k + 3)) + 1.0)) + 10)
    sieve = np.ones(bound, dtype=bool)
    sieve[:2] = False
    for i in range(2, int(bound ** 0.5) + 1):
        if sieve[i]:
            sieve[i * i::i] = False
    primes = np.flatnonzero(sieve)[:k]
    if primes.size < k:
        return _first_primes(2 * k)[:k]
    return primes.astype(float)


@dataclass(frozen=True)
class OrthantProblem:
    """An orthant-probability query P(Z <= gamma), Z ~ N(0, Gamma).

    ``Gamma`` may be a covariance matrix; it is reduced to a correlation
    internally.  ``rel_tol`` is the target relative accuracy for the
    randomized quasi-Monte Carlo path.
    """

    gamma: np.ndarray
    Gamma: np.ndarray
    rel_tol: float = 1e-4

    def __post_init__(self):
        g = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        G = np.atleast_2d(np.asarray(self.Gamma, dtype=float))
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "Gamma", G)
        h = g.size
        if h < 1:
            raise DimensionError("orthant problem needs dimension >= 1")
        if G.shape != (h, h):
            raise DimensionError(f"limit vector has size {h} but matrix shape is {G.shape}")
        if not np.all(np.isfinite(G)):
            raise MatrixError("covariance has non-finite entries")
        scale = max(1.0, float(np.abs(G).max()))
        if not np.allclose(G, G.T, rtol=0.0, atol=1e-8 * scale):
            raise MatrixError("covariance is not symmetric")
        if np.any(np.diag(G) <= 0):
            raise MatrixError("covariance needs a strictly positive diagonal")
        if np.linalg.eigvalsh(G).min() < -1e-10 * scale:
            raise MatrixError("covariance is not positive semi-definite")
        if not (0 < self.rel_tol < 1):
            raise ValidationError(f"rel_tol {self.rel_tol} outside (0, 1)")

    @property
    def dim(self) -> int:
        return self.gamma.size


def _sov_cdf_batch(L, uppers, seed, n_shifts, n_points, chunk=64):
    """SOV estimator for P(Z <= b) sharing one reordered factor ``L``.

    ``uppers``: (K, h) limits, already permuted consistently with ``L``.
    Returns per-row (estimate, standard error) arrays.
    """
    K, h = uppers.shape
    shift_children = as_seed_sequence(seed).spawn(n_shifts)
    sqrt_primes = np.sqrt(_first_primes(max(h - 1, 1)))
    k_idx = np.arange(1, n_points + 1, dtype=float)
    diag = np.diag(L)
    est = np.zeros((n_shifts, K))
    for s, child in enumerate(shift_children):
        shift = np.random.Generator(np.random.PCG64(child)).random(max(h - 1, 1))
        # Richtmyer lattice with a baker's (tent) transform
        pts = np.abs(2.0 * np.mod(np.outer(k_idx, sqrt_primes[:max(h - 1, 1)]) + shift, 1.0) - 1.0)
        for c0 in range(0, K, chunk):
            c1 = min(c0 + chunk, K)
            b = uppers[c0:c1]
            kc = c1 - c0
            e_cur = np.repeat(ndtr(b[:, 0] / diag[0]), n_points)  # (kc*N,)
            f = e_cur.reshape(kc, n_points).copy()
            if h > 1:
                Y = np.empty((h - 1, kc * n_points))
                for i in range(1, h):
                    u = np.tile(pts[:, i - 1], kc)
                    Y[i - 1] = ndtri(np.clip(u * e_cur, 1e-300, 1.0 - 1e-16))
                    acc = L[i, :i] @ Y[:i]
                    e_cur = ndtr((np.repeat(b[:, i], n_points) - acc) / diag[i])
                    f *= e_cur.reshape(kc, n_points)
            est[s, c0:c1] = f.mean(axis=1)
    mean = est.mean(axis=0)
    se = est.std(axis=0, ddof=1) / math.sqrt(n_shifts)
    return mean, se


def mvn_cdf(problem: OrthantProblem, seed=0, *, n_shifts: int = 12,
            min_points: int = 256, max_points: int = 16384, dim_cap: int = 1000):
    """Evaluate an orthant probability with a reported standard error.

    Dimensions 1 and 2 use deterministic paths (standard error 0).  Higher
    dimensions use randomized quasi-Monte Carlo, doubling the point count
    until ``3 * se <= rel_tol * estimate`` or the point budget is exhausted.
    Deterministic given ``seed``.
    """
    h = problem.dim
    if h > dim_cap:
        raise DimensionError(f"dimension {h} exceeds cap {dim_cap}")
    s, C = _as_correlation(problem.Gamma)
    b = problem.gamma / s
    if np.any(np.isneginf(b)):
        return 0.0, 0.0
    finite = ~np.isposinf(b)
    if not np.all(finite):
        # +inf limits contribute a unit factor; reduce the problem
        idx = np.flatnonzero(finite)
        if idx.size == 0:
            return 1.0, 0.0
        sub = OrthantProblem(b[idx], C[np.ix_(idx, idx)], problem.rel_tol)
        return mvn_cdf(sub, seed, n_shifts=n_shifts, min_points=min_points,
                       max_points=max_points, dim_cap=dim_cap)
    if h == 1:
        return float(ndtr(b[0])), 0.0
    if h == 2:
        return float(bvn_cdf(b[0], b[1], C[0, 1])[0]), 0.0
    L, perm, _, up = ordered_cholesky(C, np.full(h, -np.inf), b)
    n = min_points
    while True:
        est, se = _sov_cdf_batch(L, up[None, :], seed, n_shifts, n)
        e, s_err = float(est[0]), float(se[0])
        if 3.0 * s_err <= problem.rel_tol * max(e, 1e-300) or n >= max_points:
            return e, s_err
        n *= 2


def orthant_prob(gamma, Gamma, seed=0, *, rel_tol: float = 1e-4, **kwargs):
    """Convenience wrapper: build the problem record and evaluate it."""
    g = np.atleast_1d(np.asarray(gamma, dtype=float))
    if g.size == 0:
        return 1.0, 0.0
    return mvn_cdf(OrthantProblem(g, Gamma, rel_tol), seed, **kwargs)


def mvn_cdf_batch(uppers, Gamma, seed=0, *, n_shifts: int = 12, n_points: int = 512,
                  chunk: int = 64):
    """Orthant probabilities for many limit vectors sharing one covariance.

    All rows are evaluated with common random numbers, which keeps relative
    noise between nearby limits small (useful for density grids).  Returns
    ``(estimates, standard_errors)`` of shape (K,).
    """
    U = np.atleast_2d(np.asarray(uppers, dtype=float))
    K, h = U.shape
    s, C = _as_correlation(np.atleast_2d(np.asarray(Gamma, dtype=float)))
    B = U / s
    if h == 1:
        return ndtr(B[:, 0]), np.zeros(K)
    if h == 2:
        return bvn_cdf(B[:, 0], B[:, 1], C[0, 1]), np.zeros(K)
    ref = np.nanmedian(np.where(np.isfinite(B), B, np.nan), axis=0)
    ref = np.where(np.isfinite(ref), ref, 0.0)
    L, perm, _, _ = ordered_cholesky(C, np.full(h, -np.inf), ref)
    est, se = _sov_cdf_batch(L, B[:, perm], seed, n_shifts, n_points, chunk=chunk)
    return est, se


# ---------------------------------------------------------------------------
# exact truncated multivariate normal sampling
# ---------------------------------------------------------------------------

@dataclass
class SampleMatrix:
    """A seeded draw set with provenance.

    ``iid`` is False only for the explicitly flagged Gibbs fallback.
    """

    values: np.ndarray
    target: str
    seed: int
    count: int
    method: str = "exact"
    iid: bool = True
    columns: list = field(default_factory=list)

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape[0] != self.count:
            raise ValidationError(
                f"sample count {self.count} does not match {self.values.shape[0]} rows")


def _tilt_grad_jac(y: np.ndarray, L: np.ndarray, lo: np.ndarray, up: np.ndarray):
    # gradient and Jacobian of the smooth minimax objective; L has zero diagonal
    d = lo.size
    x = np.zeros(d)
    mu = np.zeros(d)
    x[:d - 1] = y[:d - 1]
    mu[:d - 1] = y[d - 1:]
    c = L @ x
    lt = lo - mu - c
    ut = up - mu - c
    w = ln_normal_prob(lt, ut)
    with np.errstate(over="ignore", invalid="ignore"):
        pl = np.where(np.isinf(lt), 0.0, np.exp(-0.5 * lt ** 2 - w) / _SQRT_2PI)
        pu = np.where(np.isinf(ut), 0.0, np.exp(-0.5 * ut ** 2 - w) / _SQRT_2PI)
    P = pl - pu
    grad = np.concatenate([(-mu + P @ L)[:d - 1], (mu - x + P)[:d - 1]])
    lt0 = np.where(np.isinf(lt), 0.0, lt)
    ut0 = np.where(np.isinf(ut), 0.0, ut)
    dP = -P ** 2 + lt0 * pl - ut0 * pu
    DL = dP[:, None] * L
    mx = (DL - np.eye(d))[:d - 1, :d - 1]
    xx = (L.T @ DL)[:d - 1, :d - 1]
    J = np.block([[xx, mx.T], [mx, np.diag(1.0 + dP[:d - 1])]])
    return grad, J


def _tilt_psi(y: np.ndarray, L: np.ndarray, lo: np.ndarray, up: np.ndarray) -> float:
    d = lo.size
    x = np.zeros(d)
    mu = np.zeros(d)
    x[:d - 1] = y[:d - 1]
    mu[:d - 1] = y[d - 1:]
    c = L @ x
    lt = lo - mu - c
    ut = up - mu - c
    return float(np.sum(ln_normal_prob(lt, ut) + 0.5 * mu ** 2 - x * mu))


def _solve_tilting(L, lo, up, *, tol: float = 1e-8, max_iter: int = 100) -> np.ndarray:
    """Damped Newton on the tilting stationarity conditions."""
    d = lo.size
    y = np.zeros(2 * (d - 1))
    g, J = _tilt_grad_jac(y, L, lo, up)
    ng = float(np.linalg.norm(g))
    for _ in range(max_iter):
        if ng <= tol:
            return y
        try:
            step = np.linalg.solve(J, -g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(J, -g, rcond=None)[0]
        alpha = 1.0
        accepted = False
        for _ in range(40):
            y_new = y + alpha * step
            g_new, J_new = _tilt_grad_jac(y_new, L, lo, up)
            ng_new = float(np.linalg.norm(g_new))
            if np.isfinite(ng_new) and (ng_new < (1.0 - 1e-4 * alpha) * ng or ng_new <= tol):
                y, g, J, ng = y_new, g_new, J_new, ng_new
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            raise ConvergenceError(
                f"tilting solver stalled at gradient norm {ng:.3e} (tol {tol})")
    if ng > tol:
        raise ConvergenceError(
            f"tilting solver did not reach tol {tol} in {max_iter} iterations "
            f"(gradient norm {ng:.3e})")
    return y


def _tilted_proposals(rng, Lbar, lo, up, mu_full, n):
    d = lo.size
    Z = np.zeros((d, n))
    logpr = np.zeros(n)
    for k in range(d):
        col = Lbar[k, :k] @ Z[:k]
        tl = lo[k] - mu_full[k] - col
        tu = up[k] - mu_full[k] - col if np.isfinite(up[k]) else np.full(n, np.inf)
        tl = np.broadcast_to(np.asarray(tl, dtype=float), (n,))
        Z[k] = mu_full[k] + trandn(rng, tl, tu)
        logpr += ln_normal_prob(tl, tu) + 0.5 * mu_full[k] ** 2 - mu_full[k] * Z[k]
    return Z, logpr


def _gibbs_tmvn(rng, Gamma, lower, R, burn, thin):
    h = lower.size
    Lc = chol_spd(Gamma)
    prec = np.linalg.inv(Gamma)
    sigma = 1.0 / np.sqrt(np.diag(prec))
    z = np.where(np.isfinite(lower), lower + 1.0, 0.0)
    out = np.empty((R, h))
    total = burn + R * thin
    k = 0
    for it in range(total):
        for i in range(h):
            mu_i = z[i] - prec[i] @ z / prec[i, i]
            tl = (lower[i] - mu_i) / sigma[i]
            draw = mu_i + sigma[i] * trandn(rng, np.array([tl]), np.array([np.inf]))[0]
            # guard against rounding across the boundary
            while not draw > lower[i]:
                draw = mu_i + sigma[i] * trandn(rng, np.array([tl]), np.array([np.inf]))[0]
            z[i] = draw
        if it >= burn and (it - burn) % thin == 0 and k < R:
            out[k] = z
            k += 1
    return out


def tmvn_sample(Gamma, lower, R: int, seed, *, exact_cap: int = 150,
                fallback: str = "gibbs", max_rounds: int = 10000,
                gibbs_burn: int = 200, gibbs_thin: int = 10,
                target: str = "") -> SampleMatrix:
    """R i.i.d. draws from N(0, Gamma) restricted to ``{u : u > lower}``.

    Exact (rejection with exponential tilting, no chain) for dimensions up to
    ``exact_cap``.  Above the cap, ``fallback='gibbs'`` switches to a thinned
    Gibbs chain whose output is flagged non-i.i.d.; ``fallback='error'``
    raises instead.  Every returned draw satisfies the constraint exactly.
    """
    Gamma = np.atleast_2d(np.asarray(Gamma, dtype=float))
    lower = np.atleast_1d(np.asarray(lower, dtype=float)).copy()
    h = lower.size
    if Gamma.shape != (h, h):
        raise DimensionError(f"bound vector size {h} does not match matrix {Gamma.shape}")
    if R < 1:
        raise ValidationError(f"sample count must be >= 1, got {R}")
    Lfull = chol_spd(Gamma)
    rng = generator(seed)
    label = target or f"tmvn(h={h})"
    seed_int = int(as_seed_sequence(seed).generate_state(1)[0])

    if h > exact_cap:
        if fallback != "gibbs":
            raise DimensionError(
                f"dimension {h} exceeds exact-mode cap {exact_cap} and fallback is disabled")
        values = _gibbs_tmvn(rng, Gamma, lower, R, gibbs_burn, gibbs_thin)
        return SampleMatrix(values, label, seed_int, R, method="gibbs", iid=False)

    if np.all(np.isneginf(lower)):
        values = rng.standard_normal((R, h)) @ Lfull.T
        return SampleMatrix(values, label, seed_int, R, method="cholesky", iid=True)

    if h == 1:
        s = math.sqrt(Gamma[0, 0])
        x = trandn(rng, np.full(R, lower[0] / s), np.full(R, np.inf))
        return SampleMatrix((s * x)[:, None], label, seed_int, R,
                            method="tilted-rejection", iid=True)

    L, perm, lo, up = ordered_cholesky(Gamma, lower, np.full(h, np.inf))
    D = np.diag(L).copy()
    lo_s = lo / D
    up_s = np.full(h, np.inf)
    Lbar = L / D[:, None] - np.eye(h)
    y_opt = _solve_tilting(Lbar, lo_s, up_s)
    psistar = _tilt_psi(y_opt, Lbar, lo_s, up_s)
    if psistar < _LOG_TINY:
        raise InfeasibleRegionError(
            f"truncation region probability below 1e-300 (log bound {psistar:.1f})")
    mu_full = np.zeros(h)
    mu_full[:h - 1] = y_opt[h - 1:]

    collected = np.empty((h, 0))
    rounds = 0
    while collected.shape[1] < R:
        rounds += 1
        if rounds > max_rounds:
            raise NumericalError(
                f"rejection sampler accepted {collected.shape[1]}/{R} draws "
                f"after {max_rounds} rounds")
        Z, logpr = _tilted_proposals(rng, Lbar, lo_s, up_s, mu_full, R)
        accept = -np.log(rng.random(R)) > psistar - logpr
        X = L @ Z[:, accept]  # rows follow the pivoted order
        # reject the measure-zero rounding cases so the constraint holds exactly
        ok = np.all(X > lo[:, None], axis=0)
        collected = np.concatenate([collected, X[:, ok]], axis=1)
    samples = np.empty((h, R))
    samples[perm, :] = collected[:, :R]
    return SampleMatrix(samples.T, label, seed_int, R, method="tilted-rejection", iid=True)
