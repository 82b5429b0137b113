"""Batch quantities: joint/marginal smoothing, marginal likelihood, grid search.

The joint posterior of the whole state path given all binary observations is
a single SUN built from the stacked Gaussian prior of the path and two
block-diagonal matrices carrying the signed design and observation noise.
"""
from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ValidationError
from .filtering import DEFAULT_LATENT_CAP, LatentDimensionWarning
from .gauss import orthant_prob
from .model import BinarySeries, ModelSpec, sign_matrix, validate
from .seeds import as_seed_sequence
from .sun import SunParams, marginal as sun_marginal

__all__ = ["GridSearchResult", "StackedSystem", "build_stacked", "joint_smoothing",
           "marginal_likelihood", "marginal_smoothing", "marglik_grid"]

DEFAULT_STATE_CAP = 1000  # p*n cap for materializing the dense path covariance


def _series_matrix(y) -> np.ndarray:
    if isinstance(y, BinarySeries):
        return np.asarray(y.y)
    return np.atleast_2d(np.asarray(y))


@dataclass(frozen=True)
class StackedSystem:
    """Stacked path prior and signed observation operators.

    ``xi`` (p*n,), ``Omega`` (p*n, p*n): mean and covariance of the state path
    under the state equation alone.  ``D`` is block-diagonal with blocks
    B_t F_t, ``Vbig`` block-diagonal with blocks B_t V_t B_t, and ``s`` is the
    positive diagonal of ``sqrt(diag(D Omega D' + Vbig))``.
    """

    xi: np.ndarray
    Omega: np.ndarray
    D: np.ndarray
    Vbig: np.ndarray
    s: np.ndarray


def build_stacked(spec: ModelSpec, y, *, state_cap: int = DEFAULT_STATE_CAP) -> StackedSystem:
    """Assemble the stacked system for the first n observed steps."""
    report = validate(spec)
    if not report.ok:
        raise ValidationError("; ".join(report.violations))
    Y = _series_matrix(y)
    n = min(spec.n, Y.shape[0])
    if Y.shape[1] != spec.m:
        raise DimensionError(f"series has m={Y.shape[1]}, spec has m={spec.m}")
    p, m = spec.p, spec.m
    if p * n > state_cap:
        raise DimensionError(
            f"stacked state dimension p*n = {p * n} exceeds cap {state_cap}")

    xi = np.empty(p * n)
    Omega = np.empty((p * n, p * n))
    blk = lambda t: slice(p * t, p * (t + 1))
    # forward accumulation of means and diagonal blocks
    xi_t = spec.G[0] @ spec.a0
    Om_t = spec.G[0] @ spec.P0 @ spec.G[0].T + spec.W[0]
    xi[blk(0)] = xi_t
    Omega[blk(0), blk(0)] = Om_t
    for t in range(1, n):
        xi_t = spec.G[t] @ xi_t
        Om_t = spec.G[t] @ Om_t @ spec.G[t].T + spec.W[t]
        xi[blk(t)] = xi_t
        Omega[blk(t), blk(t)] = Om_t
    # cross blocks: cov(theta_t, theta_q) = G_t ... G_{q+1} Omega_[q,q] for t > q
    for q in range(n):
        M = Omega[blk(q), blk(q)]
        for t in range(q + 1, n):
            M = spec.G[t] @ M
            Omega[blk(t), blk(q)] = M
            Omega[blk(q), blk(t)] = M.T
    D = np.zeros((m * n, p * n))
    Vbig = np.zeros((m * n, m * n))
    for t in range(n):
        B = sign_matrix(Y[t])
        D[m * t:m * (t + 1), blk(t)] = B @ spec.F[t]
        Vbig[m * t:m * (t + 1), m * t:m * (t + 1)] = B @ spec.V[t] @ B
    s = np.sqrt(np.diag(D @ Omega @ D.T + Vbig))
    return StackedSystem(xi=xi, Omega=Omega, D=D, Vbig=Vbig, s=s)


def joint_smoothing(spec: ModelSpec, y, *, state_cap: int = DEFAULT_STATE_CAP) -> SunParams:
    """SUN parameters of the posterior over the full state path."""
    sts = build_stacked(spec, y, state_cap=state_cap)
    M = sts.D @ sts.Omega @ sts.D.T + sts.Vbig
    s = sts.s
    Gamma = M / np.outer(s, s)
    omega = np.sqrt(np.diag(sts.Omega))
    Obar = sts.Omega / np.outer(omega, omega)
    Delta = (Obar * omega[None, :]) @ sts.D.T / s[None, :]
    gamma = (sts.D @ sts.xi) / s
    return SunParams(xi=sts.xi, Omega=sts.Omega, Delta=Delta, gamma=gamma, Gamma=Gamma)


def marginal_smoothing(spec: ModelSpec, y, t: int, *,
                       state_cap: int = DEFAULT_STATE_CAP) -> SunParams:
    """Posterior of the single state theta_t given all n observations."""
    Y = _series_matrix(y)
    n = min(spec.n, Y.shape[0])
    if not 1 <= t <= n:
        raise DimensionError(f"t={t} outside 1..{n}")
    joint = joint_smoothing(spec, Y, state_cap=state_cap)
    idx = np.arange(spec.p * (t - 1), spec.p * t)
    return sun_marginal(joint, idx)


def marginal_likelihood(spec: ModelSpec, y, seed=0, *, rel_tol: float = 1e-4,
                        latent_cap: int = DEFAULT_LATENT_CAP,
                        state_cap: int = DEFAULT_STATE_CAP,
                        cdf_points: int | None = None):
    """P(y_{1:n}) as a single truncation-orthant probability.

    ``cdf_points`` fixes the integration effort instead of the default
    tolerance-driven doubling (useful when many likelihoods are compared and
    the probability itself is tiny).  Returns (probability, standard_error).
    """
    Y = _series_matrix(y)
    n = min(spec.n, Y.shape[0])
    if spec.m * n > latent_cap:
        warnings.warn(
            f"orthant dimension m*n = {spec.m * n} exceeds {latent_cap}; the "
            f"estimate may be slow or noisy", LatentDimensionWarning, stacklevel=2)
    joint = joint_smoothing(spec, Y, state_cap=state_cap)
    kwargs = {}
    if cdf_points is not None:
        kwargs = {"min_points": cdf_points, "max_points": cdf_points}
    return orthant_prob(joint.gamma, joint.Gamma, seed=seed, rel_tol=rel_tol, **kwargs)


@dataclass(frozen=True)
class GridSearchResult:
    """Marginal-likelihood table over a grid of diagonal state variances."""

    rows: list  # (w_diag tuple, likelihood, std_error)
    argmax: int

    @property
    def best(self):
        return self.rows[self.argmax]


def marglik_grid(spec: ModelSpec, y, grid, seed=0, *, rel_tol: float = 1e-4,
                 cdf_points: int | None = 1024,
                 threads: int | None = None) -> GridSearchResult:
    """Marginal likelihood for each diagonal-W candidate in ``grid``.

    ``grid`` holds tuples of diagonal entries (length p, scalars allowed for
    p = 1).  Every evaluation shares the seed and a fixed integration budget
    so values are comparable; grid points are independent and evaluated in a
    thread pool.
    """
    pts = [np.atleast_1d(np.asarray(g, dtype=float)) for g in grid]
    if not pts:
        raise ValidationError("grid must be nonempty")
    for g in pts:
        if g.size != spec.p:
            raise ValidationError(f"grid point {g} does not have p={spec.p} entries")
        if np.any(g <= 0):
            raise ValidationError(f"grid point {g} has non-positive variance")
    Y = _series_matrix(y)

    def one(g):
        cand = spec.with_w(np.diag(g))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", LatentDimensionWarning)
            like, se = marginal_likelihood(cand, Y, seed=seed, rel_tol=rel_tol,
                                           cdf_points=cdf_points)
        return (tuple(g.tolist()), like, se)

    if threads is not None and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            rows = list(ex.map(one, pts))
    else:
        rows = [one(g) for g in pts]
    argmax = int(np.argmax([r[1] for r in rows]))
    return GridSearchResult(rows=rows, argmax=argmax)
