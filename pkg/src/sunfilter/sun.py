"""Unified skew-normal (SUN) distributions.

A SUN on R^p with latent dimension h has density

    phi_p(theta - xi; Omega)
      * Phi_h(gamma + Delta' Obar^{-1} omega^{-1} (theta - xi); Gamma - Delta' Obar^{-1} Delta)
      / Phi_h(gamma; Gamma)

where omega is the diagonal scale of Omega and Obar the induced correlation.
Sampling uses the additive representation: a Gaussian part plus a linearly
mapped truncated Gaussian part.  h = 0 is supported and degenerates to the
plain Gaussian.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import IdentifiabilityError, NumericalError, ValidationError
from .gauss import SampleMatrix, chol_spd, mvn_cdf_batch, orthant_prob, tmvn_sample
from .seeds import as_seed_sequence

__all__ = ["MomentEstimate", "SunParams", "density", "density_batch", "marginal",
           "mc_moments", "sample"]

_MIN_EIG = 1e-10


@dataclass(frozen=True)
class SunParams:
    """Parameter record of a SUN distribution.

    Fields: location ``xi`` (p,), scale ``Omega`` (p, p) SPD, skewness
    ``Delta`` (p, h), truncation ``gamma`` (h,), latent correlation ``Gamma``
    (h, h).  The derived ``omega`` (positive diagonal scale, stored as a
    vector) and ``Obar`` (correlation) are computed on construction, and the
    stacked matrix [[Gamma, Delta'], [Delta, Obar]] is required to be a
    full-rank correlation matrix.
    """

    xi: np.ndarray
    Omega: np.ndarray
    Delta: np.ndarray
    gamma: np.ndarray
    Gamma: np.ndarray
    omega: np.ndarray = None  # derived
    Obar: np.ndarray = None   # derived

    def __post_init__(self):
        xi = np.atleast_1d(np.asarray(self.xi, dtype=float))
        p = xi.size
        Omega = np.asarray(self.Omega, dtype=float).reshape(p, p)
        Delta = np.asarray(self.Delta, dtype=float).reshape(p, -1)
        h = Delta.shape[1]
        gamma = np.asarray(self.gamma, dtype=float).reshape(h)
        Gamma = np.asarray(self.Gamma, dtype=float).reshape(h, h)
        for name, arr in (("xi", xi), ("Omega", Omega), ("Delta", Delta),
                          ("gamma", gamma), ("Gamma", Gamma)):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} has non-finite entries")
        d = np.diag(Omega)
        if np.any(d <= 0):
            raise ValidationError("Omega has a non-positive diagonal entry "
                                  "(degenerate coordinate)")
        chol_spd(Omega)
        omega = np.sqrt(d)
        Obar = Omega / np.outer(omega, omega)
        if h > 0:
            if not np.allclose(np.diag(Gamma), 1.0, rtol=0.0, atol=1e-8):
                raise ValidationError("Gamma must have a unit diagonal")
            if not np.allclose(Gamma, Gamma.T, rtol=0.0, atol=1e-8):
                raise ValidationError("Gamma must be symmetric")
            star = np.block([[Gamma, Delta.T], [Delta, Obar]])
            min_eig = float(np.linalg.eigvalsh(star).min())
            if min_eig <= _MIN_EIG:
                raise IdentifiabilityError(
                    f"stacked correlation matrix is rank deficient "
                    f"(min eigenvalue {min_eig:.3e})")
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "Omega", Omega)
        object.__setattr__(self, "Delta", Delta)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "Gamma", Gamma)
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "Obar", Obar)

    @property
    def p(self) -> int:
        return self.xi.size

    @property
    def h(self) -> int:
        return self.gamma.size

    # -- serialization (checkpointing) ------------------------------------
    def to_dict(self) -> dict:
        return {"xi": self.xi.tolist(), "Omega": self.Omega.tolist(),
                "Delta": self.Delta.tolist(), "gamma": self.gamma.tolist(),
                "Gamma": self.Gamma.tolist()}

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, d: dict) -> "SunParams":
        return cls(xi=np.asarray(d["xi"]), Omega=np.asarray(d["Omega"]),
                   Delta=np.asarray(d["Delta"]), gamma=np.asarray(d["gamma"]),
                   Gamma=np.asarray(d["Gamma"]))

    @classmethod
    def from_json(cls, text: str) -> "SunParams":
        return cls.from_dict(json.loads(text))

    def close_to(self, other: "SunParams", atol: float = 1e-10) -> bool:
        """Entrywise parameter equality within an absolute tolerance."""
        return (self.p == other.p and self.h == other.h
                and np.allclose(self.xi, other.xi, rtol=0.0, atol=atol)
                and np.allclose(self.Omega, other.Omega, rtol=0.0, atol=atol)
                and np.allclose(self.Delta, other.Delta, rtol=0.0, atol=atol)
                and np.allclose(self.gamma, other.gamma, rtol=0.0, atol=atol)
                and np.allclose(self.Gamma, other.Gamma, rtol=0.0, atol=atol))


def _gaussian_logpdf(dev: np.ndarray, Omega: np.ndarray) -> np.ndarray:
    L = chol_spd(Omega)
    sol = solve_triangular(L, dev.T, lower=True)
    quad = np.sum(sol ** 2, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    p = Omega.shape[0]
    return -0.5 * (quad + logdet + p * math.log(2.0 * math.pi))


def _skew_pieces(params: SunParams):
    """Conditional pieces of the skewing factor: slope matrix and covariance."""
    L = chol_spd(params.Obar)
    sol = cho_solve((L, True), params.Delta)      # Obar^{-1} Delta, (p, h)
    cond_cov = params.Gamma - params.Delta.T @ sol
    slope = sol.T / params.omega                  # (h, p): Delta' Obar^{-1} omega^{-1}
    min_eig = float(np.linalg.eigvalsh(cond_cov).min())
    if min_eig <= _MIN_EIG * max(1.0, float(np.abs(cond_cov).max())):
        raise IdentifiabilityError(
            f"conditional skewing covariance is numerically singular "
            f"(min eigenvalue {min_eig:.3e})")
    return slope, cond_cov


def density_batch(params: SunParams, thetas, seed=0, *, cdf_kwargs: dict | None = None):
    """Density at many points; returns (values, standard_errors).

    The two orthant-probability factors share the evaluation seed so ratios
    stay consistent.  Standard errors are zero whenever deterministic CDF
    paths apply (h <= 2).
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    if thetas.shape[1] != params.p:
        raise ValidationError(f"points have dimension {thetas.shape[1]}, expected {params.p}")
    dev = thetas - params.xi
    base = np.exp(_gaussian_logpdf(dev, params.Omega))
    if params.h == 0:
        return base, np.zeros_like(base)
    kw = dict(cdf_kwargs or {})
    slope, cond_cov = _skew_pieces(params)
    limits = params.gamma + dev @ slope.T
    num, num_se = mvn_cdf_batch(limits, cond_cov, seed=seed, **kw)
    den, den_se = orthant_prob(params.gamma, params.Gamma, seed=seed)
    if den <= 0:
        raise NumericalError("normalizing orthant probability evaluated to <= 0")
    vals = base * num / den
    rel = np.zeros_like(vals)
    nz = num > 0
    rel[nz] = np.sqrt((num_se[nz] / num[nz]) ** 2 + (den_se / den) ** 2)
    return vals, vals * rel


def density(params: SunParams, theta, seed=0) -> float:
    """Density of the SUN at a single point."""
    vals, _ = density_batch(params, np.atleast_1d(theta)[None, :], seed=seed)
    return float(vals[0])


def sample(params: SunParams, R: int, seed, *, tmvn_kwargs: dict | None = None) -> SampleMatrix:
    """R i.i.d. draws via the additive representation.

    theta = xi + omega (U0 + Delta Gamma^{-1} U1) with U0 Gaussian and U1 a
    truncated Gaussian, independent of each other.
    """
    if R < 1:
        raise ValidationError(f"sample count must be >= 1, got {R}")
    ss = as_seed_sequence(seed)
    s_u0, s_u1 = ss.spawn(2)
    seed_int = int(ss.generate_state(1)[0])
    if params.h == 0:
        rng = np.random.Generator(np.random.PCG64(s_u0))
        vals = params.xi + rng.standard_normal((R, params.p)) @ chol_spd(params.Omega).T
        return SampleMatrix(vals, f"sun(p={params.p},h=0)", seed_int, R,
                            method="cholesky", iid=True)
    Lg = chol_spd(params.Gamma)
    A = cho_solve((Lg, True), params.Delta.T).T   # Delta Gamma^{-1}, (p, h)
    cov0 = params.Obar - A @ params.Delta.T
    cov0 = 0.5 * (cov0 + cov0.T)
    try:
        L0 = chol_spd(cov0)
    except Exception as exc:
        raise IdentifiabilityError(f"Gaussian part covariance is not SPD: {exc}") from exc
    rng0 = np.random.Generator(np.random.PCG64(s_u0))
    U0 = rng0.standard_normal((R, params.p)) @ L0.T
    u1 = tmvn_sample(params.Gamma, -params.gamma, R, s_u1, **(tmvn_kwargs or {}))
    vals = params.xi + params.omega * (U0 + u1.values @ A.T)
    return SampleMatrix(vals, f"sun(p={params.p},h={params.h})", seed_int, R,
                        method=u1.method, iid=u1.iid)


def marginal(params: SunParams, indices) -> SunParams:
    """SUN parameters of a coordinate subset: rows of xi and Delta, the
    principal submatrix of Omega; gamma and Gamma are unchanged."""
    idx = np.atleast_1d(np.asarray(indices, dtype=int))
    if idx.size == 0:
        raise ValidationError("index set must be nonempty")
    if len(set(idx.tolist())) != idx.size:
        raise ValidationError("indices must be distinct")
    if idx.min() < 0 or idx.max() >= params.p:
        raise ValidationError(f"index out of range for p={params.p}: {idx}")
    return SunParams(xi=params.xi[idx], Omega=params.Omega[np.ix_(idx, idx)],
                     Delta=params.Delta[idx], gamma=params.gamma, Gamma=params.Gamma)


@dataclass(frozen=True)
class MomentEstimate:
    mean: np.ndarray
    cov: np.ndarray
    mean_se: np.ndarray
    cov_se: np.ndarray
    R: int


def _jackknife_cov_se(x: np.ndarray) -> np.ndarray:
    """Delete-one jackknife standard errors for the sample covariance."""
    R, p = x.shape
    xbar = x.mean(axis=0)
    d = x - xbar
    se = np.empty((p, p))
    for i in range(p):
        for j in range(i, p):
            s_full = d[:, i] @ d[:, j]
            # leave-one-out covariance in closed form
            loo = (s_full - d[:, i] * d[:, j] * R / (R - 1)) / (R - 2)
            se[i, j] = se[j, i] = math.sqrt(max((R - 1) / R * np.sum((loo - loo.mean()) ** 2), 0.0))
    return se


def mc_moments(params: SunParams, R: int, seed) -> MomentEstimate:
    """Monte Carlo mean and covariance with jackknife standard errors."""
    if R < 2:
        raise ValidationError(f"moment estimation needs R >= 2, got {R}")
    draws = sample(params, R, seed).values
    mean = draws.mean(axis=0)
    cov = np.cov(draws.T).reshape(params.p, params.p)
    mean_se = draws.std(axis=0, ddof=1) / math.sqrt(R)
    cov_se = _jackknife_cov_se(draws) if R > 2 else np.full((params.p, params.p), np.inf)
    return MomentEstimate(mean=mean, cov=cov, mean_se=mean_se, cov_se=cov_se, R=R)
