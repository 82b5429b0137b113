"""Monte Carlo engines: i.i.d. posterior samplers, the optimal particle
filter, and the baseline filters used for benchmarking.

The i.i.d. samplers draw directly from the exact SUN posteriors (batch
smoothing, filtering, one-step prediction).  The particle filters are
sequential importance sampling-resampling schemes; the optimal one proposes
from the exact conditional state distribution given the new observation, so
its importance weights do not depend on the proposed value.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtr

from .errors import (DegeneracyError, DimensionError, NumericalError,
                     ValidationError)
from .gauss import SampleMatrix, bvn_cdf, chol_spd, orthant_prob, tmvn_sample, trandn
from .model import ModelSpec, sign_matrix, validate
from .seeds import as_seed_sequence
from .smoothing import joint_smoothing
from .sun import sample as sun_sample
from . import sun as _sun

__all__ = ["EkfStep", "ParticleCloud", "RbpfStep", "bootstrap_pf", "ekf",
           "filtering_sampler", "optimal_pf", "predictive_sampler", "resample",
           "rb_pf", "smoothing_sampler"]

_SQRT_2PI = math.sqrt(2.0 * math.pi)


# ---------------------------------------------------------------------------
# particle cloud container and resampling
# ---------------------------------------------------------------------------

@dataclass
class ParticleCloud:
    """Weighted particle set for one time step."""

    values: np.ndarray   # (R, p)
    weights: np.ndarray  # (R,), nonnegative, summing to 1
    t: int
    ancestry: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (self.values.shape[0],):
            raise ValidationError("weights do not match particle count")
        if np.any(self.weights < 0):
            raise ValidationError("weights must be nonnegative")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValidationError(f"weights sum to {self.weights.sum()!r}, not 1")

    @property
    def R(self) -> int:
        return self.values.shape[0]

    @property
    def ess(self) -> float:
        return float(1.0 / np.sum(self.weights ** 2))

    def mean(self) -> np.ndarray:
        return self.weights @ self.values

    def cov(self) -> np.ndarray:
        d = self.values - self.mean()
        return (d * self.weights[:, None]).T @ d


def _resample_indices(weights: np.ndarray, policy: str, rng: np.random.Generator) -> np.ndarray:
    R = weights.size
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    if policy == "systematic":
        u = (rng.random() + np.arange(R)) / R
    elif policy == "multinomial":
        u = rng.random(R)
    else:
        raise ValidationError(f"unknown resampling policy {policy!r}")
    return np.searchsorted(cum, u)


def resample(cloud: ParticleCloud, policy: str, seed) -> ParticleCloud:
    """Draw R particles from the weighted mixture; output weights are uniform."""
    rng = np.random.Generator(np.random.PCG64(as_seed_sequence(seed)))
    idx = _resample_indices(cloud.weights, policy, rng)
    return ParticleCloud(values=cloud.values[idx],
                         weights=np.full(cloud.R, 1.0 / cloud.R),
                         t=cloud.t, ancestry=idx)


# ---------------------------------------------------------------------------
# i.i.d. samplers from the exact posteriors
# ---------------------------------------------------------------------------

def smoothing_sampler(spec: ModelSpec, y, R: int, seed) -> SampleMatrix:
    """R i.i.d. draws of the full state path given all observations.

    Additive construction: a Gaussian component plus a linearly mapped
    truncated Gaussian component, combined per draw.
    """
    params = joint_smoothing(spec, y)
    out = sun_sample(params, R, seed)
    out.target = f"smoothing(n={params.p // spec.p},p={spec.p})"
    return out


def filtering_sampler(spec: ModelSpec, y, R: int, seed, t: int | None = None) -> SampleMatrix:
    """R i.i.d. draws of theta_t given y_{1:t} (batch run restricted to block t)."""
    Y = np.atleast_2d(np.asarray(y))
    t = Y.shape[0] if t is None else int(t)
    if not 1 <= t <= min(spec.n, Y.shape[0]):
        raise DimensionError(f"t={t} outside 1..{min(spec.n, Y.shape[0])}")
    full = smoothing_sampler(spec.with_horizon(t), Y[:t], R, seed)
    block = full.values[:, spec.p * (t - 1):spec.p * t]
    return SampleMatrix(block, f"filtering(t={t})", full.seed, R,
                        method=full.method, iid=full.iid)


def predictive_sampler(spec: ModelSpec, y, R: int, seed, t: int | None = None) -> SampleMatrix:
    """R i.i.d. draws of theta_{t+1} given y_{1:t}: propagate filtering draws
    through the state equation."""
    Y = np.atleast_2d(np.asarray(y))
    t = Y.shape[0] if t is None else int(t)
    if t + 1 > spec.n:
        raise DimensionError(f"prediction needs t+1 <= n, got t={t}, n={spec.n}")
    ss = as_seed_sequence(seed)
    s_filt, s_noise = ss.spawn(2)
    filt = filtering_sampler(spec, Y, R, s_filt, t=t)
    rng = np.random.Generator(np.random.PCG64(s_noise))
    L = chol_spd(spec.W[t])
    vals = filt.values @ spec.G[t].T + rng.standard_normal((R, spec.p)) @ L.T
    return SampleMatrix(vals, f"predictive(t={t + 1})", filt.seed, R,
                        method=filt.method, iid=filt.iid)


# ---------------------------------------------------------------------------
# shared helpers for the particle filters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _ProposalQuantities:
    """Per-step quantities of the optimal proposal that do not depend on the
    particle: computed once per t and shared."""

    c: np.ndarray          # (m,) diagonal scale
    Gamma: np.ndarray      # (m, m) latent correlation
    Delta: np.ndarray      # (p, m)
    omega: np.ndarray      # (p,)
    A: np.ndarray          # Delta Gamma^{-1}, (p, m)
    L0: np.ndarray         # chol of Obar - A Delta', (p, p)
    BFG_over_c: np.ndarray  # rows c^{-1} B F G, maps theta_{t-1} to gamma
    G: np.ndarray

    @property
    def m(self) -> int:
        return self.Gamma.shape[0]


def proposal_quantities(spec: ModelSpec, t: int, y_t) -> _ProposalQuantities:
    """Particle-independent pieces of the optimal proposal at step t."""
    G, W, F, V = spec.G[t - 1], spec.W[t - 1], spec.F[t - 1], spec.V[t - 1]
    B = sign_matrix(np.atleast_1d(y_t))
    BF = B @ F
    M = BF @ W @ BF.T + B @ V @ B
    c = np.sqrt(np.diag(M))
    Gamma = M / np.outer(c, c)
    omega = np.sqrt(np.diag(W))
    Obar = W / np.outer(omega, omega)
    Delta = (Obar * omega[None, :]) @ BF.T / c[None, :]
    Lg = chol_spd(Gamma)
    from scipy.linalg import cho_solve
    A = cho_solve((Lg, True), Delta.T).T
    cov0 = Obar - A @ Delta.T
    L0 = chol_spd(0.5 * (cov0 + cov0.T))
    return _ProposalQuantities(c=c, Gamma=Gamma, Delta=Delta, omega=omega, A=A,
                               L0=L0, BFG_over_c=(BF @ G) / c[:, None], G=G)


def _orthant_weights(lowers: np.ndarray, Gamma: np.ndarray, rng_seed_base: int) -> np.ndarray:
    """P(Z > -gamma) = P(Z <= gamma) per row, for Z ~ N(0, Gamma) with unit diagonal."""
    m = Gamma.shape[0]
    if m == 1:
        return ndtr(lowers[:, 0])
    if m == 2:
        return np.asarray(bvn_cdf(lowers[:, 0], lowers[:, 1], Gamma[0, 1]))
    out = np.empty(lowers.shape[0])
    for i, g in enumerate(lowers):
        out[i], _ = orthant_prob(g, Gamma, seed=rng_seed_base + i)
    return out


def _truncated_rows(rng: np.random.Generator, Gamma: np.ndarray, lowers: np.ndarray,
                    weights: np.ndarray | None = None, max_plain_rounds: int = 200) -> np.ndarray:
    """Exact draws of Z ~ N(0, Gamma) restricted to Z > lowers[i], row by row.

    m = 1 uses the scalar truncated sampler directly.  For m >= 2, plain
    rejection against the untruncated Gaussian is vectorized across rows
    (its acceptance rate equals the row's orthant probability); rows that
    stay empty fall back to the tilted sampler.
    """
    R, m = lowers.shape
    if m == 1:
        return trandn(rng, lowers[:, 0], np.full(R, np.inf))[:, None]
    L = chol_spd(Gamma)
    out = np.empty((R, m))
    pending = np.arange(R)
    rounds = 0
    while pending.size and rounds < max_plain_rounds:
        rounds += 1
        z = rng.standard_normal((pending.size, m)) @ L.T
        ok = np.all(z > lowers[pending], axis=1)
        out[pending[ok]] = z[ok]
        pending = pending[~ok]
    for i in pending:
        sub_seed = int(rng.integers(2 ** 63))
        out[i] = tmvn_sample(Gamma, lowers[i], 1, sub_seed).values[0]
    return out


# ---------------------------------------------------------------------------
# optimal particle filter
# ---------------------------------------------------------------------------

def optimal_pf(spec: ModelSpec, y, R: int, seed, *, resampling: str = "systematic",
               ess_threshold: float | None = None,
               keep_ancestry: bool = False) -> list[ParticleCloud]:
    """Sequential importance sampling-resampling with the optimal proposal.

    Per step, particles are proposed from the exact conditional state
    distribution given the previous state and the new observation; the
    importance weight is the observation probability given the previous
    state.  By default resampling happens every step; ``ess_threshold``
    (fraction of R) switches to adaptive resampling.
    """
    report = validate(spec)
    if not report.ok:
        raise ValidationError("; ".join(report.violations))
    if R < 2:
        raise ValidationError(f"particle filter needs R >= 2, got {R}")
    Y = np.atleast_2d(np.asarray(y))
    n = min(spec.n, Y.shape[0])
    streams = as_seed_sequence(seed).spawn(n + 1)
    rng0 = np.random.Generator(np.random.PCG64(streams[0]))
    theta = spec.a0 + rng0.standard_normal((R, spec.p)) @ chol_spd(spec.P0).T
    carry = np.full(R, 1.0 / R)
    clouds: list[ParticleCloud] = []
    ancestry = None
    for t in range(1, n + 1):
        s_u0, s_u1, s_res = streams[t].spawn(3)
        q = proposal_quantities(spec, t, Y[t - 1])
        mean_t = theta @ q.G.T
        gammas = mean_t @ q.BFG_over_c.T  # (R, m) per-particle truncation levels
        rng_u1 = np.random.Generator(np.random.PCG64(s_u1))
        U1 = _truncated_rows(rng_u1, q.Gamma, -gammas)
        rng_u0 = np.random.Generator(np.random.PCG64(s_u0))
        U0 = rng_u0.standard_normal((R, spec.p)) @ q.L0.T
        proposed = mean_t + (U0 + U1 @ q.A.T) * q.omega[None, :]
        w = _orthant_weights(gammas, q.Gamma, int(rng_u1.integers(2 ** 31)))
        w = w * carry * R  # fold in carried weights (uniform unless adaptive)
        total = w.sum()
        if total <= 0 or not np.isfinite(total):
            raise DegeneracyError(f"all particle weights vanished at t={t}")
        w = w / total
        cloud = ParticleCloud(values=proposed, weights=w, t=t,
                              ancestry=ancestry if keep_ancestry else None)
        clouds.append(cloud)
        if ess_threshold is None or cloud.ess < ess_threshold * R:
            rng_res = np.random.Generator(np.random.PCG64(s_res))
            idx = _resample_indices(w, resampling, rng_res)
            theta = proposed[idx]
            carry = np.full(R, 1.0 / R)
            ancestry = idx
        else:
            theta = proposed
            carry = w
            ancestry = np.arange(R)
    return clouds


# ---------------------------------------------------------------------------
# bootstrap particle filter
# ---------------------------------------------------------------------------

def bootstrap_pf(spec: ModelSpec, y, R: int, seed, *, resampling: str = "systematic",
                 ess_threshold: float | None = None) -> list[ParticleCloud]:
    """Baseline filter proposing from the state transition alone; weights are
    the observation likelihoods of the proposed states."""
    report = validate(spec)
    if not report.ok:
        raise ValidationError("; ".join(report.violations))
    if R < 2:
        raise ValidationError(f"particle filter needs R >= 2, got {R}")
    Y = np.atleast_2d(np.asarray(y))
    n = min(spec.n, Y.shape[0])
    streams = as_seed_sequence(seed).spawn(n + 1)
    rng0 = np.random.Generator(np.random.PCG64(streams[0]))
    theta = spec.a0 + rng0.standard_normal((R, spec.p)) @ chol_spd(spec.P0).T
    carry = np.full(R, 1.0 / R)
    clouds: list[ParticleCloud] = []
    for t in range(1, n + 1):
        s_prop, s_res = streams[t].spawn(2)
        rng = np.random.Generator(np.random.PCG64(s_prop))
        G, W, F, V = spec.G[t - 1], spec.W[t - 1], spec.F[t - 1], spec.V[t - 1]
        proposed = theta @ G.T + rng.standard_normal((R, spec.p)) @ chol_spd(W).T
        B = sign_matrix(Y[t - 1])
        BVB = B @ V @ B
        sv = np.sqrt(np.diag(BVB))
        lim = (proposed @ (B @ F).T) / sv
        if spec.m == 1:
            w = ndtr(lim[:, 0])
        elif spec.m == 2:
            rho = BVB[0, 1] / (sv[0] * sv[1])
            w = np.asarray(bvn_cdf(lim[:, 0], lim[:, 1], rho))
        else:
            Corr = BVB / np.outer(sv, sv)
            w = np.array([orthant_prob(l, Corr, seed=int(rng.integers(2 ** 31)) + i)[0]
                          for i, l in enumerate(lim)])
        w = w * carry * R
        total = w.sum()
        if total <= 0 or not np.isfinite(total):
            raise DegeneracyError(f"all particle weights vanished at t={t}")
        w = w / total
        cloud = ParticleCloud(values=proposed, weights=w, t=t)
        clouds.append(cloud)
        if ess_threshold is None or cloud.ess < ess_threshold * R:
            rng_res = np.random.Generator(np.random.PCG64(s_res))
            theta = proposed[_resample_indices(w, resampling, rng_res)]
            carry = np.full(R, 1.0 / R)
        else:
            theta = proposed
            carry = w
    return clouds


# ---------------------------------------------------------------------------
# Gaussian approximate filter (Laplace update)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EkfStep:
    t: int
    mean: np.ndarray
    cov: np.ndarray
    converged: bool


def _probit_loglik_grad(theta: np.ndarray, BF: np.ndarray, Corr: np.ndarray,
                        sv: np.ndarray, seed: int):
    """Value and gradient of log Phi_m(BF theta; BVB) in theta."""
    a = (BF @ theta) / sv
    m = a.size
    if m == 1:
        logp = float(log_ndtr(a[0]))
        lam = math.exp(-0.5 * a[0] ** 2 - math.log(_SQRT_2PI) - logp)
        grad = lam * BF[0] / sv[0]
        return logp, grad
    if m == 2:
        val = float(bvn_cdf(a[0], a[1], Corr[0, 1])[0])
    else:
        val, _ = orthant_prob(a, Corr, seed=seed)
    val = max(val, 1e-300)
    grad_a = np.empty(m)
    for i in range(m):
        rest = np.delete(np.arange(m), i)
        r = Corr[rest, i]
        cond_mean = a[rest] - r * a[i]
        cond_cov = Corr[np.ix_(rest, rest)] - np.outer(r, r)
        if m == 2:
            phi_rest = float(ndtr(cond_mean[0] / math.sqrt(cond_cov[0, 0])))
        else:
            dsv = np.sqrt(np.diag(cond_cov))
            if m == 3:
                rho = cond_cov[0, 1] / (dsv[0] * dsv[1])
                phi_rest = float(bvn_cdf(cond_mean[0] / dsv[0], cond_mean[1] / dsv[1], rho)[0])
            else:
                phi_rest, _ = orthant_prob(cond_mean, cond_cov, seed=seed + 1 + i)
        grad_a[i] = math.exp(-0.5 * a[i] ** 2) / _SQRT_2PI * phi_rest
    grad = (BF / sv[:, None]).T @ (grad_a / val)
    return math.log(val), grad


def _gaussian_probit_update(a_pred: np.ndarray, P_pred: np.ndarray,
                            BF: np.ndarray, sv: np.ndarray):
    """Exact first two moments of a Gaussian prior updated by a single
    probit observation (m = 1); the best Gaussian approximation."""
    x = BF[0] / sv[0]
    Px = P_pred @ x
    denom = math.sqrt(1.0 + x @ Px)
    zeta = (x @ a_pred) / denom
    lam = math.exp(-0.5 * zeta ** 2 - math.log(_SQRT_2PI) - float(log_ndtr(zeta)))
    mean = a_pred + Px * (lam / denom)
    cov = P_pred - np.outer(Px, Px) * (lam * (lam + zeta) / denom ** 2)
    return mean, 0.5 * (cov + cov.T)


def ekf(spec: ModelSpec, y, *, tol: float = 1e-8, max_iter: int = 100,
        seed: int = 0) -> list[EkfStep]:
    """Gaussian filter: exact predict, then a Gaussian projection of the
    probit observation update.

    Single binary observations (m = 1) use the closed-form moment-matched
    Gaussian; multivariate updates use a mode-plus-curvature (Laplace)
    quadratic approximation.  A Laplace step that fails to converge is
    flagged rather than raised.
    """
    report = validate(spec)
    if not report.ok:
        raise ValidationError("; ".join(report.violations))
    Y = np.atleast_2d(np.asarray(y))
    n = min(spec.n, Y.shape[0])
    mean, cov = spec.a0.copy(), spec.P0.copy()
    out: list[EkfStep] = []
    for t in range(1, n + 1):
        G, W, F, V = spec.G[t - 1], spec.W[t - 1], spec.F[t - 1], spec.V[t - 1]
        a_pred = G @ mean
        P_pred = G @ cov @ G.T + W
        B = sign_matrix(Y[t - 1])
        BF = B @ F
        BVB = B @ V @ B
        sv = np.sqrt(np.diag(BVB))
        Corr = BVB / np.outer(sv, sv)
        if spec.m == 1:
            mean, cov = _gaussian_probit_update(a_pred, P_pred, BF, sv)
            out.append(EkfStep(t=t, mean=mean.copy(), cov=cov.copy(), converged=True))
            continue
        P_inv = np.linalg.inv(P_pred)
        theta = a_pred.copy()
        converged = False
        logp, grad_l = _probit_loglik_grad(theta, BF, Corr, sv, seed)
        obj = logp - 0.5 * (theta - a_pred) @ P_inv @ (theta - a_pred)
        for _ in range(max_iter):
            grad = grad_l - P_inv @ (theta - a_pred)
            if np.linalg.norm(grad) <= tol * (1.0 + abs(obj)):
                converged = True
                break
            H = _loglik_hessian(theta, BF, Corr, sv, seed)
            try:
                step = np.linalg.solve(P_inv - H, grad)
            except np.linalg.LinAlgError:
                step = grad
            alpha, improved = 1.0, False
            for _ in range(30):
                cand = theta + alpha * step
                logp_c, grad_c = _probit_loglik_grad(cand, BF, Corr, sv, seed)
                obj_c = logp_c - 0.5 * (cand - a_pred) @ P_inv @ (cand - a_pred)
                if np.isfinite(obj_c) and obj_c >= obj - 1e-12:
                    theta, logp, grad_l, obj = cand, logp_c, grad_c, obj_c
                    improved = True
                    break
                alpha *= 0.5
            if not improved:
                break
        H = _loglik_hessian(theta, BF, Corr, sv, seed)
        cov_post = np.linalg.inv(P_inv - H)
        cov_post = 0.5 * (cov_post + cov_post.T)
        if not np.all(np.isfinite(cov_post)):
            raise NumericalError(f"Laplace update produced non-finite covariance at t={t}")
        out.append(EkfStep(t=t, mean=theta.copy(), cov=cov_post, converged=converged))
        mean, cov = theta, cov_post
    return out


def _loglik_hessian(theta: np.ndarray, BF: np.ndarray, Corr: np.ndarray,
                    sv: np.ndarray, seed: int) -> np.ndarray:
    m = sv.size
    if m == 1:
        a = (BF @ theta)[0] / sv[0]
        logp = float(log_ndtr(a))
        lam = math.exp(-0.5 * a ** 2 - math.log(_SQRT_2PI) - logp)
        f = BF[0] / sv[0]
        return -lam * (a + lam) * np.outer(f, f)
    # central differences of the analytic gradient
    p = theta.size
    H = np.empty((p, p))
    h = 1e-5 * (1.0 + np.abs(theta))
    for j in range(p):
        ej = np.zeros(p)
        ej[j] = h[j]
        _, gp = _probit_loglik_grad(theta + ej, BF, Corr, sv, seed)
        _, gm = _probit_loglik_grad(theta - ej, BF, Corr, sv, seed)
        H[:, j] = (gp - gm) / (2 * h[j])
    return 0.5 * (H + H.T)


# ---------------------------------------------------------------------------
# Rao-Blackwellized particle filter
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RbpfStep:
    """Per-step moment estimates plus the mixture pieces behind them."""

    t: int
    mean: np.ndarray
    cov: np.ndarray
    ess: float
    means: np.ndarray        # (R, p) per-trajectory conditional means
    weights: np.ndarray      # (R,)
    kalman_cov: np.ndarray   # (p, p) shared conditional covariance


def kalman_predict(mean, cov, G, W):
    return G @ mean, G @ cov @ G.T + W


def kalman_update(mean_pred, cov_pred, z, F, V):
    """Measurement update for z = F theta + noise(V); means may be batched (R, p)."""
    S = F @ cov_pred @ F.T + V
    K = cov_pred @ F.T @ np.linalg.inv(S)
    innov = np.atleast_2d(z) - np.atleast_2d(mean_pred) @ F.T
    mean = np.atleast_2d(mean_pred) + innov @ K.T
    cov = cov_pred - K @ F @ cov_pred
    return mean, 0.5 * (cov + cov.T)


def rb_pf(spec: ModelSpec, y, R: int, seed, *, resampling: str = "systematic") -> list[RbpfStep]:
    """Particle filter on the latent utilities with exact conditional-state
    moments per trajectory.

    Each particle carries the conditional mean of the state given its utility
    trajectory (the conditional covariance is trajectory-independent and
    shared).  Utilities are proposed from their predictive distribution
    truncated to the orthant implied by the observation; the weight is the
    predictive orthant probability.  Moment estimates average the conditional
    moments over particle weights.
    """
    report = validate(spec)
    if not report.ok:
        raise ValidationError("; ".join(report.violations))
    if R < 2:
        raise ValidationError(f"particle filter needs R >= 2, got {R}")
    Y = np.atleast_2d(np.asarray(y))
    n = min(spec.n, Y.shape[0])
    streams = as_seed_sequence(seed).spawn(n + 1)
    means = np.tile(spec.a0, (R, 1))
    P = spec.P0.copy()
    out: list[RbpfStep] = []
    for t in range(1, n + 1):
        s_prop, s_res = streams[t].spawn(2)
        rng = np.random.Generator(np.random.PCG64(s_prop))
        G, W, F, V = spec.G[t - 1], spec.W[t - 1], spec.F[t - 1], spec.V[t - 1]
        m_pred = means @ G.T
        P_pred = G @ P @ G.T + W
        S = F @ P_pred @ F.T + V
        B = sign_matrix(Y[t - 1])
        BSB = B @ S @ B
        sv = np.sqrt(np.diag(BSB))
        Corr = BSB / np.outer(sv, sv)
        lim = (m_pred @ (B @ F).T) / sv  # (R, m) standardized orthant limits
        if spec.m == 1:
            w = ndtr(lim[:, 0])
        elif spec.m == 2:
            w = np.asarray(bvn_cdf(lim[:, 0], lim[:, 1], Corr[0, 1]))
        else:
            w = np.array([orthant_prob(l, Corr, seed=int(rng.integers(2 ** 31)) + i)[0]
                          for i, l in enumerate(lim)])
        total = w.sum()
        if total <= 0 or not np.isfinite(total):
            raise DegeneracyError(f"all particle weights vanished at t={t}")
        wn = w / total
        # propose utilities from the truncated predictive, conditional per particle
        U = _truncated_rows(rng, Corr, -lim)
        z = m_pred @ F.T + (U * sv[None, :]) @ B  # B is its own inverse
        means_upd, P_upd = kalman_update(m_pred, P_pred, z, F, V)
        mean_est = wn @ means_upd
        dev = means_upd - mean_est
        cov_est = P_upd + (dev * wn[:, None]).T @ dev
        ess = float(1.0 / np.sum(wn ** 2))
        out.append(RbpfStep(t=t, mean=mean_est, cov=cov_est, ess=ess,
                            means=means_upd.copy(), weights=wn.copy(), kalman_cov=P_upd))
        rng_res = np.random.Generator(np.random.PCG64(s_res))
        means = means_upd[_resample_indices(wn, resampling, rng_res)]
        P = P_upd
    return out


def rbpf_marginal_draws(step: RbpfStep, R: int, seed) -> np.ndarray:
    """Draws from the Gaussian-mixture state approximation of one step."""
    rng = np.random.Generator(np.random.PCG64(as_seed_sequence(seed)))
    idx = rng.choice(step.means.shape[0], size=R, p=step.weights)
    L = chol_spd(step.kalman_cov)
    return step.means[idx] + rng.standard_normal((R, step.means.shape[1])) @ L.T
