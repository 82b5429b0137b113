"""Exact online recursions for the dynamic probit model.

The filtering distribution of the states given binary data up to time t is a
SUN whose location/scale never depend on the data and whose skewness block
grows by m latent dimensions per step.  The predict step propagates the
parameters through the state equation; the update step appends one block.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericalError, ValidationError
from .gauss import bvn_cdf, orthant_prob
from .model import ModelSpec, sign_matrix, validate
from .sun import SunParams

__all__ = ["FilterResult", "LatentDimensionWarning", "init_filter", "obs_predictive",
           "optimal_proposal", "predict_step", "predictive_series", "run_filter",
           "state_predictive_t1", "update_step"]

DEFAULT_LATENT_CAP = 300


class LatentDimensionWarning(UserWarning):
    """The exact recursion's latent dimension grew past the configured cap."""


def _require_valid(spec: ModelSpec):
    report = validate(spec)
    if not report.ok:
        raise ValidationError("; ".join(report.violations))


def _observation_blocks(xi: np.ndarray, Omega: np.ndarray, F: np.ndarray,
                        V: np.ndarray, y_t: np.ndarray):
    """New skewness/truncation/correlation blocks for one observation.

    Returns (Delta_block, gamma_block, Gamma22, BF, s) where s is the positive
    diagonal scale making Gamma22 a correlation matrix.
    """
    B = sign_matrix(y_t)
    BF = B @ F
    M = BF @ Omega @ BF.T + B @ V @ B
    s = np.sqrt(np.diag(M))
    Gamma22 = M / np.outer(s, s)
    omega = np.sqrt(np.diag(Omega))
    Obar = Omega / np.outer(omega, omega)
    Delta_block = (Obar * omega[None, :]) @ BF.T / s[None, :]
    gamma_block = (BF @ xi) / s
    return Delta_block, gamma_block, Gamma22, BF, s


def init_filter(spec: ModelSpec, y1) -> SunParams:
    """First-step filtering distribution given the initial observation."""
    _require_valid(spec)
    y1 = np.atleast_1d(np.asarray(y1))
    if y1.size != spec.m:
        raise DimensionError(f"observation has size {y1.size}, expected m={spec.m}")
    xi = spec.G[0] @ spec.a0
    Omega = spec.G[0] @ spec.P0 @ spec.G[0].T + spec.W[0]
    Delta, gamma, Gamma, _, _ = _observation_blocks(xi, Omega, spec.F[0], spec.V[0], y1)
    return SunParams(xi=xi, Omega=Omega, Delta=Delta, gamma=gamma, Gamma=Gamma)


def state_predictive_t1(spec: ModelSpec) -> SunParams:
    """State predictive before any data: a plain Gaussian (latent dimension 0)."""
    _require_valid(spec)
    xi = spec.G[0] @ spec.a0
    Omega = spec.G[0] @ spec.P0 @ spec.G[0].T + spec.W[0]
    return SunParams(xi=xi, Omega=Omega, Delta=np.zeros((spec.p, 0)),
                     gamma=np.zeros(0), Gamma=np.zeros((0, 0)))


def predict_step(prev: SunParams, spec: ModelSpec, t: int) -> SunParams:
    """One-step-ahead state predictive from the filtering params at t-1.

    ``t`` is the 1-based index of the step being predicted; the truncation
    and latent correlation are unchanged.
    """
    if not 2 <= t <= spec.n:
        raise DimensionError(f"predict step needs 2 <= t <= n={spec.n}, got {t}")
    if prev.p != spec.p:
        raise DimensionError(f"state dimension mismatch: params p={prev.p}, spec p={spec.p}")
    G, W = spec.G[t - 1], spec.W[t - 1]
    xi = G @ prev.xi
    Omega = G @ prev.Omega @ G.T + W
    omega_new = np.sqrt(np.diag(Omega))
    Delta = (G @ (prev.omega[:, None] * prev.Delta)) / omega_new[:, None]
    return SunParams(xi=xi, Omega=Omega, Delta=Delta, gamma=prev.gamma, Gamma=prev.Gamma)


def update_step(pred: SunParams, spec: ModelSpec, y_t, t: int) -> SunParams:
    """Filtering distribution at t from the state predictive at t.

    Location and scale are unchanged; the latent dimension grows by exactly m.
    """
    if not 1 <= t <= spec.n:
        raise DimensionError(f"update step needs 1 <= t <= n={spec.n}, got {t}")
    y_t = np.atleast_1d(np.asarray(y_t))
    if y_t.size != spec.m:
        raise DimensionError(f"observation has size {y_t.size}, expected m={spec.m}")
    F, V = spec.F[t - 1], spec.V[t - 1]
    d_new, g_new, G22, BF, s = _observation_blocks(pred.xi, pred.Omega, F, V, y_t)
    G21 = (BF @ (pred.omega[:, None] * pred.Delta)) / s[:, None]
    h0 = pred.h
    Gamma = np.empty((h0 + spec.m, h0 + spec.m))
    Gamma[:h0, :h0] = pred.Gamma
    Gamma[h0:, :h0] = G21
    Gamma[:h0, h0:] = G21.T
    Gamma[h0:, h0:] = G22
    Delta = np.concatenate([pred.Delta, d_new], axis=1)
    gamma = np.concatenate([pred.gamma, g_new])
    return SunParams(xi=pred.xi, Omega=pred.Omega, Delta=Delta, gamma=gamma, Gamma=Gamma)


@dataclass
class FilterResult:
    """Output of a filter run: final params plus (optionally) the history."""

    filtered: SunParams
    predicted: SunParams
    history: list | None = None  # list of (predicted, filtered) per t


def run_filter(spec: ModelSpec, y, t_max: int | None = None, *,
               keep_history: bool = False,
               latent_cap: int = DEFAULT_LATENT_CAP) -> FilterResult:
    """Run the exact recursion over the first ``t_max`` observations.

    Warns once when the latent dimension m*t passes ``latent_cap``; the
    particle filter is the practical tool beyond that point.
    """
    _require_valid(spec)
    y = np.atleast_2d(np.asarray(y))
    t_max = y.shape[0] if t_max is None else int(t_max)
    if not 1 <= t_max <= min(spec.n, y.shape[0]):
        raise DimensionError(f"t_max={t_max} outside 1..{min(spec.n, y.shape[0])}")
    if spec.m * t_max > latent_cap:
        warnings.warn(
            f"latent dimension m*t = {spec.m * t_max} exceeds {latent_cap}; exact "
            f"CDF work grows quickly -- consider the optimal particle filter",
            LatentDimensionWarning, stacklevel=2)
    history = [] if keep_history else None
    pred = state_predictive_t1(spec)
    filt = update_step(pred, spec, y[0], 1)
    if keep_history:
        history.append((pred, filt))
    for t in range(2, t_max + 1):
        pred = predict_step(filt, spec, t)
        filt = update_step(pred, spec, y[t - 1], t)
        if keep_history:
            history.append((pred, filt))
    return FilterResult(filtered=filt, predicted=pred, history=history)


def obs_predictive(filt_t: SunParams, pred_t: SunParams | None, seed=0, *,
                   rel_tol: float = 1e-4):
    """Probability of the observation encoded in ``filt_t`` given the past.

    The ratio of the two truncation-orthant probabilities; the denominator is
    1 at t = 1 (empty conditioning set).  Numerator and denominator share the
    seed so chained ratios telescope consistently.  Returns (probability,
    standard_error).
    """
    num, num_se = orthant_prob(filt_t.gamma, filt_t.Gamma, seed=seed, rel_tol=rel_tol)
    if pred_t is None or pred_t.h == 0:
        den, den_se = 1.0, 0.0
    else:
        den, den_se = orthant_prob(pred_t.gamma, pred_t.Gamma, seed=seed, rel_tol=rel_tol)
    if den <= 0:
        raise NumericalError("predictive denominator evaluated to <= 0")
    ratio = num / den
    se = ratio * np.hypot(num_se / max(num, 1e-300), den_se / den)
    return float(ratio), float(se)


def predictive_series(spec: ModelSpec, y, seed=0, *, rel_tol: float = 1e-4,
                      latent_cap: int = DEFAULT_LATENT_CAP):
    """One-step-ahead probabilities of y_t = 1, per component, for all t.

    Returns an (n, m) array of probabilities and an (n, m) array of standard
    errors.  Component l at time t conditions on all observations before t
    (joint across components is available via :func:`obs_predictive`).
    """
    _require_valid(spec)
    y = np.atleast_2d(np.asarray(y))
    n = min(spec.n, y.shape[0])
    probs = np.empty((n, spec.m))
    ses = np.empty((n, spec.m))
    filt = None
    den, den_se = 1.0, 0.0
    for t in range(1, n + 1):
        pred = state_predictive_t1(spec) if t == 1 else predict_step(filt, spec, t)
        for l in range(spec.m):
            # single-component candidate update against the current predictive
            d_new, g_new, G22, BF, s = _observation_blocks(
                pred.xi, pred.Omega, spec.F[t - 1][l:l + 1], spec.V[t - 1][l:l + 1, l:l + 1],
                np.array([1]))
            G21 = (BF @ (pred.omega[:, None] * pred.Delta)) / s[:, None]
            gamma_c = np.concatenate([pred.gamma, g_new])
            Gamma_c = np.block([[pred.Gamma, G21.T], [G21, G22]])
            num, num_se = orthant_prob(gamma_c, Gamma_c, seed=seed, rel_tol=rel_tol)
            probs[t - 1, l] = num / den
            ses[t - 1, l] = probs[t - 1, l] * np.hypot(
                num_se / max(num, 1e-300), den_se / den)
        filt = update_step(pred, spec, y[t - 1], t)
        if spec.m * t <= latent_cap:
            den, den_se = orthant_prob(filt.gamma, filt.Gamma, seed=seed, rel_tol=rel_tol)
        if den <= 0:
            raise NumericalError(f"predictive denominator at t={t} evaluated to <= 0")
    return probs, ses


def optimal_proposal(theta_prev, spec: ModelSpec, y_t, t: int, seed=0):
    """Conditional state distribution given the previous state and the new
    observation, with its marginal observation probability.

    This is the minimum-weight-variance proposal of sequential importance
    sampling for this model; the returned weight is P(y_t | theta_{t-1}).
    """
    theta_prev = np.atleast_1d(np.asarray(theta_prev, dtype=float))
    if not 1 <= t <= spec.n:
        raise DimensionError(f"t={t} outside 1..{spec.n}")
    y_t = np.atleast_1d(np.asarray(y_t))
    G, W, F, V = spec.G[t - 1], spec.W[t - 1], spec.F[t - 1], spec.V[t - 1]
    xi = G @ theta_prev
    Delta, gamma, Gamma, _, _ = _observation_blocks(xi, W, F, V, y_t)
    params = SunParams(xi=xi, Omega=W, Delta=Delta, gamma=gamma, Gamma=Gamma)
    if spec.m == 1:
        from scipy.special import ndtr
        weight = float(ndtr(gamma[0]))
    elif spec.m == 2:
        weight = float(bvn_cdf(gamma[0], gamma[1], Gamma[0, 1])[0])
    else:
        weight, _ = orthant_prob(gamma, Gamma, seed=seed)
    return params, weight
