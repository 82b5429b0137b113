"""Dynamic probit state-space model: specification, validation, simulation.

The model couples a linear-Gaussian state recursion with binary observations
produced by dichotomizing latent Gaussian utilities:

    theta_t = G_t theta_{t-1} + eps_t,    eps_t ~ N(0, W_t),   theta_0 ~ N(a0, P0)
    z_t ~ N(F_t theta_t, V_t)
    y_{lt} = 1(z_{lt} > 0)
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .gauss import chol_spd
from .seeds import as_seed_sequence

__all__ = ["BinarySeries", "LatentPath", "ModelSpec", "ValidationReport",
           "sign_matrix", "simulate"]


def _per_t(mat, n: int, shape: tuple, name: str) -> np.ndarray:
    """Broadcast a single matrix to a length-n stack, or pass a stack through."""
    a = np.asarray(mat, dtype=float)
    if a.ndim == len(shape):
        if a.shape != shape:
            raise ValidationError(f"{name} has shape {a.shape}, expected {shape}")
        return np.broadcast_to(a, (n,) + shape).copy()
    if a.ndim == len(shape) + 1:
        if a.shape != (n,) + shape:
            raise ValidationError(f"{name} has shape {a.shape}, expected {(n,) + shape}")
        return a.copy()
    raise ValidationError(f"{name} has {a.ndim} dimensions, expected {len(shape)} "
                          f"(time-invariant) or {len(shape) + 1} (per step)")


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    violations: list

    def __bool__(self):
        return self.ok


@dataclass(frozen=True)
class ModelSpec:
    """Full specification of the dynamic probit state-space model.

    Sequences are stored expanded to one matrix per time step; time-invariant
    inputs may be given once and are broadcast by :meth:`create`.
    """

    m: int
    p: int
    n: int
    F: np.ndarray  # (n, m, p)
    V: np.ndarray  # (n, m, m)
    G: np.ndarray  # (n, p, p)
    W: np.ndarray  # (n, p, p)
    a0: np.ndarray  # (p,)
    P0: np.ndarray  # (p, p)

    @classmethod
    def create(cls, m: int, p: int, n: int, F, V, G, W, a0, P0) -> "ModelSpec":
        m, p, n = int(m), int(p), int(n)
        if min(m, p, n) < 1:
            raise ValidationError(f"dimensions must be positive, got m={m}, p={p}, n={n}")
        spec = cls(
            m=m, p=p, n=n,
            F=_per_t(F, n, (m, p), "F"),
            V=_per_t(V, n, (m, m), "V"),
            G=_per_t(G, n, (p, p), "G"),
            W=_per_t(W, n, (p, p), "W"),
            a0=np.asarray(a0, dtype=float).reshape(p),
            P0=np.asarray(P0, dtype=float).reshape(p, p),
        )
        report = validate(spec)
        if not report.ok:
            raise ValidationError("; ".join(report.violations))
        return spec

    def with_w(self, W) -> "ModelSpec":
        """Copy of the spec with the state-noise covariance replaced."""
        return ModelSpec.create(self.m, self.p, self.n, self.F, self.V, self.G,
                                W, self.a0, self.P0)

    def with_horizon(self, n: int) -> "ModelSpec":
        """Copy of the spec truncated (or checked) to horizon ``n``."""
        if n > self.n:
            raise ValidationError(f"horizon {n} exceeds specified {self.n}")
        return ModelSpec.create(self.m, self.p, n, self.F[:n], self.V[:n],
                                self.G[:n], self.W[:n], self.a0, self.P0)


@dataclass(frozen=True)
class BinarySeries:
    """Observed 0/1 matrix plus optional time labels and covariate columns."""

    y: np.ndarray  # (n, m) with entries in {0, 1}
    timestamps: list | None = None
    covariates: np.ndarray | None = None  # (n, k)

    def __post_init__(self):
        y = np.asarray(self.y)
        if y.ndim == 1:
            y = y[:, None]
        if not np.isin(y, (0, 1)).all():
            bad = y[~np.isin(y, (0, 1))][0]
            raise ValidationError(f"binary series contains non-binary entry {bad!r}")
        object.__setattr__(self, "y", y.astype(np.int8))
        if self.timestamps is not None and len(self.timestamps) != y.shape[0]:
            raise ValidationError("timestamps length does not match series length")
        if self.covariates is not None:
            x = np.atleast_2d(np.asarray(self.covariates, dtype=float))
            if x.shape[0] != y.shape[0]:
                raise ValidationError("covariate rows do not match series length")
            object.__setattr__(self, "covariates", x)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def m(self) -> int:
        return self.y.shape[1]


@dataclass(frozen=True)
class LatentPath:
    """Simulated states and latent utilities; sign(z) reproduces the series."""

    theta: np.ndarray  # (n, p)
    z: np.ndarray  # (n, m)


def sign_matrix(y_t) -> np.ndarray:
    """Diagonal +-1 matrix encoding a binary observation vector: diag(2 y - 1)."""
    y = np.atleast_1d(np.asarray(y_t))
    if not np.isin(y, (0, 1)).all():
        raise ValidationError(f"sign_matrix needs entries in {{0,1}}, got {y!r}")
    return np.diag(2.0 * y.astype(float) - 1.0)


def _check_spd(M: np.ndarray, name: str, violations: list):
    if not np.all(np.isfinite(M)):
        violations.append(f"{name} has non-finite entries")
        return
    try:
        chol_spd(M)
    except Exception as exc:
        violations.append(f"{name}: {exc}")


def validate(spec: ModelSpec) -> ValidationReport:
    """Report-style check of dimensions, finiteness and positive definiteness."""
    v: list = []
    m, p, n = spec.m, spec.p, spec.n
    for name, arr, shape in (("F", spec.F, (n, m, p)), ("V", spec.V, (n, m, m)),
                             ("G", spec.G, (n, p, p)), ("W", spec.W, (n, p, p))):
        if arr.shape != shape:
            v.append(f"{name} has shape {arr.shape}, expected {shape}")
    if spec.a0.shape != (p,):
        v.append(f"a0 has shape {spec.a0.shape}, expected ({p},)")
    if spec.P0.shape != (p, p):
        v.append(f"P0 has shape {spec.P0.shape}, expected ({p}, {p})")
    if not v:
        for name, arr in (("F", spec.F), ("G", spec.G)):
            if not np.all(np.isfinite(arr)):
                v.append(f"{name} has non-finite entries")
        _check_spd(spec.P0, "P0", v)
        for t in range(n):
            _check_spd(spec.V[t], f"V at t={t + 1}", v)
            _check_spd(spec.W[t], f"W at t={t + 1}", v)
    return ValidationReport(ok=not v, violations=v)


def simulate(spec: ModelSpec, seed) -> tuple[LatentPath, BinarySeries]:
    """Draw one path from the model; a pure function of (spec, seed).

    The initial state uses substream 0 of the seed; each step t uses its own
    substream, so extending the horizon never reshuffles earlier draws.
    """
    report = validate(spec)
    if not report.ok:
        raise ValidationError("; ".join(report.violations))
    streams = as_seed_sequence(seed).spawn(spec.n + 1)
    rng0 = np.random.Generator(np.random.PCG64(streams[0]))
    L0 = chol_spd(spec.P0)
    theta_prev = spec.a0 + L0 @ rng0.standard_normal(spec.p)
    theta = np.empty((spec.n, spec.p))
    z = np.empty((spec.n, spec.m))
    for t in range(spec.n):
        rng = np.random.Generator(np.random.PCG64(streams[t + 1]))
        eps = chol_spd(spec.W[t]) @ rng.standard_normal(spec.p)
        theta[t] = spec.G[t] @ theta_prev + eps
        z[t] = spec.F[t] @ theta[t] + chol_spd(spec.V[t]) @ rng.standard_normal(spec.m)
        theta_prev = theta[t]
    y = (z > 0).astype(np.int8)
    return LatentPath(theta=theta, z=z), BinarySeries(y=y)
