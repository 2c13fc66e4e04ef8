"""Univariate conjugate normal-gamma DLM kernel.

State and precision of one series follow the conjugate form
``theta | lam ~ N(m, M/(s*lam))``, ``lam ~ Gamma(n/2, n*s/2)`` so the theta
margin is multivariate T with ``n`` degrees of freedom and scale matrix ``M``.
This module provides the one-step T forecast, the observation update, the
block-discount evolution, joint (theta, lam) sampling, and marginal-T
extraction. ``n = inf`` is supported as the known-precision limit
(lam identically 1/s).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from ._util import chol_psd
from .errors import NumericalError, StructuralInputError


@dataclass(frozen=True)
class NGPosterior:
    """Normal-gamma parameter set for one series.

    ``split`` marks the state-vector partition: indices [0, split) form the
    exogenous block, [split, d) the simultaneous-parent block.
    """

    m: np.ndarray
    M: np.ndarray
    n: float
    s: float
    split: int

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.m, dtype=float))
        M = np.asarray(self.M, dtype=float)
        if M.ndim != 2 or M.shape != (m.size, m.size):
            raise StructuralInputError(f"M must be {m.size}x{m.size}, got {M.shape}")
        if not np.allclose(M, M.T, atol=1e-10 * (1.0 + np.abs(M).max(initial=0.0))):
            raise StructuralInputError("M must be symmetric")
        if not self.n > 0:
            raise NumericalError(f"degrees of freedom must be positive, got {self.n}")
        if not self.s > 0:
            raise NumericalError(f"scale must be positive, got {self.s}")
        if not 0 <= self.split <= m.size:
            raise StructuralInputError(f"split {self.split} outside state dimension {m.size}")
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "M", 0.5 * (M + M.T))
        object.__setattr__(self, "n", float(self.n))
        object.__setattr__(self, "s", float(self.s))

    @property
    def dim(self) -> int:
        return self.m.size

    @property
    def gamma_idx(self) -> np.ndarray:
        return np.arange(self.split, self.dim)


@dataclass(frozen=True)
class DiscountSpec:
    """State discounts for the (exogenous, parental) blocks and the volatility discount."""

    delta_phi: float = 1.0
    delta_gamma: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        for name in ("delta_phi", "delta_gamma", "beta"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise NumericalError(f"{name} must lie in (0, 1], got {v}")


@dataclass(frozen=True)
class TForecast:
    """One-step forecast: univariate T with ``dof`` df, mode ``location``, scale ``scale_q``."""

    location: float
    scale_q: float
    dof: float

    def logpdf(self, y: float) -> float:
        return t_logpdf(y, self.location, self.scale_q, self.dof)


def t_logpdf(y, location, scale_q, dof):
    """Log density of the scaled Student T (variance = scale_q*dof/(dof-2)).

    Accepts scalars or broadcastable arrays.
    """
    if np.any(np.asarray(scale_q) <= 0):
        raise NumericalError(f"T scale must be positive, got {scale_q}")
    if math.isinf(dof):
        return stats.norm.logpdf(y, loc=location, scale=np.sqrt(scale_q))
    return stats.t.logpdf(y, df=dof, loc=location, scale=np.sqrt(scale_q))


def one_step_forecast(ng: NGPosterior, F: np.ndarray) -> TForecast:
    """Prior-predictive T for the next observation given regression vector F."""
    F = np.asarray(F, dtype=float)
    if F.shape != (ng.dim,):
        raise StructuralInputError(f"F has dim {F.shape}, state has dim {ng.dim}")
    location = float(F @ ng.m)
    scale_q = float(F @ ng.M @ F + ng.s)
    return TForecast(location=location, scale_q=scale_q, dof=ng.n)


def conjugate_update(ng: NGPosterior, F: np.ndarray, y: float) -> NGPosterior:
    """Exact conjugate update on one observation.

    e = y - F'm, q = F'MF + s, a = MF/q, z = (n + e^2/q)/(n+1);
    m <- m + a e, M <- (M - a a' q) z, n <- n+1, s <- z s.
    """
    F = np.asarray(F, dtype=float)
    if F.shape != (ng.dim,):
        raise StructuralInputError(f"F has dim {F.shape}, state has dim {ng.dim}")
    q = float(F @ ng.M @ F + ng.s)
    if not q > 0:
        raise NumericalError(f"forecast scale q={q} is not positive")
    e = float(y) - float(F @ ng.m)
    a = ng.M @ F / q
    if math.isinf(ng.n):
        z, n_new = 1.0, math.inf
    else:
        z = (ng.n + e * e / q) / (ng.n + 1.0)
        n_new = ng.n + 1.0
    m_new = ng.m + a * e
    M_new = (ng.M - np.outer(a, a) * q) * z
    return NGPosterior(m=m_new, M=0.5 * (M_new + M_new.T), n=n_new, s=z * ng.s, split=ng.split)


def evolve(ng: NGPosterior, G: np.ndarray, disc: DiscountSpec) -> NGPosterior:
    """Discount evolution to the next period.

    m <- Gm and P = GMG'; the innovation scale W is block diagonal on the
    (exogenous, parental) partition with blocks P_bb (1-delta_b)/delta_b, so
    each diagonal block of M inflates to P_bb/delta_b. n <- beta n, s unchanged.
    """
    G = np.asarray(G, dtype=float)
    if G.shape != (ng.dim, ng.dim):
        raise StructuralInputError(f"G has shape {G.shape}, state has dim {ng.dim}")
    m_new = G @ ng.m
    P = G @ ng.M @ G.T
    M_new = P + evolution_innovation_scale(P, ng.split, disc)
    n_new = ng.n if math.isinf(ng.n) else disc.beta * ng.n
    return NGPosterior(m=m_new, M=M_new, n=n_new, s=ng.s, split=ng.split)


def evolution_innovation_scale(P: np.ndarray, split: int, disc: DiscountSpec) -> np.ndarray:
    """Block-diagonal discount innovation W built from the evolved scale P."""
    d = P.shape[0]
    W = np.zeros_like(P)
    for lo, hi, delta in ((0, split, disc.delta_phi), (split, d, disc.delta_gamma)):
        if hi > lo and delta < 1.0:
            W[lo:hi, lo:hi] = P[lo:hi, lo:hi] * ((1.0 - delta) / delta)
    return W


def sample_lambda(ng: NGPosterior, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``count`` precisions lam ~ Gamma(n/2, rate n*s/2) (constant 1/s when n=inf)."""
    if math.isinf(ng.n):
        return np.full(count, 1.0 / ng.s)
    return rng.gamma(shape=ng.n / 2.0, scale=2.0 / (ng.n * ng.s), size=count)


def sample_ng(ng: NGPosterior, count: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Joint draws from the normal-gamma: returns (theta (count,d), lam (count,)).

    theta | lam ~ N(m, M/(s*lam)). Deterministic given the generator/seed.
    """
    if count < 1:
        raise StructuralInputError(f"sample count must be >= 1, got {count}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    lam = sample_lambda(ng, count, rng)
    root = chol_psd(ng.M)
    z = rng.standard_normal((count, ng.dim))
    scale = 1.0 / np.sqrt(ng.s * lam)
    theta = ng.m + (z @ root.T) * scale[:, None]
    return theta, lam


def conjugate_update_batch(ng: NGPosterior, F: np.ndarray, y: np.ndarray):
    """Conjugate update vectorized over R (regression vector, observation) pairs.

    Returns (m (R,d), M (R,d,d), n, s (R,)); each slice r is exactly
    ``conjugate_update(ng, F[r], y[r])``.
    """
    F = np.atleast_2d(np.asarray(F, dtype=float))
    y = np.asarray(y, dtype=float)
    if F.shape[1] != ng.dim or y.shape != (F.shape[0],):
        raise StructuralInputError(
            f"batch shapes {F.shape}/{y.shape} do not match state dim {ng.dim}"
        )
    MF = F @ ng.M
    q = np.einsum("rd,rd->r", F, MF) + ng.s
    if np.any(q <= 0):
        raise NumericalError("non-positive forecast scale in batched update")
    e = y - F @ ng.m
    a = MF / q[:, None]
    if math.isinf(ng.n):
        z = np.ones_like(q)
        n_new = math.inf
    else:
        z = (ng.n + e * e / q) / (ng.n + 1.0)
        n_new = ng.n + 1.0
    m_new = ng.m + a * e[:, None]
    M_new = (ng.M[None, :, :] - q[:, None, None] * a[:, :, None] * a[:, None, :]) * z[:, None, None]
    M_new = 0.5 * (M_new + M_new.transpose(0, 2, 1))
    return m_new, M_new, n_new, z * ng.s


def sample_ng_batch_one(
    m: np.ndarray, M: np.ndarray, n: float, s: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """One (theta, lam) draw from each of R normal-gamma parameter sets."""
    from ._util import chol_psd_batch

    R, d = m.shape
    if math.isinf(n):
        lam = 1.0 / s
    else:
        lam = rng.gamma(shape=n / 2.0, scale=2.0 / (n * s))
    roots = chol_psd_batch(M)
    z = rng.standard_normal((R, d))
    theta = m + np.einsum("rij,rj->ri", roots, z) / np.sqrt(s * lam)[:, None]
    return theta, lam


def marginal_t_subvector(ng: NGPosterior, idx) -> tuple[np.ndarray, np.ndarray, float]:
    """Marginal multivariate-T parameters (location, scale matrix, dof) of a state subvector."""
    idx = np.asarray(idx, dtype=int)
    if idx.size and (idx.min() < 0 or idx.max() >= ng.dim):
        raise StructuralInputError(f"indices {idx} outside state dimension {ng.dim}")
    return ng.m[idx], ng.M[np.ix_(idx, idx)], ng.n

