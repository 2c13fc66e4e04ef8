"""Monte Carlo one-step predictive densities and sequential model monitoring.

The one-step density factorizes as p(y) = g(y) * prod_j p_j(y_j | y_parents),
where the product term is analytic (univariate T forecasts) and g(y) is the
expectation of |det(I - Gamma)| under the updated posterior of the parental
coefficients. Two estimators are provided: averaging the determinant over
posterior-T draws (low variance) and averaging |det| * f(y|Gamma) over
prior-T draws (the direct baseline). A Bayes-factor monitor accumulates
per-time log predictive differences between two runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._util import STREAM_MARGLIK, rng_stream
from .engine import assemble_gamma, recoupling_log_weights
from .errors import StructuralInputError
from .structure import GraphStructure
from .udlm import NGPosterior, conjugate_update, one_step_forecast, sample_ng, t_logpdf


@dataclass(frozen=True)
class MargLikRecord:
    """One-step log predictive density estimate at one time point."""

    t: object
    log_f: float
    log_g: float
    log_pred: float
    estimator_variance: float
    method: str


@dataclass(frozen=True)
class MonitorTrajectory:
    """Sequential Bayes-factor comparison of model A against model B."""

    times: tuple
    increments: np.ndarray
    probabilities: np.ndarray
    excluded_times: frozenset


def _regression_vectors(graph: GraphStructure, xs, y):
    y = np.asarray(y, dtype=float)
    return [np.concatenate([xs[j], y[list(graph.sp[j])]]) for j in range(graph.q)]


def predictive_product_f(priors: Sequence[NGPosterior], graph: GraphStructure, xs, y) -> float:
    """Sum over series of the log univariate-T forecast density at y_j given its parents."""
    Fs = _regression_vectors(graph, xs, y)
    y = np.asarray(y, dtype=float)
    total = 0.0
    for j in range(graph.q):
        fc = one_step_forecast(priors[j], Fs[j])
        total += fc.logpdf(y[j])
    return float(total)


def _gamma_subposterior(ng: NGPosterior) -> NGPosterior:
    """Marginal T representation of the parental block as a reduced NG."""
    idx = ng.gamma_idx
    return NGPosterior(
        m=ng.m[idx], M=ng.M[np.ix_(idx, idx)], n=ng.n, s=ng.s, split=0
    )


def _log_mean_and_var(logs: np.ndarray) -> tuple[float, float]:
    """Log of the sample mean of exp(logs), and the delta-method variance of that log."""
    R = logs.size
    c = float(np.max(logs))
    u = np.exp(logs - c)
    mean_u = float(np.mean(u))
    log_mean = c + math.log(mean_u)
    if R > 1:
        var_u = float(np.var(u, ddof=1))
        var_log = var_u / (R * mean_u * mean_u)
    else:
        var_log = 0.0
    return log_mean, var_log


def posterior_estimator(
    priors: Sequence[NGPosterior],
    graph: GraphStructure,
    xs,
    y,
    R: int,
    rng,
    t=None,
) -> MargLikRecord:
    """Estimate log p(y) by averaging |det(I - Gamma)| over posterior-T draws
    of the parental coefficients, times the analytic forecast product."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    log_f = predictive_product_f(priors, graph, xs, y)
    Fs = _regression_vectors(graph, xs, y)
    y = np.asarray(y, dtype=float)
    updated = [conjugate_update(priors[j], Fs[j], y[j]) for j in range(graph.q)]
    if all(len(graph.sp[j]) == 0 for j in range(graph.q)):
        return MargLikRecord(t=t, log_f=log_f, log_g=0.0, log_pred=log_f,
                             estimator_variance=0.0, method="posterior")
    gam_draws = []
    for j in range(graph.q):
        sub = _gamma_subposterior(updated[j])
        th, _ = sample_ng(sub, R, rng)
        gam_draws.append(th)
    gammas = assemble_gamma(gam_draws, graph, [0] * graph.q)
    logdets = recoupling_log_weights(gammas)
    log_g, var_log = _log_mean_and_var(logdets)
    return MargLikRecord(
        t=t, log_f=log_f, log_g=log_g, log_pred=log_f + log_g,
        estimator_variance=var_log, method="posterior",
    )


def conditional_forecast_given_gamma(
    ng: NGPosterior, x: np.ndarray, y_par: np.ndarray, gam: np.ndarray
) -> tuple[np.ndarray, np.ndarray, float]:
    """T parameters of y_j given the parental coefficients.

    Conditioning the normal-gamma on the parental block gives
    lam | gam ~ Gamma((n+k)/2, s(n+Q)/2) with Q the prior Mahalanobis term,
    and a normal for y around c(gam); compounding yields a T with n+k df.
    ``gam`` may be (k,) or (R, k); returns (locations, scales, dof).
    """
    k = ng.dim - ng.split
    x = np.asarray(x, dtype=float)
    gam2 = np.atleast_2d(np.asarray(gam, dtype=float))
    m_phi, m_gam = ng.m[: ng.split], ng.m[ng.split :]
    M = ng.M
    M_pp = M[: ng.split, : ng.split]
    M_pg = M[: ng.split, ng.split :]
    M_gg = M[ng.split :, ng.split :]
    dev = gam2 - m_gam
    w = np.linalg.solve(M_gg, dev.T).T if k else dev
    quad = np.einsum("rk,rk->r", dev, w)
    cond_shift = (x @ M_pg) @ w.T if ng.split else np.zeros(gam2.shape[0])
    loc = float(x @ m_phi) + cond_shift + gam2 @ np.asarray(y_par, dtype=float)
    if ng.split:
        M_bar = M_pp - M_pg @ np.linalg.solve(M_gg, M_pg.T)
        v = float(x @ M_bar @ x) / ng.s + 1.0
    else:
        v = 1.0
    if math.isinf(ng.n):
        s_cond = np.full(gam2.shape[0], ng.s)
        dof = math.inf
    else:
        s_cond = ng.s * (ng.n + quad) / (ng.n + k)
        dof = ng.n + k
    return loc, v * s_cond, dof


def prior_estimator(
    priors: Sequence[NGPosterior],
    graph: GraphStructure,
    xs,
    y,
    M: int,
    rng,
    t=None,
) -> MargLikRecord:
    """Estimate log p(y) by averaging |det(I - Gamma)| * f(y | Gamma) over
    prior-T draws of the parental coefficients."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    log_f = predictive_product_f(priors, graph, xs, y)
    y = np.asarray(y, dtype=float)
    if all(len(graph.sp[j]) == 0 for j in range(graph.q)):
        return MargLikRecord(t=t, log_f=log_f, log_g=0.0, log_pred=log_f,
                             estimator_variance=0.0, method="prior")
    gam_draws = []
    log_cond = np.zeros(M)
    for j in range(graph.q):
        parents = list(graph.sp[j])
        if not parents:
            fc = one_step_forecast(priors[j], np.concatenate([xs[j], np.zeros(0)]))
            log_cond += fc.logpdf(y[j])
            gam_draws.append(np.zeros((M, 0)))
            continue
        sub = _gamma_subposterior(priors[j])
        th, _ = sample_ng(sub, M, rng)
        gam_draws.append(th)
        loc, scale, dof = conditional_forecast_given_gamma(priors[j], xs[j], y[parents], th)
        log_cond += t_logpdf(y[j], loc, scale, dof)
    gammas = assemble_gamma(gam_draws, graph, [0] * graph.q)
    logdets = recoupling_log_weights(gammas)
    log_pred, var_log = _log_mean_and_var(logdets + log_cond)
    return MargLikRecord(
        t=t, log_f=log_f, log_g=log_pred - log_f, log_pred=log_pred,
        estimator_variance=var_log, method="prior",
    )


def make_marglik_fn(seed: int, R: int, method: str = "posterior"):
    """Hook for the engine's step loop; draws from an independent substream so
    enabling the computation never shifts the filter's own RNG."""

    estimator = {"posterior": posterior_estimator, "prior": prior_estimator}[method]

    def fn(priors, graph, xs, y, t_label, t_index):
        rng = rng_stream(seed, STREAM_MARGLIK, t_index)
        return estimator(priors, graph, xs, y, R, rng, t=t_label)

    return fn


def monitor(records_a: Sequence[MargLikRecord], records_b: Sequence[MargLikRecord], exclusions=()) -> MonitorTrajectory:
    """Sequential posterior probability of model A over model B from equal prior odds.

    The per-time increment is the log Bayes factor log_predA - log_predB,
    zeroed on excluded times; the probability is the logistic of the running sum.
    """
    times_a = [r.t for r in records_a]
    times_b = [r.t for r in records_b]
    if times_a != times_b:
        raise StructuralInputError("model records are not aligned in time")
    excluded = frozenset(exclusions)
    inc = np.array(
        [
            0.0 if ra.t in excluded else ra.log_pred - rb.log_pred
            for ra, rb in zip(records_a, records_b)
        ]
    )
    cum = np.cumsum(inc)
    probabilities = 1.0 / (1.0 + np.exp(-cum))
    return MonitorTrajectory(
        times=tuple(times_a),
        increments=inc,
        probabilities=probabilities,
        excluded_times=excluded,
    )


def discount_grid_curves(
    spec,
    data,
    times,
    seed: int,
    deltas: Sequence[float],
    betas: Sequence[float],
    until: int | None = None,
    R: int | None = None,
):
    """Cumulative log marginal likelihood curves over a grid of discount pairs.

    Returns {(delta, beta): (times, cumulative log predictive)}; every grid
    point runs on the same seed so curves differ only through the discounts.
    """
    from dataclasses import replace as _replace

    from .engine import Engine
    from .udlm import DiscountSpec

    out = {}
    for delta in deltas:
        for beta in betas:
            discounts = tuple(
                DiscountSpec(delta_phi=delta, delta_gamma=delta, beta=beta)
                for _ in range(spec.graph.q)
            )
            spec_db = _replace(spec, discounts=discounts)
            eng = Engine(spec_db, data, times, seed)
            _, hist = eng.run(until=until, marglik_fn=make_marglik_fn(seed, R or spec.R))
            ts = [rec.t for rec in hist]
            cum = np.cumsum([rec.marglik.log_pred for rec in hist])
            out[(delta, beta)] = (ts, cum)
    return out
