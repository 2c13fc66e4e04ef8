"""Post-intervention analysis: the missing-data counterfactual filter, the
outcome-adaptive discount-intervention run, and effect summaries comparing them.

After the intervention time the counterfactual model treats the experimental
series as missing. Each step draws a prior parameter ensemble, builds the
per-draw conditional normals for the missing block given the observed
controls (Schur-complement pieces via the Cholesky factor of the
experimental precision block), samples the missing values from the implied
normal mixture, completes the data vector per draw, and proceeds with the
usual determinant-weighted update and VB projection.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._util import (
    STREAM_EFFECT,
    STREAM_FILTER,
    STREAM_MISSING,
    normalize_log_weights,
    rng_stream,
    weighted_quantile,
)
from .engine import (
    SUMMARY_QS,
    Engine,
    EngineState,
    ModelSpec,
    SampleSet,
    StepRecord,
    _coef_summaries,
    assemble_gamma,
    compute_mu,
    recoupling_log_weights,
    vb_decouple,
)
from .errors import DegeneracyError, NumericalError, StructuralInputError
from .udlm import (
    DiscountSpec,
    conjugate_update_batch,
    evolve,
    sample_ng,
    sample_ng_batch_one,
)


@dataclass(frozen=True)
class InterventionSpec:
    """Intervention layout: when the experimental outcomes go missing, which
    series are controls, and the temporary discounts the adaptive run uses
    for the evolution into the intervention time."""

    time: object
    control_idx: tuple[int, ...]
    experimental_idx: tuple[int, ...]
    oam_delta_star: float | None = None
    oam_beta_star: float | None = None

    def validate(self, q: int) -> None:
        c, e = set(self.control_idx), set(self.experimental_idx)
        if not c:
            raise StructuralInputError("at least one control series is required")
        if c & e or (c | e) != set(range(q)):
            raise StructuralInputError(
                "control and experimental indices must partition the series"
            )
        for name in ("oam_delta_star", "oam_beta_star"):
            v = getattr(self, name)
            if v is not None and not 0.0 < v <= 1.0:
                raise StructuralInputError(f"{name} must lie in (0, 1], got {v}")


@dataclass(frozen=True)
class MixtureConditional:
    """Per-draw pieces of the missing-data normal mixture.

    ``B`` is the inverse lower Cholesky factor of the experimental precision
    block (so B'B inverts it) and ``Fmat`` the cross block times B'. The
    component conditional for the missing values has mean
    alpha_e - B'(F'(y_c - alpha_c)) and covariance B'B.
    """

    log_weights: np.ndarray
    weights: np.ndarray
    alpha_c: np.ndarray
    alpha_e: np.ndarray
    B: np.ndarray
    Fmat: np.ndarray
    control_idx: tuple[int, ...]
    experimental_idx: tuple[int, ...]
    y_c: np.ndarray

    @property
    def R(self) -> int:
        return self.log_weights.shape[0]


@dataclass(frozen=True)
class CounterfactualPosterior:
    """Filtered posterior of the missing experimental outcomes at one time."""

    t: object
    draws: np.ndarray
    weights: np.ndarray
    quantiles: np.ndarray
    mixture_mean: np.ndarray
    mixture_cov: np.ndarray
    experimental_idx: tuple[int, ...]


def _partition_omega(omega: np.ndarray, c: list[int], e: list[int]):
    return (
        omega[:, c][:, :, c],
        omega[:, c][:, :, e],
        omega[:, e][:, :, e],
    )


def build_mixture(
    gammas: np.ndarray,
    mus: np.ndarray,
    lams: np.ndarray,
    spec: InterventionSpec,
    y_c: np.ndarray,
) -> MixtureConditional:
    """Conditional mixture pieces for all R draws of (Gamma, mu, Lambda).

    Computes, per draw, alpha = (I-Gamma)^{-1} mu, the precision
    Omega = (I-Gamma)' Lam (I-Gamma), the Cholesky-based Schur pieces, and
    the control-marginal log density l = log|Sigma_c^{-1}|/2 - quad/2 (up to
    the shared constant). Softmax of l gives the mixture weights.
    """
    gammas = np.asarray(gammas, dtype=float)
    if gammas.ndim == 2:
        gammas = gammas[None]
    R, q, _ = gammas.shape
    mus = np.asarray(mus, dtype=float).reshape(R, q)
    lams = np.asarray(lams, dtype=float).reshape(R, q)
    c = list(spec.control_idx)
    e = list(spec.experimental_idx)
    y_c = np.asarray(y_c, dtype=float)
    if y_c.shape != (len(c),):
        raise StructuralInputError(f"y_c must have {len(c)} entries, got {y_c.shape}")

    A = np.eye(q)[None] - gammas
    try:
        alpha = np.linalg.solve(A, mus[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError as exc:
        raise DegeneracyError("singular I - Gamma in mixture construction") from exc
    omega = np.einsum("rji,rj,rjk->rik", A, lams, A)
    om_c, om_ce, om_e = _partition_omega(omega, c, e)
    qe = len(e)
    if qe:
        try:
            L_e = np.linalg.cholesky(om_e)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(
                "experimental precision block is not positive definite"
            ) from exc
        B = np.linalg.solve(L_e, np.broadcast_to(np.eye(qe), (R, qe, qe)).copy())
        Fmat = om_ce @ B.transpose(0, 2, 1)
        sc_inv = om_c - Fmat @ Fmat.transpose(0, 2, 1)
    else:
        B = np.zeros((R, 0, 0))
        Fmat = np.zeros((R, len(c), 0))
        sc_inv = omega
    try:
        L_c = np.linalg.cholesky(sc_inv)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("control-marginal precision is not positive definite") from exc
    logdet = 2.0 * np.sum(np.log(np.diagonal(L_c, axis1=1, axis2=2)), axis=1)
    resid = y_c - alpha[:, c]
    u = np.einsum("rik,ri->rk", L_c, resid)
    ell = 0.5 * logdet - 0.5 * np.einsum("rk,rk->r", u, u)
    weights = normalize_log_weights(ell)
    return MixtureConditional(
        log_weights=ell,
        weights=weights,
        alpha_c=alpha[:, c],
        alpha_e=alpha[:, e],
        B=B,
        Fmat=Fmat,
        control_idx=tuple(c),
        experimental_idx=tuple(e),
        y_c=y_c,
    )


def control_marginal_logpdf(draw, spec: InterventionSpec, y_c: np.ndarray) -> float:
    """Control-block marginal normal log density for one (Gamma, mu, Lambda) draw,
    up to the shared normalizing constant."""
    gamma, mu, lam = draw
    mix = build_mixture(
        np.asarray(gamma, dtype=float)[None],
        np.asarray(mu, dtype=float)[None],
        np.asarray(lam, dtype=float)[None],
        spec,
        y_c,
    )
    return float(mix.log_weights[0])


def mixture_weights(draws, spec: InterventionSpec, y_c: np.ndarray) -> np.ndarray:
    """Normalized component probabilities over an ensemble of (Gamma, mu, Lambda) draws."""
    gammas, mus, lams = draws
    mix = build_mixture(gammas, mus, lams, spec, y_c)
    return mix.weights


def component_conditional(mix: MixtureConditional, r: int) -> tuple[np.ndarray, np.ndarray]:
    """Conditional mean and covariance of the missing block under component r."""
    resid = mix.y_c - mix.alpha_c[r]
    mean = mix.alpha_e[r] - mix.B[r].T @ (mix.Fmat[r].T @ resid)
    cov = mix.B[r].T @ mix.B[r]
    return mean, cov


def mixture_moments(mix: MixtureConditional) -> tuple[np.ndarray, np.ndarray]:
    """Exact mean and covariance of the full normal mixture."""
    resid = mix.y_c - mix.alpha_c
    inner = np.einsum("rce,rc->re", mix.Fmat, resid)
    means = mix.alpha_e - np.einsum("rji,rj->ri", mix.B, inner)
    covs = mix.B.transpose(0, 2, 1) @ mix.B
    w = mix.weights
    mean = w @ means
    second = np.einsum("r,rij->ij", w, covs + means[:, :, None] * means[:, None, :])
    return mean, second - np.outer(mean, mean)


def sample_missing(
    mix: MixtureConditional,
    count: int,
    rng,
    zero_noise: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw missing-block samples from the normal mixture.

    Multinomial component selection by the mixture weights, then
    y_e = alpha_e - B'(F'(y_c - alpha_c) + z) per selected component. The
    per-component matrices were already factored once in
    :func:`build_mixture` and are reused here. Returns (samples, component
    indices).
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    qe = len(mix.experimental_idx)
    sel = rng.choice(mix.R, size=count, p=mix.weights)
    z = np.zeros((count, qe)) if zero_noise else rng.standard_normal((count, qe))
    resid = mix.y_c - mix.alpha_c[sel]
    inner = np.einsum("rce,rc->re", mix.Fmat[sel], resid) + z
    y_e = mix.alpha_e[sel] - np.einsum("rji,rj->ri", mix.B[sel], inner)
    return y_e, sel


def cfm_step(
    eng: Engine,
    state: EngineState,
    spec: InterventionSpec,
    collect_fitted: bool = True,
) -> tuple[EngineState, StepRecord]:
    """One counterfactual filter step with only the control block observed.

    The posterior importance weights depend on the completed vector through
    |det(I - Gamma)| only; each sampled missing vector is paired with a
    single fresh naive-posterior parameter draw conditional on it.
    """
    t = state.t_index
    graph = eng.spec.graph
    q = graph.q
    R = eng.spec.R
    y_row = eng.data[t]
    c = list(spec.control_idx)
    e = list(spec.experimental_idx)
    y_c = y_row[c]
    if np.any(~np.isfinite(y_c)):
        raise StructuralInputError(f"control series unobserved at t={eng.times[t]}")
    t_star = _time_index(eng.times, spec.time)
    for j, d in enumerate(eng.spec.designs):
        bad = set(d.lags) & set(e)
        if bad and t - 1 >= t_star:
            raise StructuralInputError(
                f"series {j} lags experimental series {sorted(bad)} after the "
                "intervention; missing lagged values are not supported"
            )
    xs = eng.xs_at(t)
    splits = [p.split for p in state.priors]

    prior_thetas, prior_lams = [], []
    for j in range(q):
        th, lm = sample_ng(state.priors[j], R, rng_stream(state.seed, STREAM_MISSING, t, j))
        prior_thetas.append(th)
        prior_lams.append(lm)
    lams0 = np.stack(prior_lams, axis=1)
    gammas0 = assemble_gamma(prior_thetas, graph, splits)
    mus0 = compute_mu(prior_thetas, xs, splits)
    mix = build_mixture(gammas0, mus0, lams0, spec, y_c)
    y_e_draws, _ = sample_missing(mix, R, rng_stream(state.seed, STREAM_MISSING, t, q))

    completed = np.tile(y_row, (R, 1))
    completed[:, e] = y_e_draws

    post_thetas, post_lams = [], []
    for j in range(q):
        Fb = np.concatenate(
            [np.tile(xs[j], (R, 1)), completed[:, list(graph.sp[j])]], axis=1
        )
        m_b, M_b, n_b, s_b = conjugate_update_batch(state.priors[j], Fb, completed[:, j])
        th, lm = sample_ng_batch_one(
            m_b, M_b, n_b, s_b, rng_stream(state.seed, STREAM_FILTER, t, j)
        )
        post_thetas.append(th)
        post_lams.append(lm)
    lambdas = np.stack(post_lams, axis=1)
    gammas = assemble_gamma(post_thetas, graph, splits)
    logw = recoupling_log_weights(gammas, reject_explosive=eng.spec.reject_explosive)
    weights = normalize_log_weights(logw)
    ess_fraction = float(1.0 / (R * np.sum(weights * weights)))
    if R > 10 and ess_fraction < 10.0 / R:
        raise DegeneracyError(
            f"counterfactual importance weights collapsed (ESS {ess_fraction * R:.1f})"
        )
    ss = SampleSet(
        thetas=tuple(post_thetas), lambdas=lambdas, weights=weights, ess_fraction=ess_fraction
    )
    prev_n = [p.n for p in (state.vb or state.priors)]
    vb = vb_decouple(ss, prev_n=prev_n, splits=splits)
    priors_next = tuple(
        evolve(vb[j], eng.spec.evolution(j), eng.spec.discounts[j]) for j in range(q)
    )

    qmat = np.empty((len(e), len(SUMMARY_QS)))
    for k in range(len(e)):
        qmat[k] = weighted_quantile(y_e_draws[:, k], weights, SUMMARY_QS)
    mmean, mcov = mixture_moments(mix)
    cf = CounterfactualPosterior(
        t=eng.times[t],
        draws=y_e_draws,
        weights=weights,
        quantiles=qmat,
        mixture_mean=mmean,
        mixture_cov=mcov,
        experimental_idx=tuple(e),
    )

    fitted = None
    if collect_fitted:
        fitted = np.empty((q, R))
        for j in range(q):
            Fb = np.concatenate(
                [np.tile(xs[j], (R, 1)), completed[:, list(graph.sp[j])]], axis=1
            )
            fitted[j] = np.einsum("rd,rd->r", Fb, post_thetas[j])
    means, quants = _coef_summaries(ss)
    rec = StepRecord(
        t=eng.times[t],
        t_index=t,
        ess_fraction=ess_fraction,
        forecasts=(),
        naive=(),
        vb=vb,
        priors=state.priors,
        coef_mean=means,
        coef_quantiles=quants,
        discounts=tuple(eng.spec.discounts),
        fitted_draws=fitted,
        weights=weights.copy() if collect_fitted else None,
        counterfactual=cf,
    )
    new_state = EngineState(
        t_index=t + 1, priors=priors_next, vb=vb, samples=ss, seed=state.seed
    )
    return new_state, rec


def _time_index(times: Sequence, label) -> int:
    try:
        return list(times).index(label)
    except ValueError as exc:
        raise StructuralInputError(f"intervention time {label!r} not in the data") from exc


def run_cfm(
    mspec: ModelSpec,
    data: np.ndarray,
    times: Sequence,
    seed: int,
    spec: InterventionSpec,
    collect_fitted: bool = True,
    marglik_fn=None,
) -> tuple[EngineState, list[StepRecord]]:
    """Standard filtering before the intervention, mixture filtering from it on."""
    spec.validate(mspec.graph.q)
    eng = Engine(mspec, data, times, seed)
    t_star = _time_index(times, spec.time)
    state = eng.initial_state()
    if t_star < eng.start_index:
        raise StructuralInputError("intervention predates the first filterable row")
    history: list[StepRecord] = []
    while state.t_index < len(times):
        if state.t_index < t_star:
            state, rec = eng.step(state, marglik_fn=marglik_fn, collect_fitted=collect_fitted)
        else:
            state, rec = cfm_step(eng, state, spec, collect_fitted=collect_fitted)
        history.append(rec)
    return state, history


def oam_discount_override(mspec: ModelSpec, spec: InterventionSpec, t_star: int):
    """Discount override applying (delta*, beta*) to the experimental series for
    the evolution into the intervention time only."""
    exp_set = set(spec.experimental_idx)

    def override(t_next: int, j: int) -> DiscountSpec | None:
        if t_next != t_star or j not in exp_set:
            return None
        base = mspec.discounts[j]
        delta = spec.oam_delta_star if spec.oam_delta_star is not None else None
        beta = spec.oam_beta_star if spec.oam_beta_star is not None else base.beta
        if delta is None and spec.oam_beta_star is None:
            return None
        return DiscountSpec(
            delta_phi=delta if delta is not None else base.delta_phi,
            delta_gamma=delta if delta is not None else base.delta_gamma,
            beta=beta,
        )

    return override


def oam_run(
    mspec: ModelSpec,
    data: np.ndarray,
    times: Sequence,
    seed: int,
    spec: InterventionSpec,
    collect_fitted: bool = True,
    marglik_fn=None,
) -> tuple[EngineState, list[StepRecord]]:
    """Full-data run with the outcome-adaptive discount intervention."""
    spec.validate(mspec.graph.q)
    eng = Engine(mspec, data, times, seed)
    t_star = _time_index(times, spec.time)
    return eng.run(
        discount_override=oam_discount_override(mspec, spec, t_star),
        marglik_fn=marglik_fn,
        collect_fitted=collect_fitted,
    )


@dataclass(frozen=True)
class EffectSummary:
    """Per-time distribution summaries of the fitted-mean differences between runs."""

    times: tuple
    series_idx: tuple[int, ...]
    quantiles: np.ndarray  # (T, n_series, 3) at SUMMARY_QS


def effect_summary(
    cfm_history: Sequence[StepRecord],
    oam_history: Sequence[StepRecord],
    spec: InterventionSpec,
    seed: int,
    pairs: int | None = None,
) -> EffectSummary:
    """Fitted-mean differences F'theta(CFM) - F'theta(OAM) per time and
    experimental series, summarized by pairing independent weighted draws."""
    times_a = [r.t for r in cfm_history]
    times_b = [r.t for r in oam_history]
    if times_a != times_b:
        raise StructuralInputError("histories are not aligned in time")
    e = list(spec.experimental_idx)
    out = np.empty((len(times_a), len(e), len(SUMMARY_QS)))
    for i, (ra, rb) in enumerate(zip(cfm_history, oam_history)):
        if ra.fitted_draws is None or rb.fitted_draws is None:
            raise StructuralInputError(
                "effect_summary needs histories run with collect_fitted=True"
            )
        rng = rng_stream(seed, STREAM_EFFECT, ra.t_index)
        K = pairs or max(ra.fitted_draws.shape[1], rb.fitted_draws.shape[1])
        # common uniforms couple the two resampled ensembles, so identical
        # histories give an exactly-zero difference distribution
        u = rng.random(K)
        ia = np.searchsorted(np.cumsum(ra.weights), u).clip(0, ra.fitted_draws.shape[1] - 1)
        ib = np.searchsorted(np.cumsum(rb.weights), u).clip(0, rb.fitted_draws.shape[1] - 1)
        for k, j in enumerate(e):
            delta = ra.fitted_draws[j, ia] - rb.fitted_draws[j, ib]
            out[i, k] = np.quantile(delta, SUMMARY_QS)
    return EffectSummary(times=tuple(times_a), series_idx=tuple(e), quantiles=out)


def counterfactual_levels(
    history: Sequence[StepRecord],
    spec: InterventionSpec,
    anchors: np.ndarray,
    seed: int,
) -> dict:
    """Cumulative exponentiation of counterfactual log-return draws, anchored at
    the last observed pre-intervention levels; per-time level quantiles.

    ``anchors`` holds one level per experimental series. Each time's weighted
    draw cloud is resampled to uniform weights, then compounded by index.
    """
    cf_steps = [r for r in history if r.counterfactual is not None]
    if not cf_steps:
        return {"times": (), "quantiles": np.zeros((0, len(spec.experimental_idx), 3))}
    R = cf_steps[0].counterfactual.draws.shape[0]
    anchors = np.asarray(anchors, dtype=float)
    levels = np.tile(anchors, (R, 1))
    times, quants = [], []
    for rec in cf_steps:
        cf = rec.counterfactual
        rng = rng_stream(seed, STREAM_EFFECT, rec.t_index, 1)
        pick = rng.choice(cf.draws.shape[0], size=R, p=cf.weights)
        levels = levels * np.exp(cf.draws[pick])
        times.append(rec.t)
        quants.append(np.quantile(levels, SUMMARY_QS, axis=0).T)
    return {"times": tuple(times), "quantiles": np.stack(quants, axis=0)}
