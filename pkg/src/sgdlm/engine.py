"""Recouple/decouple sequential filter for the simultaneous system.

Each step runs the per-series conjugate updates on regression vectors
F_jt = (x_jt, y_parents,t), draws an importance sample from the product of
the resulting naive posteriors, reweights by |det(I - Gamma)| to recouple
the joint posterior, projects back to per-series normal-gamma form by
moment-matching variational Bayes, and evolves through the discount
equations. Forecasting beyond one step is by direct simulation through the
evolution equations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import digamma, polygamma

from ._util import (
    STREAM_FILTER,
    STREAM_FORECAST,
    chol_psd,
    normalize_log_weights,
    rng_stream,
    weighted_quantile,
)
from .errors import DegeneracyError, NumericalError, StructuralInputError
from .structure import GraphStructure
from .udlm import (
    DiscountSpec,
    NGPosterior,
    TForecast,
    conjugate_update,
    evolution_innovation_scale,
    evolve,
    one_step_forecast,
    sample_ng,
)

#: quantiles reported for per-coefficient and counterfactual summaries
SUMMARY_QS = (0.05, 0.5, 0.95)


@dataclass(frozen=True)
class DesignRule:
    """How the exogenous block x_jt is built: optional intercept plus
    lag-1 values of the listed series."""

    intercept: bool = True
    lags: tuple[int, ...] = ()

    @property
    def x_dim(self) -> int:
        return int(self.intercept) + len(self.lags)

    def build_x(self, prev_row: np.ndarray | None) -> np.ndarray:
        x = np.empty(self.x_dim)
        k = 0
        if self.intercept:
            x[0] = 1.0
            k = 1
        if self.lags:
            if prev_row is None:
                raise StructuralInputError("lagged predictors requested but no previous row")
            x[k:] = np.asarray(prev_row, dtype=float)[list(self.lags)]
        return x


@dataclass(frozen=True)
class ModelSpec:
    """Full model: graph, per-series designs, discounts, initial priors, and
    the importance-sample size R."""

    graph: GraphStructure
    designs: tuple[DesignRule, ...]
    discounts: tuple[DiscountSpec, ...]
    priors: tuple[NGPosterior, ...]
    R: int
    evolutions: tuple[np.ndarray, ...] | None = None
    reject_explosive: bool = False

    def __post_init__(self):
        q = self.graph.q
        if not (len(self.designs) == len(self.discounts) == len(self.priors) == q):
            raise StructuralInputError("designs, discounts and priors must all have length q")
        if self.R < 1:
            raise StructuralInputError(f"R must be >= 1, got {self.R}")
        for j, (d, pr) in enumerate(zip(self.designs, self.priors)):
            want = d.x_dim + len(self.graph.sp[j])
            if pr.dim != want or pr.split != d.x_dim:
                raise StructuralInputError(
                    f"series {j}: prior dim {pr.dim}/split {pr.split} does not match "
                    f"design x_dim {d.x_dim} + {len(self.graph.sp[j])} parents"
                )

    def evolution(self, j: int) -> np.ndarray:
        if self.evolutions is None or self.evolutions[j] is None:
            return np.eye(self.priors[j].dim)
        return self.evolutions[j]

    @property
    def max_lag(self) -> int:
        return 1 if any(d.lags for d in self.designs) else 0


@dataclass(frozen=True)
class SampleSet:
    """Weighted Monte Carlo ensemble representing the recoupled joint posterior."""

    thetas: tuple[np.ndarray, ...]
    lambdas: np.ndarray
    weights: np.ndarray
    ess_fraction: float

    @property
    def R(self) -> int:
        return self.lambdas.shape[0]


@dataclass(frozen=True)
class JointMoments:
    """Implied joint normal for y: mean alpha and precision omega, with the
    generating (gamma, mu)."""

    alpha: np.ndarray
    omega: np.ndarray
    gamma: np.ndarray
    mu: np.ndarray


def assemble_gamma(thetas: Sequence[np.ndarray], graph: GraphStructure, splits: Sequence[int]) -> np.ndarray:
    """Place per-series parental coefficients into the q x q simultaneous matrix.

    ``thetas[j]`` is (d_j,) for a single draw or (R, d_j) for a batch; the
    parental block starts at ``splits[j]`` and follows the sp(j) order.
    Returns (q, q) or (R, q, q).
    """
    q = graph.q
    batched = np.ndim(thetas[0]) == 2
    R = thetas[0].shape[0] if batched else 1
    gam = np.zeros((R, q, q))
    for j in range(q):
        th = np.atleast_2d(np.asarray(thetas[j], dtype=float))
        block = th[:, splits[j] :]
        if block.shape[1] != len(graph.sp[j]):
            raise StructuralInputError(
                f"series {j}: parental block has {block.shape[1]} entries, "
                f"graph expects {len(graph.sp[j])}"
            )
        if graph.sp[j]:
            gam[:, j, list(graph.sp[j])] = block
    return gam if batched else gam[0]


def compute_mu(thetas: Sequence[np.ndarray], xs: Sequence[np.ndarray], splits: Sequence[int]) -> np.ndarray:
    """Per-series exogenous means mu_j = x_j' phi_j; (q,) or (R, q) matching the input."""
    batched = np.ndim(thetas[0]) == 2
    cols = []
    for th, x, sp in zip(thetas, xs, splits):
        th2 = np.atleast_2d(np.asarray(th, dtype=float))
        cols.append(th2[:, :sp] @ np.asarray(x, dtype=float))
    mu = np.stack(cols, axis=1)
    return mu if batched else mu[0]


def joint_moments(gamma: np.ndarray, mu: np.ndarray, lam: np.ndarray) -> JointMoments:
    """Solve for the implied joint normal: alpha = (I-Gamma)^{-1} mu,
    omega = (I-Gamma)' Lam (I-Gamma)."""
    gamma = np.asarray(gamma, dtype=float)
    mu = np.asarray(mu, dtype=float)
    lam = np.asarray(lam, dtype=float)
    q = gamma.shape[0]
    A = np.eye(q) - gamma
    sign, logdet = np.linalg.slogdet(A)
    if sign == 0 or not np.isfinite(logdet):
        raise DegeneracyError("I - Gamma is singular for this draw")
    alpha = np.linalg.solve(A, mu)
    omega = A.T @ (lam[:, None] * A)
    return JointMoments(alpha=alpha, omega=omega, gamma=gamma, mu=mu)


def recoupling_log_weights(gammas: np.ndarray, reject_explosive: bool = False) -> np.ndarray:
    """log |det(I - Gamma)| per draw, via batched LU with partial pivoting.

    With ``reject_explosive`` any draw whose coefficient matrix has spectral
    radius >= 1 gets log weight -inf (an accept/reject constraint on the
    posterior), leaving the surviving weights to renormalize.
    """
    R, q, _ = gammas.shape
    A = np.eye(q)[None, :, :] - gammas
    _, logabs = np.linalg.slogdet(A)
    if reject_explosive:
        rho = np.max(np.abs(np.linalg.eigvals(gammas)), axis=1)
        logabs = np.where(rho < 1.0, logabs, -np.inf)
    return logabs


def is_update(
    priors: Sequence[NGPosterior],
    graph: GraphStructure,
    xs: Sequence[np.ndarray],
    y: np.ndarray,
    R: int,
    rngs: Sequence[np.random.Generator],
    reject_explosive: bool = False,
) -> tuple[SampleSet, tuple[NGPosterior, ...], tuple[TForecast, ...]]:
    """One fully-observed importance-sampling update.

    Runs the conjugate update per series with F_jt = (x_jt, y_parents),
    samples R draws from the product of naive posteriors, and reweights by
    the absolute determinant of I - Gamma. Returns the weighted sample, the
    naive posteriors, and the one-step forecasts evaluated before updating.
    """
    y = np.asarray(y, dtype=float)
    q = graph.q
    naive, fcs = [], []
    for j in range(q):
        F = np.concatenate([xs[j], y[list(graph.sp[j])]])
        fcs.append(one_step_forecast(priors[j], F))
        naive.append(conjugate_update(priors[j], F, y[j]))
    thetas, lams = [], []
    for j in range(q):
        th, lm = sample_ng(naive[j], R, rngs[j])
        thetas.append(th)
        lams.append(lm)
    lambdas = np.stack(lams, axis=1)
    splits = [p.split for p in priors]
    gammas = assemble_gamma(thetas, graph, splits)
    logw = recoupling_log_weights(gammas, reject_explosive=reject_explosive)
    weights = normalize_log_weights(logw)
    ess_fraction = float(1.0 / (R * np.sum(weights * weights)))
    if R > 10 and ess_fraction < 10.0 / R:
        raise DegeneracyError(
            f"importance weights collapsed (ESS {ess_fraction * R:.1f} of {R}); "
            "the model is badly misspecified for this observation"
        )
    ss = SampleSet(thetas=tuple(thetas), lambdas=lambdas, weights=weights, ess_fraction=ess_fraction)
    return ss, tuple(naive), tuple(fcs)


def solve_gamma_dof(c: float, init: float, lo: float = 1e-3, hi: float = 1e6) -> float:
    """Solve digamma(n/2) - log(n/2) = c for n on [lo, hi].

    The left side increases from -inf to 0, so c >= 0 clamps to hi.
    Safeguarded Newton with a maintained bracket.
    """

    def f(n):
        return digamma(n / 2.0) - math.log(n / 2.0) - c

    flo, fhi = f(lo), f(hi)
    if flo >= 0.0:
        return lo
    if fhi <= 0.0:
        return hi
    n = min(max(init, lo), hi)
    a, b = lo, hi
    for _ in range(100):
        fn = f(n)
        if abs(fn) < 1e-13:
            return n
        if fn < 0.0:
            a = n
        else:
            b = n
        deriv = 0.5 * polygamma(1, n / 2.0) - 1.0 / n
        step = fn / deriv if deriv != 0 else 0.0
        n_new = n - step
        if not a < n_new < b:
            n_new = 0.5 * (a + b)
        if abs(n_new - n) < 1e-12 * max(1.0, n):
            return n_new
        n = n_new
    raise NumericalError("degrees-of-freedom solve did not converge in 100 iterations")


def vb_decouple(ss: SampleSet, prev_n: Sequence[float] | None = None, splits: Sequence[int] | None = None) -> tuple[NGPosterior, ...]:
    """Project the weighted joint sample to per-series conjugate normal-gamma form.

    Moment matching minimizing the KL divergence of the product form from the
    sample: 1/s = E[lam], m = E[lam theta]/E[lam],
    M = E[lam (theta-m)(theta-m)']/E[lam], and n solves
    digamma(n/2) - log(n s/2) = E[log lam].
    """
    R = ss.R
    if R < 2:
        raise DegeneracyError("VB projection needs at least 2 draws")
    if ss.ess_fraction * R < 2.0:
        raise DegeneracyError(f"ESS {ss.ess_fraction * R:.2f} too small for VB projection")
    w = ss.weights
    q = ss.lambdas.shape[1]
    out = []
    for j in range(q):
        lam = ss.lambdas[:, j]
        th = ss.thetas[j]
        wl = w * lam
        e_lam = float(wl.sum())
        s = 1.0 / e_lam
        m = (wl @ th) / e_lam
        dev = th - m
        M = (dev * wl[:, None]).T @ dev / e_lam
        e_loglam = float(w @ np.log(lam))
        c = e_loglam - math.log(e_lam)
        init = prev_n[j] if prev_n is not None else 10.0
        init = 1e6 if math.isinf(init) else init
        n = solve_gamma_dof(min(c, 0.0), init)
        split = splits[j] if splits is not None else 0
        out.append(NGPosterior(m=m, M=0.5 * (M + M.T), n=n, s=s, split=split))
    return tuple(out)


@dataclass(frozen=True)
class EngineState:
    """Immutable filter state: priors for the next time point plus the most
    recent posterior sample and VB projection."""

    t_index: int
    priors: tuple[NGPosterior, ...]
    vb: tuple[NGPosterior, ...] | None
    samples: SampleSet | None
    seed: int


@dataclass(frozen=True)
class StepRecord:
    """Everything worth keeping from one filter step."""

    t: object
    t_index: int
    ess_fraction: float
    forecasts: tuple[TForecast, ...]
    naive: tuple[NGPosterior, ...]
    vb: tuple[NGPosterior, ...]
    priors: tuple[NGPosterior, ...]
    coef_mean: tuple[np.ndarray, ...]
    coef_quantiles: tuple[np.ndarray, ...]
    discounts: tuple[DiscountSpec, ...]
    fitted_draws: np.ndarray | None = None
    weights: np.ndarray | None = None
    marglik: object | None = None
    counterfactual: object | None = None


def _coef_summaries(ss: SampleSet) -> tuple[tuple[np.ndarray, ...], tuple[np.ndarray, ...]]:
    means, quants = [], []
    for th in ss.thetas:
        means.append(ss.weights @ th)
        qmat = np.empty((th.shape[1], len(SUMMARY_QS)))
        for k in range(th.shape[1]):
            qmat[k] = weighted_quantile(th[:, k], ss.weights, SUMMARY_QS)
        quants.append(qmat)
    return tuple(means), tuple(quants)


def _fitted_mean_draws(ss: SampleSet, xs, y, graph, splits) -> np.ndarray:
    """Per-draw fitted means F_jt' theta_jt, (q, R)."""
    R = ss.R
    out = np.empty((graph.q, R))
    y = np.asarray(y, dtype=float)
    for j in range(graph.q):
        F = np.concatenate([xs[j], y[list(graph.sp[j])]])
        out[j] = ss.thetas[j] @ F
    return out


class Engine:
    """Driver binding a model to a data matrix and running the filter."""

    def __init__(self, spec: ModelSpec, data: np.ndarray, times: Sequence, seed: int):
        self.spec = spec
        self.data = np.asarray(data, dtype=float)
        if self.data.ndim != 2 or self.data.shape[1] != spec.graph.q:
            raise StructuralInputError(
                f"data must be (T, {spec.graph.q}), got {self.data.shape}"
            )
        self.times = list(times)
        if len(self.times) != self.data.shape[0]:
            raise StructuralInputError("times must match the number of data rows")
        self.seed = int(seed)

    @property
    def start_index(self) -> int:
        return self.spec.max_lag

    def initial_state(self) -> EngineState:
        return EngineState(
            t_index=self.start_index,
            priors=self.spec.priors,
            vb=None,
            samples=None,
            seed=self.seed,
        )

    def xs_at(self, t_index: int) -> list[np.ndarray]:
        prev = self.data[t_index - 1] if t_index > 0 else None
        return [d.build_x(prev) for d in self.spec.designs]

    def step(
        self,
        state: EngineState,
        discount_override: Callable[[int, int], DiscountSpec | None] | None = None,
        marglik_fn: Callable | None = None,
        collect_fitted: bool = False,
    ) -> tuple[EngineState, StepRecord]:
        """Filter the observation at ``state.t_index`` and evolve to the next period."""
        t = state.t_index
        if t >= len(self.times):
            raise StructuralInputError("no observation left to filter")
        y = self.data[t]
        xs = self.xs_at(t)
        rngs = [rng_stream(state.seed, STREAM_FILTER, t, j) for j in range(self.spec.graph.q)]
        mlrec = None
        if marglik_fn is not None:
            mlrec = marglik_fn(state.priors, self.spec.graph, xs, y, self.times[t], t)
        ss, naive, fcs = is_update(
            state.priors, self.spec.graph, xs, y, self.spec.R, rngs,
            reject_explosive=self.spec.reject_explosive,
        )
        prev_n = [p.n for p in (state.vb or state.priors)]
        splits = [p.split for p in state.priors]
        if self.spec.R == 1:
            # a single draw cannot identify the recoupling correction; the
            # naive posteriors carry forward (exact when the graph decouples)
            vb = naive
        else:
            vb = vb_decouple(ss, prev_n=prev_n, splits=splits)
        discounts = []
        priors_next = []
        for j in range(self.spec.graph.q):
            disc = None
            if discount_override is not None:
                disc = discount_override(t + 1, j)
            if disc is None:
                disc = self.spec.discounts[j]
            discounts.append(disc)
            priors_next.append(evolve(vb[j], self.spec.evolution(j), disc))
        means, quants = _coef_summaries(ss)
        rec = StepRecord(
            t=self.times[t],
            t_index=t,
            ess_fraction=ss.ess_fraction,
            forecasts=fcs,
            naive=naive,
            vb=vb,
            priors=state.priors,
            coef_mean=means,
            coef_quantiles=quants,
            discounts=tuple(discounts),
            fitted_draws=_fitted_mean_draws(ss, xs, y, self.spec.graph, splits)
            if collect_fitted
            else None,
            weights=ss.weights.copy() if collect_fitted else None,
            marglik=mlrec,
        )
        new_state = EngineState(
            t_index=t + 1,
            priors=tuple(priors_next),
            vb=vb,
            samples=ss,
            seed=state.seed,
        )
        return new_state, rec

    def run(
        self,
        until: int | None = None,
        discount_override=None,
        marglik_fn=None,
        collect_fitted: bool = False,
    ) -> tuple[EngineState, list[StepRecord]]:
        """Filter from the start index up to (exclusive) row ``until``."""
        state = self.initial_state()
        stop = len(self.times) if until is None else until
        history = []
        while state.t_index < stop:
            state, rec = self.step(
                state,
                discount_override=discount_override,
                marglik_fn=marglik_fn,
                collect_fitted=collect_fitted,
            )
            history.append(rec)
        return state, history

    def forecast_k(
        self,
        state: EngineState,
        k: int,
        R: int | None = None,
        max_rounds: int = 100,
    ) -> tuple[np.ndarray, int]:
        """Simulate the k-step-ahead joint predictive; returns (paths (R, k, q), resampled).

        Per replicate: pick a posterior parameter set by weight, push states
        and volatilities through the discount evolution, and at each horizon
        draw y from the implied joint normal. Replicates hitting a singular
        I - Gamma are redrawn (counted).
        """
        if k < 1:
            raise StructuralInputError(f"horizon must be >= 1, got {k}")
        R = R or self.spec.R
        q = self.spec.graph.q
        rng = rng_stream(state.seed, STREAM_FORECAST, state.t_index)
        base_vb = state.vb if state.vb is not None else state.priors
        splits = [p.split for p in base_vb]

        # deterministic per-horizon innovation scales from the VB scale matrices
        W_seq: list[list[np.ndarray]] = []
        M_cur = [p.M for p in base_vb]
        n_cur = [p.n for p in base_vb]
        n_seq: list[list[float]] = []
        for _ in range(k):
            Ws, ns = [], []
            for j in range(q):
                G = self.spec.evolution(j)
                P = G @ M_cur[j] @ G.T
                W = evolution_innovation_scale(P, splits[j], self.spec.discounts[j])
                Ws.append(W)
                M_cur[j] = P + W
                nj = n_cur[j] if math.isinf(n_cur[j]) else self.spec.discounts[j].beta * n_cur[j]
                ns.append(nj)
                n_cur[j] = nj
            W_seq.append(Ws)
            n_seq.append(ns)
        W_roots = [[chol_psd(W) for W in Ws] for Ws in W_seq]

        paths = np.empty((R, k, q))
        todo = np.arange(R)
        resampled = 0
        prev_rows_template = self.data[state.t_index - 1] if state.t_index > 0 else None
        for round_no in range(max_rounds):
            if todo.size == 0:
                break
            nb = todo.size
            if state.samples is not None:
                pick = rng.choice(state.samples.R, size=nb, p=state.samples.weights)
                thetas = [state.samples.thetas[j][pick].copy() for j in range(q)]
                lams = state.samples.lambdas[pick].copy()
            else:
                thetas, lam_cols = [], []
                for j in range(q):
                    th, lm = sample_ng(state.priors[j], nb, rng)
                    thetas.append(th)
                    lam_cols.append(lm)
                lams = np.stack(lam_cols, axis=1)
            block = np.empty((nb, k, q))
            ok = np.ones(nb, dtype=bool)
            prev = (
                np.tile(prev_rows_template, (nb, 1))
                if prev_rows_template is not None
                else None
            )
            for h in range(k):
                for j in range(q):
                    disc = self.spec.discounts[j]
                    n_prev = n_seq[h - 1][j] if h > 0 else base_vb[j].n
                    if disc.beta < 1.0 and not math.isinf(n_prev):
                        eta = rng.beta(disc.beta * n_prev / 2.0, (1.0 - disc.beta) * n_prev / 2.0, size=nb)
                        lams[:, j] = lams[:, j] * eta / disc.beta
                    G = self.spec.evolution(j)
                    th = thetas[j] @ G.T
                    root = W_roots[h][j]
                    if np.any(root):
                        z = rng.standard_normal((nb, root.shape[0]))
                        th = th + (z @ root.T) / np.sqrt(base_vb[j].s * lams[:, j])[:, None]
                    thetas[j] = th
                xs_rows = []
                for j in range(q):
                    d = self.spec.designs[j]
                    if d.lags and prev is None:
                        raise StructuralInputError("lagged design needs data history for forecasting")
                    if d.lags:
                        xs_rows.append(
                            np.concatenate(
                                [np.ones((nb, 1)) if d.intercept else np.empty((nb, 0)), prev[:, list(d.lags)]],
                                axis=1,
                            )
                        )
                    else:
                        xs_rows.append(np.ones((nb, 1)) if d.intercept else np.empty((nb, 0)))
                mu = np.stack(
                    [np.einsum("rd,rd->r", xs_rows[j], thetas[j][:, : splits[j]]) for j in range(q)],
                    axis=1,
                )
                gam = assemble_gamma(thetas, self.spec.graph, splits)
                A = np.eye(q)[None] - gam
                _, logabs = np.linalg.slogdet(A)
                ok &= np.isfinite(logabs) & (logabs > -40.0)
                nu = rng.standard_normal((nb, q)) / np.sqrt(lams)
                rhs = mu + nu
                safe_A = np.where(ok[:, None, None], A, np.eye(q)[None])
                block[:, h, :] = np.linalg.solve(safe_A, rhs[:, :, None])[:, :, 0]
                prev = block[:, h, :]
            good = ok & np.all(np.isfinite(block.reshape(nb, -1)), axis=1)
            paths[todo[good]] = block[good]
            resampled += int(np.sum(~good))
            todo = todo[~good]
        if todo.size:
            raise DegeneracyError(
                f"{todo.size} forecast replicates kept drawing singular systems"
            )
        return paths, resampled
