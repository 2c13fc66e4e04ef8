"""Shared fixtures and independent oracles.

The quadrature and enumeration helpers here are deliberately written from
first principles (grids, dense linear algebra, scipy special functions) and
never call the update/estimator code they are used to check.
"""

from __future__ import annotations

import math
import os
from pathlib import Path

import numpy as np
import pytest
from scipy.optimize import brentq
from scipy.special import digamma, gammaln

from sgdlm.structure import build_graph

GDP_LABELS = [
    "AUT", "USA", "NLD", "PRT", "BEL", "NOR", "AUS", "FRA",
    "DEU", "ITA", "CHE", "DNK", "NZD", "GBR", "ESP", "JPN",
]
GDP_PARENTS = {
    "AUT": ["USA"], "USA": ["AUS"], "NLD": ["DEU"], "PRT": ["FRA"],
    "BEL": ["FRA"], "NOR": ["PRT"], "AUS": ["USA"], "FRA": ["BEL", "NOR"],
    "DEU": ["AUT", "USA"], "ITA": ["NLD", "PRT"], "CHE": ["FRA"],
    "DNK": ["DEU"], "NZD": ["NOR"], "GBR": ["DEU"], "ESP": ["BEL", "NOR"],
    "JPN": ["USA", "NLD"],
}

GDP_DATA_PATH = Path(
    os.environ.get("SGDLM_GDP_DATA", Path(__file__).parent / "data" / "gdp.csv")
)

requires_gdp_data = pytest.mark.skipif(
    not GDP_DATA_PATH.exists(),
    reason=f"GDP panel not present at {GDP_DATA_PATH}; run scripts/fetch_gdp_data.py",
)


@pytest.fixture(scope="session")
def gdp_graph():
    idx = {lab: i for i, lab in enumerate(GDP_LABELS)}
    lists = [[idx[p] for p in GDP_PARENTS[lab]] for lab in GDP_LABELS]
    return build_graph(16, lists, GDP_LABELS)


def random_graph(rng: np.random.Generator, q: int | None = None, max_parents: int = 2):
    """Random sparse parental graph (0..max_parents parents per series)."""
    if q is None:
        q = int(rng.integers(2, 13))
    lists = []
    for i in range(q):
        k = int(rng.integers(0, max_parents + 1))
        others = [j for j in range(q) if j != i]
        lists.append(sorted(rng.choice(others, size=min(k, len(others)), replace=False).tolist()))
    return build_graph(q, lists)


def random_fill(graph, rng: np.random.Generator, lo: float = 0.2, hi: float = 0.9):
    """Continuous random coefficients on the graph pattern, scaled per row."""
    gamma = np.zeros((graph.q, graph.q))
    for i, parents in enumerate(graph.sp):
        if parents:
            mags = rng.uniform(lo, hi, size=len(parents)) / len(parents)
            gamma[i, list(parents)] = mags * rng.choice([-1.0, 1.0], size=len(parents))
    return gamma


# ---------------------------------------------------------------------------
# oracle: 2-D quadrature Bayes update for the 1-D normal-gamma regression

def ng_quadrature_posterior(m, M, n, s, F, y, n_th=3001, n_lam=1501):
    """Posterior (m, M, n, s) of the conjugate scalar model by brute quadrature.

    Prior: theta | lam ~ N(m, M/(s lam)), lam ~ Gamma(n/2, rate n s/2);
    likelihood y | theta, lam ~ N(F theta, 1/lam). Integrates on a Cauchy-
    substituted theta grid (covers the whole line) and a log-lam grid, then
    inverts the gamma moment map with brentq/digamma.
    """
    width = math.sqrt(M + s) + 0.5 * abs(y - F * m) + 1e-3
    center = 0.5 * (m + (y / F if F != 0 else m))
    u = np.linspace(-np.pi / 2 + 1e-5, np.pi / 2 - 1e-5, n_th)
    theta = center + width * np.tan(u)
    jac_th = width / np.cos(u) ** 2

    lam_lo = min(1e-7 / s, 1e-7)
    lam_hi = max(5e3 / s, 5e3) * (1.0 + n)
    v = np.linspace(math.log(lam_lo), math.log(lam_hi), n_lam)
    lam = np.exp(v)

    TH = theta[:, None]
    LM = lam[None, :]
    log_post = (
        0.5 * np.log(LM)
        - 0.5 * s * LM * (TH - m) ** 2 / M
        + (n / 2.0 - 1.0) * np.log(LM)
        - (n * s / 2.0) * LM
        + 0.5 * np.log(LM)
        - 0.5 * LM * (y - F * TH) ** 2
    )
    w = np.exp(log_post - log_post.max())
    w = w * jac_th[:, None] * LM  # Jacobians of both substitutions

    def integ(fvals):
        return np.trapezoid(np.trapezoid(fvals, v, axis=1), u, axis=0)

    Z = integ(w)
    e_th = integ(w * TH) / Z
    e_th2 = integ(w * TH**2) / Z
    e_lam = integ(w * LM) / Z
    e_loglam = integ(w * np.log(LM)) / Z

    s_post = 1.0 / e_lam
    c = e_loglam - math.log(e_lam)

    def f(nn):
        return digamma(nn / 2.0) - math.log(nn / 2.0) - c

    n_post = brentq(f, 1e-6, 1e9, xtol=1e-12, rtol=1e-14)
    var_th = e_th2 - e_th**2
    M_post = var_th * (n_post - 2.0) / n_post
    return e_th, M_post, n_post, s_post


def batch_conjugate_regression(m0, M0, n0, s0, Fs, ys):
    """Closed-form conjugate regression on accumulated data (matrix form).

    Independent implementation of the batch posterior for checking repeated
    sequential updates: precision-form normal update plus the marginal
    residual sum of squares for the gamma block.
    """
    m0 = np.atleast_1d(np.asarray(m0, dtype=float))
    M0 = np.atleast_2d(np.asarray(M0, dtype=float))
    Fs = np.atleast_2d(np.asarray(Fs, dtype=float))
    ys = np.asarray(ys, dtype=float)
    T = len(ys)
    C0 = M0 / s0
    P0 = np.linalg.inv(C0)
    P_T = P0 + Fs.T @ Fs
    C_T = np.linalg.inv(P_T)
    m_T = C_T @ (P0 @ m0 + Fs.T @ ys)
    n_T = n0 + T
    rss = ys @ ys + m0 @ P0 @ m0 - m_T @ P_T @ m_T
    d_T = n0 * s0 + rss
    s_T = d_T / n_T
    M_T = C_T * s_T
    return m_T, M_T, n_T, s_T


def mvt_logpdf(x, loc, scale, dof):
    """Multivariate Student-T log density (direct formula, no scipy.stats.t)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    loc = np.atleast_1d(np.asarray(loc, dtype=float))
    scale = np.atleast_2d(np.asarray(scale, dtype=float))
    k = x.size
    dev = x - loc
    quad = dev @ np.linalg.solve(scale, dev)
    _, logdet = np.linalg.slogdet(scale)
    return float(
        gammaln((dof + k) / 2.0)
        - gammaln(dof / 2.0)
        - 0.5 * (k * math.log(dof * math.pi) + logdet)
        - 0.5 * (dof + k) * math.log1p(quad / dof)
    )
