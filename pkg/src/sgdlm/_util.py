"""Small numerical helpers: seeded RNG streams, guarded Cholesky, weighted quantiles."""

from __future__ import annotations

import numpy as np

from .errors import NumericalError

# Purpose codes keeping independent substreams reproducible and decoupled:
# enabling one computation never shifts the draws of another.
STREAM_FILTER = 0
STREAM_MARGLIK = 1
STREAM_FORECAST = 2
STREAM_MISSING = 3
STREAM_SIMULATE = 4
STREAM_EFFECT = 5


def rng_stream(seed: int, *key: int) -> np.random.Generator:
    """Generator for substream ``key`` of master ``seed``.

    Streams are independent across keys; typical keys are
    (purpose, time index, series index).
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(k) for k in key]]))


def chol_psd(mat: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a symmetric PSD matrix.

    Singular PSD inputs get one retry with jitter 1e-12*trace/d on the
    diagonal; an all-zero matrix factors to zero.
    """
    mat = np.asarray(mat, dtype=float)
    d = mat.shape[0]
    if d == 0:
        return np.zeros((0, 0))
    if not np.any(mat):
        return np.zeros_like(mat)
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        jitter = 1e-12 * np.trace(mat) / d
        try:
            return np.linalg.cholesky(mat + jitter * np.eye(d))
        except np.linalg.LinAlgError as exc:
            raise NumericalError("Cholesky factorization failed after jitter retry") from exc


def chol_psd_batch(mats: np.ndarray) -> np.ndarray:
    """Batched lower Cholesky of (R, d, d) symmetric PSD matrices with the same
    jitter fallback as :func:`chol_psd`; zero matrices factor to zero."""
    mats = np.asarray(mats, dtype=float)
    R, d, _ = mats.shape
    if d == 0:
        return np.zeros_like(mats)
    try:
        return np.linalg.cholesky(mats)
    except np.linalg.LinAlgError:
        out = np.empty_like(mats)
        for r in range(R):
            out[r] = chol_psd(mats[r])
        return out


def weighted_quantile(values: np.ndarray, weights: np.ndarray, qs) -> np.ndarray:
    """Quantiles of a weighted sample (inverse-CDF convention).

    ``values`` (R,), ``weights`` (R,) nonnegative; ``qs`` scalar or sequence in [0,1].
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    order = np.argsort(values, kind="stable")
    v = values[order]
    cw = np.cumsum(weights[order])
    cw /= cw[-1]
    qs_arr = np.atleast_1d(np.asarray(qs, dtype=float))
    idx = np.searchsorted(cw, qs_arr, side="left")
    idx = np.clip(idx, 0, len(v) - 1)
    out = v[idx]
    return out if np.ndim(qs) else float(out[0])


def normalize_log_weights(logw: np.ndarray) -> np.ndarray:
    """Normalize log weights to probabilities, stably."""
    logw = np.asarray(logw, dtype=float)
    m = np.max(logw)
    if not np.isfinite(m):
        from .errors import DegeneracyError

        raise DegeneracyError("all log weights are -inf")
    w = np.exp(logw - m)
    return w / w.sum()
