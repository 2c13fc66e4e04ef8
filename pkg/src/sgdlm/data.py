"""Data ingestion, transformation, and synthetic data generation."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._util import STREAM_SIMULATE, rng_stream
from .engine import DesignRule
from .errors import IngestError, StructuralInputError
from .structure import GraphStructure

TRANSFORMS = ("none", "log-return")


def ingest(path, transform: str = "none", allow_missing: bool = False):
    """Read a rectangular delimited table: header of series labels, first column time.

    Returns (times, labels, values (T, q)). The log-return transform maps
    levels to log(v_t / v_{t-1}) and drops the first period. Missing or
    non-numeric cells raise with the offending row/column named, unless
    ``allow_missing`` (used for post-intervention tables with unobserved
    experimental entries, stored as empty cells or 'nan').
    """
    path = Path(path)
    if transform not in TRANSFORMS:
        raise IngestError(f"unknown transform {transform!r}; expected one of {TRANSFORMS}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise IngestError(f"{path}: need a header row and at least one data row")
    header = rows[0]
    if len(header) < 2:
        raise IngestError(f"{path}: header must name a time column and at least one series")
    labels = [h.strip() for h in header[1:]]
    q = len(labels)
    times: list[str] = []
    values = np.empty((len(rows) - 1, q))
    for ridx, row in enumerate(rows[1:], start=2):
        if len(row) != q + 1:
            raise IngestError(f"{path}: row {ridx} has {len(row)} cells, expected {q + 1}")
        times.append(row[0].strip())
        for cidx, cell in enumerate(row[1:]):
            cell = cell.strip()
            if cell == "" or cell.lower() == "nan":
                if allow_missing:
                    values[ridx - 2, cidx] = np.nan
                    continue
                raise IngestError(
                    f"{path}: missing value at row {ridx}, column {labels[cidx]}"
                )
            try:
                values[ridx - 2, cidx] = float(cell)
            except ValueError as exc:
                raise IngestError(
                    f"{path}: non-numeric cell {cell!r} at row {ridx}, column {labels[cidx]}"
                ) from exc
    times = _maybe_numeric_times(times)
    if transform == "log-return":
        if np.any(values <= 0):
            raise IngestError(f"{path}: log-return transform needs strictly positive levels")
        with np.errstate(invalid="ignore"):  # NaN cells pass through as NaN returns
            values = np.log(values[1:] / values[:-1])
        times = times[1:]
    return times, labels, values


def _maybe_numeric_times(times: list[str]):
    try:
        return [int(t) for t in times]
    except ValueError:
        return list(times)


def write_table(path, times, labels, values: np.ndarray) -> None:
    """Write a data table in the ingest format (17 significant digits)."""
    values = np.asarray(values)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", *labels])
        for t, row in zip(times, values):
            w.writerow([t, *("" if not np.isfinite(v) else format(v, ".17g") for v in row)])


@dataclass(frozen=True)
class ShiftSpec:
    """Additive mean shift applied to the observed values of chosen series
    from a time index onward."""

    start_index: int
    series_idx: tuple[int, ...]
    amount: np.ndarray


@dataclass(frozen=True)
class SimulationTruth:
    """Generating parameters for synthetic data.

    The exogenous means come from the design rules and ``phis``; the
    simultaneous matrix and precisions may be constant or per-time arrays.
    """

    graph: GraphStructure
    designs: tuple[DesignRule, ...]
    phis: tuple[np.ndarray, ...]
    gamma: np.ndarray
    lam: np.ndarray
    shift: ShiftSpec | None = None


def _at_time(arr: np.ndarray, t: int, base_ndim: int) -> np.ndarray:
    arr = np.asarray(arr, dtype=float)
    return arr[t] if arr.ndim == base_ndim + 1 else arr


def simulate(truth: SimulationTruth, horizon: int, seed: int, init_row=None):
    """Generate y_t from the structural model (I - Gamma) y = mu + nu.

    Returns (times, observed, counterfactual_base): the base path never sees
    the shift; the observed path applies it as it occurs, feeding any lagged
    dynamics. Raises when any Gamma_t has spectral radius >= 1.
    """
    q = truth.graph.q
    rng = rng_stream(seed, STREAM_SIMULATE)
    base = np.empty((horizon, q))
    obs = np.empty((horizon, q))
    prev_base = np.zeros(q) if init_row is None else np.asarray(init_row, dtype=float)
    prev_obs = prev_base.copy()
    eye = np.eye(q)
    for t in range(horizon):
        gamma = _at_time(truth.gamma, t, 2)
        lam = _at_time(truth.lam, t, 1)
        rho = np.max(np.abs(np.linalg.eigvals(gamma))) if q else 0.0
        if rho >= 1.0:
            raise StructuralInputError(
                f"simulation needs spectral radius < 1; got {rho:.3f} at t={t}"
            )
        nu = rng.standard_normal(q) / np.sqrt(lam)
        mu_base = np.array(
            [truth.designs[j].build_x(prev_base) @ truth.phis[j] for j in range(q)]
        )
        mu_obs = np.array(
            [truth.designs[j].build_x(prev_obs) @ truth.phis[j] for j in range(q)]
        )
        A = eye - gamma
        base[t] = np.linalg.solve(A, mu_base + nu)
        obs[t] = np.linalg.solve(A, mu_obs + nu)
        if truth.shift is not None and t >= truth.shift.start_index:
            obs[t, list(truth.shift.series_idx)] += truth.shift.amount
        prev_base = base[t]
        prev_obs = obs[t]
    times = list(range(horizon))
    return times, obs, base

