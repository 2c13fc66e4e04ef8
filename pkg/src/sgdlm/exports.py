"""Flat result export: long-format record tables plus a reproducibility manifest.

Every exported statistic is one row (t, kind, label, stat, value) with the
kind drawn from a closed enumeration. Values are written as decimal text
with 17 significant digits so re-ingesting reproduces them bit-exactly.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .engine import StepRecord
from .errors import IngestError
from .marglik import MargLikRecord, MonitorTrajectory

KINDS = ("forecast", "posterior", "counterfactual", "marglik", "factor", "monitor")
_STAT_QS = ("q05", "q50", "q95")


@dataclass(frozen=True)
class Row:
    t: object
    kind: str
    label: str
    stat: str
    value: float

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown export kind {self.kind!r}")


def fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_rows(path, rows: Iterable[Row]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "kind", "label", "stat", "value"])
        for r in rows:
            w.writerow([r.t, r.kind, r.label, r.stat, fmt(r.value)])


def read_rows(path) -> list[Row]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["t", "kind", "label", "stat", "value"]:
            raise IngestError(f"{path}: not an export table (header {header})")
        out = []
        for line in reader:
            if len(line) != 5:
                raise IngestError(f"{path}: malformed row {line}")
            out.append(Row(t=line[0], kind=line[1], label=line[2], stat=line[3], value=float(line[4])))
    return out


def _coef_names(labels, design, graph, j) -> list[str]:
    names = []
    if design.intercept:
        names.append("intercept")
    names.extend(f"lag:{labels[i]}" for i in design.lags)
    names.extend(f"gamma:{labels[i]}" for i in graph.sp[j])
    return names


def forecast_rows(history: Sequence[StepRecord], labels) -> list[Row]:
    rows = []
    for rec in history:
        for j, fc in enumerate(rec.forecasts):
            rows.append(Row(rec.t, "forecast", labels[j], "location", fc.location))
            rows.append(Row(rec.t, "forecast", labels[j], "scale_q", fc.scale_q))
            rows.append(Row(rec.t, "forecast", labels[j], "dof", fc.dof))
    return rows


def posterior_rows(history: Sequence[StepRecord], labels, designs, graph) -> list[Row]:
    rows = []
    for rec in history:
        rows.append(Row(rec.t, "posterior", "_engine", "ess_fraction", rec.ess_fraction))
        for j in range(len(labels)):
            names = _coef_names(labels, designs[j], graph, j)
            for k, name in enumerate(names):
                lab = f"{labels[j]}.{name}"
                rows.append(Row(rec.t, "posterior", lab, "mean", rec.coef_mean[j][k]))
                for stat, val in zip(_STAT_QS, rec.coef_quantiles[j][k]):
                    rows.append(Row(rec.t, "posterior", lab, stat, val))
    return rows


def counterfactual_rows(
    history: Sequence[StepRecord], labels, outcomes=None, levels=None, level_outcomes=None
) -> list[Row]:
    """Counterfactual quantiles with observed outcomes (when known) for overlay;
    optional level-scale quantiles/outcomes from :func:`counterfactual_levels`."""
    rows = []
    for rec in history:
        cf = rec.counterfactual
        if cf is None:
            continue
        for k, j in enumerate(cf.experimental_idx):
            lab = labels[j]
            for stat, val in zip(_STAT_QS, cf.quantiles[k]):
                rows.append(Row(rec.t, "counterfactual", lab, stat, val))
            rows.append(Row(rec.t, "counterfactual", lab, "mixture_mean", cf.mixture_mean[k]))
            if outcomes is not None:
                y = outcomes.get(rec.t)
                if y is not None and np.isfinite(y[j]):
                    rows.append(Row(rec.t, "counterfactual", lab, "outcome", y[j]))
    if levels and len(levels["times"]):
        exp_idx = next(r.counterfactual.experimental_idx for r in history if r.counterfactual)
        for i, t in enumerate(levels["times"]):
            for k, j in enumerate(exp_idx):
                for stat, val in zip(("level_q05", "level_q50", "level_q95"), levels["quantiles"][i, k]):
                    rows.append(Row(t, "counterfactual", labels[j], stat, val))
                if level_outcomes and t in level_outcomes and np.isfinite(level_outcomes[t].get(j, np.nan)):
                    rows.append(Row(t, "counterfactual", labels[j], "level_outcome", level_outcomes[t][j]))
    return rows


def effect_rows(effects, labels) -> list[Row]:
    rows = []
    for i, t in enumerate(effects.times):
        for k, j in enumerate(effects.series_idx):
            for stat, val in zip(("delta_q05", "delta_q50", "delta_q95"), effects.quantiles[i, k]):
                rows.append(Row(t, "counterfactual", labels[j], stat, val))
    return rows


def marglik_rows(records: Sequence[MargLikRecord]) -> list[Row]:
    rows = []
    cum = 0.0
    for r in records:
        cum += r.log_pred
        rows.append(Row(r.t, "marglik", r.method, "log_f", r.log_f))
        rows.append(Row(r.t, "marglik", r.method, "log_g", r.log_g))
        rows.append(Row(r.t, "marglik", r.method, "log_pred", r.log_pred))
        rows.append(Row(r.t, "marglik", r.method, "estimator_variance", r.estimator_variance))
        rows.append(Row(r.t, "marglik", r.method, "cum_log_pred", cum))
    return rows


def grid_rows(curves: dict) -> list[Row]:
    rows = []
    baseline = None
    for (delta, beta), (ts, cum) in sorted(curves.items()):
        if baseline is None or (delta, beta) == (0.95, 0.95):
            baseline = (ts, cum)
    for (delta, beta), (ts, cum) in sorted(curves.items()):
        lab = f"delta={delta:g},beta={beta:g}"
        for t, v, b in zip(ts, cum, baseline[1]):
            rows.append(Row(t, "marglik", lab, "cum_log_pred", v))
            rows.append(Row(t, "marglik", lab, "cum_log_pred_rel", v - b))
    return rows


def factor_rows(series, heatmaps=None) -> list[Row]:
    """Factor trajectories plus optional matrix snapshots.

    ``heatmaps`` maps a time label to {"gamma": (q,q), "loadings": (q,p),
    "scores": (p,q)} matrices with row/column labels.
    """
    rows = []
    for i, t in enumerate(series.times):
        for k in range(series.phi.shape[1]):
            lab = f"factor:{k + 1}"
            rows.append(Row(t, "factor", lab, "phi", series.phi[i, k]))
            rows.append(Row(t, "factor", lab, "singular_value", series.singular_values[i, k]))
    if heatmaps:
        for t, mats in heatmaps.items():
            for name, (mat, row_labels, col_labels) in mats.items():
                for a, rl in enumerate(row_labels):
                    for b, cl in enumerate(col_labels):
                        rows.append(Row(t, "factor", f"{name}[{rl},{cl}]", "entry", mat[a, b]))
    return rows


def monitor_rows(traj: MonitorTrajectory, label: str = "A_vs_B") -> list[Row]:
    rows = []
    for t, inc, prob in zip(traj.times, traj.increments, traj.probabilities):
        rows.append(Row(t, "monitor", label, "log_bf_increment", inc))
        rows.append(Row(t, "monitor", label, "prob", prob))
    return rows


def write_manifest(path, config_doc: dict, seed: int, command: str, extras: dict | None = None) -> None:
    """Machine-readable run manifest: config echo, seed, package version, command."""
    from . import __version__

    doc = {
        "version": __version__,
        "command": command,
        "seed": seed,
        "config": config_doc,
    }
    if extras:
        doc.update(extras)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")


def table_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
