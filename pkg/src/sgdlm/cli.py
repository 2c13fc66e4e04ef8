"""Command-line driver.

Subcommands: fit, forecast, counterfactual, factors, discount-grid,
simulate, diagnose. Each takes --config (required), with --out / --seed
overrides and --threads to cap BLAS threads (default from SGDLM_THREADS).
Heavy imports happen after thread setup so the cap actually binds.
"""

from __future__ import annotations

import argparse
import json
import os
import sys


def _setup_threads(threads: int | None) -> None:
    n = threads if threads is not None else os.environ.get("SGDLM_THREADS")
    if n is None:
        return
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sgdlm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("fit", "filter over the data, exporting forecasts/posteriors (and marginal likelihoods)"),
        ("forecast", "fit, then simulate the k-step-ahead predictive"),
        ("counterfactual", "run the missing-data and outcome-adaptive analyses with effect summaries and a monitor"),
        ("factors", "fit, then export canonical factor trajectories and matrix snapshots"),
        ("discount-grid", "cumulative log-likelihood curves over the configured discount grid"),
        ("simulate", "generate synthetic data from the configured truth"),
        ("diagnose", "structural report: parental sets, ranks, moral pattern, zero columns"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="run-configuration YAML file")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--threads", type=int, default=None, help="BLAS thread cap")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_threads(args.threads)
    try:
        return _dispatch(args)
    except Exception as exc:  # structured nonzero exit for any module error
        from .errors import SgdlmError

        if isinstance(exc, (SgdlmError, FileNotFoundError)):
            print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
            return 1
        raise


def _dispatch(args) -> int:
    from pathlib import Path

    from .config import load_config

    cfg = load_config(args.config)
    if args.seed is not None:
        from dataclasses import replace

        cfg = replace(cfg, seed=args.seed)
    out_dir = Path(args.out if args.out is not None else cfg.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    handler = {
        "fit": _cmd_fit,
        "forecast": _cmd_forecast,
        "counterfactual": _cmd_counterfactual,
        "factors": _cmd_factors,
        "discount-grid": _cmd_grid,
        "simulate": _cmd_simulate,
        "diagnose": _cmd_diagnose,
    }[args.command]
    status = handler(cfg, out_dir)
    from .exports import write_manifest

    write_manifest(out_dir / "manifest.json", cfg.raw, cfg.seed, args.command)
    return status


def _load_data(cfg, allow_missing=False):
    from .data import ingest
    from .errors import ConfigError

    if cfg.data_path is None:
        raise ConfigError("config must name a data file for this command")
    times, labels, values = ingest(cfg.data_path, cfg.transform, allow_missing=allow_missing)
    if tuple(labels) != cfg.labels:
        raise ConfigError(
            f"data columns {labels} do not match configured series {list(cfg.labels)}"
        )
    return times, values


def _marglik_fn(cfg):
    from .marglik import make_marglik_fn

    return make_marglik_fn(cfg.seed, cfg.R) if cfg.marginal_likelihood else None


def _cmd_fit(cfg, out_dir) -> int:
    from .engine import Engine
    from .exports import forecast_rows, marglik_rows, posterior_rows, write_rows

    times, values = _load_data(cfg)
    eng = Engine(cfg.model_spec(), values, times, cfg.seed)
    _, history = eng.run(marglik_fn=_marglik_fn(cfg))
    write_rows(out_dir / "forecast.csv", forecast_rows(history, cfg.labels))
    write_rows(out_dir / "posterior.csv", posterior_rows(history, cfg.labels, cfg.designs, cfg.graph))
    if cfg.marginal_likelihood:
        write_rows(out_dir / "marglik.csv", marglik_rows([r.marglik for r in history]))
    ess = min(r.ess_fraction for r in history)
    print(f"fit: {len(history)} steps, min ESS fraction {ess:.4f}")
    return 0


def _cmd_forecast(cfg, out_dir) -> int:
    import numpy as np

    from .engine import Engine
    from .exports import Row, forecast_rows, posterior_rows, write_rows

    times, values = _load_data(cfg)
    eng = Engine(cfg.model_spec(), values, times, cfg.seed)
    state, history = eng.run()
    paths, resampled = eng.forecast_k(state, cfg.horizon)
    rows = []
    for h in range(cfg.horizon):
        qs = np.quantile(paths[:, h, :], [0.05, 0.5, 0.95], axis=0)
        mean = paths[:, h, :].mean(axis=0)
        for j, lab in enumerate(cfg.labels):
            t = f"+{h + 1}"
            rows.append(Row(t, "forecast", lab, "mean", mean[j]))
            rows.append(Row(t, "forecast", lab, "q05", qs[0, j]))
            rows.append(Row(t, "forecast", lab, "q50", qs[1, j]))
            rows.append(Row(t, "forecast", lab, "q95", qs[2, j]))
    write_rows(out_dir / "forecast.csv", forecast_rows(history, cfg.labels) + rows)
    write_rows(out_dir / "posterior.csv", posterior_rows(history, cfg.labels, cfg.designs, cfg.graph))
    print(f"forecast: horizon {cfg.horizon}, {resampled} replicates resampled")
    return 0


def _cmd_counterfactual(cfg, out_dir) -> int:
    import numpy as np

    from .counterfactual import effect_summary, oam_run, run_cfm
    from .engine import Engine
    from .errors import ConfigError
    from .exports import (
        counterfactual_rows,
        effect_rows,
        marglik_rows,
        monitor_rows,
        posterior_rows,
        write_rows,
    )
    from .marglik import make_marglik_fn, monitor

    if cfg.intervention is None:
        raise ConfigError("counterfactual command needs an intervention section")
    times, values = _load_data(cfg, allow_missing=True)
    mspec = cfg.model_spec()

    _, cfm_hist = run_cfm(mspec, values, times, cfg.seed, cfg.intervention)
    levels = None
    level_outcomes = None
    if cfg.transform == "log-return":
        # compound counterfactual returns from the last observed pre-intervention
        # levels; observed outcomes get the same anchoring for overlay crosses
        from .counterfactual import counterfactual_levels
        from .data import ingest as _ingest

        raw_times, _, raw_levels = _ingest(cfg.data_path, "none", allow_missing=True)
        t_star_raw = raw_times.index(cfg.intervention.time)
        e_idx = list(cfg.intervention.experimental_idx)
        anchors = raw_levels[t_star_raw - 1, e_idx]
        levels = counterfactual_levels(cfm_hist, cfg.intervention, anchors, cfg.seed)
        level_outcomes = {}
        t_star = list(times).index(cfg.intervention.time)
        running = anchors.copy()
        for i in range(t_star, len(times)):
            running = running * np.exp(values[i, e_idx])
            level_outcomes[times[i]] = dict(zip(e_idx, running))
    _, oam_hist = oam_run(
        mspec, values, times, cfg.seed, cfg.intervention,
        marglik_fn=make_marglik_fn(cfg.seed, cfg.R),
    )
    eng = Engine(mspec, values, times, cfg.seed)
    _, base_hist = eng.run(marglik_fn=make_marglik_fn(cfg.seed, cfg.R))

    outcomes = {t: values[i] for i, t in enumerate(times)}
    write_rows(
        out_dir / "counterfactual.csv",
        counterfactual_rows(
            cfm_hist, cfg.labels, outcomes=outcomes, levels=levels,
            level_outcomes=level_outcomes,
        ),
    )
    effects = effect_summary(cfm_hist, oam_hist, cfg.intervention, cfg.seed)
    write_rows(out_dir / "effects.csv", effect_rows(effects, cfg.labels))
    write_rows(out_dir / "posterior.csv", posterior_rows(oam_hist, cfg.labels, cfg.designs, cfg.graph))
    write_rows(out_dir / "posterior_cfm.csv", posterior_rows(cfm_hist, cfg.labels, cfg.designs, cfg.graph))

    t_star = list(times).index(cfg.intervention.time)
    oam_ml = [r.marglik for r in oam_hist if r.t_index >= t_star]
    base_ml = [r.marglik for r in base_hist if r.t_index >= t_star]
    write_rows(out_dir / "marglik.csv", marglik_rows(oam_ml) + marglik_rows(base_ml))
    traj = monitor(oam_ml, base_ml, exclusions=cfg.monitor_exclude)
    write_rows(out_dir / "monitor.csv", monitor_rows(traj, label="OAM_vs_CFM"))
    print(
        f"counterfactual: intervention at {cfg.intervention.time}; "
        f"final P(OAM) = {traj.probabilities[-1]:.3f}"
    )
    return 0


def _cmd_factors(cfg, out_dir) -> int:
    from .engine import Engine, assemble_gamma
    from .exports import factor_rows, write_rows
    from .factors import canonicalize, factor_series, svd_factorize
    from .structure import common_parental_sets

    times, values = _load_data(cfg)
    eng = Engine(cfg.model_spec(), values, times, cfg.seed)
    _, history = eng.run()
    part = common_parental_sets(cfg.graph)
    splits = [p.split for p in cfg.priors]
    gammas, ys, ts = [], [], []
    for rec in history:
        gammas.append(assemble_gamma([m for m in rec.coef_mean], cfg.graph, splits))
        ys.append(values[rec.t_index])
        ts.append(rec.t)
    series = factor_series(gammas, ys, part, times=ts)
    dec = canonicalize(svd_factorize(gammas[-1], part))
    heat = {
        ts[-1]: {
            "gamma": (gammas[-1], cfg.labels, cfg.labels),
            "loadings": (dec.L, cfg.labels, [f"factor:{k + 1}" for k in range(dec.p)]),
            "scores": (dec.Fmat, [f"factor:{k + 1}" for k in range(dec.p)], cfg.labels),
        }
    }
    write_rows(out_dir / "factor.csv", factor_rows(series, heatmaps=heat))
    print(f"factors: p={dec.p} over {len(ts)} periods")
    return 0


def _cmd_grid(cfg, out_dir) -> int:
    from .errors import ConfigError
    from .exports import grid_rows, write_rows
    from .marglik import discount_grid_curves

    if cfg.discount_grid is None:
        raise ConfigError("discount-grid command needs a discount_grid section")
    times, values = _load_data(cfg)
    deltas, betas = cfg.discount_grid
    until = None
    if cfg.discount_grid_until is not None:
        if cfg.discount_grid_until not in times:
            raise ConfigError(f"discount_grid.until {cfg.discount_grid_until!r} not in the data")
        until = times.index(cfg.discount_grid_until) + 1  # run up to and including it
    curves = discount_grid_curves(
        cfg.model_spec(), values, times, cfg.seed, deltas, betas, until=until
    )
    write_rows(out_dir / "marglik.csv", grid_rows(curves))
    print(f"discount-grid: {len(curves)} combinations over {len(next(iter(curves.values()))[0])} periods")
    return 0


def _cmd_simulate(cfg, out_dir) -> int:
    import numpy as np

    from .data import ShiftSpec, SimulationTruth, simulate, write_table
    from .errors import ConfigError

    sdoc = cfg.simulate
    if not sdoc:
        raise ConfigError("simulate command needs a simulate section")
    horizon = int(sdoc.get("horizon", 50))
    q = cfg.graph.q
    gamma = np.zeros((q, q))
    for lab, entries in (sdoc.get("gamma") or {}).items():
        i = cfg.labels.index(lab)
        for plab, val in entries.items():
            gamma[i, cfg.labels.index(plab)] = float(val)
    phis = tuple(
        np.asarray((sdoc.get("phi") or {}).get(lab, np.zeros(cfg.designs[j].x_dim)), dtype=float)
        for j, lab in enumerate(cfg.labels)
    )
    lam = np.asarray(sdoc.get("lambda", np.ones(q)), dtype=float)
    shift = None
    if sdoc.get("shift"):
        sh = sdoc["shift"]
        idx = tuple(cfg.labels.index(x) for x in sh["series"])
        shift = ShiftSpec(
            start_index=int(sh["start_index"]),
            series_idx=idx,
            amount=np.asarray(sh["amount"], dtype=float),
        )
    truth = SimulationTruth(
        graph=cfg.graph, designs=cfg.designs, phis=phis, gamma=gamma, lam=lam, shift=shift
    )
    times, obs, base = simulate(truth, horizon, cfg.seed)
    write_table(out_dir / "simulated.csv", times, cfg.labels, obs)
    write_table(out_dir / "simulated_truth.csv", times, cfg.labels, base)
    # level-scale companion (anchored at 100) so return-style runs can be
    # driven through the log-return transform end to end
    levels = 100.0 * np.exp(np.cumsum(obs, axis=0))
    level_times = [times[0] - 1, *times] if isinstance(times[0], int) else ["anchor", *times]
    write_table(
        out_dir / "simulated_levels.csv",
        level_times,
        cfg.labels,
        np.vstack([np.full((1, q), 100.0), levels]),
    )
    print(f"simulate: {horizon} periods, q={q}")
    return 0


def _cmd_diagnose(cfg, out_dir) -> int:
    import numpy as np

    from .structure import common_parental_sets, moral_pattern

    part = common_parental_sets(cfg.graph)
    moral = moral_pattern(cfg.graph)
    zero_cols = [lab for j, lab in enumerate(cfg.labels) if not cfg.graph.ch[j]]
    report = {
        "q": cfg.graph.q,
        "labels": list(cfg.labels),
        "parents": {cfg.labels[j]: [cfg.labels[i] for i in cfg.graph.sp[j]] for j in range(cfg.graph.q)},
        "children": {cfg.labels[j]: [cfg.labels[i] for i in cfg.graph.ch[j]] for j in range(cfg.graph.q)},
        "common_parental_sets": [
            {"members": [cfg.labels[i] for i in members], "p_h": ph, "children": [cfg.labels[i] for i in kids]}
            for members, ph, kids in zip(part.sets, part.p_h, part.child_sets)
        ],
        "structural_p": part.p,
        "zero_columns": zero_cols,
        "moral_adjacency": {
            cfg.labels[i]: [cfg.labels[j] for j in np.flatnonzero(moral[i]) if j != i]
            for i in range(cfg.graph.q)
        },
    }
    (out_dir / "diagnose.json").write_text(json.dumps(report, indent=2) + "\n")
    print(
        f"diagnose: {len(part.sets)} common parental sets, structural p={part.p}, "
        f"{len(zero_cols)} series with no children"
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
