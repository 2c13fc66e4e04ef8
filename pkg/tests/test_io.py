"""Ingestion, simulation, configuration, export, and CLI driver tests.

Claims checked:
    - ingest: the two-row level table maps to one log return; blank and
      non-numeric cells are rejected with the cell named; ragged rows fail
    - simulate: tight noise hugs the mean; the sample covariance of a fixed
      cyclic system converges to the implied covariance; seeding is exact;
      spectral radius >= 1 is rejected
    - config: the GDP file parses to consistent dimensions; a missing seed
      fails; priors follow the template
    - exports: write -> read round-trips values bit-exactly; kinds are closed
    - CLI: simulate/fit/forecast/diagnose/factors/counterfactual/discount-grid
      run end to end on a small synthetic config, outputs exist, reruns are
      byte-identical, and error exits are structured
"""

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
import yaml

from sgdlm.cli import main as cli_main
from sgdlm.config import config_from_dict, load_config
from sgdlm.data import ShiftSpec, SimulationTruth, ingest, simulate
from sgdlm.engine import DesignRule
from sgdlm.errors import ConfigError, IngestError, StructuralInputError
from sgdlm.exports import Row, read_rows, write_rows
from sgdlm.structure import build_graph

REPO = Path(__file__).resolve().parents[1]


class TestIngest:
    def test_two_row_levels_single_return(self, tmp_path):
        p = tmp_path / "levels.csv"
        p.write_text("time,a\n2000,100\n2001,105\n")
        times, labels, values = ingest(p, "log-return")
        assert labels == ["a"]
        assert times == [2001]
        assert values[0, 0] == pytest.approx(np.log(1.05))

    def test_blank_cell_named(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("time,a,b\n2000,1.0,2.0\n2001,,2.5\n")
        with pytest.raises(IngestError, match="row 3, column a"):
            ingest(p)

    def test_non_numeric_named(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("time,a\n2000,x\n")
        with pytest.raises(IngestError, match="column a"):
            ingest(p)

    def test_ragged_rejected(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("time,a,b\n2000,1.0\n")
        with pytest.raises(IngestError, match="row 2"):
            ingest(p)

    def test_missing_allowed_when_requested(self, tmp_path):
        p = tmp_path / "partial.csv"
        p.write_text("time,a,b\n2000,1.0,nan\n")
        _, _, values = ingest(p, allow_missing=True)
        assert np.isnan(values[0, 1])

    def test_nonpositive_levels_rejected_for_returns(self, tmp_path):
        p = tmp_path / "neg.csv"
        p.write_text("time,a\n2000,1.0\n2001,-2.0\n")
        with pytest.raises(IngestError, match="positive"):
            ingest(p, "log-return")


def small_truth(q=3, shift=None):
    graph = build_graph(q, [[] for _ in range(q)])
    designs = tuple(DesignRule() for _ in range(q))
    phis = tuple(np.array([0.5]) for _ in range(q))
    return SimulationTruth(
        graph=graph, designs=designs, phis=phis,
        gamma=np.zeros((q, q)), lam=np.full(q, 1e6), shift=shift,
    )


class TestSimulate:
    def test_tight_noise_hugs_mean(self):
        _, obs, base = simulate(small_truth(), 50, seed=1)
        np.testing.assert_allclose(obs, 0.5, atol=0.01)
        np.testing.assert_array_equal(obs, base)

    def test_seeded_twice_identical(self):
        a = simulate(small_truth(), 20, seed=9)
        b = simulate(small_truth(), 20, seed=9)
        np.testing.assert_array_equal(a[1], b[1])

    def test_shift_applied_to_observed_only(self):
        shift = ShiftSpec(start_index=5, series_idx=(1,), amount=np.array([2.0]))
        _, obs, base = simulate(small_truth(shift=shift), 10, seed=2)
        np.testing.assert_allclose(obs[5:, 1] - base[5:, 1], 2.0)
        np.testing.assert_array_equal(obs[:5], base[:5])
        np.testing.assert_array_equal(obs[:, 0], base[:, 0])

    def test_cyclic_covariance_matches_implied(self):
        q = 2
        graph = build_graph(q, [[1], [0]])
        gamma = np.array([[0.0, 0.5], [-0.4, 0.0]])
        lam = np.array([1.0, 2.0])
        truth = SimulationTruth(
            graph=graph,
            designs=(DesignRule(), DesignRule()),
            phis=(np.zeros(1), np.zeros(1)),
            gamma=gamma,
            lam=lam,
        )
        T = 60_000
        _, obs, _ = simulate(truth, T, seed=3)
        A = np.eye(q) - gamma
        sigma = np.linalg.inv(A.T @ np.diag(lam) @ A)
        emp = np.cov(obs.T)
        se = np.sqrt((np.outer(np.diag(sigma), np.diag(sigma)) + sigma**2) / T)
        assert np.all(np.abs(emp - sigma) < 4 * se)

    def test_spectral_radius_violation(self):
        graph = build_graph(2, [[1], [0]])
        truth = SimulationTruth(
            graph=graph,
            designs=(DesignRule(), DesignRule()),
            phis=(np.zeros(1), np.zeros(1)),
            gamma=np.array([[0.0, 1.2], [1.1, 0.0]]),
            lam=np.ones(2),
        )
        with pytest.raises(StructuralInputError, match="spectral radius"):
            simulate(truth, 5, seed=0)


class TestConfig:
    def test_gdp_config_parses(self):
        cfg = load_config(REPO / "configs" / "gdp.yaml")
        assert cfg.graph.q == 16
        assert cfg.R == 10_000
        assert cfg.intervention is not None
        assert cfg.intervention.time == 1991
        assert len(cfg.intervention.experimental_idx) == 14
        assert cfg.priors[0].m[0] == 0.05
        assert cfg.priors[0].n == 4.0
        deu = cfg.labels.index("DEU")
        assert cfg.priors[deu].dim == 3 + 2
        np.testing.assert_allclose(np.diag(cfg.priors[deu].M), [0.0025, 0.1, 0.1, 0.1, 0.1])

    def test_missing_seed_rejected(self):
        doc = {"graph": {"labels": ["a"], "parents": {}}}
        with pytest.raises(ConfigError, match="seed"):
            config_from_dict(doc)

    def test_unknown_parent_rejected(self):
        doc = {"graph": {"labels": ["a"], "parents": {"a": ["zz"]}}, "seed": 1}
        with pytest.raises(ConfigError):
            config_from_dict(doc)

    def test_prior_dimension_mismatch_rejected(self):
        doc = {
            "graph": {"labels": ["a", "b"], "parents": {"a": ["b"]}},
            "priors": {"default": {"m": [0.0]}},
            "seed": 1,
        }
        with pytest.raises((ConfigError, StructuralInputError)):
            config_from_dict(doc)


class TestExports:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        rows = [
            Row(t=2000 + i, kind="forecast", label="a", stat="location", value=float(v))
            for i, v in enumerate(rng.normal(size=200) * 10.0 ** rng.integers(-12, 12, size=200))
        ]
        p = tmp_path / "forecast.csv"
        write_rows(p, rows)
        back = read_rows(p)
        assert len(back) == len(rows)
        for a, b in zip(rows, back):
            assert a.value == b.value  # bitwise equality through decimal text
            assert str(a.t) == b.t

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            Row(t=0, kind="nonsense", label="x", stat="s", value=1.0)

    def test_reader_rejects_foreign_tables(self, tmp_path):
        p = tmp_path / "other.csv"
        p.write_text("a,b\n1,2\n")
        with pytest.raises(IngestError):
            read_rows(p)


SMALL_CONFIG = {
    "graph": {
        "labels": ["c1", "c2", "e1", "e2"],
        "parents": {"c1": ["c2"], "c2": ["c1"], "e1": ["c1"], "e2": ["e1"]},
    },
    "design": {"default": {"intercept": True}},
    "priors": {"default": {"intercept_mean": 0.0, "coef_scale": 0.2, "n": 6, "s": 0.5}},
    "discounts": {"delta": 0.95, "beta": 0.95},
    "R": 400,
    "seed": 314,
    "transform": "none",
    "marginal_likelihood": True,
    "horizon": 2,
    "intervention": {
        "time": 12,
        "controls": ["c1", "c2"],
        "oam_delta_star": 0.4,
    },
    "discount_grid": {"delta": [0.9, 1.0], "beta": [1.0]},
    "simulate": {
        "horizon": 18,
        "gamma": {"c1": {"c2": 0.3}, "c2": {"c1": -0.2}, "e1": {"c1": 0.4}, "e2": {"e1": 0.3}},
        "phi": {"c1": [0.01], "c2": [0.0], "e1": [0.02], "e2": [0.0]},
        "lambda": [400.0, 400.0, 400.0, 400.0],
        "shift": {"start_index": 12, "series": ["e1", "e2"], "amount": [0.5, 0.5]},
    },
}


@pytest.fixture(scope="module")
def cli_workspace(tmp_path_factory):
    ws = tmp_path_factory.mktemp("cli")
    cfg = dict(SMALL_CONFIG)
    cfg["data"] = str(ws / "sim" / "simulated.csv")
    cfg["output"] = str(ws / "out")
    cfg_path = ws / "run.yaml"
    cfg_path.write_text(yaml.safe_dump(cfg))
    assert cli_main(["simulate", "--config", str(cfg_path), "--out", str(ws / "sim")]) == 0
    return ws, cfg_path


class TestCli:
    def test_simulate_and_fit(self, cli_workspace):
        ws, cfg_path = cli_workspace
        assert cli_main(["fit", "--config", str(cfg_path), "--out", str(ws / "fit")]) == 0
        assert (ws / "fit" / "forecast.csv").exists()
        assert (ws / "fit" / "posterior.csv").exists()
        assert (ws / "fit" / "marglik.csv").exists()
        manifest = json.loads((ws / "fit" / "manifest.json").read_text())
        assert manifest["seed"] == 314
        assert manifest["command"] == "fit"

    def test_rerun_is_byte_identical(self, cli_workspace):
        ws, cfg_path = cli_workspace
        cli_main(["fit", "--config", str(cfg_path), "--out", str(ws / "fit_a")])
        cli_main(["fit", "--config", str(cfg_path), "--out", str(ws / "fit_b")])
        for name in ("forecast.csv", "posterior.csv", "marglik.csv"):
            assert (ws / "fit_a" / name).read_bytes() == (ws / "fit_b" / name).read_bytes()

    def test_manifest_reproduces_the_run(self, cli_workspace):
        # a run is fully determined by its manifest plus the data file
        ws, cfg_path = cli_workspace
        cli_main(["fit", "--config", str(cfg_path), "--out", str(ws / "fit_m")])
        manifest = json.loads((ws / "fit_m" / "manifest.json").read_text())
        replay_cfg = ws / "replay.yaml"
        replay_cfg.write_text(yaml.safe_dump(manifest["config"]))
        cli_main(["fit", "--config", str(replay_cfg), "--out", str(ws / "fit_replay"),
                  "--seed", str(manifest["seed"])])
        for name in ("forecast.csv", "posterior.csv", "marglik.csv"):
            assert (ws / "fit_m" / name).read_bytes() == (ws / "fit_replay" / name).read_bytes()

    def test_forecast(self, cli_workspace):
        ws, cfg_path = cli_workspace
        assert cli_main(["forecast", "--config", str(cfg_path), "--out", str(ws / "fc")]) == 0
        rows = read_rows(ws / "fc" / "forecast.csv")
        assert any(r.t == "+2" for r in rows)

    def test_diagnose(self, cli_workspace):
        ws, cfg_path = cli_workspace
        assert cli_main(["diagnose", "--config", str(cfg_path), "--out", str(ws / "diag")]) == 0
        report = json.loads((ws / "diag" / "diagnose.json").read_text())
        assert report["q"] == 4
        assert report["structural_p"] == sum(
            s["p_h"] for s in report["common_parental_sets"]
        )

    def test_factors(self, cli_workspace):
        ws, cfg_path = cli_workspace
        assert cli_main(["factors", "--config", str(cfg_path), "--out", str(ws / "fac")]) == 0
        rows = read_rows(ws / "fac" / "factor.csv")
        assert any(r.stat == "phi" for r in rows)
        assert any(r.stat == "entry" for r in rows)

    def test_counterfactual(self, cli_workspace):
        ws, cfg_path = cli_workspace
        assert cli_main(["counterfactual", "--config", str(cfg_path), "--out", str(ws / "cf")]) == 0
        for name in ("counterfactual.csv", "effects.csv", "monitor.csv", "marglik.csv"):
            assert (ws / "cf" / name).exists()
        rows = read_rows(ws / "cf" / "monitor.csv")
        assert any(r.stat == "prob" for r in rows)

    def test_discount_grid(self, cli_workspace):
        ws, cfg_path = cli_workspace
        assert cli_main(["discount-grid", "--config", str(cfg_path), "--out", str(ws / "grid")]) == 0
        rows = read_rows(ws / "grid" / "marglik.csv")
        labels = {r.label for r in rows}
        assert len(labels) == 2  # two grid combinations

    def test_structured_error_exit(self, cli_workspace, tmp_path, capsys):
        ws, cfg_path = cli_workspace
        bad = tmp_path / "bad.yaml"
        bad.write_text(yaml.safe_dump({"graph": {"labels": ["a"], "parents": {}}}))
        assert cli_main(["fit", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
        err = capsys.readouterr().err
        payload = json.loads(err.strip().splitlines()[-1])
        assert payload["error"] == "ConfigError"

    def test_console_entry_point(self, cli_workspace):
        ws, cfg_path = cli_workspace
        proc = subprocess.run(
            [sys.executable, "-m", "sgdlm.cli", "diagnose", "--config", str(cfg_path),
             "--out", str(ws / "diag2"), "--threads", "1"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr
        assert "common parental sets" in proc.stdout
