"""Tests for metrics, config loading, the Monte Carlo runner and the CLI."""

import json

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

import main
from config.schemas import ExperimentConfig
from config.settings import RuntimeSettings
from experiments.config_loader import ConfigError, apply_overrides, load_experiment_config
from experiments.metrics import compute_ber, compute_mse
from experiments.runner import DIAGNOSTIC_COLUMNS, METRIC_COLUMNS, ExperimentRunner, run_experiment


class TestMetrics:
    def test_mse(self, rng):
        g = rng.normal(size=10) + 1j * rng.normal(size=10)
        g /= np.linalg.norm(g)
        assert compute_mse(g, g) == 0.0
        assert compute_mse(np.zeros(10), g) == pytest.approx(1.0)
        with pytest.raises(ValueError):
            compute_mse(np.zeros(9), g)

    def test_ber(self, rng):
        bits = rng.integers(0, 2, 100, dtype=np.uint8)
        assert compute_ber(bits, bits) == 0.0
        assert compute_ber(1 - bits, bits) == 1.0
        with pytest.raises(ValueError):
            compute_ber(bits[:10], bits)


class TestConfig:
    def test_defaults_match_reference_setup(self):
        cfg = ExperimentConfig()
        assert cfg.frame.M == 384 and cfg.basis.length == 96
        assert cfg.code.generators == (7, 5)
        assert cfg.estimator.t_max == 4 and cfg.estimator.rho == 0.5

    def test_cir_length_bound(self):
        with pytest.raises(ValidationError):
            ExperimentConfig(n_subcarriers=8, cir_length=32, wavelet_levels=2)

    def test_load_and_override(self, tmp_path):
        path = tmp_path / "exp.json"
        path.write_text(json.dumps({"k_nonzero": 5, "frames_per_point": 3}))
        cfg = load_experiment_config(path)
        assert cfg.k_nonzero == 5
        cfg = apply_overrides(cfg, seed=9, frames=1, output_path="x")
        assert (cfg.rng_seed, cfg.frames_per_point, cfg.output_path) == (9, 1, "x")

    @pytest.mark.parametrize("content", ["{not json", "[1, 2]", '{"unknown_key": 1}', '{"frames_per_point": 0}'])
    def test_bad_files(self, tmp_path, content):
        path = tmp_path / "bad.json"
        path.write_text(content)
        with pytest.raises(ConfigError):
            load_experiment_config(path)

    def test_estimator_switches_from_file(self, tmp_path):
        path = tmp_path / "exp.json"
        path.write_text(json.dumps({
            "adapt_hyperparams": False,
            "truncate": False,
            "lambda_init": 0.2,
            "tau2_init": 0.05,
        }))
        est = load_experiment_config(path).estimator
        assert (est.adapt_hyperparams, est.truncate) == (False, False)
        assert (est.lambda_init, est.tau2_init) == (0.2, 0.05)

    def test_fixed_prior_needs_tau2(self, tmp_path):
        path = tmp_path / "exp.json"
        path.write_text(json.dumps({"adapt_hyperparams": False}))
        with pytest.raises(ConfigError):
            load_experiment_config(path)

    def test_settings_from_environment(self, monkeypatch):
        monkeypatch.setenv("UWBEM_WORKERS", "3")
        monkeypatch.setenv("UWBEM_LOG_LEVEL", "DEBUG")
        settings = RuntimeSettings()
        assert settings.workers == 3 and settings.log_level == "DEBUG"


class TestRunner:
    def test_outputs(self, tiny_experiment):
        result = run_experiment(tiny_experiment, RuntimeSettings(workers=1))
        metrics = result.metrics
        assert list(metrics.columns) == METRIC_COLUMNS
        assert len(metrics) == 2 * 6
        assert metrics["ber"].between(0, 1).all()
        assert (metrics["mse"] >= 0).all()
        assert (metrics.loc[metrics["estimator"] == "perfect-csi", "mse"] == 0).all()
        assert metrics.loc[metrics["estimator"] == "em-map", "mean_active"].notna().all()

        out = tiny_experiment.output_path
        on_disk = pd.read_csv(f"{out}/metrics.csv")
        assert list(on_disk.columns) == METRIC_COLUMNS
        meta = json.loads(open(f"{out}/run_metadata.json").read())
        assert set(meta["sigma2"]) == {"2.0", "8.0"}

    def test_diagnostics_active_non_increasing(self, tiny_experiment):
        result = ExperimentRunner(tiny_experiment, RuntimeSettings(workers=1)).run()
        diag = result.diagnostics
        assert list(diag.columns) == DIAGNOSTIC_COLUMNS
        em_map = diag[diag["estimator"] == "em-map"]
        for _, group in em_map.groupby("ebn0_db"):
            active = group.sort_values("iteration")["mean_active"].to_numpy()
            assert len(active) == tiny_experiment.t_max + 1
            assert np.all(np.diff(active) <= 1e-12)

    def test_frames_see_identical_inputs(self, tiny_experiment):
        runner = ExperimentRunner(tiny_experiment, RuntimeSettings(workers=1))
        first = runner.simulate_frame((1, 0))
        second = runner.simulate_frame((1, 0))
        assert [o["bit_errors"] for o in first] == [o["bit_errors"] for o in second]
        assert [o["mse"] for o in first] == [o["mse"] for o in second]

    def test_curves_follow_snr(self, tiny_experiment):
        cfg = tiny_experiment.model_copy(update={"ebn0_grid_db": [0.0, 4.0, 10.0, 12.0], "frames_per_point": 40})
        metrics = ExperimentRunner(cfg, RuntimeSettings(workers=1)).run().metrics.set_index(["estimator", "ebn0_db"])
        for name in cfg.estimators:
            assert metrics.loc[(name, 12.0), "mse"] <= metrics.loc[(name, 0.0), "mse"]
        assert metrics.loc[("perfect-csi", 10.0), "ber"] < metrics.loc[("pilot-ml", 4.0), "ber"]


class TestCli:
    def test_run(self, tiny_experiment, tmp_path):
        path = tmp_path / "exp.json"
        path.write_text(tiny_experiment.model_dump_json())
        out = tmp_path / "cli_out"
        assert main.main(["run", "--config", str(path), "--frames", "1", "--out", str(out)]) == 0
        assert (out / "metrics.csv").exists()
        assert (out / "diagnostics.csv").exists()

    def test_missing_config(self, tmp_path, capsys):
        assert main.main(["run", "--config", str(tmp_path / "absent.json")]) == main.EXIT_IO
        assert capsys.readouterr().err.startswith("error: io:")

    def test_invalid_config(self, tmp_path, capsys):
        path = tmp_path / "exp.json"
        path.write_text('{"rho": 2.0}')
        assert main.main(["run", "--config", str(path)]) == main.EXIT_CONFIG
        assert capsys.readouterr().err.startswith("error: config:")

    def test_channels_gen_and_inspect(self, tmp_path, capsys):
        cir = tmp_path / "cir.txt"
        assert main.main(["channels", "gen", "--model", "exponential-pdp", "--seed", "3", "--out", str(cir)]) == 0
        assert cir.exists()
        assert main.main(["channels", "inspect", str(cir)]) == 0
        stats = capsys.readouterr().out
        assert '"model": "file"' in stats

    def test_selftest(self):
        assert main.main(["selftest"]) == 0
