"""CLI tests: stage and prediction subcommands, config/seed/out flags, and
the exit-code contract (0 ok, 2 validation, 3 numerical)."""

import dataclasses
import json
import os
import shutil

import numpy as np
import pytest

from cardiorom.cli import main
from cardiorom.geometry import save_geometry
from cardiorom.gp import TrainingRecord, save_vector_gp, train_vector_gp
from cardiorom.pipeline import (ArtifactStore, PipelineConfig, UQConfig,
                                save_config)
from cardiorom.podgeom import coefficient_matrix, read_population_csv


@pytest.fixture(scope="module")
def cli_env(mini_pipeline, tmp_path_factory):
    """Config file pointing at the shared trained store, plus an interior
    coefficient file."""
    config, _ = mini_pipeline
    root = tmp_path_factory.mktemp("cli")
    config_path = root / "config.json"
    save_config(config, config_path)
    store = ArtifactStore(config.out_dir)
    pop = read_population_csv(store.population_csv, config.n_theta,
                              config.n_phi)
    c = coefficient_matrix(pop).mean(axis=0)
    coeffs_path = root / "coeffs.json"
    coeffs_path.write_text(json.dumps({"c": c.tolist()}) + "\n")
    return config, str(config_path), str(coeffs_path), root


class TestPredictAndPlot:
    def test_predict_with_coeffs(self, cli_env, capsys):
        config, config_path, coeffs_path, _ = cli_env
        code = main(["--config", config_path, "predict",
                     "--coeffs", coeffs_path])
        assert code == 0
        out = capsys.readouterr().out
        assert "trust ratio" in out
        report_path = ArtifactStore(config.out_dir).path("prediction.json")
        assert os.path.exists(report_path)
        with open(report_path) as fh:
            report = json.load(fh)
        assert len(report["mu_hat"]) == 4

    def test_predict_with_geometry(self, cli_env, tmp_path):
        # a population member's geometry, so the surrogate is on home turf
        config, config_path, _, _ = cli_env
        store = ArtifactStore(config.out_dir)
        pop = read_population_csv(store.population_csv, config.n_theta,
                                  config.n_phi)
        geom_path = tmp_path / "geom.json"
        save_geometry(pop[0].geom, geom_path)
        report_path = tmp_path / "pred.json"
        code = main(["--config", config_path, "predict",
                     "--geometry", str(geom_path),
                     "--report", str(report_path)])
        assert code == 0
        assert report_path.exists()

    def test_plot_from_report(self, cli_env, tmp_path):
        _, config_path, coeffs_path, _ = cli_env
        report_path = tmp_path / "pred.json"
        assert main(["--config", config_path, "predict",
                     "--coeffs", coeffs_path,
                     "--report", str(report_path)]) == 0
        plot_dir = tmp_path / "plots"
        code = main(["--config", config_path, "plot",
                     "--report", str(report_path),
                     "--plot-dir", str(plot_dir)])
        assert code == 0
        assert (plot_dir / "loop.csv").exists()
        assert (plot_dir / "bands_99.csv").exists()


class TestUpdate:
    def test_update_record(self, cli_env, tmp_path, capsys):
        config, _, coeffs_path, _ = cli_env
        out = tmp_path / "copy"
        shutil.copytree(config.out_dir, out)
        copy_cfg = dataclasses.replace(config, out_dir=str(out))
        config_path = tmp_path / "config.json"
        save_config(copy_cfg, config_path)
        with open(coeffs_path) as fh:
            c = json.load(fh)["c"]
        record_path = tmp_path / "record.json"
        record_path.write_text(json.dumps({
            "c": c, "mu": [1.02, 0.98, 1.01, 1.0],
            "sigma_mat": (np.eye(4) * 1e-8).tolist()}) + "\n")
        code = main(["--config", str(config_path), "update",
                     "--record", str(record_path)])
        assert code == 0
        assert "accepted" in capsys.readouterr().out
        # same record again: too close now
        assert main(["--config", str(config_path), "update",
                     "--record", str(record_path)]) == 0
        assert "rejected" in capsys.readouterr().out


class TestStagesAndExitCodes:
    def test_population_stage_and_seed_override(self, tmp_path):
        out_a = tmp_path / "a"
        config = PipelineConfig(out_dir=str(out_a), n_pop=5)
        config_path = tmp_path / "config.json"
        save_config(config, config_path)
        assert main(["--config", str(config_path), "population"]) == 0
        a = (out_a / "population.csv").read_bytes()
        out_b = tmp_path / "b"
        assert main(["--config", str(config_path), "--out", str(out_b),
                     "--seed", "5", "population"]) == 0
        b = (out_b / "population.csv").read_bytes()
        assert a != b

    def test_missing_config_and_out_is_validation_error(self, capsys):
        assert main(["population"]) == 2
        assert "error" in capsys.readouterr().err

    def test_missing_artifacts_is_validation_error(self, tmp_path, capsys):
        coeffs_path = tmp_path / "c.json"
        coeffs_path.write_text('{"c": [0, 0, 0, 0]}\n')
        code = main(["--out", str(tmp_path / "empty"), "predict",
                     "--coeffs", str(coeffs_path)])
        assert code == 2
        assert "gp-train" in capsys.readouterr().err

    def test_bad_input_files_are_validation_errors(self, tmp_path, capsys):
        # missing file, malformed JSON, and a missing key must all exit 2
        # with a one-line message, never a traceback
        out = str(tmp_path / "empty")
        assert main(["--out", out, "predict",
                     "--coeffs", str(tmp_path / "nope.json")]) == 2
        bad = tmp_path / "bad.json"
        bad.write_text("not json\n")
        assert main(["--out", out, "update", "--record", str(bad)]) == 2
        nokey = tmp_path / "nokey.json"
        nokey.write_text('{"x": 1}\n')
        assert main(["--out", out, "predict",
                     "--coeffs", str(nokey)]) == 2
        assert main(["--config", str(tmp_path / "absent.json"),
                     "population"]) == 2
        err = capsys.readouterr().err
        assert err.count("error") == 4

    def test_numerical_failure_exit_code(self, cli_env, tmp_path, capsys):
        config, _, _, _ = cli_env
        out = tmp_path / "poisoned"
        os.makedirs(out)
        record = TrainingRecord(c=np.zeros(4),
                                mu=np.array([1.0, 0.08, 1.0, 1.0]),
                                sigma_mat=np.diag([1e-6, 0.09, 1e-6, 1e-6]))
        save_vector_gp(train_vector_gp([record], re_optimize=False),
                       out / "gp_state.json")
        bad_cfg = dataclasses.replace(config, out_dir=str(out),
                                      uq=UQConfig(n_mc=100))
        config_path = tmp_path / "bad.json"
        save_config(bad_cfg, config_path)
        coeffs_path = tmp_path / "c.json"
        coeffs_path.write_text('{"c": [0, 0, 0, 0]}\n')
        code = main(["--config", str(config_path), "predict",
                     "--coeffs", str(coeffs_path)])
        assert code == 3
        assert "failure" in capsys.readouterr().err
