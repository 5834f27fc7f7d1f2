import pandas as pd
import pytest
from click.testing import CliRunner

import app
from backend.classifier.weights_io import load_weights, save_weights
from backend.errors import TrainingFailure
from backend.harness.ledger import RunLedger
from backend.harness.reports import read_results_csv
from backend.utils import read_json, write_json


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def config_file(tmp_path, small_config):
    small_config["attacks"] = [{"kind": "mos", "losses": "MOS-3", "K": 2}, {"kind": "apgd", "losses": [0]}]
    return write_json(tmp_path / "exp.json", small_config)


def statuses():
    return [(r.kind, r.status) for r in RunLedger().list_runs()]


class TestTrainCommand:
    def test_writes_weights_and_dataset(self, runner, config_file, tmp_path):
        out = tmp_path / "model.mosw"
        data = tmp_path / "eval.csv"
        result = runner.invoke(app.cli, ["train", "--config", str(config_file), "--out", str(out), "--dataset-out", str(data)])
        assert result.exit_code == 0, result.output
        assert load_weights(out).layer_dims == (2, 8, 3)
        assert data.read_text().startswith("# mosattack-dataset v1")
        assert "Trained" in result.output
        assert statuses() == [("train", "Completed")]

    def test_saves_resolved_config_next_to_weights(self, runner, config_file, tmp_path, mocker):
        out = tmp_path / "model.mosw"
        result = runner.invoke(app.cli, ["train", "--config", str(config_file), "--out", str(out)])
        assert result.exit_code == 0, result.output
        saved = read_json(tmp_path / "model.config.json")
        assert saved["model"]["weights_path"] == str(out.resolve())
        assert saved["model"]["hidden"] == [8]
        assert saved["dataset"]["n_train"] == 300

        train = mocker.patch("backend.harness.experiment.train_toy")
        rerun = runner.invoke(
            app.cli,
            ["attack", "--config", str(tmp_path / "model.config.json"), "--out-dir", str(tmp_path / "r"), "--no-progress"],
        )
        assert rerun.exit_code == 0, rerun.output
        train.assert_not_called()

    def test_failure_is_recorded(self, runner, config_file, tmp_path, mocker):
        mocker.patch("app.train_toy", side_effect=TrainingFailure("loss diverged at epoch 3"))
        result = runner.invoke(app.cli, ["train", "--config", str(config_file), "--out", str(tmp_path / "m.mosw")])
        assert result.exit_code == 1
        assert "loss diverged" in result.output
        assert statuses() == [("train", "Failed")]

    def test_bad_config(self, runner, tmp_path):
        path = write_json(tmp_path / "bad.json", {"attacks": [{"kind": "pgd"}]})
        result = runner.invoke(app.cli, ["train", "--config", str(path)])
        assert result.exit_code == 1
        assert "unknown attack kind" in result.output


class TestAttackCommand:
    def test_runs_grid(self, runner, config_file, tmp_path):
        out_dir = tmp_path / "run1"
        result = runner.invoke(app.cli, ["attack", "--config", str(config_file), "--out-dir", str(out_dir), "--no-progress"])
        assert result.exit_code == 0, result.output
        table = read_results_csv(out_dir / "results.csv")
        assert [r.attack for r in table.rows] == ["Clean error", "MOS-3(2)", "APGD-CE(1)"]
        assert (out_dir / "loss_matrices" / "MOS-3_2.json").exists()
        assert statuses() == [("attack", "Completed")]

    def test_uses_given_weights(self, runner, config_file, tmp_path, tiny_model, mocker):
        weights = save_weights(tmp_path / "given.mosw", tiny_model)
        train = mocker.patch("backend.harness.experiment.train_toy")
        result = runner.invoke(
            app.cli, ["attack", "--config", str(config_file), "--weights", str(weights), "--out-dir", str(tmp_path / "r")]
        )
        assert result.exit_code == 0, result.output
        train.assert_not_called()
        assert load_weights(tmp_path / "r" / "model.mosw").same_parameters(tiny_model)

    def test_preflight_failure_stops_the_run(self, runner, config_file, mocker):
        mocker.patch("app.run_preflight_checks", return_value={"status": "failed", "message": "disk full"})
        run = mocker.patch("app.run_experiment")
        result = runner.invoke(app.cli, ["attack", "--config", str(config_file)])
        assert result.exit_code == 1
        assert "disk full" in result.output
        run.assert_not_called()

    def test_config_required(self, runner):
        assert runner.invoke(app.cli, ["attack"]).exit_code == 2


class TestMineAndReport:
    @pytest.fixture
    def run_dir(self, runner, config_file, tmp_path):
        out_dir = tmp_path / "run1"
        result = runner.invoke(app.cli, ["attack", "--config", str(config_file), "--out-dir", str(out_dir), "--no-progress"])
        assert result.exit_code == 0, result.output
        return out_dir

    def test_mine(self, runner, run_dir, tmp_path):
        out = tmp_path / "patterns.json"
        artifact = run_dir / "loss_matrices" / "MOS-3_2.json"
        result = runner.invoke(app.cli, ["mine", str(artifact), "--out", str(out), "--by-label"])
        assert result.exit_code == 0, result.output
        assert "all-losses share" in result.output
        data = read_json(out)
        assert data["format"] == "mosattack-patterns"
        assert data["config"]["mu"] == 1.0
        assert "MOS-3(2)" in data["histogram"]["groups"]

    def test_mine_reads_miner_section(self, runner, run_dir, tmp_path):
        cfg = write_json(tmp_path / "miner.json", {"miner": {"lambda": 0.3, "mu": 0.1}})
        out = tmp_path / "patterns.json"
        artifact = run_dir / "loss_matrices" / "MOS-3_2.csv"
        result = runner.invoke(app.cli, ["mine", str(artifact), "--config", str(cfg), "--out", str(out)])
        assert result.exit_code == 0, result.output
        assert read_json(out)["config"]["lambda"] == 0.3

    def test_mine_malformed_config_is_a_clean_error(self, runner, tmp_path):
        artifact = write_json(tmp_path / "m.json", {})
        cfg = tmp_path / "miner.json"
        cfg.write_text("{not json")
        result = runner.invoke(app.cli, ["mine", str(artifact), "--config", str(cfg)])
        assert result.exit_code == 1
        assert "Malformed JSON" in result.output
        assert isinstance(result.exception, SystemExit)

    def test_report(self, runner, run_dir, tmp_path):
        result = runner.invoke(app.cli, ["report", str(run_dir / "results.csv"), "--out-dir", str(tmp_path / "rep")])
        assert result.exit_code == 0, result.output
        wide = pd.read_csv(tmp_path / "rep" / "report_table.csv")
        assert "run1" in wide.columns

    def test_runs_lists_everything(self, runner, run_dir):
        result = runner.invoke(app.cli, ["runs"])
        assert result.exit_code == 0
        assert "Found 1 experiment runs:" in result.output


class TestProbeCommand:
    def test_probe(self, runner, tiny_model, tmp_path):
        weights = save_weights(tmp_path / "m.mosw", tiny_model)
        out = tmp_path / "probe.csv"
        result = runner.invoke(
            app.cli, ["probe", "--k", "1", "--k", "2", "--losses", "MOS-3", "--weights", str(weights), "--repeats", "1", "--out", str(out)]
        )
        assert result.exit_code == 0, result.output
        frame = pd.read_csv(out)
        assert frame["K"].tolist() == [1, 2]
        assert frame["m"].tolist() == [3, 3]

    def test_probe_bad_losses(self, runner, tiny_model, tmp_path):
        weights = save_weights(tmp_path / "m.mosw", tiny_model)
        result = runner.invoke(app.cli, ["probe", "--losses", "9", "--weights", str(weights)])
        assert result.exit_code == 1
