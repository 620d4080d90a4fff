import subprocess
import sys

import pytest
import yaml

from gridtwin.bench import read_metrics_csv

CONFIG = {
    "format_version": 1,
    "feeder": "feeder_8bus",
    "steps": 40,
    "train_fraction": 0.8,
    "profile": {"seed": 11, "day_steps": 24, "amplitude": 0.35, "jitter": 0.05},
    "noise_seed": 23,
    "schema": {
        "power_sigma": 0.01, "vmag_sigma": 0.004, "vang_sigma": 0.002,
        "train_alpha": 0.05,
        "vmag_buses": ["b2", "b4", "b6", "b8"],
        "vang_nodes": ["b5:a", "b5:b", "b5:c", "b8:a"],
    },
    "model": {"d": 8, "d_ff": 16, "blocks": 1, "heads": 2, "groups": 1,
              "window": 4, "lr": 0.001, "epochs": 2, "seed": 7},
    "evaluation": {"alphas": [0.0, 0.4], "seeds": [0], "wls_failure_seeds": 2,
                   "timeseries_node": "b5:a"},
    "output_dir": "OVERRIDDEN",
}


def run_cli(*args):
    return subprocess.run(
        [sys.executable, "-m", "gridtwin.cli", *args],
        capture_output=True, text=True,
    )


@pytest.fixture()
def config_path(tmp_path):
    cfg = dict(CONFIG)
    cfg["output_dir"] = str(tmp_path / "out")
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


class TestGen:
    def test_writes_csvs(self, config_path, tmp_path):
        result = run_cli("gen", "--config", str(config_path))
        assert result.returncode == 0, result.stderr
        out = tmp_path / "out"
        assert (out / "measurements.csv").exists()
        assert (out / "states.csv").exists()
        assert (out / "config_used.yaml").exists()
        header = (out / "measurements.csv").read_text().splitlines()[0]
        assert header.startswith("P_injection:b2:a,")

    def test_missing_fixture_is_config_error(self, config_path):
        result = run_cli("gen", "--config", str(config_path),
                         "--feeder", "no/such/feeder.yaml")
        assert result.returncode == 2
        assert "no/such/feeder.yaml" in result.stderr

    def test_missing_config_file(self, tmp_path):
        result = run_cli("gen", "--config", str(tmp_path / "absent.yaml"))
        assert result.returncode == 2


class TestTrainEval:
    def test_train_then_eval(self, config_path, tmp_path):
        result = run_cli("train", "--config", str(config_path))
        assert result.returncode == 0, result.stderr
        out = tmp_path / "out"
        assert (out / "checkpoint.json").exists()
        history = (out / "history.csv").read_text().splitlines()
        assert history[0] == "epoch,train_loss,val_loss"
        assert len(history) == 3  # header + 2 epochs

        result = run_cli("eval", "--config", str(config_path))
        assert result.returncode == 0, result.stderr
        rows = read_metrics_csv(out / "metrics.csv")
        assert {r["method"] for r in rows} == {"dt"}
        assert {r["alpha"] for r in rows} == {0.0, 0.4}

    def test_eval_without_checkpoint(self, config_path):
        result = run_cli("eval", "--config", str(config_path))
        assert result.returncode == 2
        assert "checkpoint" in result.stderr

    def test_train_from_imported_csvs(self, config_path, tmp_path):
        assert run_cli("gen", "--config", str(config_path)).returncode == 0
        out = tmp_path / "out"
        result = run_cli(
            "train", "--config", str(config_path),
            "--measurements", str(out / "measurements.csv"),
            "--states", str(out / "states.csv"),
        )
        assert result.returncode == 0, result.stderr


class TestWls:
    def test_wls_rows(self, config_path, tmp_path):
        result = run_cli("wls", "--config", str(config_path), "--alphas", "0")
        assert result.returncode == 0, result.stderr
        rows = read_metrics_csv(tmp_path / "out" / "metrics.csv")
        metrics = {r["metric"] for r in rows}
        assert "feasible_fraction" in metrics
        assert "mae_mag" in metrics


class TestSweepDeterminism:
    def test_metrics_csv_byte_identical_across_runs(self, config_path, tmp_path):
        result = run_cli("sweep", "--config", str(config_path), "--jobs", "1")
        assert result.returncode == 0, result.stderr
        first = (tmp_path / "out" / "metrics.csv").read_bytes()
        result = run_cli("sweep", "--config", str(config_path), "--jobs", "1")
        assert result.returncode == 0, result.stderr
        second = (tmp_path / "out" / "metrics.csv").read_bytes()
        assert first == second

    def test_report_rebuild_matches(self, config_path, tmp_path):
        assert run_cli("sweep", "--config", str(config_path)).returncode == 0
        out = tmp_path / "out"
        summary_first = (out / "summary.csv").read_bytes()
        rebuilt = tmp_path / "rebuilt"
        result = run_cli("report", "--metrics", str(out / "metrics.csv"),
                         "--out", str(rebuilt))
        assert result.returncode == 0, result.stderr
        assert (rebuilt / "summary.csv").read_bytes() == summary_first
        assert (rebuilt / "sweep.svg").exists()
        assert (rebuilt / "timeseries.svg").exists()

    def test_report_missing_metrics(self, tmp_path):
        result = run_cli("report", "--metrics", str(tmp_path / "nope.csv"))
        assert result.returncode == 2


class TestExitCodes:
    def test_numeric_failure_is_exit_3(self, tmp_path):
        cfg = dict(CONFIG)
        cfg["output_dir"] = str(tmp_path / "out")
        cfg["model"] = dict(cfg["model"], lr=1e6, epochs=30)
        path = tmp_path / "diverge.yaml"
        path.write_text(yaml.safe_dump(cfg))
        result = run_cli("train", "--config", str(path))
        assert result.returncode == 3
        assert "numeric failure" in result.stderr

    def test_io_failure_is_exit_4(self, config_path):
        result = run_cli("gen", "--config", str(config_path),
                         "--out", "/dev/null/not-a-dir")
        assert result.returncode == 4
