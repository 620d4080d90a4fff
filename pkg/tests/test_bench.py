import numpy as np
import pytest

from gridtwin.bench import (
    ExperimentConfig,
    daily_load_profiles,
    emit_report,
    read_metrics_csv,
    read_timeseries_csv,
    write_summary_csv,
)
from gridtwin.errors import ConfigError, LengthMismatch
from gridtwin.metrics import compute_metrics, summarize, wrap_angle


class TestMetrics:
    def test_exact_match_all_zero(self):
        x = np.random.default_rng(0).normal(size=(10, 8))
        m = compute_metrics(x, x)
        assert m["rmse_pct"] == 0.0
        assert m["mae_mag"] == 0.0
        assert m["mae_ang"] == 0.0

    def test_uniform_magnitude_offset(self):
        rng = np.random.default_rng(1)
        k = 5
        mags = rng.uniform(0.9, 1.1, size=(20, k))
        angs = rng.uniform(-0.5, 0.5, size=(20, k))
        v_true = mags * np.exp(1j * angs)
        v_hat = (mags + 0.01) * np.exp(1j * angs)
        x_true = np.hstack([v_true.real, v_true.imag])
        x_hat = np.hstack([v_hat.real, v_hat.imag])
        m = compute_metrics(x_hat, x_true)
        assert m["mae_mag"] == pytest.approx(0.01, abs=1e-12)
        assert m["rmse_pct"] == pytest.approx(1.0, abs=1e-9)
        assert m["mae_ang"] == pytest.approx(0.0, abs=1e-12)

    def test_matches_scalar_loop_oracle(self):
        rng = np.random.default_rng(2)
        k, steps = 4, 100
        x_true = rng.normal(size=(steps, 2 * k)) + np.tile([1.0] * k + [0.0] * k, (steps, 1))
        x_hat = x_true + 0.01 * rng.normal(size=x_true.shape)
        m = compute_metrics(x_hat, x_true)
        mag_sq, mag_abs, ang_abs = 0.0, 0.0, 0.0
        for t in range(steps):
            for i in range(k):
                vt = complex(x_true[t, i], x_true[t, k + i])
                vh = complex(x_hat[t, i], x_hat[t, k + i])
                dm = abs(vh) - abs(vt)
                da = np.angle(np.exp(1j * (np.angle(vh) - np.angle(vt))))
                mag_sq += dm * dm
                mag_abs += abs(dm)
                ang_abs += abs(da)
        n = steps * k
        assert m["rmse_pct"] == pytest.approx(100 * np.sqrt(mag_sq / n), abs=1e-12)
        assert m["mae_mag"] == pytest.approx(mag_abs / n, abs=1e-12)
        assert m["mae_ang"] == pytest.approx(ang_abs / n, abs=1e-12)

    def test_angle_wraparound(self):
        assert wrap_angle(np.pi + 0.1) == pytest.approx(-np.pi + 0.1)
        assert wrap_angle(-np.pi - 0.1) == pytest.approx(np.pi - 0.1)
        assert wrap_angle(np.pi) == pytest.approx(np.pi)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            compute_metrics(np.zeros((3, 4)), np.zeros((4, 4)))


class TestConfig:
    def test_from_yaml_round_trip(self, tmp_path):
        config = ExperimentConfig()
        path = tmp_path / "config.yaml"
        config.echo(path)
        back = ExperimentConfig.from_yaml(path)
        assert back.to_dict() == config.to_dict()

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_yaml(tmp_path / "absent.yaml")

    def test_alpha_bounds(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(alphas=(0.0, 0.99)).validate()

    def test_needs_seed(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(seeds=()).validate()

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"bogus": 1})


class TestProfiles:
    def test_seeded_and_deterministic(self, feeder8):
        _, nominal = feeder8
        a = daily_load_profiles(nominal, 10, seed=3)
        b = daily_load_profiles(nominal, 10, seed=3)
        c = daily_load_profiles(nominal, 10, seed=4)
        assert all(p.s == q.s for p, q in zip(a, b))
        assert any(p.s != q.s for p, q in zip(a, c))

    def test_daily_shape(self, feeder8):
        _, nominal = feeder8
        profiles = daily_load_profiles(nominal, 96, seed=3, day_steps=96,
                                       amplitude=0.4, jitter=0.0)
        key = ("b5", "a")
        series = np.array([p.s[key].real for p in profiles])
        assert series.min() > 0
        swing = series.max() / series.min()
        assert swing > 1.5  # the sinusoid actually moves the load


class TestReport:
    def rows(self):
        rows = []
        for method in ("dt", "wls"):
            for alpha in (0.0, 0.2):
                for seed in (0, 1, 2):
                    for metric in ("rmse_pct", "mae_mag", "mae_ang"):
                        rows.append({
                            "method": method, "alpha": alpha, "seed": seed,
                            "metric": metric,
                            "value": 0.01 * (seed + 1) + alpha + (method == "wls"),
                        })
        return rows

    def test_empty_report(self, tmp_path):
        written = emit_report([], tmp_path)
        metrics = (tmp_path / "metrics.csv").read_text()
        summary = (tmp_path / "summary.csv").read_text()
        assert metrics.strip() == "method,alpha,seed,metric,value"
        assert summary.strip() == "method,alpha,metric,min,mean,max"
        assert not (tmp_path / "sweep.svg").exists()

    def test_metrics_round_trip(self, tmp_path):
        rows = self.rows()
        emit_report(rows, tmp_path)
        back = read_metrics_csv(tmp_path / "metrics.csv")
        assert back == rows

    def test_summary_recomputable_exactly(self, tmp_path):
        rows = self.rows()
        emit_report(rows, tmp_path)
        back = read_metrics_csv(tmp_path / "metrics.csv")
        first = (tmp_path / "summary.csv").read_text()
        write_summary_csv(tmp_path / "summary2.csv", back)
        assert (tmp_path / "summary2.csv").read_text() == first
        recomputed = summarize(back)
        for rec in recomputed:
            assert rec["min"] <= rec["mean"] <= rec["max"]

    def test_sweep_svg_polyline_per_method_per_metric(self, tmp_path):
        rows = self.rows()
        emit_report(rows, tmp_path)
        svg = (tmp_path / "sweep.svg").read_text()
        assert svg.count("<polyline") == 2 * 3  # methods x metrics

    def test_timeseries_artifacts(self, tmp_path):
        rows = self.rows()
        steps = list(range(40, 50))
        columns = [("truth", list(np.linspace(0.99, 1.0, 10))),
                   ("dt", list(np.linspace(0.98, 1.01, 10)))]
        emit_report(rows, tmp_path, timeseries=("b5:a", steps, columns))
        svg = (tmp_path / "timeseries.svg").read_text()
        assert svg.count("<polyline") == 2
        back_steps, back_columns = read_timeseries_csv(tmp_path / "timeseries.csv")
        assert back_steps == steps
        assert back_columns[0][0] == "truth"
        assert np.allclose(back_columns[1][1], columns[1][1], atol=0)
