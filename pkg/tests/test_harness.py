"""Experiment harness: config validation, sweeps, reports, replay."""

import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from broken_sample.errors import ConfigError
from broken_sample.harness import (
    ExperimentConfig,
    detect_reports,
    replay,
    run_power_sweep,
    run_roc,
    run_second_moment_report,
    write_curves_csv,
)
from broken_sample.models import GaussianModel, sample_dataset, save_dataset
from broken_sample.second_moment import a_coefficients, unit_prepended
from broken_sample.spectrum import gaussian_values_truncated


def gaussian_config(**overrides):
    base = dict(
        model={"kind": "gaussian", "d": 1, "rho": 0.9},
        n=500, m=500,
        detectors=[{"name": "t_eigen", "r": 4}],
        sweep={"variable": "rho", "grid": [0.5, 0.9]},
        replicates=20_000, type1=0.05, seed=3, source="limit_law", out=None)
    base.update(overrides)
    return ExperimentConfig(**base)


class TestConfigValidation:
    def test_valid_passes(self):
        gaussian_config().validate()

    @pytest.mark.parametrize("overrides,path", [
        (dict(model={"d": 1}), "model"),
        (dict(model={"kind": "gaussian", "d": 1, "rho": 2.0}), "model"),
        (dict(n=0), "n"),
        (dict(m=501), "m"),
        (dict(replicates=0), "replicates"),
        (dict(type1=1.0), "type1"),
        (dict(source="other"), "source"),
        (dict(detectors=[]), "detectors"),
        (dict(detectors=[{"name": "nope"}]), "detectors[0].name"),
        (dict(detectors=[{"name": "t_eigen"}]), "detectors[0].r"),
        (dict(detectors=[{"name": "t_hist"}]), "detectors[0].w"),
        (dict(detectors=[{"name": "wasserstein", "p": 3}]), "detectors[0].p"),
        (dict(detectors=[{"name": "wasserstein", "p": 1}]), "detectors[0]"),
        (dict(sweep={"variable": "rho", "grid": [0.9, 0.5]}), "sweep.grid"),
    ])
    def test_invalid_configs_name_field(self, overrides, path):
        cfg = gaussian_config(**overrides)
        with pytest.raises(ConfigError, match=__import__("re").escape(path)):
            cfg.validate()

    def test_from_json_rejects_unknown_fields(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({"model": {"kind": "gaussian", "d": 1, "rho": 0.5},
                                 "n": 10, "m": 10, "bogus": 1}))
        with pytest.raises(ConfigError, match="bogus"):
            ExperimentConfig.from_json(p)


class TestPowerSweep:
    def test_limit_law_points_and_baseline(self, tmp_path):
        out = tmp_path / "power.csv"
        cfg = gaussian_config(
            detectors=[{"name": "lr"}, {"name": "t_eigen", "r": 4},
                       {"name": "t_means"}, {"name": "trivial"}],
            out=str(out))
        points = run_power_sweep(cfg)
        assert len(points) == 2 * 4
        trivial = [p for p in points if p.detector == "trivial"]
        assert all(p.power == 0.05 for p in trivial)
        for p in points:
            assert 0.0 <= p.power <= 1.0
            assert p.power_stderr <= math.sqrt(0.25 / 1)
        with open(out) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == len(points)
        assert all(r["schema_version"] == "1" for r in rows)

    def test_power_increases_with_rho(self):
        cfg = gaussian_config(detectors=[{"name": "t_eigen", "r": 4}],
                              replicates=50_000)
        points = run_power_sweep(cfg)
        assert points[0].power < points[1].power

    def test_unequal_sizes_lower_power(self):
        eq = run_power_sweep(gaussian_config(
            sweep={"variable": "rho", "grid": [0.9]}, replicates=50_000))
        uneq = run_power_sweep(gaussian_config(
            m=250, sweep={"variable": "rho", "grid": [0.9]}, replicates=50_000))
        assert uneq[0].power < eq[0].power

    def test_byte_identical_reruns(self, tmp_path):
        out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
        run_power_sweep(gaussian_config(out=str(out1), replicates=5000))
        run_power_sweep(gaussian_config(out=str(out2), replicates=5000))
        assert out1.read_bytes() == out2.read_bytes()

    def test_finite_n_source(self):
        cfg = gaussian_config(
            n=200, m=200, source="finite_n", replicates=100,
            detectors=[{"name": "wasserstein", "p": 1}, {"name": "t_top"}],
            sweep={"variable": "rho", "grid": [0.95]})
        points = run_power_sweep(cfg)
        assert {p.detector for p in points} == {"wasserstein", "t_top"}
        assert all(p.source == "finite_n" for p in points)

    def test_limit_law_rejected_for_wasserstein(self):
        cfg = gaussian_config(detectors=[{"name": "wasserstein", "p": 1}],
                              source="limit_law")
        with pytest.raises(ConfigError, match="wasserstein"):
            cfg.validate()

    def test_power_near_one_at_high_correlation(self):
        # At equal sizes and rho = 0.99, the likelihood ratio, the rank-10
        # spectral test, and the 100-cell histogram test all clear 0.95.
        cfg = gaussian_config(
            detectors=[{"name": "lr"}, {"name": "t_eigen", "r": 10},
                       {"name": "t_hist", "w": 100}],
            replicates=200_000,
            sweep={"variable": "rho", "grid": [0.99]})
        points = run_power_sweep(cfg)
        for p in points:
            assert p.power > 0.95, (p.detector, p.power)

    def test_every_detector_power_monotone_in_rho(self):
        # Finite-n power at fixed type-I 0.05 is non-decreasing in rho for
        # every detector, within two binomial standard errors.
        reps = 300
        cfg = gaussian_config(
            n=400, m=400, source="finite_n", replicates=reps,
            detectors=[{"name": "t_top"}, {"name": "t_inner", "r": 4},
                       {"name": "t_eigen", "r": 4}, {"name": "t_means"},
                       {"name": "t_hist", "w": 8},
                       {"name": "wasserstein", "p": 1}],
            sweep={"variable": "rho", "grid": [0.3, 0.6, 0.9]})
        points = run_power_sweep(cfg)
        by_det = {}
        for p in points:
            by_det.setdefault(p.detector, []).append((p.sweep_value, p.power))
        for det, series in by_det.items():
            series.sort()
            for (_, a), (_, b) in zip(series, series[1:]):
                se = math.sqrt(a * (1 - a) / reps) + math.sqrt(b * (1 - b) / reps)
                assert b >= a - 2 * se, (det, series)


class TestRoc:
    def test_trivial_is_diagonal(self):
        cfg = gaussian_config(
            detectors=[{"name": "trivial"}],
            sweep={"variable": "fpr", "grid": [0.1, 0.5, 0.9]})
        points = run_roc(cfg)
        for p in points:
            assert p.power == p.type1_nominal

    def test_full_law_dominates_truncation(self):
        cfg = gaussian_config(
            detectors=[{"name": "lr"}, {"name": "t_eigen", "r": 1}],
            replicates=100_000,
            sweep={"variable": "fpr", "grid": [0.05, 0.2, 0.5]})
        points = run_roc(cfg)
        lr = {p.type1_nominal: p.power for p in points if p.detector == "lr"}
        r1 = {p.type1_nominal: p.power for p in points if p.detector == "t_eigen"}
        slack = 2 * math.sqrt(0.25 / 100_000)
        for fpr in (0.05, 0.2, 0.5):
            assert r1[fpr] <= lr[fpr] + 2 * slack

    def test_alpha_half_below_alpha_one(self):
        grid = [0.05, 0.2, 0.5]
        eq = run_roc(gaussian_config(
            detectors=[{"name": "t_eigen", "r": 4}], replicates=100_000,
            sweep={"variable": "fpr", "grid": grid}))
        uneq = run_roc(gaussian_config(
            m=250, detectors=[{"name": "t_eigen", "r": 4}], replicates=100_000,
            sweep={"variable": "fpr", "grid": grid}))
        slack = 2 * math.sqrt(0.25 / 100_000)
        for a, b in zip(uneq, eq):
            assert a.power <= b.power + 2 * slack


class TestSecondMomentReport:
    def test_gaussian_report_values(self):
        cfg = gaussian_config(model={"kind": "gaussian", "d": 1, "rho": 0.5},
                              n=50, m=50)
        report = run_second_moment_report(cfg)
        vals, _, _ = gaussian_values_truncated(1, 0.5, 1e-14)
        a50 = a_coefficients(unit_prepended(vals), 50).a[50]
        assert report["E0L2"] == pytest.approx(a50, rel=1e-9)
        assert report["E0L2"] == pytest.approx(report["limit_product"], abs=1e-6)
        assert report["regime"] == "equal_sizes"

    def test_independence_all_ones(self):
        cfg = gaussian_config(model={"kind": "gaussian", "d": 2, "rho": 0.0},
                              n=30, m=20)
        report = run_second_moment_report(cfg)
        assert report["E0L2"] == pytest.approx(1.0, abs=1e-12)
        assert report["limit_product"] == pytest.approx(1.0)
        assert report["proportional_bound"] == pytest.approx(3.0)  # (1 - 2/3)^{-1}

    def test_proportional_bound_holds(self):
        cfg = gaussian_config(model={"kind": "gaussian", "d": 1, "rho": 0.5},
                              n=40, m=20)
        report = run_second_moment_report(cfg)
        assert report["E0L2"] <= report["proportional_bound"]
        assert report["regime"] == "proportional"

    def test_bernoulli_power_sums_route(self):
        cfg = gaussian_config(model={"kind": "bernoulli", "d": 2, "q": 0.3,
                                     "rho": 0.4}, n=4, m=3)
        report = run_second_moment_report(cfg)
        from broken_sample.models import BernoulliModel
        from broken_sample.second_moment import brute_force_second_moment
        oracle = brute_force_second_moment(4, 3, BernoulliModel(2, 0.3, 0.4)
                                           .to_discrete().joint)
        assert report["E0L2"] == pytest.approx(oracle, rel=1e-10)


class TestReplayAndReports:
    def _write_run(self, tmp_path):
        model = GaussianModel(1, 0.9)
        ds = sample_dataset(model, 120, 60, "H1", 99)
        paths = save_dataset(ds, model, tmp_path)
        reports = detect_reports(ds, model, [{"name": "t_eigen", "r": 3},
                                             {"name": "t_hist", "w": 4}],
                                 model.config())
        report_path = tmp_path / "reports.jsonl"
        with open(report_path, "w") as fh:
            for rep in reports:
                fh.write(json.dumps(rep, sort_keys=True) + "\n")
        return paths, report_path, reports

    def test_replay_identical(self, tmp_path):
        paths, report_path, _ = self._write_run(tmp_path)
        results = replay(paths["xs"], paths["ys"], paths["meta"], report_path)
        assert [r["status"] for r in results] == ["ok", "ok"]

    def test_replay_flags_version_change(self, tmp_path):
        paths, report_path, reports = self._write_run(tmp_path)
        doctored = dict(reports[0], package_version="0.0.0")
        with open(report_path, "w") as fh:
            fh.write(json.dumps(doctored, sort_keys=True) + "\n")
        results = replay(paths["xs"], paths["ys"], paths["meta"], report_path)
        assert results[0]["status"] == "ok"
        assert "version mismatch" in results[0]["warning"]

    def test_replay_refuses_model_mismatch(self, tmp_path):
        paths, report_path, reports = self._write_run(tmp_path)
        doctored = dict(reports[0], model={"kind": "gaussian", "d": 1, "rho": 0.5})
        with open(report_path, "w") as fh:
            fh.write(json.dumps(doctored, sort_keys=True) + "\n")
        with pytest.raises(ConfigError, match="mismatch"):
            replay(paths["xs"], paths["ys"], paths["meta"], report_path)

    def test_replay_corrupted_csv_names_row(self, tmp_path):
        paths, report_path, _ = self._write_run(tmp_path)
        lines = open(paths["xs"]).read().splitlines()
        lines[2] = "oops"
        with open(paths["xs"], "w") as fh:
            fh.write("\n".join(lines) + "\n")
        with pytest.raises(ValueError, match="row 3"):
            replay(paths["xs"], paths["ys"], paths["meta"], report_path)


class TestCli:
    def run_cli(self, *args):
        return subprocess.run([sys.executable, "-m", "broken_sample.cli", *args],
                              capture_output=True, text=True)

    def test_power_subcommand_writes_csv(self, tmp_path):
        out = tmp_path / "p.csv"
        res = self.run_cli("power", "--model", "gaussian", "--d", "1",
                           "--rho", "0.9", "--n", "200", "--alpha", "1.0",
                           "--detector", "t_means", "--replicates", "5000",
                           "--grid", "0.5,0.9", "--seed", "1", "--out", str(out))
        assert res.returncode == 0, res.stderr
        rows = list(csv.DictReader(open(out)))
        assert len(rows) == 2 and rows[0]["detector"] == "t_means"

    def test_config_error_exit_code(self):
        res = self.run_cli("power", "--model", "gaussian", "--detector", "nosuch",
                           "--n", "100")
        assert res.returncode == 2
        assert "config error" in res.stderr

    def test_degenerate_exit_code(self, tmp_path):
        joint = tmp_path / "joint.json"
        joint.write_text("[[0.5, 0.0], [0.0, 0.5]]")
        res = self.run_cli("limit-law", "--model", "discrete", "--joint",
                           str(joint), "--law", "xi", "--alpha", "1.0",
                           "--replicates", "100", "--out", str(tmp_path / "d.bin"))
        assert res.returncode == 3, res.stderr
        assert "degenerate" in res.stderr

    def test_detect_and_replay_roundtrip(self, tmp_path):
        model = GaussianModel(1, 0.8)
        ds = sample_dataset(model, 80, 40, "H1", 5)
        paths = save_dataset(ds, model, tmp_path)
        report = tmp_path / "rep.jsonl"
        res = self.run_cli("detect", "--xs", paths["xs"], "--ys", paths["ys"],
                           "--meta", paths["meta"], "--detector", "t_eigen",
                           "--r", "3", "--out", str(report))
        assert res.returncode == 0, res.stderr
        res2 = self.run_cli("replay", "--xs", paths["xs"], "--ys", paths["ys"],
                            "--meta", paths["meta"], "--report", str(report))
        assert res2.returncode == 0, res2.stderr
        assert json.loads(res2.stdout.splitlines()[0])["status"] == "ok"

    def test_limit_law_draw_file(self, tmp_path):
        out = tmp_path / "draws.bin"
        res = self.run_cli("limit-law", "--model", "gaussian", "--rho", "0.9",
                           "--law", "xi_r", "--r", "3", "--replicates", "1000",
                           "--seed", "7", "--out", str(out))
        assert res.returncode == 0, res.stderr
        from broken_sample.asymptotics import read_draws
        law = read_draws(out)
        assert law.count == 1000 and law.draws.shape == (1000,)

    def test_second_moment_subcommand(self):
        res = self.run_cli("second-moment", "--model", "gaussian", "--d", "1",
                           "--rho", "0.5", "--n", "50", "--m", "50")
        assert res.returncode == 0
        report = json.loads(res.stdout)
        assert report["regime"] == "equal_sizes"
        assert abs(report["E0L2"] - report["limit_product"]) < 1e-6


class TestCsvWriter:
    def test_roc_columns(self, tmp_path):
        cfg = gaussian_config(detectors=[{"name": "trivial"}],
                              sweep={"variable": "fpr", "grid": [0.5]})
        points = run_roc(cfg)
        out = tmp_path / "roc.csv"
        write_curves_csv(out, "roc", points)
        header = open(out).readline().strip().split(",")
        assert header[:4] == ["schema_version", "detector", "params", "alpha"]
        assert "fpr" in header and "tpr" in header and "seed" in header
