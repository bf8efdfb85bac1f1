import json
from pathlib import Path

import pandas as pd
import pytest
from click.testing import CliRunner

from noisefleet.cli import cmd_analyze, cmd_dataset, cmd_report, cmd_simulate, cmd_train, main

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def tiny_scenario(tmp_path, **extra):
    lines = [
        "[scenario]",
        'name = "tiny"',
        'start = "2026-01-01T00:00:00Z"',
        "horizon_hours = 2",
        "seed = 3",
        "[fleet]",
        "nodes = 2",
    ]
    lines.extend(extra.get("lines", []))
    path = tmp_path / "tiny.toml"
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture(scope="module")
def demo_run(tmp_path_factory):
    run_dir = tmp_path_factory.mktemp("demo") / "run"
    cmd_simulate(SCENARIOS / "demo.toml", out_dir=run_dir)
    return run_dir


class TestSimulate:
    def test_run_directory_contents(self, demo_run):
        assert (demo_run / "manifest.json").exists()
        assert (demo_run / "telemetry.csv").exists()
        assert (demo_run / "faults.json").exists()
        assert (demo_run / "store" / "spl").is_dir()
        manifest = json.loads((demo_run / "manifest.json").read_text())
        assert manifest["seed"] == 42
        assert manifest["conservation"]["reconciles"] is True

    def test_identical_manifests_on_rerun(self, tmp_path, demo_run):
        other = tmp_path / "run2"
        cmd_simulate(SCENARIOS / "demo.toml", out_dir=other)
        assert (other / "manifest.json").read_bytes() == (demo_run / "manifest.json").read_bytes()
        assert (other / "telemetry.csv").read_bytes() == (demo_run / "telemetry.csv").read_bytes()

    def test_missing_scenario_exit_2(self, tmp_path):
        runner = CliRunner()
        result = runner.invoke(
            main, ["simulate", "--scenario", str(tmp_path / "nope.toml"),
                   "--out", str(tmp_path / "r")],
        )
        assert result.exit_code == 2

    def test_invalid_config_exit_2(self, tmp_path):
        bad = tmp_path / "bad.toml"
        bad.write_text('[scenario]\nname = "b"\nstart = "2026-01-01T00:00:00Z"\n'
                       "horizon_hours = 1\n[fleet]\nnodes = 0\n")
        runner = CliRunner()
        result = runner.invoke(
            main, ["simulate", "--scenario", str(bad), "--out", str(tmp_path / "r")],
        )
        assert result.exit_code == 2
        assert "fleet.nodes" in result.output


class TestAnalyze:
    def test_outputs_written(self, demo_run):
        result = cmd_analyze(demo_run, figures=True)
        analysis = demo_run / "analysis"
        assert (analysis / "yield_matrix.csv").exists()
        assert (analysis / "yield_summary.json").exists()
        assert (analysis / "alerts.jsonl").exists()
        assert (analysis / "exceedance.csv").exists()
        assert (analysis / "figures" / "yield_heatmap.png").stat().st_size > 5000
        summary = json.loads((analysis / "yield_summary.json").read_text())
        assert 80.0 < summary["network_mean_pct"] < 100.0

    def test_memory_leak_alerts_fire(self, demo_run):
        cmd_analyze(demo_run, figures=False)
        lines = (demo_run / "analysis" / "alerts.jsonl").read_text().splitlines()
        events = [json.loads(l) for l in lines]
        assert events, "memory leak should breach the RAM rule"
        assert all(e["node_id"] == "N05" for e in events)
        assert all(e["metric"] == "ram_usage_pct" for e in events)

    def test_empty_store_all_zero_exit_0(self, tmp_path):
        scenario = tiny_scenario(tmp_path)
        run_dir = tmp_path / "run"
        cmd_simulate(scenario, out_dir=run_dir)
        import shutil

        shutil.rmtree(run_dir / "store")
        (run_dir / "store").mkdir()
        runner = CliRunner()
        result = runner.invoke(main, ["analyze", str(run_dir), "--no-figures"])
        assert result.exit_code == 0
        summary = json.loads((run_dir / "analysis" / "yield_summary.json").read_text())
        assert summary["network_mean_pct"] == 0.0


class TestDatasetTrainReport:
    def test_dataset_then_train_then_report(self, demo_run):
        info = cmd_dataset(demo_run)
        assert info["balanced"] is True
        assert info["instances"] >= 6
        report = cmd_train(demo_run, trials=2, trees=20)
        assert len(report["trials"]) == 2
        assert (demo_run / "model" / "report.json").exists()
        assert (demo_run / "model" / "lda_projection.csv").exists()
        summary = cmd_report(demo_run, figures=True)
        assert "feature importances" in summary
        figs = demo_run / "model" / "figures"
        assert (figs / "model_scores.png").exists()
        assert (figs / "feature_importance.png").exists()
        assert (figs / "lda_projection.png").exists()

    def test_train_same_seed_identical_report(self, demo_run):
        cmd_dataset(demo_run)
        cmd_train(demo_run, trials=2, trees=20, seed=5)
        first = (demo_run / "model" / "report.json").read_bytes()
        cmd_train(demo_run, trials=2, trees=20, seed=5)
        assert (demo_run / "model" / "report.json").read_bytes() == first

    def test_report_before_train_is_usage_error(self, tmp_path):
        scenario = tiny_scenario(tmp_path)
        run_dir = tmp_path / "runx"
        cmd_simulate(scenario, out_dir=run_dir)
        runner = CliRunner()
        result = runner.invoke(main, ["report", str(run_dir)])
        assert result.exit_code == 2

    def test_train_on_empty_dataset_exit_1(self, tmp_path):
        # a fault-free run yields no downtime, so no instances to train on
        scenario = tiny_scenario(tmp_path)
        run_dir = tmp_path / "runy"
        cmd_simulate(scenario, out_dir=run_dir)
        cmd_dataset(run_dir)
        runner = CliRunner()
        result = runner.invoke(main, ["train", str(run_dir), "--trials", "1"])
        assert result.exit_code == 1
        assert "error" in result.output

    def test_lead_time_flag_moves_windows(self, demo_run):
        info1 = cmd_dataset(demo_run, lead_time_hours=1)
        inst1 = pd.read_csv(demo_run / "dataset" / "instances.csv")
        info2 = cmd_dataset(demo_run, lead_time_hours=2)
        inst2 = pd.read_csv(demo_run / "dataset" / "instances.csv")
        pre1 = inst1[inst1.label == "prefail"].sort_values("t0")["t0"].to_numpy()
        pre2 = inst2[inst2.label == "prefail"].sort_values("t0")["t0"].to_numpy()
        assert ((pre1 - pre2) == 3600).all()
        cmd_dataset(demo_run)  # restore default for other tests


class TestByteDemoScenario:
    def test_bytes_store_round_trip(self, tmp_path):
        run_dir = tmp_path / "run"
        cmd_simulate(SCENARIOS / "outage_recovery.toml", out_dir=run_dir)
        result = cmd_analyze(run_dir, figures=True)
        summary = result["summary"]
        # the 30-minute outage recovers completely: every hour at 100%
        assert summary["network_mean_pct"] == 100.0
        exceedance = pd.read_csv(run_dir / "analysis" / "exceedance.csv")
        assert len(exceedance) > 0
        assert (exceedance["exceedance_pct"] >= 0).all()
        assert (exceedance["exceedance_pct"] <= 100).all()
        assert (run_dir / "analysis" / "figures" / "exceedance.png").exists()
