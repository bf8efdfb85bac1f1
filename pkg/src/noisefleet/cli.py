"""Command-line pipeline: simulate -> analyze -> dataset -> train -> report.

Every stage writes into one run directory seeded by ``simulate`` (which drops
a manifest.json recording the scenario hash and seed). Commands are
idempotent for identical inputs and seeds. Exit codes: 0 success, 1 runtime
failure, 2 usage or config error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np
import pandas as pd

from .errors import NoisefleetError, ScenarioError
from .experiment import Dataset, feature_ztests, lda_summary, run_experiment
from .forest import RfHyper
from .monitor import (
    DEFAULT_ALERT_RULES,
    AlertEngine,
    ambient_level,
    exceedance_fraction,
    rules_from_config,
    slow_dba_series,
    yield_matrix,
)
from .node import TELEMETRY_FIELDS
from .scenario import load_scenario
from .simnet import advance, build_world, export_run
from .store import StoreCatalog
from .windows import collect_window_rows_csv, extract_instances

HOUR_S = 3600
CSV_CHUNK_ROWS = 2_000_000


def _load_manifest(run_dir: Path) -> dict:
    manifest_path = Path(run_dir) / "manifest.json"
    if not manifest_path.exists():
        raise ScenarioError(str(manifest_path), "not a run directory (missing manifest.json)")
    return json.loads(manifest_path.read_text())


def _hour_grid(manifest: dict) -> np.ndarray:
    start = manifest["start_ts"]
    return np.arange(start, start + manifest["horizon_hours"] * HOUR_S, HOUR_S, dtype=np.int64)


def cmd_simulate(scenario_path, seed=None, out_dir=None):
    scenario = load_scenario(scenario_path)
    out_dir = Path(out_dir)
    world = build_world(scenario, seed=seed, out_dir=out_dir)
    advance(world, scenario.end_ts)
    return export_run(world)


def cmd_analyze(run_dir, figures: bool = True) -> dict:
    run_dir = Path(run_dir)
    manifest = _load_manifest(run_dir)
    out = run_dir / "analysis"
    out.mkdir(parents=True, exist_ok=True)

    catalog = StoreCatalog(run_dir / "store")
    hours = _hour_grid(manifest)
    matrix = yield_matrix(catalog, manifest["nodes"], int(hours[0]), int(hours[-1]) + HOUR_S)

    matrix_path = out / "yield_matrix.csv"
    matrix.to_frame().to_csv(matrix_path)
    totals = list(matrix.totals.values()) or [0.0]
    summary = {
        "network_mean_pct": matrix.network_mean,
        "network_median_pct": matrix.network_median,
        "min_pct": float(min(totals)),
        "max_pct": float(max(totals)),
        "per_sensor_total_pct": {k: round(v, 3) for k, v in matrix.totals.items()},
        "hours": int(hours.size),
    }
    (out / "yield_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))

    rules = list(DEFAULT_ALERT_RULES)
    if manifest.get("alert_rules"):
        rules = list(rules_from_config(manifest["alert_rules"]))
    engine = AlertEngine(rules)
    telemetry_csv = run_dir / "telemetry.csv"
    if telemetry_csv.exists():
        usecols = ["node_id", "ts"] + sorted({r.metric for r in rules})
        for chunk in pd.read_csv(telemetry_csv, usecols=usecols, chunksize=CSV_CHUNK_ROWS):
            engine.feed(chunk)
    events = sorted(engine.events, key=lambda e: (e.fired_ts, e.node_id, e.metric))
    with open(out / "alerts.jsonl", "w") as fh:
        for event in events:
            fh.write(event.to_json() + "\n")

    exceedance = _exceedance_table(run_dir, manifest, hours)
    exceedance.to_csv(out / "exceedance.csv", index=False)

    rendered = []
    if figures:
        from . import figures as figs

        fig_dir = out / "figures"
        fig_dir.mkdir(exist_ok=True)
        rendered.append(figs.render_yield_heatmap(matrix, fig_dir / "yield_heatmap.png"))
        if len(exceedance):
            rendered.append(
                figs.render_exceedance_strip(exceedance, fig_dir / "exceedance.png")
            )
    return {
        "yield_matrix": matrix_path,
        "summary": summary,
        "alerts": len(events),
        "figures": rendered,
    }


def _exceedance_table(run_dir: Path, manifest: dict, hours: np.ndarray) -> pd.DataFrame:
    """Hourly ambient exceedance per sensor. Needs real SPL bytes; an
    index-fidelity run yields an empty table (levels were never stored)."""
    columns = ["sensor_id", "hour_ts", "ambient_db", "exceedance_pct"]
    if manifest.get("store_fidelity") != "spl_bytes":
        return pd.DataFrame(columns=columns)
    records = []
    for sensor in manifest["nodes"]:
        ts, dba = slow_dba_series(run_dir / "store", sensor)
        if ts.size == 0:
            continue
        for hour in hours:
            hour = int(hour)
            in_hour = dba[(ts >= hour) & (ts < hour + HOUR_S)]
            if in_hour.size == 0:
                continue
            trailing = dba[(ts > hour + HOUR_S - 24 * HOUR_S) & (ts <= hour + HOUR_S)]
            if trailing.size < HOUR_S:
                continue
            ambient = ambient_level(trailing)
            records.append(
                {
                    "sensor_id": sensor,
                    "hour_ts": hour,
                    "ambient_db": round(ambient, 2),
                    "exceedance_pct": round(exceedance_fraction(in_hour, ambient), 3),
                }
            )
    return pd.DataFrame(records, columns=columns)


def cmd_dataset(run_dir, lead_time_hours: int = 1, downtime_threshold_hours: float = 6.0,
                seed: int | None = None) -> dict:
    run_dir = Path(run_dir)
    manifest = _load_manifest(run_dir)
    out = run_dir / "dataset"
    out.mkdir(parents=True, exist_ok=True)
    seed = manifest["seed"] if seed is None else seed

    catalog = StoreCatalog(run_dir / "store")
    hours = _hour_grid(manifest)
    yields_by_sensor = {}
    for sensor in manifest["nodes"]:
        yields = np.array([
            100.0 * min(catalog.readable_count(sensor, int(h)), 60) / 60 for h in hours
        ])
        yields_by_sensor[sensor] = (hours, yields)

    # two passes: windows first (cheap), then one chunked scan for their rows
    windows_by_node: dict[str, list[tuple[int, int]]] = {}
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(97,)))
    result = extract_instances(
        yields_by_sensor,
        lambda node, t0, t1: pd.DataFrame(columns=["node_id", "ts"] + list(TELEMETRY_FIELDS)),
        rng,
        run_start_ts=manifest["start_ts"],
        threshold_h=downtime_threshold_hours,
        lead_h=lead_time_hours,
    )
    for window in result.instances:
        windows_by_node.setdefault(window.sensor_id, []).append((window.t0, window.t1))
    for spans in windows_by_node.values():
        spans.sort()

    telemetry_csv = run_dir / "telemetry.csv"
    rows = collect_window_rows_csv(telemetry_csv, windows_by_node, chunksize=CSV_CHUNK_ROWS)

    window_index = sorted(
        (w.sensor_id, w.t0, w.t1, w.instance_id, w.label) for w in result.instances
    )
    rows = rows.sort_values(["node_id", "ts"], kind="stable").reset_index(drop=True)
    rows["instance_id"] = _assign_instances(rows, window_index)

    instances_frame = result.instances_frame()
    rows_out = rows[["instance_id"] + list(TELEMETRY_FIELDS)]
    instances_frame.to_csv(out / "instances.csv", index=False)
    rows_out.to_csv(out / "rows.csv", index=False)
    info = {
        "seed": seed,
        "lead_time_hours": lead_time_hours,
        "downtime_threshold_hours": downtime_threshold_hours,
        "instances": int(len(instances_frame)),
        "rows": int(len(rows_out)),
        "per_sensor": result.per_sensor_counts(),
        "shortfalls": result.shortfalls,
        "balanced": all(
            c["prefail"] == c["stable"] for c in result.per_sensor_counts().values()
        ),
    }
    (out / "dataset.json").write_text(json.dumps(info, indent=2, sort_keys=True))
    return info


def _assign_instances(rows: pd.DataFrame, window_index: list[tuple]) -> list[str]:
    """Map each telemetry row to its window instance id."""
    by_node: dict[str, list[tuple]] = {}
    for sensor, t0, t1, iid, _ in window_index:
        by_node.setdefault(sensor, []).append((t0, t1, iid))
    out = []
    node_col = rows["node_id"].to_numpy()
    ts_col = rows["ts"].to_numpy()
    for node, ts in zip(node_col, ts_col):
        assigned = ""
        for t0, t1, iid in by_node.get(str(node), ()):
            if t0 <= ts < t1:
                assigned = iid
                break
        out.append(assigned)
    return out


def cmd_train(run_dir, trials: int = 10, seed: int | None = None, trees: int = 1000,
              scaler_fit: str = "train", n_jobs: int = 1) -> dict:
    run_dir = Path(run_dir)
    manifest = _load_manifest(run_dir)
    dataset_dir = run_dir / "dataset"
    if not (dataset_dir / "instances.csv").exists():
        raise ScenarioError(str(dataset_dir), "dataset stage has not run")
    out = run_dir / "model"
    out.mkdir(parents=True, exist_ok=True)
    seed = manifest["seed"] if seed is None else seed

    instances = pd.read_csv(dataset_dir / "instances.csv")
    rows = pd.read_csv(dataset_dir / "rows.csv")
    dataset = Dataset(instances=instances, rows=rows)

    report = run_experiment(
        dataset,
        trials=trials,
        seed=seed,
        hyper=RfHyper(n_trees=trees),
        scaler_fit=scaler_fit,
        n_jobs=n_jobs,
    )
    report["feature_ztests"] = feature_ztests(dataset)
    lda_stats, projection = lda_summary(dataset, seed=seed)
    report["lda"] = lda_stats
    projection.to_csv(out / "lda_projection.csv", index=False)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    (out / "summary.txt").write_text(render_summary(report))
    return report


def render_summary(report: dict) -> str:
    agg = report["aggregate"]
    lines = [
        "downtime prediction report",
        "=" * 40,
        f"instances: {report['dataset']['instances']} "
        f"({report['dataset']['per_class_instances']})",
        f"rows:      {report['dataset']['rows']}",
        f"trials:    {report['config']['trials']}  trees: {report['config']['n_trees']}  "
        f"scaler fit: {report['config']['scaler_fit']}",
        "",
        f"accuracy (rows):      mean {agg['accuracy_rows']['mean']:.4f}  "
        f"[{agg['accuracy_rows']['min']:.4f} .. {agg['accuracy_rows']['max']:.4f}]",
        f"accuracy (instances): mean {agg['accuracy_instances']['mean']:.4f}",
        f"mean precision: {agg['mean_precision_pct']:.2f}%   "
        f"mean recall: {agg['mean_recall_pct']:.2f}%",
        "",
        "class      precision(mean)  recall(mean)",
    ]
    for name in ("stable", "prefail"):
        pc = agg["per_class"][name]
        lines.append(
            f"{name:<10} {pc['precision']['mean']:.4f}           {pc['recall']['mean']:.4f}"
        )
    lines.append("")
    lines.append("feature importances (total 100%):")
    ordered = sorted(report["feature_importances_pct"].items(), key=lambda kv: -kv[1])
    for feature, pct in ordered:
        lines.append(f"  {feature:<28} {pct:6.2f}%")
    if "feature_ztests" in report:
        lines.append("")
        lines.append("prefail vs stable z-tests:")
        for feature, res in report["feature_ztests"].items():
            if "z" in res:
                lines.append(f"  {feature:<28} z = {res['z']:9.2f}")
    return "\n".join(lines) + "\n"


def cmd_report(run_dir, figures: bool = True) -> str:
    run_dir = Path(run_dir)
    model_dir = run_dir / "model"
    report_path = model_dir / "report.json"
    if not report_path.exists():
        raise ScenarioError(str(model_dir), "train stage has not run")
    report = json.loads(report_path.read_text())
    summary = render_summary(report)
    if figures:
        from . import figures as figs

        fig_dir = model_dir / "figures"
        fig_dir.mkdir(exist_ok=True)
        figs.render_metric_boxes(report, fig_dir / "model_scores.png")
        figs.render_feature_importances(report, fig_dir / "feature_importance.png")
        projection_csv = model_dir / "lda_projection.csv"
        if projection_csv.exists():
            figs.render_lda_projection(
                pd.read_csv(projection_csv), fig_dir / "lda_projection.png"
            )
    return summary


# -- click wiring --------------------------------------------------------------


@click.group()
def main():
    """Acoustic sensor fleet simulator and downtime-prediction pipeline."""


def _run(func, *args, **kwargs):
    try:
        return func(*args, **kwargs)
    except ScenarioError as exc:
        raise click.UsageError(str(exc)) from exc
    except NoisefleetError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


@main.command()
@click.option("--scenario", "scenario_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int, default=None, help="Overrides the scenario seed.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
def simulate(scenario_path, seed, out_dir):
    """Run a scenario to its horizon and export the run directory."""
    artifacts = _run(cmd_simulate, scenario_path, seed=seed, out_dir=out_dir)
    click.echo(f"run written to {artifacts.run_dir}")


@main.command()
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--figures/--no-figures", default=True)
def analyze(run_dir, figures):
    """Compute yield, alerts, and exceedance outputs for a run."""
    result = _run(cmd_analyze, run_dir, figures=figures)
    click.echo(json.dumps(result["summary"], indent=2, sort_keys=True))
    click.echo(f"alerts: {result['alerts']}")


@main.command()
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--lead-time-hours", type=int, default=1, show_default=True,
              help="Prefail window offset before downtime.")
@click.option("--downtime-threshold-hours", type=float, default=6.0, show_default=True)
@click.option("--seed", type=int, default=None, help="Stable-window sampling seed.")
def dataset(run_dir, lead_time_hours, downtime_threshold_hours, seed):
    """Extract prefail/stable window instances and their telemetry rows."""
    info = _run(
        cmd_dataset, run_dir,
        lead_time_hours=lead_time_hours,
        downtime_threshold_hours=downtime_threshold_hours,
        seed=seed,
    )
    click.echo(json.dumps(info, indent=2, sort_keys=True))


@main.command()
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--trials", type=int, default=10, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--trees", type=int, default=1000, show_default=True)
@click.option("--scaler-fit", type=click.Choice(["train", "test"]), default="train",
              show_default=True)
@click.option("--jobs", "n_jobs", type=int, default=1, show_default=True)
def train(run_dir, trials, seed, trees, scaler_fit, n_jobs):
    """Train and evaluate the forest over randomized instance splits."""
    report = _run(
        cmd_train, run_dir, trials=trials, seed=seed, trees=trees,
        scaler_fit=scaler_fit, n_jobs=n_jobs,
    )
    agg = report["aggregate"]
    click.echo(
        f"accuracy mean {agg['accuracy_rows']['mean']:.4f}; "
        f"prefail recall mean {agg['per_class']['prefail']['recall']['mean']:.4f}"
    )


@main.command()
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--figures/--no-figures", default=True)
def report(run_dir, figures):
    """Render the human-readable summary and report figures."""
    click.echo(_run(cmd_report, run_dir, figures=figures), nl=False)


if __name__ == "__main__":
    main()
