"""
Command-line entry point.

    hvdc-locate [--seed N] [--jobs N] [--verbose] <command> [options]

Commands simulate waveforms, build datasets, run the k-fold evaluation,
learning curves, classification, noise sweeps, sensitivity and impedance
tables, train and apply saved models, and render plots. Failures print one JSON line on stderr and exit 1.
"""

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import logfire
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from app.config.experiment import ExperimentConfig, load_experiment_config
from app.config.settings import settings
from app.core.errors import FaultLocatorError
from app.models.dataset import Task
from app.models.network import NetworkConfig, WaveformRecord
from app.services import harness, reporting
from app.services.dataset import build_feature_matrix, load_scaler, save_dataset, save_scaler
from app.services.model_store import load_model, save_model
from app.services.transient_sim import (
    build_network,
    generate_scenarios,
    load_waveforms,
    save_waveforms,
    simulate,
)
from app.utils.observability import PipelineTracker, set_gauge

console = Console()


def _config(args: argparse.Namespace) -> ExperimentConfig:
    config = load_experiment_config(args.config)
    if args.seed is not None:
        config = config.model_copy(update={"seed": args.seed})
    return config


def _out_dir(args: argparse.Namespace, config: ExperimentConfig) -> Path:
    return Path(args.out) if args.out else Path(config.output_dir)


def _records(
    args: argparse.Namespace, config: ExperimentConfig, pipeline: Dict
) -> Tuple[List[WaveformRecord], NetworkConfig]:
    """Saved waveforms from --in, or a fresh simulation of the configured scenarios."""
    PipelineTracker.start_stage(pipeline, "records")
    if getattr(args, "input", None):
        records, network = load_waveforms(args.input)
    else:
        records, network = harness.prepare_records(config, args.jobs), config.network
    set_gauge("records.loaded", float(len(records)))
    PipelineTracker.end_stage(pipeline, metrics={"n_records": len(records)})
    return records, network


def _fmt(value: float) -> str:
    return "nan" if math.isnan(value) else f"{value:.3f}"


def _emit(result, out: Path, pipeline: Dict) -> List[Path]:
    PipelineTracker.start_stage(pipeline, "emit")
    paths = reporting.emit_report(result, out)
    PipelineTracker.end_stage(pipeline, metrics={"files": [p.name for p in paths]})
    return paths


# ----- commands -----

def cmd_simulate(args: argparse.Namespace, pipeline: Dict) -> None:
    config = _config(args)
    records, network = _records(args, config, pipeline)
    manifest = save_waveforms(records, _out_dir(args, config), network)
    faults = sum(1 for r in records if r.scenario.is_fault)
    console.print(f"Simulated {faults} fault and {len(records) - faults} non-fault scenarios -> {manifest}")


def cmd_build_dataset(args: argparse.Namespace, pipeline: Dict) -> None:
    config = _config(args)
    records, _ = load_waveforms(args.input)
    matrix = build_feature_matrix(records, args.window, args.channels, args.task, config.n_folds, config.seed)
    path = save_dataset(matrix, args.out or Path(config.output_dir) / f"dataset_{args.channels}.csv")
    console.print(f"Wrote {len(matrix)} rows x {matrix.n_features} features -> {path}")


def cmd_evaluate(args: argparse.Namespace, pipeline: Dict) -> None:
    config = _config(args)
    records, _ = _records(args, config, pipeline)
    PipelineTracker.start_stage(pipeline, "kfold")
    report = harness.run_kfold(config, records, args.jobs)
    PipelineTracker.end_stage(pipeline)
    _emit(report, _out_dir(args, config), pipeline)

    table = Table(title=f"{config.n_folds}-fold mean validation MAE (km)")
    table.add_column("model")
    for mode in report.channel_modes:
        table.add_column(mode, justify="right")
    table.add_column("overall", justify="right")
    table.add_column("fit time (s)", justify="right")
    for model in report.models:
        fit_time = sum(report.total_fit_time(model, mode) for mode in report.channel_modes)
        table.add_row(
            model,
            *[_fmt(report.mean_mae(model, mode)) for mode in report.channel_modes],
            _fmt(report.overall_mean(model)),
            f"{fit_time:.3f}",
        )
    console.print(table)
    failures = [r for r in report.results if r.error]
    for failure in failures:
        console.print(f"[red]{failure.model} fold {failure.fold} ({failure.channel_mode}): {failure.error}[/red]")


def cmd_curve(args: argparse.Namespace, pipeline: Dict) -> None:
    config = _config(args)
    records, _ = _records(args, config, pipeline)
    PipelineTracker.start_stage(pipeline, "curve")
    curve = harness.learning_curve(config, args.model, args.grid, records, args.channels)
    PipelineTracker.end_stage(pipeline)
    _emit(curve, _out_dir(args, config), pipeline)

    table = Table(title=f"Learning curve: {curve.model} ({curve.channel_mode})")
    for column in ("n_train", "train MAE", "valid MAE", "fit time (s)", "cumulative (s)"):
        table.add_column(column, justify="right")
    for p in curve.points:
        table.add_row(
            str(p.n_train), _fmt(p.train_mae_km), _fmt(p.valid_mae_km),
            f"{p.fit_time_s:.4f}", f"{p.cumulative_time_s:.4f}",
        )
    console.print(table)


def cmd_classify(args: argparse.Namespace, pipeline: Dict) -> None:
    config = _config(args)
    records, _ = _records(args, config, pipeline)
    PipelineTracker.start_stage(pipeline, "classify")
    report = harness.classify_events(config, records, args.jobs)
    PipelineTracker.end_stage(pipeline, metrics={"accuracy": report.accuracy})
    _emit(report, _out_dir(args, config), pipeline)

    table = Table(title=f"Fault vs non-fault ({report.channel_mode})")
    for column in ("fold", "n", "accuracy", "tp", "fp", "tn", "fn"):
        table.add_column(column, justify="right")
    for f in report.folds:
        table.add_row(str(f.fold), str(f.n_valid), f"{f.accuracy:.3f}", str(f.tp), str(f.fp), str(f.tn), str(f.fn))
    console.print(table)
    console.print(f"Pooled accuracy: {report.accuracy:.4f}")


def cmd_noise(args: argparse.Namespace, pipeline: Dict) -> None:
    config = _config(args)
    records, _ = _records(args, config, pipeline)
    PipelineTracker.start_stage(pipeline, "noise")
    noise = harness.noise_sweep(config, records, args.jobs)
    PipelineTracker.end_stage(pipeline)
    _emit(noise, _out_dir(args, config), pipeline)

    table = Table(title="Mean MAE (km) vs SNR")
    for column in ("SNR (dB)", "channels", "model", "mean", "std"):
        table.add_column(column, justify="right")
    for row in noise.rows:
        table.add_row(f"{row.snr_db:g}", row.channel_mode, row.model, _fmt(row.mean_mae_km), _fmt(row.std_mae_km))
    console.print(table)


def cmd_sensitivity(args: argparse.Namespace, pipeline: Dict) -> None:
    config = _config(args)
    records, _ = _records(args, config, pipeline)
    PipelineTracker.start_stage(pipeline, "kfold")
    report = harness.run_kfold(config, records, args.jobs)
    PipelineTracker.end_stage(pipeline)
    sensitivity = harness.sensitivity_table(report, records)
    out = _out_dir(args, config)
    _emit(report, out, pipeline)
    _emit(sensitivity, out, pipeline)

    table = Table(title="Out-of-fold MAE (km) by factor")
    for column in ("channels", "model", "factor", "bin", "n", "MAE"):
        table.add_column(column, justify="right")
    for row in sensitivity.rows:
        table.add_row(
            row.channel_mode, row.model, row.factor,
            f"[{row.bin_low:g}, {row.bin_high:g})", str(row.n), _fmt(row.mae_km),
        )
    console.print(table)


def cmd_impedance(args: argparse.Namespace, pipeline: Dict) -> None:
    config = _config(args)
    records, network = _records(args, config, pipeline)
    rf = args.rf_assumed if args.rf_assumed is not None else config.impedance_rf_assumed
    result = harness.impedance_table(records, network, rf, config.impedance_path_branch)
    _emit(result, _out_dir(args, config), pipeline)
    console.print(
        f"Impedance locator over {len(result.rows)} faults (R_F assumed {rf:g} ohm): "
        f"mean |error| oracle {_fmt(result.mean_abs_error('oracle'))} km, "
        f"blind {_fmt(result.mean_abs_error('blind'))} km"
    )


def cmd_locate(args: argparse.Namespace, pipeline: Dict) -> None:
    config = _config(args)
    if args.input:
        records, network = load_waveforms(args.input)
    else:
        # simulate just the requested scenario from the configured set
        scenarios = generate_scenarios(config.seed, config.n_fault, config.n_nonfault, config.ranges, config.network)
        wanted = [s for s in scenarios if s.scenario_id == args.scenario]
        state = build_network(config.network, dt_output=config.dt_output)
        records = [simulate(state, s, config.duration) for s in wanted]
        network = config.network
    rf = args.rf_assumed if args.rf_assumed is not None else config.impedance_rf_assumed
    record, estimate = harness.locate_scenario(
        records, network, args.scenario, rf, args.oracle_if, config.impedance_path_branch,
    )
    scenario = record.scenario
    table = Table(title=f"Scenario {scenario.scenario_id}")
    table.add_column("field")
    table.add_column("value", justify="right")
    table.add_row("kind", scenario.kind.value)
    table.add_row("branch", str(scenario.branch_index))
    if scenario.is_fault:
        table.add_row("true distance (km)", f"{scenario.distance_km:.3f}")
        table.add_row("fault resistance (ohm)", f"{scenario.fault_resistance:.4g}")
    table.add_row("I_F source", "oracle" if args.oracle_if else "terminal current")
    table.add_row("estimate (km)", f"{estimate:.3f}")
    console.print(table)


def cmd_train(args: argparse.Namespace, pipeline: Dict) -> None:
    config = _config(args)
    records, _ = _records(args, config, pipeline)
    PipelineTracker.start_stage(pipeline, "train")
    trained = harness.train_model(config, records, args.model, args.channels, args.jobs)
    PipelineTracker.end_stage(pipeline)

    out = _out_dir(args, config)
    stem = reporting.artifact_stem(trained.name, trained.channel_mode)
    model_path = save_model(trained.model, out / f"{stem}.model.json")
    scaler_path = out / f"{stem}.scaler.json"
    save_scaler(trained.scaler, scaler_path)
    console.print(f"Trained {trained.name} on {trained.channel_mode} windows -> {model_path}, {scaler_path}")


def cmd_predict(args: argparse.Namespace, pipeline: Dict) -> None:
    config = _config(args)
    model = load_model(args.model_file)
    scaler = load_scaler(args.scaler_file)
    records, _ = _records(args, config, pipeline)
    mode = args.channels or config.channel_modes[0]
    window = args.window or config.n_window
    name = Path(args.model_file).name.split(".")[0]
    table = harness.predict_records(model, scaler, records, window, mode, name)
    _emit(table, _out_dir(args, config), pipeline)

    summary = Table(title=f"{name} estimates ({mode})")
    for column in ("scenario", "true (km)", "estimate (km)", "error (km)"):
        summary.add_column(column, justify="right")
    for row in table.rows:
        summary.add_row(str(row.scenario_id), f"{row.distance_km:.3f}", _fmt(row.estimate_km), _fmt(row.error_km))
    console.print(summary)
    console.print(f"MAE: {_fmt(table.mae_km)} km over {len(table.rows)} faults")


def cmd_plot(args: argparse.Namespace, pipeline: Dict) -> None:
    directory = args.input or settings.RUNTIME.OUTPUT_DIR
    target = args.out or directory
    written = reporting.emit_plots(directory, target)
    console.print(f"Rendered {len(written)} charts in {target}")
    for path in written:
        console.print(f"  {path.name}")


# ----- parser -----

def _grid(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hvdc-locate",
        description="Fault-location workbench for three-terminal HVDC networks",
    )
    parser.add_argument("--seed", type=int, default=None, help="Override the experiment seed")
    parser.add_argument("--jobs", type=int, default=settings.RUNTIME.JOBS, help="Worker processes")
    parser.add_argument("--verbose", "-v", action="store_true", help="Enable debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, handler: Callable, help_text: str, records: bool = True) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="Experiment config JSON file")
        p.add_argument("--out", default=None, help="Output directory or file")
        if records:
            p.add_argument("--in", dest="input", default=None, help="Waveform directory written by simulate")
        p.set_defaults(handler=handler)
        return p

    command("simulate", cmd_simulate, "Simulate the configured scenarios and save waveforms", records=False)

    p = command("build-dataset", cmd_build_dataset, "Build a windowed feature CSV from saved waveforms", records=False)
    p.add_argument("--in", dest="input", required=True, help="Waveform directory")
    p.add_argument("--window", type=int, default=20, help="Samples per channel after inception")
    p.add_argument("--channels", choices=["v", "i", "vi"], default="v")
    p.add_argument("--task", choices=[t.value for t in Task], default=Task.REGRESSION.value)

    command("evaluate", cmd_evaluate, "k-fold evaluation of the model roster")

    p = command("curve", cmd_curve, "Learning and timing curve for one model")
    p.add_argument("--model", default=None, help="Roster name (default: config curve_model)")
    p.add_argument("--grid", type=_grid, default=None, help="Comma-separated training sizes")
    p.add_argument("--channels", choices=["v", "i", "vi"], default=None)

    command("classify", cmd_classify, "Fault vs non-fault classification")
    command("noise", cmd_noise, "k-fold evaluation under measurement noise")
    command("sensitivity", cmd_sensitivity, "Error binned by resistance, inductance and distance")

    p = command("impedance", cmd_impedance, "Impedance-locator table for every fault")
    p.add_argument("--rf-assumed", type=float, default=None, help="Assumed fault resistance (ohm)")

    p = command("locate", cmd_locate, "Impedance-locate one scenario")
    p.add_argument("--scenario", type=int, required=True, help="Scenario id")
    p.add_argument("--rf-assumed", type=float, default=None, help="Assumed fault resistance (ohm)")
    p.add_argument("--oracle-if", action="store_true", help="Use the simulated fault current")

    p = command("train", cmd_train, "Fit one model on every fault record and save it with its scaler")
    p.add_argument("--model", default=None, help="Roster name (default: config curve_model)")
    p.add_argument("--channels", choices=["v", "i", "vi"], default=None)

    p = command("predict", cmd_predict, "Locate faults with a saved model and scaler")
    p.add_argument("--model-file", required=True, help="Model JSON written by train")
    p.add_argument("--scaler-file", required=True, help="Scaler JSON written by train")
    p.add_argument("--window", type=int, default=None, help="Samples per channel after inception")
    p.add_argument("--channels", choices=["v", "i", "vi"], default=None)

    p = command("plot", cmd_plot, "Render SVG charts from report CSVs", records=False)
    p.add_argument("--in", dest="input", default=None, help="Results directory")

    return parser


def _set_verbose() -> None:
    logging.getLogger().setLevel(logging.DEBUG)
    for name in list(logging.root.manager.loggerDict):
        if name.startswith("app"):
            logging.getLogger(name).setLevel(logging.DEBUG)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose or settings.DEBUG:
        _set_verbose()

    pipeline = PipelineTracker.start_pipeline(args.command.replace("-", "_"), pipeline_name=args.command)
    try:
        args.handler(args, pipeline)
    except (FaultLocatorError, ValidationError) as e:
        PipelineTracker.end_pipeline(pipeline, success=False, error=str(e))
        logfire.error("Command failed", command=args.command, error=str(e))
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 1
    PipelineTracker.end_pipeline(pipeline)
    return 0


if __name__ == "__main__":
    sys.exit(main())
