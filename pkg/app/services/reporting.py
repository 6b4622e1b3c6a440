"""
Report Emission

Writes harness results as CSV files with fixed headers and renders SVG charts
from whatever CSVs are present in a results directory.
"""

import math
import re
from functools import singledispatch
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import logfire
import pandas as pd

from app.core.errors import FaultLocatorError
from app.models.reports import (
    ClassificationReport,
    EvalReport,
    ImpedanceTable,
    LearningCurve,
    NoiseTable,
    PredictionTable,
    SensitivityTable,
)
from app.utils import svg_charts
from app.utils.svg_charts import Series

FLOAT_FORMAT = "%.17g"

KFOLD_COLUMNS = ["channel_mode", "model", "fold", "n_train", "n_valid", "mae_km", "error"]
TIMING_COLUMNS = ["channel_mode", "model", "fold", "fit_time_s"]
CURVE_COLUMNS = ["n_train", "train_mae_km", "valid_mae_km", "fit_time_s", "cumulative_time_s"]
NOISE_COLUMNS = ["snr_db", "channel_mode", "model", "mean_mae_km", "std_mae_km"]
IMPEDANCE_COLUMNS = [
    "scenario_id", "branch_index", "distance_km", "fault_resistance", "limiting_inductance",
    "estimate_oracle_km", "estimate_blind_km", "error_oracle_km", "error_blind_km",
]
SENSITIVITY_COLUMNS = ["channel_mode", "model", "factor", "bin_low", "bin_high", "n", "mae_km"]
PREDICTION_COLUMNS = ["scenario_id", "distance_km", "estimate_km", "error_km"]
CLASSIFY_COLUMNS = ["fold", "n_valid", "accuracy", "tp", "fp", "tn", "fn"]


class ReportError(FaultLocatorError):
    """Raised when report files cannot be written or read."""
    pass


def _safe_name(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", name)


def curve_filename(model: str) -> str:
    return f"curve_{_safe_name(model)}.csv"


def artifact_stem(model: str, channel_mode: str) -> str:
    return _safe_name(f"{model}_{channel_mode}")


def write_csv(rows: Sequence[Dict[str, Any]], columns: List[str], path: Path) -> Path:
    """Write rows with a fixed header; floats keep full precision, NaN is written as nan."""
    frame = pd.DataFrame(list(rows), columns=columns)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep="nan", lineterminator="\n")
    except OSError as e:
        raise ReportError(f"cannot write {path}: {e}")
    return path


def read_csv(path: Union[str, Path]) -> pd.DataFrame:
    """Read a report CSV; text cells stay strings, empty text cells stay empty."""
    src = Path(path)
    try:
        return pd.read_csv(src, float_precision="round_trip", keep_default_na=False, na_values=["nan"])
    except FileNotFoundError:
        raise ReportError(f"report file not found: {src}")
    except (OSError, ValueError, pd.errors.ParserError) as e:
        raise ReportError(f"cannot read {src}: {e}")


@singledispatch
def emit_report(report: Any, directory: Union[str, Path]) -> List[Path]:
    """
    Write a harness result to CSV under `directory`.

    Returns:
        Paths written

    Raises:
        ReportError: For unsupported result types or write failures
    """
    raise ReportError(f"no CSV emitter for {type(report).__name__}")


@emit_report.register
def _(report: EvalReport, directory: Union[str, Path]) -> List[Path]:
    modes = {m: i for i, m in enumerate(report.channel_modes)}
    models = {m: i for i, m in enumerate(report.models)}
    results = sorted(report.results, key=lambda r: (modes[r.channel_mode], models[r.model], r.fold))
    out = Path(directory)
    kfold = write_csv(
        [
            {
                "channel_mode": r.channel_mode,
                "model": r.model,
                "fold": r.fold,
                "n_train": r.n_train,
                "n_valid": r.n_valid,
                "mae_km": r.mae_km,
                "error": r.error or "",
            }
            for r in results
        ],
        KFOLD_COLUMNS,
        out / "kfold.csv",
    )
    timing = write_csv(
        [
            {"channel_mode": r.channel_mode, "model": r.model, "fold": r.fold, "fit_time_s": r.fit_time_s}
            for r in results
        ],
        TIMING_COLUMNS,
        out / "kfold_timing.csv",
    )
    logfire.info("k-fold report written", directory=str(out), rows=len(results))
    return [kfold, timing]


@emit_report.register
def _(report: LearningCurve, directory: Union[str, Path]) -> List[Path]:
    path = Path(directory) / curve_filename(report.model)
    return [write_csv([p.model_dump() for p in report.points], CURVE_COLUMNS, path)]


@emit_report.register
def _(report: NoiseTable, directory: Union[str, Path]) -> List[Path]:
    return [write_csv([r.model_dump() for r in report.rows], NOISE_COLUMNS, Path(directory) / "noise.csv")]


@emit_report.register
def _(report: ImpedanceTable, directory: Union[str, Path]) -> List[Path]:
    path = Path(directory) / "impedance.csv"
    return [write_csv([r.model_dump() for r in report.rows], IMPEDANCE_COLUMNS, path)]


@emit_report.register
def _(report: PredictionTable, directory: Union[str, Path]) -> List[Path]:
    path = Path(directory) / f"predictions_{_safe_name(report.model)}.csv"
    return [write_csv([r.model_dump() for r in report.rows], PREDICTION_COLUMNS, path)]


@emit_report.register
def _(report: SensitivityTable, directory: Union[str, Path]) -> List[Path]:
    path = Path(directory) / "sensitivity.csv"
    return [write_csv([r.model_dump() for r in report.rows], SENSITIVITY_COLUMNS, path)]


@emit_report.register
def _(report: ClassificationReport, directory: Union[str, Path]) -> List[Path]:
    path = Path(directory) / "classify.csv"
    return [write_csv([f.model_dump() for f in report.folds], CLASSIFY_COLUMNS, path)]


# ----- plots -----

def read_report(path: Path, columns: Sequence[str]) -> pd.DataFrame:
    """Read a report CSV and check that it carries every column a chart needs."""
    frame = read_csv(path)
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise ReportError(f"{path} is missing columns {missing}")
    return frame


def _write_svg(document: str, path: Path) -> Path:
    try:
        path.write_text(document, encoding="utf-8")
    except OSError as e:
        raise ReportError(f"cannot write {path}: {e}")
    return path


def _kfold_plots(frame: pd.DataFrame, directory: Path) -> List[Path]:
    modes = list(dict.fromkeys(frame["channel_mode"]))
    models = list(dict.fromkeys(frame["model"]))
    per_fold = []
    for mode in modes:
        rows = frame[frame["channel_mode"] == mode]
        folds = sorted(set(rows["fold"]))
        series = {
            model: [
                float(rows[(rows["model"] == model) & (rows["fold"] == f)]["mae_km"].mean()) for f in folds
            ]
            for model in models
        }
        per_fold.append(svg_charts.grouped_bar_chart(
            f"Validation MAE per fold ({mode})", [str(f) for f in folds], series, "MAE (km)", "fold",
        ))
    means = {
        mode: [float(frame[(frame["channel_mode"] == mode) & (frame["model"] == m)]["mae_km"].mean()) for m in models]
        for mode in modes
    }
    mean_chart = svg_charts.grouped_bar_chart("Mean validation MAE", models, means, "MAE (km)", "model")
    return [
        _write_svg(svg_charts.render(per_fold, "k-fold MAE"), directory / "kfold_folds.svg"),
        _write_svg(svg_charts.render([mean_chart], "mean MAE"), directory / "kfold_mean.svg"),
    ]


def _curve_plot(frame: pd.DataFrame, model: str, path: Path) -> Path:
    n = frame["n_train"].astype(float).tolist()
    cumulative = frame["cumulative_time_s"].astype(float).tolist()
    panels = [
        svg_charts.line_chart(
            f"{model}: MAE vs training samples",
            [
                Series("train", n, frame["train_mae_km"].astype(float).tolist()),
                Series("validation", n, frame["valid_mae_km"].astype(float).tolist()),
            ],
            "training samples", "MAE (km)", log_x=True,
        ),
        svg_charts.line_chart(
            f"{model}: fit time vs training samples",
            [Series("fit time", n, frame["fit_time_s"].astype(float).tolist())],
            "training samples", "seconds", log_x=True,
        ),
        svg_charts.line_chart(
            f"{model}: MAE vs cumulative time",
            [Series("validation", cumulative, frame["valid_mae_km"].astype(float).tolist())],
            "cumulative fit time (s)", "MAE (km)",
        ),
    ]
    return _write_svg(svg_charts.render(panels, f"learning curve {model}"), path)


def _classify_plot(frame: pd.DataFrame, path: Path) -> Path:
    chart = svg_charts.bar_chart(
        "Fault / non-fault accuracy per fold",
        [str(f) for f in frame["fold"]],
        frame["accuracy"].astype(float).tolist(),
        "accuracy",
    )
    return _write_svg(svg_charts.render([chart], "classification accuracy"), path)


def _snr_label(value: float) -> str:
    return "clean" if math.isinf(value) else f"{value:g} dB"


def _noise_plot(frame: pd.DataFrame, path: Path) -> Path:
    levels = list(dict.fromkeys(frame["snr_db"].astype(float)))
    series: Dict[str, List[float]] = {}
    for (mode, model), rows in frame.groupby(["channel_mode", "model"], sort=False):
        by_level = dict(zip(rows["snr_db"].astype(float), rows["mean_mae_km"].astype(float)))
        series[f"{model} ({mode})"] = [by_level.get(level, math.nan) for level in levels]
    chart = svg_charts.grouped_bar_chart(
        "Mean MAE vs measurement noise", [_snr_label(v) for v in levels], series, "MAE (km)", "SNR",
    )
    return _write_svg(svg_charts.render([chart], "noise sensitivity"), path)


def emit_plots(directory: Union[str, Path], out_dir: Optional[Union[str, Path]] = None) -> List[Path]:
    """
    Render SVG charts for every report CSV found in `directory`.

    Args:
        directory: Results directory holding the CSVs
        out_dir: Where the SVGs go, defaults to `directory`

    Raises:
        ReportError: If the directory does not exist, a CSV is unreadable or lacks a column
    """
    root = Path(directory)
    if not root.is_dir():
        raise ReportError(f"results directory not found: {root}")
    target = Path(out_dir) if out_dir is not None else root
    try:
        target.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ReportError(f"cannot create {target}: {e}")

    written: List[Path] = []
    kfold = root / "kfold.csv"
    if kfold.exists():
        written.extend(_kfold_plots(read_report(kfold, KFOLD_COLUMNS), target))
    for curve in sorted(root.glob("curve_*.csv")):
        model = curve.stem[len("curve_"):]
        written.append(_curve_plot(read_report(curve, CURVE_COLUMNS), model, target / f"{curve.stem}.svg"))
    noise = root / "noise.csv"
    if noise.exists():
        written.append(_noise_plot(read_report(noise, NOISE_COLUMNS), target / "noise.svg"))
    classify = root / "classify.csv"
    if classify.exists():
        written.append(_classify_plot(read_report(classify, CLASSIFY_COLUMNS), target / "classify.svg"))

    if not written:
        logfire.warning("No report CSVs found to plot", directory=str(root))
    else:
        logfire.info("Plots written", directory=str(target), files=[p.name for p in written])
    return written
