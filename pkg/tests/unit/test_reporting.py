"""Tests for CSV report emission and SVG plot generation."""

import math
import xml.etree.ElementTree as ET

import pytest
import tests.helpers

from app.models.reports import (
    ClassificationFold,
    ClassificationReport,
    CurvePoint,
    EvalReport,
    FoldResult,
    LearningCurve,
    NoiseRow,
    NoiseTable,
)
from app.services import reporting
from app.services.reporting import KFOLD_COLUMNS, ReportError

pytestmark = pytest.mark.unit

SVG_TAG = "{http://www.w3.org/2000/svg}svg"


def _result(mode, model, fold, mae, fit_time=0.01, error=None):
    return FoldResult(
        channel_mode=mode, model=model, fold=fold, n_train=12, n_valid=2,
        mae_km=mae, fit_time_s=fit_time, error=error,
    )


def _report(fit_time=0.01):
    results = []
    for fold in range(3):
        for mode in ("v", "i"):
            results.append(_result(mode, "xgb", fold, 0.1 + 0.2 * (fold + 1), fit_time))
            results.append(_result(mode, "mean", fold, 100.0 / 3.0, fit_time))
    results.append(_result("v", "knn", 0, math.nan, 0.0, "BaselineError: k exceeds rows"))
    return EvalReport(fingerprint="abc", results=results)


def _curve(model="xgb"):
    return LearningCurve(model=model, channel_mode="v", points=[
        CurvePoint(n_train=5, train_mae_km=1.5, valid_mae_km=40.0, fit_time_s=0.001, cumulative_time_s=0.001),
        CurvePoint(n_train=20, train_mae_km=0.5, valid_mae_km=25.0, fit_time_s=0.004, cumulative_time_s=0.005),
    ])


def _noise():
    return NoiseTable(rows=[
        NoiseRow(snr_db=math.inf, channel_mode="v", model="xgb", mean_mae_km=10.0, std_mae_km=1.0),
        NoiseRow(snr_db=20.0, channel_mode="v", model="xgb", mean_mae_km=30.0, std_mae_km=4.0),
    ])


def _classification():
    return ClassificationReport(channel_mode="vi", folds=[
        ClassificationFold(fold=0, n_valid=4, accuracy=0.75, tp=2, fp=1, tn=1, fn=0),
        ClassificationFold(fold=1, n_valid=4, accuracy=1.0, tp=3, fp=0, tn=1, fn=0),
    ])


# ----- CSV -----

def test_kfold_csv_header_order_and_precision(tmp_path):
    """Test the fixed header, the mode/model/fold ordering and full float precision."""
    paths = reporting.emit_report(_report(), tmp_path)
    assert [p.name for p in paths] == ["kfold.csv", "kfold_timing.csv"]

    lines = (tmp_path / "kfold.csv").read_text().splitlines()
    assert lines[0] == ",".join(KFOLD_COLUMNS)

    frame = reporting.read_csv(tmp_path / "kfold.csv")
    assert list(frame["channel_mode"]) == ["v"] * 7 + ["i"] * 6
    assert list(frame["model"][:7]) == ["xgb"] * 3 + ["mean"] * 3 + ["knn"]
    assert list(frame["fold"][:3]) == [0, 1, 2]
    assert frame["mae_km"][0] == 0.1 + 0.2
    assert frame["mae_km"][3] == 100.0 / 3.0
    assert math.isnan(frame["mae_km"][6])
    assert frame["error"][6] == "BaselineError: k exceeds rows"
    assert frame["error"][0] == ""


def test_kfold_csv_is_independent_of_fit_times(tmp_path):
    reporting.emit_report(_report(fit_time=0.01), tmp_path / "a")
    reporting.emit_report(_report(fit_time=9.99), tmp_path / "b")
    assert (tmp_path / "a" / "kfold.csv").read_bytes() == (tmp_path / "b" / "kfold.csv").read_bytes()
    assert (tmp_path / "a" / "kfold_timing.csv").read_bytes() != (tmp_path / "b" / "kfold_timing.csv").read_bytes()


def test_empty_report_writes_header_only(tmp_path):
    reporting.emit_report(EvalReport(fingerprint="empty"), tmp_path)
    assert (tmp_path / "kfold.csv").read_text() == ",".join(KFOLD_COLUMNS) + "\n"


def test_curve_csv(tmp_path):
    paths = reporting.emit_report(_curve("gb/slow"), tmp_path)
    assert paths[0].name == "curve_gb_slow.csv"
    frame = reporting.read_csv(paths[0])
    assert list(frame.columns) == reporting.CURVE_COLUMNS
    assert frame["n_train"].tolist() == [5, 20]


def test_noise_csv_keeps_infinite_snr(tmp_path):
    reporting.emit_report(_noise(), tmp_path)
    frame = reporting.read_csv(tmp_path / "noise.csv")
    assert (tmp_path / "noise.csv").read_text().splitlines()[1].startswith("inf,")
    assert math.isinf(frame["snr_db"][0])
    assert frame["snr_db"][1] == 20.0


def test_classification_csv(tmp_path):
    reporting.emit_report(_classification(), tmp_path)
    frame = reporting.read_csv(tmp_path / "classify.csv")
    assert list(frame.columns) == reporting.CLASSIFY_COLUMNS
    assert frame["accuracy"].tolist() == [0.75, 1.0]


def test_unsupported_report_type(tmp_path):
    with pytest.raises(ReportError, match="dict"):
        reporting.emit_report({"rows": []}, tmp_path)


def test_read_missing_csv(tmp_path):
    with pytest.raises(ReportError, match="not found"):
        reporting.read_csv(tmp_path / "missing.csv")


# ----- plots -----

def test_plots_parse_as_svg(tmp_path):
    """Test that every chart rendered from the CSVs is well-formed SVG."""
    report = _report()
    report.results.append(_result("v", "a<b&c", 0, 5.0))
    for item in (report, _curve(), _noise(), _classification()):
        reporting.emit_report(item, tmp_path)

    written = reporting.emit_plots(tmp_path)
    assert sorted(p.name for p in written) == [
        "classify.svg", "curve_xgb.svg", "kfold_folds.svg", "kfold_mean.svg", "noise.svg",
    ]
    for path in written:
        root = ET.parse(path).getroot()
        assert root.tag == SVG_TAG


def test_curve_plot_has_three_panels(tmp_path):
    reporting.emit_report(_curve(), tmp_path)
    reporting.emit_plots(tmp_path)
    root = ET.parse(tmp_path / "curve_xgb.svg").getroot()
    panels = root.findall("{http://www.w3.org/2000/svg}g")
    assert len(panels) == 3


def test_plots_of_empty_directory(tmp_path):
    assert reporting.emit_plots(tmp_path) == []


def test_plots_of_missing_directory(tmp_path):
    with pytest.raises(ReportError):
        reporting.emit_plots(tmp_path / "nowhere")


def test_plots_reject_csv_without_required_columns(tmp_path):
    (tmp_path / "kfold.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ReportError, match="channel_mode"):
        reporting.emit_plots(tmp_path)


def test_plots_written_to_separate_directory(tmp_path):
    results = tmp_path / "results"
    charts = tmp_path / "charts"
    reporting.emit_report(_noise(), results)

    written = reporting.emit_plots(results, charts)
    assert [p.parent for p in written] == [charts]
    assert (charts / "noise.svg").exists()
    assert not (results / "noise.svg").exists()
