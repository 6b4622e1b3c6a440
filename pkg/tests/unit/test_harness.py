"""Tests for the evaluation harness."""

import math

import numpy as np
import pytest
import logfire
import tests.helpers

from app.config.experiment import ConfigError, ModelSpec
from app.models.dataset import ChannelMode, FeatureMatrix, Task
from app.models.ensemble import Hyperparams
from app.services import harness
from app.services.dataset import assign_folds
from app.services.harness import HarnessError
from app.utils.observability import get_metrics, reset_metrics
from tests.conftest import small_config, small_roster

pytestmark = pytest.mark.unit

MEAN = ModelSpec(name="mean", kind="mean")


def _matrix(n=28, k=7, seed=0, n_features=4):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, n_features))
    y = 100.0 + 50.0 * X[:, 0] + rng.normal(scale=5.0, size=n)
    return FeatureMatrix(X=X, y=y, folds=assign_folds(n, k, seed), channel_mode=ChannelMode.VOLTAGE)


# ----- metric -----

def test_mae_examples():
    assert harness.mae([1.0, 2.0], [1.0, 4.0]) == 1.0
    assert harness.mae([5.0], [5.0]) == 0.0
    assert harness.mae([-3.0, 3.0], [0.0, 0.0]) == 3.0


@pytest.mark.parametrize("yhat, y", [([], []), ([1.0], [1.0, 2.0])])
def test_mae_rejects_bad_input(yhat, y):
    with pytest.raises(HarnessError):
        harness.mae(yhat, y)


def test_config_fingerprint():
    assert harness.config_fingerprint(small_config()) == harness.config_fingerprint(small_config())
    assert harness.config_fingerprint(small_config()) != harness.config_fingerprint(small_config(seed=8))


# ----- cross-validation -----

def test_mean_model_matches_hand_computed_fold_errors():
    """Test the constant-mean model against a direct computation per fold."""
    matrix = _matrix()
    results, _ = harness.cross_validate(matrix, [MEAN], seed=1, timing_repeats=1)
    assert [r.fold for r in results] == list(range(7))
    for result in results:
        valid = matrix.folds == result.fold
        expected = np.mean(np.abs(matrix.y[valid] - matrix.y[~valid].mean()))
        assert result.mae_km == pytest.approx(expected, rel=1e-12)
        assert result.error is None


def test_fold_accounting():
    matrix = _matrix(n=31)
    results, oof = harness.cross_validate(matrix, small_roster(), seed=2, timing_repeats=1)
    assert len(results) == 7 * len(small_roster())
    for result in results:
        assert result.n_train + result.n_valid == 31
    xgb = [r for r in results if r.model == "xgb"]
    assert sum(r.n_valid for r in xgb) == 31
    for predictions in oof.predictions.values():
        assert np.all(np.isfinite(predictions))
    assert oof.scenario_ids == matrix.scenario_ids.tolist()
    assert oof.folds == matrix.folds.tolist()


def test_leave_one_out():
    """Test seven rows in seven folds, one validation row each."""
    y = np.array([10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0])
    matrix = FeatureMatrix(X=np.arange(14.0).reshape(7, 2), y=y, folds=np.arange(7), channel_mode="vi")
    results, oof = harness.cross_validate(matrix, [MEAN], seed=0, timing_repeats=1)
    for result in results:
        assert result.n_valid == 1
        others = np.delete(y, result.fold)
        assert result.mae_km == pytest.approx(abs(y[result.fold] - others.mean()))
    np.testing.assert_allclose(oof.predictions["mean"], [(y.sum() - v) / 6 for v in y])


def test_identical_roster_entries_score_identically():
    params = {"n_rounds": 15, "max_depth": 3, "min_samples_leaf": 2}
    roster = [
        ModelSpec(name="first", kind="boosted", params=params),
        ModelSpec(name="second", kind="boosted", params=params),
    ]
    results, oof = harness.cross_validate(_matrix(), roster, seed=3, timing_repeats=1)
    first = [r.mae_km for r in results if r.model == "first"]
    second = [r.mae_km for r in results if r.model == "second"]
    assert first == second
    assert oof.predictions["first"] == oof.predictions["second"]


def test_failing_model_is_recorded_and_others_continue():
    roster = [MEAN, ModelSpec(name="knn", kind="knn", params={"k": 10})]
    matrix = _matrix(n=7)
    results, oof = harness.cross_validate(matrix, roster, seed=0, timing_repeats=1)
    failed = [r for r in results if r.model == "knn"]
    assert all(math.isnan(r.mae_km) for r in failed)
    assert all("BaselineError" in r.error for r in failed)
    assert all(r.fit_time_s == 0.0 for r in failed)
    assert all(math.isfinite(r.mae_km) for r in results if r.model == "mean")
    assert all(math.isnan(v) for v in oof.predictions["knn"])


def test_cross_validate_rejects_empty_roster():
    with pytest.raises(HarnessError, match="roster"):
        harness.cross_validate(_matrix(), [], seed=0)


def test_cross_validate_rejects_single_fold():
    matrix = FeatureMatrix(X=np.zeros((5, 1)), y=np.arange(5.0), folds=np.zeros(5), channel_mode="v")
    with pytest.raises(HarnessError):
        harness.cross_validate(matrix, [MEAN], seed=0)


def test_parallel_folds_match_serial():
    matrix = _matrix()
    serial, _ = harness.cross_validate(matrix, small_roster(), seed=4, timing_repeats=1, jobs=1)
    parallel, _ = harness.cross_validate(matrix, small_roster(), seed=4, timing_repeats=1, jobs=2)
    assert [(r.model, r.fold, r.mae_km) for r in serial] == [(r.model, r.fold, r.mae_km) for r in parallel]


def test_parallel_fold_fits_are_counted_in_this_process():
    """Test that fit metrics of folds run in worker processes still land in the local store."""
    reset_metrics()
    harness.cross_validate(_matrix(), [MEAN], seed=0, timing_repeats=1, jobs=2)
    metrics = get_metrics()
    assert metrics["counters"]["training.mean.count"] == 7
    assert metrics["histograms"]["training.mean.duration"]["count"] == 7
    reset_metrics()


# ----- learning curve -----

def test_default_sample_grid():
    grid = harness.default_sample_grid(400, n_min=50, points=8)
    assert grid[0] == 50
    assert grid[-1] == 400
    assert grid == sorted(set(grid))
    assert harness.default_sample_grid(30, n_min=50, points=8) == [30]


def test_full_curve_point_matches_fold_zero():
    """Test that training on the whole fold-0 split reproduces the k-fold fold-0 error."""
    matrix = _matrix(n=35)
    spec = small_roster()[0]
    results, _ = harness.cross_validate(matrix, [spec], seed=5, timing_repeats=1)
    n_max = int(np.sum(matrix.folds != 0))
    curve = harness.curve_from_matrix(matrix, spec, [n_max], seed=5, timing_repeats=1)
    assert curve.sizes == [n_max]
    assert curve.points[0].valid_mae_km == results[0].mae_km


def test_curve_points_are_ordered_and_cumulative():
    matrix = _matrix(n=35)
    curve = harness.curve_from_matrix(matrix, MEAN, [20, 5, 10, 10], seed=0, timing_repeats=1)
    assert curve.sizes == [5, 10, 20]
    times = [p.cumulative_time_s for p in curve.points]
    assert times == sorted(times)
    assert times[-1] == pytest.approx(sum(p.fit_time_s for p in curve.points))
    assert curve.model == "mean"
    assert curve.channel_mode == "v"


@pytest.mark.parametrize("grid", [[], [1], [31]])
def test_curve_rejects_bad_grid(grid):
    matrix = _matrix(n=35)
    with pytest.raises(HarnessError):
        harness.curve_from_matrix(matrix, MEAN, grid, seed=0)


# ----- classification -----

def test_indistinguishable_twins_give_half_accuracy():
    """Test that each fault row with an identical non-fault twin scores exactly 50%."""
    rng = np.random.default_rng(6)
    base = rng.normal(size=(14, 3))
    pair_folds = assign_folds(14, 7, seed=6)
    matrix = FeatureMatrix(
        X=np.vstack([base, base]),
        y=np.concatenate([np.ones(14), np.zeros(14)]),
        folds=np.concatenate([pair_folds, pair_folds]),
        channel_mode="vi",
        task=Task.CLASSIFICATION,
    )
    report = harness.classify_matrix(matrix, Hyperparams(n_rounds=10, max_depth=2, min_samples_leaf=1))
    assert report.accuracy == 0.5
    assert all(fold.accuracy == 0.5 for fold in report.folds)
    logfire.info("Twin classification test successful", accuracy=report.accuracy)


def test_separable_classes_are_recovered():
    rng = np.random.default_rng(7)
    labels = np.array([1.0] * 20 + [0.0] * 15)
    X = np.column_stack([labels * 10.0 + rng.normal(scale=0.1, size=35), rng.normal(size=35)])
    matrix = FeatureMatrix(X=X, y=labels, folds=assign_folds(35, 7, 7), channel_mode="v", task="classification")
    report = harness.classify_matrix(matrix, Hyperparams(n_rounds=10, max_depth=2, min_samples_leaf=1, gamma=0.5))
    assert report.accuracy == 1.0
    assert report.confusion == {"tp": 20, "fp": 0, "tn": 15, "fn": 0}


def test_single_class_is_rejected():
    matrix = FeatureMatrix(X=np.zeros((7, 1)), y=np.ones(7), folds=np.arange(7), channel_mode="v", task="classification")
    with pytest.raises(HarnessError, match="both classes"):
        harness.classify_matrix(matrix)


# ----- end-to-end on simulated records -----

def test_run_kfold_report(experiment_config, experiment_records):
    report = harness.run_kfold(experiment_config, experiment_records)
    assert report.channel_modes == ["v", "i"]
    assert report.models == [spec.name for spec in experiment_config.roster]
    assert len(report.results) == 2 * 5 * 7
    assert all(r.error is None and math.isfinite(r.mae_km) for r in report.results)
    assert report.fingerprint == harness.config_fingerprint(experiment_config)
    assert report.predictions_for("v").targets == report.predictions_for("i").targets


def test_run_kfold_is_deterministic(experiment_config, experiment_records):
    first = harness.run_kfold(experiment_config, experiment_records)
    second = harness.run_kfold(experiment_config, experiment_records)
    assert [r.mae_km for r in first.results] == [r.mae_km for r in second.results]


def test_run_kfold_needs_enough_faults(experiment_config, experiment_records):
    faults = [r for r in experiment_records if r.scenario.is_fault][:6]
    with pytest.raises(HarnessError, match="fault records"):
        harness.run_kfold(experiment_config, faults)


def test_learning_curve_on_records(experiment_config, experiment_records):
    curve = harness.learning_curve(experiment_config, sample_grid=[5, 10, 20], records=experiment_records)
    assert curve.model == "xgb"
    assert curve.sizes == [5, 10, 20]
    assert all(math.isfinite(p.valid_mae_km) for p in curve.points)


def test_learning_curve_unknown_model(experiment_config, experiment_records):
    with pytest.raises(ConfigError):
        harness.learning_curve(experiment_config, model="svm", records=experiment_records)


def test_classify_events(experiment_config, experiment_records):
    report = harness.classify_events(experiment_config, experiment_records)
    assert report.channel_mode == "vi"
    assert len(report.folds) == 7
    assert sum(fold.n_valid for fold in report.folds) == len(experiment_records)
    assert 0.0 <= report.accuracy <= 1.0


def test_classify_events_needs_both_classes(experiment_config, experiment_records):
    faults = [r for r in experiment_records if r.scenario.is_fault]
    with pytest.raises(HarnessError, match="non-fault"):
        harness.classify_events(experiment_config, faults)


def test_clean_noise_level_matches_kfold(experiment_records):
    """Test that the no-noise row reproduces the plain k-fold mean MAE."""
    config = small_config(noise_levels=[None, 20.0], noise_models=["xgb", "mean"])
    table = harness.noise_sweep(config, experiment_records)
    assert len(table.rows) == 2 * 2 * 2
    report = harness.run_kfold(config, experiment_records)
    for mode in config.channel_modes:
        for model in ("xgb", "mean"):
            row = next(r for r in table.rows if r.snr_db == math.inf and r.channel_mode == mode and r.model == model)
            assert row.mean_mae_km == report.mean_mae(model, mode)
            assert row.std_mae_km >= 0.0
    assert {r.snr_db for r in table.rows} == {math.inf, 20.0}


def test_noise_sweep_rejects_empty_grid(experiment_records):
    with pytest.raises(HarnessError, match="empty"):
        harness.noise_sweep(small_config(noise_levels=[]), experiment_records)


def test_sensitivity_bins_cover_every_row(experiment_config, experiment_records):
    report = harness.run_kfold(experiment_config, experiment_records)
    table = harness.sensitivity_table(report, experiment_records)
    n_faults = sum(1 for r in experiment_records if r.scenario.is_fault)
    for mode in ("v", "i"):
        for model in ("xgb", "mean"):
            for factor in ("fault_resistance", "limiting_inductance", "distance_km"):
                rows = [r for r in table.rows if r.channel_mode == mode and r.model == model and r.factor == factor]
                assert sum(r.n for r in rows) == n_faults
                assert all(r.n > 0 and r.bin_low < r.bin_high for r in rows)
    distance_edges = {(r.bin_low, r.bin_high) for r in table.rows if r.factor == "distance_km"}
    assert all(high - low == harness.DISTANCE_BIN_KM for low, high in distance_edges)


def test_sensitivity_missing_scenario(experiment_config, experiment_records):
    report = harness.run_kfold(experiment_config, experiment_records)
    with pytest.raises(HarnessError, match="missing"):
        harness.sensitivity_table(report, experiment_records[:3])


def test_impedance_table(experiment_config, experiment_records):
    network = experiment_config.network
    table = harness.impedance_table(experiment_records, network, rf_assumed=0.0)
    faults = [r for r in experiment_records if r.scenario.is_fault]
    assert [row.scenario_id for row in table.rows] == [r.scenario.scenario_id for r in faults]
    assert table.path_length_km == 180.0
    for row in table.rows:
        assert row.error_oracle_km == pytest.approx(row.estimate_oracle_km - row.distance_km)
        assert row.error_blind_km == pytest.approx(row.estimate_blind_km - row.distance_km)
    assert math.isfinite(table.mean_abs_error("oracle"))


def test_locate_scenario(experiment_config, experiment_records):
    network = experiment_config.network
    record, estimate = harness.locate_scenario(experiment_records, network, 3, rf_assumed=2.0, oracle=True)
    assert record.scenario.scenario_id == 3
    assert estimate == harness.impedance_estimate(record, network, 2.0, True)
    with pytest.raises(HarnessError, match="not found"):
        harness.locate_scenario(experiment_records, network, 999)


# ----- final model -----

def test_trained_mean_model_predicts_fault_mean(experiment_config, experiment_records):
    """Test the deploy path: fit on every fault record, then locate the same records."""
    trained = harness.train_model(experiment_config, experiment_records, model="mean", channel_mode="i")
    assert trained.name == "mean"
    assert trained.channel_mode == "i"
    assert trained.scaler.n_features == experiment_config.n_window

    faults = [r for r in experiment_records if r.scenario.is_fault]
    table = harness.predict_records(
        trained.model, trained.scaler, experiment_records, trained.n_window, "i", name="mean_i",
    )
    assert [row.scenario_id for row in table.rows] == [r.scenario.scenario_id for r in faults]
    expected = np.mean([r.scenario.distance_km for r in faults])
    for row in table.rows:
        assert row.estimate_km == pytest.approx(expected)
        assert row.error_km == pytest.approx(row.estimate_km - row.distance_km)
    assert math.isfinite(table.mae_km)


def test_predict_records_needs_faults(experiment_config, experiment_records):
    trained = harness.train_model(experiment_config, experiment_records, model="mean")
    load_steps = [r for r in experiment_records if not r.scenario.is_fault]
    with pytest.raises(HarnessError, match="no fault records"):
        harness.predict_records(trained.model, trained.scaler, load_steps, trained.n_window, trained.channel_mode)
