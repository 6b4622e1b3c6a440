"""Tests for windowing, standardization, folds and dataset files."""

import json

import numpy as np
import pytest
import tests.helpers

from app.models.dataset import ChannelMode, FeatureMatrix, Task
from app.models.network import EventKind, FaultScenario, WaveformRecord
from app.services import dataset
from app.services.dataset import DatasetError

pytestmark = pytest.mark.unit


def _fault_record(scenario_id=0, distance=120.0, n=40, inception=0.02):
    scenario = FaultScenario(
        scenario_id=scenario_id, kind=EventKind.POLE_TO_POLE, branch_index=0,
        distance_km=distance, fault_resistance=1.0, inception_time=inception,
    )
    t = np.arange(n, dtype=float)
    return WaveformRecord(dt_output=1e-3, voltage=100.0 + t, current=-t, scenario=scenario)


def _load_step_record(scenario_id=1, n=40):
    scenario = FaultScenario(
        scenario_id=scenario_id, kind=EventKind.LOAD_STEP, branch_index=1, load_step_fraction=0.2,
    )
    return WaveformRecord(dt_output=1e-3, voltage=np.ones(n), current=np.zeros(n), scenario=scenario)


# ----- windowing -----

def test_window_voltage_only():
    """Test that the window starts at the inception sample."""
    vector = dataset.window_features(_fault_record(), n_window=4, channel_mode="v")
    np.testing.assert_array_equal(vector.values, [120.0, 121.0, 122.0, 123.0])
    assert vector.label == 120.0


def test_window_both_channels_concatenates_voltage_first():
    vector = dataset.window_features(_fault_record(), n_window=2, channel_mode=ChannelMode.BOTH)
    np.testing.assert_array_equal(vector.values, [120.0, 121.0, -20.0, -21.0])
    assert len(vector) == 4


def test_window_current_only():
    vector = dataset.window_features(_fault_record(), n_window=3, channel_mode="i")
    np.testing.assert_array_equal(vector.values, [-20.0, -21.0, -22.0])


def test_window_exceeding_record_is_rejected():
    with pytest.raises(DatasetError):
        dataset.window_features(_fault_record(n=25), n_window=10)


def test_window_of_load_step_is_labeled_non_fault():
    assert dataset.window_features(_load_step_record(), n_window=5).label == "non-fault"


# ----- standardization -----

def test_fit_scaler_examples():
    """Test constant, three-value and symmetric-pair columns."""
    scaler = dataset.fit_scaler(np.array([[2.0, 1.0], [2.0, 2.0], [2.0, 3.0]]))
    np.testing.assert_allclose(scaler.u, [2.0, 2.0])
    np.testing.assert_allclose(scaler.s, [1.0, np.sqrt(2.0 / 3.0)])

    pair = dataset.fit_scaler(np.array([[-1.0], [1.0]]))
    assert pair.u[0] == 0.0
    assert pair.s[0] == 1.0


def test_fit_scaler_needs_two_rows():
    with pytest.raises(DatasetError):
        dataset.fit_scaler(np.array([[1.0, 2.0]]))
    with pytest.raises(DatasetError):
        dataset.fit_scaler(np.empty((0, 2)))


def test_transform_examples():
    scaler = dataset.fit_scaler(np.array([[0.0, 10.0], [2.0, 30.0]]))
    np.testing.assert_allclose(dataset.transform(scaler, [scaler.u]), [[0.0, 0.0]])
    np.testing.assert_allclose(dataset.transform(scaler, [scaler.u + scaler.s]), [[1.0, 1.0]])


def test_transform_rejects_dimension_mismatch():
    scaler = dataset.fit_scaler(np.zeros((3, 2)) + np.arange(3)[:, None])
    with pytest.raises(DatasetError):
        dataset.transform(scaler, np.zeros((1, 3)))


def test_standardized_training_rows_have_zero_mean_unit_std():
    """Test standardization statistics and scaler idempotence."""
    rng = np.random.default_rng(0)
    X = rng.normal(loc=500.0, scale=40.0, size=(120, 6))
    X[:, 3] = 7.0
    Z = dataset.transform(dataset.fit_scaler(X), X)
    assert np.all(np.abs(Z.mean(axis=0)) < 1e-9)
    np.testing.assert_allclose(np.delete(Z.std(axis=0), 3), 1.0, atol=1e-9)

    again = dataset.fit_scaler(Z)
    assert np.all(np.abs(again.u) < 1e-9)
    np.testing.assert_allclose(np.delete(again.s, 3), 1.0, atol=1e-9)


def test_scaler_file_round_trip(tmp_path):
    scaler = dataset.fit_scaler(np.array([[1.0, 5.0], [3.0, 9.0], [4.0, 2.0]]))
    path = tmp_path / "scaler.json"
    dataset.save_scaler(scaler, path)
    loaded = dataset.load_scaler(path)
    np.testing.assert_array_equal(loaded.u, scaler.u)
    np.testing.assert_array_equal(loaded.s, scaler.s)
    assert set(json.loads(path.read_text())) == {"u", "s"}


# ----- folds -----

def test_assign_folds_even_split():
    folds = dataset.assign_folds(14, 7, seed=3)
    assert np.bincount(folds).tolist() == [2] * 7


def test_assign_folds_remainder():
    counts = sorted(np.bincount(dataset.assign_folds(15, 7, seed=3)).tolist())
    assert counts == [2, 2, 2, 2, 2, 2, 3]


def test_assign_folds_is_deterministic():
    assert np.array_equal(dataset.assign_folds(50, 7, seed=11), dataset.assign_folds(50, 7, seed=11))
    assert not np.array_equal(dataset.assign_folds(50, 7, seed=11), dataset.assign_folds(50, 7, seed=12))


def test_assign_folds_rejects_too_few_rows():
    with pytest.raises(DatasetError):
        dataset.assign_folds(6, 7, seed=0)


def test_training_order_excludes_validation_fold():
    folds = dataset.assign_folds(30, 7, seed=1)
    order = dataset.training_order(folds, 2, seed=1)
    assert sorted(order.tolist()) == np.flatnonzero(folds != 2).tolist()
    assert np.array_equal(order, dataset.training_order(folds, 2, seed=1))


# ----- feature matrices -----

def test_build_feature_matrix_regression_skips_load_steps():
    records = [_fault_record(i, distance=10.0 * (i + 1)) for i in range(7)] + [_load_step_record(7)]
    matrix = dataset.build_feature_matrix(records, n_window=5, channel_mode="vi", k=7, seed=0)
    assert len(matrix) == 7
    assert matrix.n_features == 10
    assert matrix.task is Task.REGRESSION
    np.testing.assert_array_equal(matrix.y, [10.0 * (i + 1) for i in range(7)])
    assert matrix.scenario_ids.tolist() == list(range(7))
    assert sorted(matrix.fold_sizes()) == [1] * 7


def test_build_feature_matrix_classification_labels():
    records = [_fault_record(i) for i in range(5)] + [_load_step_record(5 + i) for i in range(3)]
    matrix = dataset.build_feature_matrix(records, 5, "v", Task.CLASSIFICATION, k=4, seed=0)
    assert matrix.y.tolist() == [1.0] * 5 + [0.0] * 3
    assert matrix.n_folds == 4


def test_build_feature_matrix_without_faults_is_rejected():
    with pytest.raises(DatasetError):
        dataset.build_feature_matrix([_load_step_record()], 5, "v")


# ----- dataset files -----

def _matrix():
    rng = np.random.default_rng(2)
    return FeatureMatrix(
        X=rng.normal(size=(9, 3)) * 1e3,
        y=rng.uniform(0, 700, 9),
        folds=dataset.assign_folds(9, 3, seed=0),
        channel_mode=ChannelMode.CURRENT,
        scenario_ids=np.arange(10, 19),
    )


def test_dataset_round_trip(tmp_path):
    """Test save then load reproduces every field exactly."""
    matrix = _matrix()
    path = dataset.save_dataset(matrix, tmp_path / "data.csv")
    loaded = dataset.load_dataset(path)
    np.testing.assert_array_equal(loaded.X, matrix.X)
    np.testing.assert_array_equal(loaded.y, matrix.y)
    np.testing.assert_array_equal(loaded.folds, matrix.folds)
    np.testing.assert_array_equal(loaded.scenario_ids, matrix.scenario_ids)
    assert loaded.channel_mode is ChannelMode.CURRENT
    assert loaded.task is Task.REGRESSION
    assert path.read_text().splitlines()[0] == "f0,f1,f2,label,fold"


def test_load_dataset_without_sidecar_uses_defaults(tmp_path):
    path = tmp_path / "plain.csv"
    path.write_text("f0,f1,label,fold\n1.5,2,300,0\n-1,4,20.25,1\n")
    loaded = dataset.load_dataset(path)
    np.testing.assert_array_equal(loaded.X, [[1.5, 2.0], [-1.0, 4.0]])
    assert loaded.folds.tolist() == [0, 1]
    assert loaded.channel_mode is ChannelMode.BOTH


def test_load_dataset_empty_file(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    with pytest.raises(DatasetError, match="empty"):
        dataset.load_dataset(path)


def test_load_dataset_header_only(tmp_path):
    path = tmp_path / "header.csv"
    path.write_text("f0,label,fold\n")
    with pytest.raises(DatasetError, match="no data rows"):
        dataset.load_dataset(path)


def test_load_dataset_short_row_names_line(tmp_path):
    path = tmp_path / "short.csv"
    path.write_text("f0,f1,label,fold\n1,2,3,0\n4,5,6\n")
    with pytest.raises(DatasetError, match="line 3"):
        dataset.load_dataset(path)


def test_load_dataset_non_numeric_cell_names_line(tmp_path):
    path = tmp_path / "text.csv"
    path.write_text("f0,label,fold\n1,abc,0\n")
    with pytest.raises(DatasetError, match="line 2"):
        dataset.load_dataset(path)


def test_load_dataset_bad_header(tmp_path):
    path = tmp_path / "header.csv"
    path.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(DatasetError, match="line 1"):
        dataset.load_dataset(path)


def test_load_dataset_negative_fold(tmp_path):
    path = tmp_path / "fold.csv"
    path.write_text("f0,label,fold\n1,2,-1\n")
    with pytest.raises(DatasetError, match="fold"):
        dataset.load_dataset(path)


def test_load_dataset_missing_file(tmp_path):
    with pytest.raises(DatasetError):
        dataset.load_dataset(tmp_path / "missing.csv")
