"""Tests for saving and loading fitted models."""

import json

import numpy as np
import pytest
import tests.helpers

from app.models.dataset import Task
from app.models.ensemble import Hyperparams
from app.services import baselines, gbt
from app.services.model_store import FORMAT_VERSION, ModelStoreError, load_model, predict_model, save_model

pytestmark = pytest.mark.unit


def _data():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(40, 3))
    y = 3.0 * X[:, 0] - X[:, 2] + rng.normal(scale=0.1, size=40)
    return X, y


def _fitted_models():
    X, y = _data()
    params = Hyperparams(n_rounds=10, max_depth=3, min_samples_leaf=2)
    return {
        "boosted": (gbt.fit(X, y, Task.REGRESSION, params), gbt.predict),
        "classifier": (gbt.fit(X, (y > 0).astype(float), Task.CLASSIFICATION, params), gbt.predict),
        "ols": (baselines.ols_fit(X, y), baselines.ols_predict),
        "knn": (baselines.knn_fit(X, y, k=4), baselines.knn_predict),
        "dtree": (baselines.dtree_fit(X, y, params), baselines.dtree_predict),
        "mean": (baselines.mean_fit(X, y), baselines.mean_predict),
    }


@pytest.mark.parametrize("name", ["boosted", "classifier", "ols", "knn", "dtree", "mean"])
def test_saved_model_predicts_identically(tmp_path, name):
    """Test that every model kind reloads with bit-identical predictions."""
    model, predict = _fitted_models()[name]
    path = save_model(model, tmp_path / f"{name}.json")
    loaded = load_model(path)
    assert type(loaded) is type(model)

    queries = np.random.default_rng(9).normal(size=(15, 3))
    np.testing.assert_array_equal(predict(loaded, queries), predict(model, queries))


@pytest.mark.parametrize("name", ["boosted", "classifier", "ols", "knn", "dtree", "mean"])
def test_predict_model_matches_kind_predictor(tmp_path, name):
    """Test that a reloaded model predicts through the type-dispatched entry point."""
    model, predict = _fitted_models()[name]
    loaded = load_model(save_model(model, tmp_path / f"{name}.json"))
    queries = np.random.default_rng(11).normal(size=(6, 3))
    np.testing.assert_array_equal(predict_model(loaded, queries), predict(model, queries))


def test_predict_model_unsupported_type():
    with pytest.raises(ModelStoreError, match="dict"):
        predict_model({"weights": [1.0]}, np.zeros((1, 1)))


def test_boosted_model_keeps_metadata(tmp_path):
    model, _ = _fitted_models()["classifier"]
    loaded = load_model(save_model(model, tmp_path / "m.json"))
    assert loaded.task is Task.CLASSIFICATION
    assert loaded.n_trees == model.n_trees
    assert loaded.gamma == model.gamma
    assert loaded.train_loss == model.train_loss


def test_file_carries_kind_and_version(tmp_path):
    model, _ = _fitted_models()["knn"]
    document = json.loads(save_model(model, tmp_path / "knn.json").read_text())
    assert document["kind"] == "knn"
    assert document["format_version"] == FORMAT_VERSION


def test_save_unsupported_type(tmp_path):
    with pytest.raises(ModelStoreError, match="dict"):
        save_model({"weights": [1.0]}, tmp_path / "bad.json")


def test_load_missing_file(tmp_path):
    with pytest.raises(ModelStoreError, match="not found"):
        load_model(tmp_path / "missing.json")


@pytest.mark.parametrize("content", [
    "{not json",
    json.dumps({"kind": "forest", "payload": {}}),
    json.dumps({"kind": "ols", "payload": {"intercept": 1.0}}),
])
def test_load_malformed_file(tmp_path, content):
    path = tmp_path / "bad.json"
    path.write_text(content)
    with pytest.raises(ModelStoreError):
        load_model(path)


def test_load_unknown_version(tmp_path):
    path = tmp_path / "future.json"
    path.write_text(json.dumps({
        "kind": "mean", "format_version": FORMAT_VERSION + 1, "payload": {"value": 1.0, "n_features": 2},
    }))
    with pytest.raises(ModelStoreError, match="version"):
        load_model(path)


def test_load_split_without_children(tmp_path):
    path = tmp_path / "tree.json"
    path.write_text(json.dumps({
        "kind": "dtree",
        "payload": {"root": {"value": 0.0, "feature_index": 0, "threshold": 1.0}, "n_features": 1},
    }))
    with pytest.raises(ModelStoreError, match="child"):
        load_model(path)
