"""Common fixtures for tests."""

import pytest
from unittest.mock import patch

# Import test helpers to set up environment
import tests.helpers

from app.config.experiment import ExperimentConfig, ModelSpec
from app.models.network import LineParams, NetworkConfig


def small_network() -> NetworkConfig:
    """Short three-branch network with the minimum section count, fast to simulate."""
    return NetworkConfig(branches=[
        LineParams(length_km=100.0, n_sections=10),
        LineParams(length_km=80.0, n_sections=10),
        LineParams(length_km=60.0, n_sections=10),
    ])


def small_roster():
    return [
        ModelSpec(name="xgb", kind="boosted", params={
            "n_rounds": 20, "max_depth": 3, "min_samples_leaf": 2, "gamma": 0.3, "lambda_leaf": 1.0,
        }),
        ModelSpec(name="mean", kind="mean"),
        ModelSpec(name="ols", kind="ols"),
        ModelSpec(name="knn", kind="knn", params={"k": 3}),
        ModelSpec(name="dtree", kind="dtree", params={"max_depth": 4, "min_samples_leaf": 2}),
    ]


def small_config(**overrides) -> ExperimentConfig:
    values = dict(
        network=small_network(),
        n_fault=35,
        n_nonfault=14,
        seed=7,
        duration=0.06,
        n_window=10,
        roster=small_roster(),
        timing_repeats=1,
        curve_min_samples=5,
        curve_points=4,
        classifier_params={"n_rounds": 20, "max_depth": 3, "min_samples_leaf": 1, "gamma": 0.3},
        output_dir="unused",
    )
    values.update(overrides)
    return ExperimentConfig(**values)


@pytest.fixture(scope="session")
def experiment_config() -> ExperimentConfig:
    return small_config()


@pytest.fixture(scope="session")
def experiment_records(experiment_config):
    """Simulated records of the small experiment, shared across test modules."""
    from app.services.harness import prepare_records
    return prepare_records(experiment_config)


@pytest.fixture(autouse=True)
def mock_logfire():
    """Mock logfire to avoid making real external calls during tests."""
    with patch('logfire.configure'), \
         patch('logfire.info'), \
         patch('logfire.debug'), \
         patch('logfire.warning'), \
         patch('logfire.error'):
        yield
