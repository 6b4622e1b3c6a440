"""
Experiment Configuration

JSON-backed description of one full experiment: the network, the scenario
counts and ranges, the feature window, the model roster and the noise grid.
Every field is addressable by name in the JSON file.
"""

import json
import math
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from app.config.settings import settings
from app.core.errors import FaultLocatorError
from app.models.network import NetworkConfig, ScenarioRanges

ModelKind = Literal["mean", "boosted", "ols", "knn", "dtree"]


class ConfigError(FaultLocatorError):
    """Raised when an experiment configuration file cannot be used."""
    pass


class ModelSpec(BaseModel):
    """One entry of the model roster."""
    name: str = Field(..., min_length=1)
    kind: ModelKind
    params: Dict[str, Any] = Field(default_factory=dict)


def default_roster() -> List[ModelSpec]:
    return [
        ModelSpec(name="xgb", kind="boosted", params={
            "n_rounds": 200, "max_depth": 4, "min_samples_leaf": 5, "gamma": 0.1, "lambda_leaf": 1.0,
        }),
        ModelSpec(name="gb", kind="boosted", params={
            "n_rounds": 200, "max_depth": 3, "min_samples_leaf": 1, "gamma": 0.1, "lambda_leaf": 0.0,
        }),
        ModelSpec(name="ols", kind="ols"),
        ModelSpec(name="knn", kind="knn", params={"k": 5}),
        ModelSpec(name="dtree", kind="dtree", params={"max_depth": 8, "min_samples_leaf": 5}),
    ]


class ExperimentConfig(BaseModel):
    """Full experiment protocol; all randomness flows from `seed`."""
    network: NetworkConfig = Field(default_factory=NetworkConfig)
    ranges: ScenarioRanges = Field(default_factory=ScenarioRanges)
    n_fault: int = Field(1400, ge=1)
    n_nonfault: int = Field(200, ge=0)
    seed: int = Field(default_factory=lambda: settings.RUNTIME.SEED)

    duration: float = Field(default_factory=lambda: settings.SIMULATION.DURATION, gt=0)
    dt_output: float = Field(default_factory=lambda: settings.SIMULATION.DT_OUTPUT, gt=0)

    n_window: int = Field(20, ge=1)
    n_folds: int = Field(7, ge=2)
    channel_modes: List[Literal["v", "i", "vi"]] = Field(default_factory=lambda: ["v", "i"])
    classify_channel_mode: Literal["v", "i", "vi"] = "vi"
    classifier_params: Dict[str, Any] = Field(default_factory=dict)

    roster: List[ModelSpec] = Field(default_factory=default_roster)
    timing_repeats: int = Field(3, ge=1)

    curve_model: str = "xgb"
    curve_points: int = Field(8, ge=1)
    curve_min_samples: int = Field(50, ge=2)

    noise_levels: List[Optional[float]] = Field(default_factory=lambda: [None, 40.0, 20.0])
    noise_models: List[str] = Field(default_factory=lambda: ["xgb"])

    impedance_rf_assumed: float = Field(0.0, ge=0)
    impedance_path_branch: int = Field(1, ge=0, le=2)

    output_dir: str = Field(default_factory=lambda: settings.RUNTIME.OUTPUT_DIR)

    @field_validator("roster")
    @classmethod
    def _unique_roster(cls, roster: List[ModelSpec]) -> List[ModelSpec]:
        if not roster:
            raise ValueError("model roster must not be empty")
        names = [spec.name for spec in roster]
        duplicates = sorted({name for name in names if names.count(name) > 1})
        if duplicates:
            raise ValueError(f"duplicate roster names: {duplicates}")
        return roster

    @field_validator("noise_levels")
    @classmethod
    def _noise_levels(cls, levels: List[Optional[float]]) -> List[Optional[float]]:
        for level in levels:
            if level is not None and math.isnan(level):
                raise ValueError("noise levels must be numbers or null")
        return levels

    @model_validator(mode="after")
    def _check_window(self) -> "ExperimentConfig":
        latest = self.ranges.inception_time[1]
        if not latest < self.duration:
            raise ValueError(f"inception time {latest} must lie inside the {self.duration} s window")
        post_samples = int(math.floor((self.duration - latest) / self.dt_output + 1e-9))
        if post_samples < self.n_window:
            raise ValueError(
                f"n_window {self.n_window} exceeds the {post_samples} samples after inception"
            )
        return self

    def model_spec(self, name: str) -> ModelSpec:
        for spec in self.roster:
            if spec.name == name:
                return spec
        raise ConfigError(f"model '{name}' is not in the roster {[s.name for s in self.roster]}")


def load_experiment_config(path: Optional[Union[str, Path]] = None) -> ExperimentConfig:
    """
    Load an experiment configuration from a JSON file.

    Args:
        path: JSON file path; None returns the defaults from settings

    Returns:
        The validated ExperimentConfig

    Raises:
        ConfigError: If the file is missing, unreadable or fails validation
    """
    if path is None:
        return ExperimentConfig()

    config_path = Path(path)
    try:
        raw = json.loads(config_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {config_path}")
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {config_path}: {e}")

    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"invalid config {config_path}: {e}")
