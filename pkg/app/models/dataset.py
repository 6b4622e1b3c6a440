"""
Dataset Models

Feature vectors, the fold-assigned feature matrix and the standard scaler.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, List, Union

import numpy as np
from pydantic import BaseModel


class ChannelMode(str, Enum):
    VOLTAGE = "v"
    CURRENT = "i"
    BOTH = "vi"


class Task(str, Enum):
    REGRESSION = "regression"
    CLASSIFICATION = "classification"


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    label: Union[float, str]
    scenario_id: int = 0

    def __len__(self) -> int:
        return int(self.values.size)


@dataclass
class FeatureMatrix:
    """
    Tabular dataset with one row per scenario window.

    Attributes:
        X: (n_rows, n_features) feature values
        y: targets; distance in km for regression, 1/0 for fault/non-fault
        folds: fold index per row
        channel_mode: which channels the windows concatenate
        task: regression or classification
        scenario_ids: originating scenario per row
    """
    X: np.ndarray
    y: np.ndarray
    folds: np.ndarray
    channel_mode: ChannelMode
    task: Task = Task.REGRESSION
    scenario_ids: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=float)
        self.folds = np.asarray(self.folds, dtype=int)
        self.channel_mode = ChannelMode(self.channel_mode)
        self.task = Task(self.task)
        if self.scenario_ids is None:
            self.scenario_ids = np.arange(self.y.size, dtype=int)
        else:
            self.scenario_ids = np.asarray(self.scenario_ids, dtype=int)
        n = self.X.shape[0]
        if not (self.y.size == self.folds.size == self.scenario_ids.size == n):
            raise ValueError(
                f"row count mismatch: X={n}, y={self.y.size}, folds={self.folds.size}, "
                f"scenario_ids={self.scenario_ids.size}"
            )

    def __len__(self) -> int:
        return int(self.X.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.X.shape[1])

    @property
    def n_folds(self) -> int:
        return int(self.folds.max()) + 1 if len(self) else 0

    def rows(self) -> Iterator[FeatureVector]:
        for values, label, scenario_id in zip(self.X, self.y, self.scenario_ids):
            yield FeatureVector(values=values, label=float(label), scenario_id=int(scenario_id))

    def fold_sizes(self) -> List[int]:
        return np.bincount(self.folds, minlength=self.n_folds).tolist()


@dataclass(frozen=True)
class StandardScaler:
    """Per-feature mean `u` and population standard deviation `s`."""
    u: np.ndarray
    s: np.ndarray

    @property
    def n_features(self) -> int:
        return int(self.u.size)


class ScalerFile(BaseModel):
    """JSON layout of a saved scaler."""
    u: List[float]
    s: List[float]


class DatasetMeta(BaseModel):
    """JSON sidecar written next to a dataset CSV."""
    channel_mode: ChannelMode
    task: Task
    scenario_ids: List[int]
