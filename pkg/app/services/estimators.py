"""
Estimator Registry

Maps roster entries to fit/predict pairs so the harness can train any model
the same way. Builders are looked up by kind; roster names stay free-form.
"""

from dataclasses import dataclass
from typing import Any, Callable, Dict

import numpy as np

from app.config.experiment import ModelSpec
from app.core.errors import FaultLocatorError
from app.models.dataset import Task
from app.models.ensemble import Hyperparams
from app.services import baselines, gbt


class EstimatorError(FaultLocatorError):
    """Raised when a roster entry cannot be turned into an estimator."""
    pass


@dataclass(frozen=True)
class Estimator:
    name: str
    kind: str
    fit: Callable[[np.ndarray, np.ndarray], Any]
    predict: Callable[[Any, np.ndarray], np.ndarray]


def _hyperparams(params: Dict[str, Any], **overrides: Any) -> Hyperparams:
    try:
        return Hyperparams(**{**params, **overrides})
    except ValueError as e:
        raise EstimatorError(f"invalid hyperparameters {params}: {e}")


def _boosted(spec: ModelSpec) -> Estimator:
    params = _hyperparams(spec.params)
    return Estimator(
        name=spec.name,
        kind=spec.kind,
        fit=lambda X, y: gbt.fit(X, y, Task.REGRESSION, params),
        predict=gbt.predict,
    )


def _dtree(spec: ModelSpec) -> Estimator:
    params = _hyperparams(spec.params, n_rounds=1)
    return Estimator(
        name=spec.name,
        kind=spec.kind,
        fit=lambda X, y: baselines.dtree_fit(X, y, params),
        predict=baselines.dtree_predict,
    )


def _knn(spec: ModelSpec) -> Estimator:
    unknown = set(spec.params) - {"k"}
    if unknown:
        raise EstimatorError(f"knn does not accept {sorted(unknown)}")
    k = int(spec.params.get("k", baselines.DEFAULT_K))
    return Estimator(
        name=spec.name,
        kind=spec.kind,
        fit=lambda X, y: baselines.knn_fit(X, y, k),
        predict=baselines.knn_predict,
    )


def _ols(spec: ModelSpec) -> Estimator:
    return Estimator(name=spec.name, kind=spec.kind, fit=baselines.ols_fit, predict=baselines.ols_predict)


def _mean(spec: ModelSpec) -> Estimator:
    return Estimator(name=spec.name, kind=spec.kind, fit=baselines.mean_fit, predict=baselines.mean_predict)


BUILDERS: Dict[str, Callable[[ModelSpec], Estimator]] = {
    "boosted": _boosted,
    "dtree": _dtree,
    "knn": _knn,
    "ols": _ols,
    "mean": _mean,
}


def build_estimator(spec: ModelSpec) -> Estimator:
    """
    Build the estimator for one roster entry.

    Raises:
        EstimatorError: For an unknown kind or invalid parameters
    """
    builder = BUILDERS.get(spec.kind)
    if builder is None:
        raise EstimatorError(f"unknown model kind '{spec.kind}' for '{spec.name}'")
    return builder(spec)
