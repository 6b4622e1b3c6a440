"""
Baseline Models

Comparison regressors for the boosted locator (constant mean, ordinary least
squares, k-nearest neighbours and a single regression tree) and the
single-ended impedance locator V_S = m Z_l I_S + R_F I_F.
"""

from typing import Optional

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist

from app.core.errors import FaultLocatorError
from app.models.baselines import ImpedanceInputs, KnnModel, MeanModel, OlsModel, TreeModel
from app.models.ensemble import Hyperparams
from app.models.network import WaveformRecord
from app.services.gbt import BoostingError, fit_tree, tree_predict
from app.utils.logger import get_logger

logger = get_logger(__name__)

CONDITION_LIMIT = 1e10
RIDGE_JITTER = 1e-9
DEFAULT_K = 5
IMPEDANCE_SAMPLES = 5


class BaselineError(FaultLocatorError):
    """Raised for empty training data, bad neighbour counts and degenerate impedance inputs."""
    pass


def _rows(X, y=None):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.shape[0] == 0:
        raise BaselineError("cannot fit on empty input")
    if y is None:
        return X
    y = np.asarray(y, dtype=float).ravel()
    if y.size != X.shape[0]:
        raise BaselineError(f"X has {X.shape[0]} rows but y has {y.size}")
    return X, y


def _queries(X, n_features: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1) if X.size == n_features else X.reshape(-1, 1)
    if X.shape[1] != n_features:
        raise BaselineError(f"model expects {n_features} features, got {X.shape[1]}")
    return X


# ----- constant mean -----

def mean_fit(X, y) -> MeanModel:
    X, y = _rows(X, y)
    return MeanModel(value=float(np.mean(y)), n_features=int(X.shape[1]))


def mean_predict(model: MeanModel, X) -> np.ndarray:
    X = _queries(X, model.n_features)
    return np.full(X.shape[0], model.value)


# ----- ordinary least squares -----

def ols_fit(X, y) -> OlsModel:
    """
    Least squares with intercept through the centered normal equations.

    When the Gram matrix is near-singular a ridge term eps * I is added, with
    eps scaled to the mean diagonal, which approaches the minimum-norm fit.
    """
    X, y = _rows(X, y)
    x_mean = X.mean(axis=0)
    y_mean = float(y.mean())
    Xc = X - x_mean
    gram = Xc.T @ Xc
    rhs = Xc.T @ (y - y_mean)

    with np.errstate(divide="ignore", invalid="ignore"):
        jittered = not np.linalg.cond(gram) < CONDITION_LIMIT
    weights = None
    if not jittered:
        try:
            weights = linalg.solve(gram, rhs, assume_a="sym")
        except (linalg.LinAlgError, ValueError):
            jittered = True
    if jittered:
        scale = float(np.trace(gram)) / gram.shape[0]
        eps = RIDGE_JITTER * (scale if scale > 0 else 1.0)
        weights = linalg.solve(gram + eps * np.eye(gram.shape[0]), rhs, assume_a="pos")
        logger.debug("OLS Gram matrix near-singular; applied ridge jitter %.3e", eps)

    return OlsModel(
        weights=np.asarray(weights),
        intercept=float(y_mean - x_mean @ weights),
        jittered=jittered,
    )


def ols_predict(model: OlsModel, X) -> np.ndarray:
    X = _queries(X, model.n_features)
    return X @ model.weights + model.intercept


# ----- k nearest neighbours -----

def knn_fit(X, y, k: int = DEFAULT_K) -> KnnModel:
    X, y = _rows(X, y)
    if not 1 <= k <= X.shape[0]:
        raise BaselineError(f"k must lie in [1, {X.shape[0]}], got {k}")
    return KnnModel(X=X.copy(), y=y.copy(), k=k)


def knn_predict(model: KnnModel, X) -> np.ndarray:
    """Mean target of the k nearest training rows; equal distances favour the lower row index."""
    X = _queries(X, model.n_features)
    distances = cdist(X, model.X, metric="euclidean")
    nearest = np.argsort(distances, axis=1, kind="stable")[:, :model.k]
    return model.y[nearest].mean(axis=1)


# ----- single regression tree -----

def dtree_fit(X, y, params: Optional[Hyperparams] = None) -> TreeModel:
    """One tree fit directly to y with no leaf shrinkage, so leaves are target means."""
    params = (params or Hyperparams()).model_copy(update={"lambda_leaf": 0.0})
    X, y = _rows(X, y)
    try:
        root = fit_tree(X, y, params)
    except BoostingError as e:
        raise BaselineError(str(e))
    return TreeModel(root=root, n_features=int(X.shape[1]))


def dtree_predict(model: TreeModel, X) -> np.ndarray:
    X = _queries(X, model.n_features)
    return tree_predict(model.root, X)


# ----- impedance locator -----

def impedance_locate(inputs: ImpedanceInputs) -> float:
    """
    Distance to the fault from V_S = m Z_l I_S + R_F I_F.

    m is returned unclamped, so estimates beyond the line or below zero are
    reported as they come out.

    Raises:
        BaselineError: If i_s is zero or z_total is not positive
    """
    if inputs.z_total <= 0:
        raise BaselineError(f"total line impedance must be positive, got {inputs.z_total}")
    if inputs.i_s == 0:
        raise BaselineError("terminal current is zero; the impedance equation is undefined")
    m = (inputs.v_s - inputs.r_f_assumed * inputs.i_f) / (inputs.z_total * inputs.i_s)
    return m * inputs.line_length


def impedance_from_record(
    record: WaveformRecord,
    path_length_km: float,
    r_per_km: float,
    rf_assumed: float = 0.0,
    oracle: bool = True,
    n_samples: int = IMPEDANCE_SAMPLES,
) -> ImpedanceInputs:
    """
    Average the first post-event samples into impedance-locator inputs.

    Oracle mode uses the simulated fault current; blind mode substitutes the
    terminal current for it, the only single-ended choice available.
    """
    start = record.post_event_index
    stop = start + n_samples
    if stop > len(record):
        raise BaselineError(
            f"scenario {record.scenario.scenario_id}: needs {n_samples} samples after the event, "
            f"record has {max(0, len(record) - start)}"
        )
    v_s = float(np.mean(record.voltage[start:stop]))
    i_s = float(np.mean(record.current[start:stop]))
    i_f = float(np.mean(record.fault_current[start:stop])) if oracle else i_s
    return ImpedanceInputs(
        v_s=v_s,
        i_s=i_s,
        i_f=i_f,
        r_f_assumed=rf_assumed,
        z_total=r_per_km * path_length_km,
        line_length=path_length_km,
    )
