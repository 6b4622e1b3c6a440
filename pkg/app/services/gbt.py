"""
Gradient-Boosted Trees

First-order gradient boosting over exact greedy regression trees. Each round
fits a tree to the negative loss gradient and moves the predictions by the
learning rate times the tree output. Supports squared loss (regression) and
logistic loss (binary classification).
"""

from typing import List, Optional, Tuple, Union

import logfire
import numpy as np
from scipy.special import expit, logit

from app.core.errors import FaultLocatorError
from app.models.dataset import Task
from app.models.ensemble import BoostedEnsemble, Hyperparams, TreeNode

PROBABILITY_CLIP = 1e-6
GAIN_TOLERANCE = 1e-12


class BoostingError(FaultLocatorError):
    """Raised for degenerate training data, unknown tasks and shape mismatches."""
    pass


def _task(task: Union[Task, str]) -> Task:
    try:
        return Task(task)
    except ValueError:
        raise BoostingError(f"unknown task: {task!r}")


def _pair(y, yhat) -> Tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=float).ravel()
    yhat = np.asarray(yhat, dtype=float).ravel()
    if y.shape != yhat.shape:
        raise BoostingError(f"length mismatch: {y.size} targets, {yhat.size} predictions")
    return y, yhat


def _check_binary(y: np.ndarray) -> None:
    if not np.all((y == 0) | (y == 1)):
        raise BoostingError("logistic loss needs targets in {0, 1}")


# ----- losses -----

def _pointwise_loss(task: Task, y: np.ndarray, yhat: np.ndarray) -> np.ndarray:
    if task is Task.REGRESSION:
        return (y - yhat) ** 2
    return y * np.logaddexp(0.0, -yhat) + (1.0 - y) * np.logaddexp(0.0, yhat)


def squared_loss(y, yhat) -> float:
    """Sum of squared errors."""
    y, yhat = _pair(y, yhat)
    return float(np.sum(_pointwise_loss(Task.REGRESSION, y, yhat)))


def logistic_loss(y, yhat) -> float:
    """Binary cross-entropy on raw scores, summed; overflow-safe through logaddexp."""
    y, yhat = _pair(y, yhat)
    _check_binary(y)
    return float(np.sum(_pointwise_loss(Task.CLASSIFICATION, y, yhat)))


def loss(task: Union[Task, str], y, yhat) -> float:
    task = _task(task)
    return squared_loss(y, yhat) if task is Task.REGRESSION else logistic_loss(y, yhat)


def loss_gradient(task: Union[Task, str], y, yhat) -> np.ndarray:
    """Per-sample derivative of the summed loss with respect to each prediction."""
    task = _task(task)
    y, yhat = _pair(y, yhat)
    if task is Task.REGRESSION:
        return -2.0 * (y - yhat)
    _check_binary(y)
    return expit(yhat) - y


def loss_curvature(task: Union[Task, str]) -> float:
    """Constant second derivative used to normalize leaf steps (1 for logistic loss)."""
    return 2.0 if _task(task) is Task.REGRESSION else 1.0


def gradient_check(task: Union[Task, str], y, yhat, epsilon: float = 1e-5) -> float:
    """
    Max absolute deviation between analytic and central-difference gradients.

    The summed loss is separable, so the partial derivative for sample i only
    perturbs prediction i.
    """
    task = _task(task)
    y, yhat = _pair(y, yhat)
    if y.size == 0:
        return 0.0
    if epsilon <= 0:
        raise BoostingError(f"epsilon must be positive, got {epsilon}")
    if task is Task.CLASSIFICATION:
        _check_binary(y)
    numeric = (
        _pointwise_loss(task, y, yhat + epsilon) - _pointwise_loss(task, y, yhat - epsilon)
    ) / (2.0 * epsilon)
    return float(np.max(np.abs(loss_gradient(task, y, yhat) - numeric)))


# ----- tree induction -----

def _presort(X: np.ndarray) -> np.ndarray:
    """Row j holds sample indices sorted by feature j."""
    return np.argsort(X, axis=0, kind="stable").T.copy()


def _grow(
    X: np.ndarray,
    g: np.ndarray,
    order: np.ndarray,
    depth: int,
    params: Hyperparams,
    curvature: float,
    fitted: np.ndarray,
) -> TreeNode:
    n = order.shape[1]
    rows = order[0]
    total = float(g[rows].sum())
    value = total / (curvature * n + params.lambda_leaf)

    split = None
    if depth < params.max_depth and n >= 2 * params.min_samples_leaf:
        split = _best_split(X, g, order, total, params, curvature)
    if split is None:
        fitted[rows] = value
        return TreeNode(value=value)

    feature, position, threshold = split
    goes_left = np.zeros(X.shape[0], dtype=bool)
    goes_left[order[feature, :position + 1]] = True
    in_left = goes_left[order]
    n_features = order.shape[0]
    left_order = order[in_left].reshape(n_features, -1)
    right_order = order[~in_left].reshape(n_features, -1)

    return TreeNode(
        value=value,
        feature_index=feature,
        threshold=threshold,
        left=_grow(X, g, left_order, depth + 1, params, curvature, fitted),
        right=_grow(X, g, right_order, depth + 1, params, curvature, fitted),
    )


def _best_split(
    X: np.ndarray,
    g: np.ndarray,
    order: np.ndarray,
    total: float,
    params: Hyperparams,
    curvature: float,
) -> Optional[Tuple[int, int, float]]:
    """
    Exact search over every feature and every boundary between distinct sorted values.

    Returns (feature, last left position in sorted order, threshold) or None
    when no split has positive gain. np.argmax over the row-major gain table
    picks the lowest feature index, then the lowest threshold, among ties.
    """
    n_features, n = order.shape
    lam = params.lambda_leaf
    min_leaf = params.min_samples_leaf

    values = X[order, np.arange(n_features)[:, None]]
    left_sum = np.cumsum(g[order], axis=1)[:, :-1]
    right_sum = total - left_sum
    n_left = np.arange(1, n, dtype=float)
    n_right = n - n_left

    with np.errstate(divide="ignore", invalid="ignore"):
        gain = (
            left_sum ** 2 / (curvature * n_left + lam)
            + right_sum ** 2 / (curvature * n_right + lam)
            - total ** 2 / (curvature * n + lam)
        )
    valid = (values[:, :-1] < values[:, 1:]) & (n_left >= min_leaf) & (n_right >= min_leaf)
    gain = np.where(valid & np.isfinite(gain), gain, -np.inf)

    best = int(np.argmax(gain))
    feature, position = divmod(best, n - 1)
    tolerance = GAIN_TOLERANCE * float(np.sum(g[order[0]] ** 2)) / curvature
    if not gain[feature, position] > tolerance:
        return None

    low = float(values[feature, position])
    high = float(values[feature, position + 1])
    threshold = (low + high) / 2.0
    if threshold >= high:
        threshold = low
    return feature, position, threshold


def _validate_rows(X, target) -> Tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    target = np.asarray(target, dtype=float).ravel()
    if X.shape[0] == 0 or target.size == 0:
        raise BoostingError("cannot fit on empty input")
    if X.shape[0] != target.size:
        raise BoostingError(f"X has {X.shape[0]} rows but target has {target.size}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(target))):
        raise BoostingError("training data contains non-finite values")
    return X, target


def _fit_tree(
    X: np.ndarray,
    g: np.ndarray,
    params: Hyperparams,
    curvature: float,
    order: np.ndarray,
) -> Tuple[TreeNode, np.ndarray]:
    fitted = np.empty(X.shape[0])
    root = _grow(X, g, order, 0, params, curvature, fitted)
    return root, fitted


def fit_tree(X, g, params: Optional[Hyperparams] = None, curvature: float = 1.0) -> TreeNode:
    """
    Grow one regression tree on targets g.

    Leaves hold sum(g) / (curvature * count + lambda_leaf). Growth stops at
    max_depth, when a child would have fewer than min_samples_leaf rows, or
    when no split has positive gain.

    Raises:
        BoostingError: On empty or mismatched input
    """
    params = params or Hyperparams()
    X, g = _validate_rows(X, g)
    root, _ = _fit_tree(X, g, params, curvature, _presort(X))
    return root


# ----- boosting -----

def base_score(task: Union[Task, str], y) -> float:
    task = _task(task)
    mean = float(np.mean(y))
    if task is Task.REGRESSION:
        return mean
    return float(logit(np.clip(mean, PROBABILITY_CLIP, 1.0 - PROBABILITY_CLIP)))


def fit(X, y, task: Union[Task, str] = Task.REGRESSION, params: Optional[Hyperparams] = None) -> BoostedEnsemble:
    """
    Fit a boosted ensemble.

    Args:
        X: (n, f) feature rows
        y: targets; {0, 1} for classification
        task: regression or classification
        params: Hyperparams, defaults if None

    Returns:
        BoostedEnsemble with per-round training loss

    Raises:
        BoostingError: On fewer than 2 rows, mismatched shapes or non-binary labels
    """
    task = _task(task)
    params = params or Hyperparams()
    X, y = _validate_rows(X, y)
    if X.shape[0] < 2:
        raise BoostingError(f"need at least 2 rows to fit, got {X.shape[0]}")
    if task is Task.CLASSIFICATION:
        _check_binary(y)

    curvature = loss_curvature(task)
    order = _presort(X)
    base = base_score(task, y)
    yhat = np.full(y.size, base)
    trees: List[TreeNode] = []
    train_loss: List[float] = []

    for _ in range(params.n_rounds):
        negative_gradient = -loss_gradient(task, y, yhat)
        tree, fitted = _fit_tree(X, negative_gradient, params, curvature, order)
        yhat = yhat + params.gamma * fitted
        trees.append(tree)
        train_loss.append(loss(task, y, yhat))

    logfire.debug(
        "Boosted ensemble fitted",
        task=task.value,
        n_rows=int(X.shape[0]),
        n_rounds=params.n_rounds,
        final_loss=train_loss[-1],
    )
    return BoostedEnsemble(
        base_prediction=base,
        trees=trees,
        gamma=params.gamma,
        task=task,
        n_features=int(X.shape[1]),
        train_loss=train_loss,
    )


def _apply(node: TreeNode, X: np.ndarray, rows: np.ndarray, out: np.ndarray) -> None:
    if node.is_leaf:
        out[rows] = node.value
        return
    goes_left = X[rows, node.feature_index] <= node.threshold
    _apply(node.left, X, rows[goes_left], out)  # type: ignore[arg-type]
    _apply(node.right, X, rows[~goes_left], out)  # type: ignore[arg-type]


def tree_predict(node: TreeNode, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = np.empty(X.shape[0])
    _apply(node, X, np.arange(X.shape[0]), out)
    return out


def _check_features(X, n_features: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1) if X.size == n_features else X.reshape(-1, 1)
    if X.shape[1] != n_features:
        raise BoostingError(f"model expects {n_features} features, got {X.shape[1]}")
    return X


def predict_raw(ensemble: BoostedEnsemble, X) -> np.ndarray:
    X = _check_features(X, ensemble.n_features)
    raw = np.full(X.shape[0], ensemble.base_prediction)
    for tree in ensemble.trees:
        raw += ensemble.gamma * tree_predict(tree, X)
    return raw


def predict(ensemble: BoostedEnsemble, X) -> np.ndarray:
    """Raw predictions for regression, probabilities for classification."""
    raw = predict_raw(ensemble, X)
    if ensemble.task is Task.CLASSIFICATION:
        return expit(raw)
    return raw


def predict_label(ensemble: BoostedEnsemble, X, threshold: float = 0.5) -> np.ndarray:
    if ensemble.task is not Task.CLASSIFICATION:
        raise BoostingError("hard labels are only defined for classification ensembles")
    return (predict(ensemble, X) >= threshold).astype(int)
