"""
Dataset Service

Turns waveform records into fixed-length feature windows, standardizes them,
assigns cross-validation folds and persists datasets as CSV.
"""

import json
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import logfire
import numpy as np
import pandas as pd
from pydantic import ValidationError

from app.core.errors import FaultLocatorError
from app.models.dataset import (
    ChannelMode,
    DatasetMeta,
    FeatureMatrix,
    FeatureVector,
    ScalerFile,
    StandardScaler,
    Task,
)
from app.models.network import WaveformRecord
from app.utils.logger import get_logger

logger = get_logger(__name__)

DEFAULT_WINDOW = 20
DEFAULT_FOLDS = 7


class DatasetError(FaultLocatorError):
    """Raised for invalid windows, scalers, fold requests and dataset files."""
    pass


def window_features(
    record: WaveformRecord,
    n_window: int = DEFAULT_WINDOW,
    channel_mode: Union[ChannelMode, str] = ChannelMode.BOTH,
) -> FeatureVector:
    """
    Take the first n_window samples at and after inception.

    Args:
        record: Simulated or loaded waveform record
        n_window: Samples per channel
        channel_mode: "v", "i" or "vi" (voltage block first)

    Returns:
        FeatureVector labeled from the record's scenario

    Raises:
        DatasetError: If fewer than n_window samples follow inception
    """
    mode = ChannelMode(channel_mode)
    if n_window < 1:
        raise DatasetError(f"n_window must be at least 1, got {n_window}")
    start = record.inception_index
    stop = start + n_window
    if stop > len(record):
        raise DatasetError(
            f"scenario {record.scenario.scenario_id}: window of {n_window} samples from index "
            f"{start} exceeds the {len(record)}-sample record"
        )

    blocks = []
    if mode in (ChannelMode.VOLTAGE, ChannelMode.BOTH):
        blocks.append(record.voltage[start:stop])
    if mode in (ChannelMode.CURRENT, ChannelMode.BOTH):
        blocks.append(record.current[start:stop])
    return FeatureVector(
        values=np.concatenate(blocks),
        label=record.scenario.label,
        scenario_id=record.scenario.scenario_id,
    )


def assign_folds(n_rows: int, k: int = DEFAULT_FOLDS, seed: int = 0) -> np.ndarray:
    """Shuffle rows by seed, then deal them round-robin into k folds."""
    if k < 1 or n_rows < k:
        raise DatasetError(f"need at least k={k} rows for {k} folds, got {n_rows}")
    order = np.random.default_rng(seed).permutation(n_rows)
    folds = np.empty(n_rows, dtype=int)
    folds[order] = np.arange(n_rows) % k
    return folds


def training_order(folds: np.ndarray, fold: int, seed: int) -> np.ndarray:
    """Deterministically shuffled indices of every row outside `fold`."""
    train = np.flatnonzero(np.asarray(folds) != fold)
    return np.random.default_rng([seed, fold]).permutation(train)


def build_feature_matrix(
    records: Sequence[WaveformRecord],
    n_window: int = DEFAULT_WINDOW,
    channel_mode: Union[ChannelMode, str] = ChannelMode.BOTH,
    task: Union[Task, str] = Task.REGRESSION,
    k: int = DEFAULT_FOLDS,
    seed: int = 0,
) -> FeatureMatrix:
    """
    Window every record and assign folds.

    Regression keeps fault records only (target = distance in km);
    classification keeps all records with label 1 for faults and 0 otherwise.
    """
    task = Task(task)
    mode = ChannelMode(channel_mode)
    if task is Task.REGRESSION:
        records = [r for r in records if r.scenario.is_fault]
    if not records:
        raise DatasetError(f"no records available for the {task.value} dataset")

    vectors = [window_features(r, n_window, mode) for r in records]
    X = np.vstack([v.values for v in vectors])
    if task is Task.REGRESSION:
        y = np.array([float(v.label) for v in vectors])
    else:
        y = np.array([1.0 if r.scenario.is_fault else 0.0 for r in records])

    matrix = FeatureMatrix(
        X=X,
        y=y,
        folds=assign_folds(len(vectors), k, seed),
        channel_mode=mode,
        task=task,
        scenario_ids=[v.scenario_id for v in vectors],
    )
    logfire.info(
        "Feature matrix built",
        task=task.value,
        channel_mode=mode.value,
        n_rows=len(matrix),
        n_features=matrix.n_features,
    )
    return matrix


# ----- standardization -----

def _as_array(rows: Union[FeatureMatrix, np.ndarray, Iterable]) -> np.ndarray:
    if isinstance(rows, FeatureMatrix):
        return rows.X
    return np.atleast_2d(np.asarray(rows, dtype=float))


def fit_scaler(train_rows: Union[FeatureMatrix, np.ndarray]) -> StandardScaler:
    """Column means and population standard deviations; zero deviations become 1."""
    X = _as_array(train_rows)
    if X.size == 0 or X.shape[0] < 2:
        raise DatasetError(f"fit_scaler needs at least 2 rows, got {X.shape[0] if X.ndim else 0}")
    u = X.mean(axis=0)
    s = X.std(axis=0)
    s[s == 0] = 1.0
    return StandardScaler(u=u, s=s)


def transform(scaler: StandardScaler, rows: Union[FeatureMatrix, np.ndarray]) -> np.ndarray:
    X = _as_array(rows)
    if X.shape[1] != scaler.n_features:
        raise DatasetError(f"scaler expects {scaler.n_features} features, got {X.shape[1]}")
    return (X - scaler.u) / scaler.s


def save_scaler(scaler: StandardScaler, path: Union[str, Path]) -> None:
    try:
        Path(path).write_text(
            ScalerFile(u=scaler.u.tolist(), s=scaler.s.tolist()).model_dump_json(), encoding="utf-8"
        )
    except OSError as e:
        raise DatasetError(f"cannot write scaler {path}: {e}")


def load_scaler(path: Union[str, Path]) -> StandardScaler:
    try:
        data = ScalerFile.model_validate(json.loads(Path(path).read_text(encoding="utf-8")))
    except (OSError, json.JSONDecodeError, ValidationError) as e:
        raise DatasetError(f"cannot read scaler {path}: {e}")
    if len(data.u) != len(data.s):
        raise DatasetError(f"{path}: u has {len(data.u)} entries, s has {len(data.s)}")
    return StandardScaler(u=np.asarray(data.u), s=np.asarray(data.s))


# ----- persistence -----

def _meta_path(path: Path) -> Path:
    return path.with_name(path.name + ".meta.json")


def save_dataset(matrix: FeatureMatrix, path: Union[str, Path]) -> Path:
    """Write `f0..fN,label,fold` CSV plus a JSON sidecar with mode, task and scenario ids."""
    out = Path(path)
    frame = pd.DataFrame(matrix.X, columns=[f"f{j}" for j in range(matrix.n_features)])
    frame["label"] = matrix.y
    frame["fold"] = matrix.folds
    meta = DatasetMeta(
        channel_mode=matrix.channel_mode,
        task=matrix.task,
        scenario_ids=matrix.scenario_ids.tolist(),
    )
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(out, index=False, float_format="%.17g")
        _meta_path(out).write_text(meta.model_dump_json(), encoding="utf-8")
    except OSError as e:
        raise DatasetError(f"cannot write dataset {out}: {e}")
    logfire.info("Dataset saved", path=str(out), n_rows=len(matrix))
    return out


def _read_meta(path: Path, n_rows: int) -> Optional[DatasetMeta]:
    meta_path = _meta_path(path)
    if not meta_path.exists():
        logger.warning("No metadata sidecar for %s; assuming regression on both channels", path)
        return None
    try:
        meta = DatasetMeta.model_validate(json.loads(meta_path.read_text(encoding="utf-8")))
    except (OSError, json.JSONDecodeError, ValidationError) as e:
        raise DatasetError(f"malformed dataset metadata {meta_path}: {e}")
    if len(meta.scenario_ids) != n_rows:
        raise DatasetError(
            f"{meta_path}: lists {len(meta.scenario_ids)} scenario ids for {n_rows} rows"
        )
    return meta


def load_dataset(path: Union[str, Path]) -> FeatureMatrix:
    """
    Read a dataset written by save_dataset.

    Raises:
        DatasetError: On an empty file, a bad header or a malformed row (line numbers are 1-based)
    """
    src = Path(path)
    try:
        frame = pd.read_csv(src, dtype=str, keep_default_na=False)
    except FileNotFoundError:
        raise DatasetError(f"dataset not found: {src}")
    except pd.errors.EmptyDataError:
        raise DatasetError(f"{src}: file is empty")
    except pd.errors.ParserError as e:
        raise DatasetError(f"{src}: malformed row: {e}")
    except OSError as e:
        raise DatasetError(f"cannot read dataset {src}: {e}")

    columns = list(frame.columns)
    n_features = len(columns) - 2
    expected = [f"f{j}" for j in range(n_features)] + ["label", "fold"]
    if n_features < 1 or columns != expected:
        raise DatasetError(f"{src} line 1: expected header f0..fN,label,fold, got {','.join(columns)}")
    if frame.empty:
        raise DatasetError(f"{src}: no data rows")

    raw = frame.to_numpy()
    values = np.empty(raw.shape, dtype=float)
    for r, row in enumerate(raw):
        line = r + 2
        if any(not isinstance(cell, str) or not cell for cell in row):
            raise DatasetError(f"{src} line {line}: expected {len(columns)} columns")
        try:
            values[r] = [float(cell) for cell in row]
        except ValueError:
            raise DatasetError(f"{src} line {line}: non-numeric value")
        fold = values[r, -1]
        if fold < 0 or fold != int(fold):
            raise DatasetError(f"{src} line {line}: fold must be a non-negative integer, got {row[-1]}")

    meta = _read_meta(src, len(frame))
    return FeatureMatrix(
        X=values[:, :n_features],
        y=values[:, n_features],
        folds=values[:, n_features + 1].astype(int),
        channel_mode=meta.channel_mode if meta else ChannelMode.BOTH,
        task=meta.task if meta else Task.REGRESSION,
        scenario_ids=meta.scenario_ids if meta else None,
    )
