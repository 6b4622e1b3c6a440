"""
Experiment Harness

Runs the full protocol: scenario generation and simulation, dataset building,
k-fold evaluation of the model roster, learning curves, fault/non-fault
classification, noise sweeps, error sensitivity tables and the impedance
baseline.
"""

import hashlib
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import logfire
import numpy as np

from app.config.experiment import ExperimentConfig, ModelSpec
from app.core.errors import FaultLocatorError
from app.models.dataset import FeatureMatrix, StandardScaler, Task
from app.models.ensemble import Hyperparams
from app.models.network import NetworkConfig, WaveformRecord
from app.models.reports import (
    ClassificationFold,
    ClassificationReport,
    CurvePoint,
    EvalReport,
    FoldResult,
    ImpedanceRow,
    ImpedanceTable,
    LearningCurve,
    NoiseRow,
    NoiseTable,
    OutOfFold,
    PredictionRow,
    PredictionTable,
    SensitivityRow,
    SensitivityTable,
)
from app.services import gbt
from app.services.baselines import BaselineError, impedance_from_record, impedance_locate
from app.services.dataset import build_feature_matrix, fit_scaler, training_order, transform, window_features
from app.services.estimators import build_estimator
from app.services.model_store import FittedModel, predict_model
from app.services.transient_sim import add_noise, build_network, generate_scenarios, simulate_batch
from app.utils.logger import get_logger
from app.utils.observability import TrainingMetrics, median_timing, track_performance

logger = get_logger(__name__)

FAULT_RESISTANCE_EDGES = [0.01, 0.1, 1.0, 10.0, 100.0, 200.0]
LIMITING_INDUCTANCE_EDGES = [1e-3, 50e-3, 100e-3, 150e-3, 200e-3]
DISTANCE_BIN_KM = 100.0


class HarnessError(FaultLocatorError):
    """Raised when an experiment cannot be run on the data or settings given."""
    pass


def mae(yhat, y) -> float:
    """Mean absolute error."""
    yhat = np.asarray(yhat, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if yhat.size == 0 or yhat.size != y.size:
        raise HarnessError(f"mae needs equal non-empty inputs, got {yhat.size} and {y.size}")
    return float(np.mean(np.abs(yhat - y)))


def config_fingerprint(config: ExperimentConfig) -> str:
    return hashlib.sha256(config.model_dump_json().encode("utf-8")).hexdigest()


@track_performance("harness", "prepare_records")
def prepare_records(config: ExperimentConfig, jobs: int = 1) -> List[WaveformRecord]:
    """Generate the configured scenarios and simulate them."""
    scenarios = generate_scenarios(
        config.seed, config.n_fault, config.n_nonfault, config.ranges, config.network
    )
    state = build_network(config.network, dt_output=config.dt_output)
    return simulate_batch(state, scenarios, config.duration, jobs)


# ----- cross-validation -----

@dataclass(frozen=True)
class _FoldJob:
    X: np.ndarray
    y: np.ndarray
    folds: np.ndarray
    fold: int
    roster: Tuple[ModelSpec, ...]
    seed: int
    timing_repeats: int
    channel_mode: str


def _evaluate_fold(job: _FoldJob) -> Tuple[List[FoldResult], np.ndarray, Dict[str, np.ndarray]]:
    train = training_order(job.folds, job.fold, job.seed)
    valid = np.flatnonzero(job.folds == job.fold)
    scaler = fit_scaler(job.X[train])
    X_train = transform(scaler, job.X[train])
    X_valid = transform(scaler, job.X[valid])
    y_train = job.y[train]

    results: List[FoldResult] = []
    predictions: Dict[str, np.ndarray] = {}
    for spec in job.roster:
        try:
            estimator = build_estimator(spec)
            model, fit_time = median_timing(lambda: estimator.fit(X_train, y_train), job.timing_repeats)
            predicted = np.asarray(estimator.predict(model, X_valid), dtype=float)
            score = mae(predicted, job.y[valid])
            error = None
        except Exception as e:
            predicted = np.full(valid.size, math.nan)
            score, fit_time, error = math.nan, 0.0, f"{type(e).__name__}: {e}"
        predictions[spec.name] = predicted
        results.append(FoldResult(
            channel_mode=job.channel_mode,
            model=spec.name,
            fold=job.fold,
            n_train=int(train.size),
            n_valid=int(valid.size),
            mae_km=score,
            fit_time_s=fit_time,
            error=error,
        ))
    return results, valid, predictions


def cross_validate(
    matrix: FeatureMatrix,
    roster: Sequence[ModelSpec],
    seed: int,
    timing_repeats: int = 3,
    jobs: int = 1,
) -> Tuple[List[FoldResult], OutOfFold]:
    """
    Evaluate every roster model on every fold of a regression matrix.

    For each fold the scaler is fit on the remaining folds only. A model that
    fails on a fold gets MAE NaN and its error message; the others carry on.

    Returns:
        Fold results ordered by fold then roster order, and the out-of-fold predictions
    """
    if not roster:
        raise HarnessError("model roster is empty")
    n_folds = matrix.n_folds
    if n_folds < 2 or len(matrix) < n_folds:
        raise HarnessError(f"need at least {max(n_folds, 2)} rows in at least 2 folds, got {len(matrix)}")

    mode = matrix.channel_mode.value
    jobs_list = [
        _FoldJob(matrix.X, matrix.y, matrix.folds, fold, tuple(roster), seed, timing_repeats, mode)
        for fold in range(n_folds)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            outcomes = list(executor.map(_evaluate_fold, jobs_list))
    else:
        outcomes = [_evaluate_fold(job) for job in jobs_list]

    results: List[FoldResult] = []
    oof = {spec.name: np.full(len(matrix), math.nan) for spec in roster}
    for fold_results, valid, predictions in outcomes:
        results.extend(fold_results)
        # worker processes keep their own metrics store
        for r in fold_results:
            TrainingMetrics.track_fit(r.model, r.n_train, r.fit_time_s, r.fold, r.error is None, r.error)
        for name, predicted in predictions.items():
            oof[name][valid] = predicted
        logfire.info(
            "Fold evaluated",
            channel_mode=mode,
            fold=fold_results[0].fold,
            n_valid=int(valid.size),
            maes={r.model: r.mae_km for r in fold_results},
        )

    out_of_fold = OutOfFold(
        channel_mode=mode,
        scenario_ids=matrix.scenario_ids.tolist(),
        targets=matrix.y.tolist(),
        folds=matrix.folds.tolist(),
        predictions={name: values.tolist() for name, values in oof.items()},
    )
    return results, out_of_fold


def _regression_matrix(config: ExperimentConfig, records: Sequence[WaveformRecord], mode: str) -> FeatureMatrix:
    n_faults = sum(1 for r in records if r.scenario.is_fault)
    if n_faults < config.n_folds:
        raise HarnessError(f"need at least {config.n_folds} fault records for k-fold, got {n_faults}")
    return build_feature_matrix(records, config.n_window, mode, Task.REGRESSION, config.n_folds, config.seed)


@track_performance("harness", "kfold")
def run_kfold(
    config: ExperimentConfig,
    records: Optional[Sequence[WaveformRecord]] = None,
    jobs: int = 1,
) -> EvalReport:
    """
    k-fold evaluation of the roster, once per configured channel mode.

    Args:
        config: Experiment configuration
        records: Simulated records; generated from config when None
        jobs: Worker processes for simulation and folds

    Returns:
        EvalReport with per-fold MAE, fit times and out-of-fold predictions
    """
    records = records if records is not None else prepare_records(config, jobs)
    report = EvalReport(fingerprint=config_fingerprint(config))
    for mode in config.channel_modes:
        matrix = _regression_matrix(config, records, mode)
        results, out_of_fold = cross_validate(matrix, config.roster, config.seed, config.timing_repeats, jobs)
        report.results.extend(results)
        report.out_of_fold.append(out_of_fold)

    for mode in report.channel_modes:
        logfire.info(
            "k-fold evaluation finished",
            channel_mode=mode,
            mean_mae={name: report.mean_mae(name, mode) for name in report.models},
        )
    return report


# ----- learning curve -----

def default_sample_grid(n_max: int, n_min: int = 50, points: int = 8) -> List[int]:
    """Logarithmically spaced training sizes from n_min to n_max."""
    low = max(2, min(n_min, n_max))
    return np.unique(np.round(np.geomspace(low, n_max, points)).astype(int)).tolist()


def curve_from_matrix(
    matrix: FeatureMatrix,
    spec: ModelSpec,
    sample_grid: Optional[Sequence[int]],
    seed: int,
    timing_repeats: int = 3,
    n_min: int = 50,
    points: int = 8,
) -> LearningCurve:
    """
    Train on growing prefixes of fold 0's shuffled training split.

    Validation is always fold 0. Fit times run serially.

    Raises:
        HarnessError: If a grid size is below 2 or exceeds the training split
    """
    order = training_order(matrix.folds, 0, seed)
    valid = np.flatnonzero(matrix.folds == 0)
    n_max = int(order.size)
    grid = list(sample_grid) if sample_grid is not None else default_sample_grid(n_max, n_min, points)
    if not grid:
        raise HarnessError("sample grid is empty")
    bad = [n for n in grid if not 2 <= n <= n_max]
    if bad:
        raise HarnessError(f"sample sizes {bad} outside [2, {n_max}] training rows")
    grid = sorted(set(int(n) for n in grid))

    estimator = build_estimator(spec)
    curve = LearningCurve(model=spec.name, channel_mode=matrix.channel_mode.value)
    cumulative = 0.0
    for n in grid:
        rows = order[:n]
        scaler = fit_scaler(matrix.X[rows])
        X_train = transform(scaler, matrix.X[rows])
        X_valid = transform(scaler, matrix.X[valid])
        model, fit_time = median_timing(lambda: estimator.fit(X_train, matrix.y[rows]), timing_repeats)
        cumulative += fit_time
        curve.points.append(CurvePoint(
            n_train=n,
            train_mae_km=mae(estimator.predict(model, X_train), matrix.y[rows]),
            valid_mae_km=mae(estimator.predict(model, X_valid), matrix.y[valid]),
            fit_time_s=fit_time,
            cumulative_time_s=cumulative,
        ))
    return curve


@track_performance("harness", "learning_curve")
def learning_curve(
    config: ExperimentConfig,
    model: Optional[str] = None,
    sample_grid: Optional[Sequence[int]] = None,
    records: Optional[Sequence[WaveformRecord]] = None,
    channel_mode: Optional[str] = None,
    jobs: int = 1,
) -> LearningCurve:
    records = records if records is not None else prepare_records(config, jobs)
    spec = config.model_spec(model or config.curve_model)
    mode = channel_mode or config.channel_modes[0]
    matrix = _regression_matrix(config, records, mode)
    return curve_from_matrix(
        matrix, spec, sample_grid, config.seed, config.timing_repeats,
        config.curve_min_samples, config.curve_points,
    )


# ----- classification -----

def classify_matrix(
    matrix: FeatureMatrix,
    params: Optional[Hyperparams] = None,
    seed: int = 0,
) -> ClassificationReport:
    """
    k-fold accuracy of the logistic-loss boosted classifier.

    Raises:
        HarnessError: If the labels hold a single class
    """
    classes = np.unique(matrix.y)
    if classes.size < 2:
        raise HarnessError(f"classification needs both classes, found only {classes.tolist()}")

    report = ClassificationReport(channel_mode=matrix.channel_mode.value)
    for fold in range(matrix.n_folds):
        train = training_order(matrix.folds, fold, seed)
        valid = np.flatnonzero(matrix.folds == fold)
        scaler = fit_scaler(matrix.X[train])
        ensemble = gbt.fit(transform(scaler, matrix.X[train]), matrix.y[train], Task.CLASSIFICATION, params)
        predicted = gbt.predict_label(ensemble, transform(scaler, matrix.X[valid]))
        actual = matrix.y[valid].astype(int)
        tp = int(np.sum((predicted == 1) & (actual == 1)))
        tn = int(np.sum((predicted == 0) & (actual == 0)))
        fp = int(np.sum((predicted == 1) & (actual == 0)))
        fn = int(np.sum((predicted == 0) & (actual == 1)))
        report.folds.append(ClassificationFold(
            fold=fold,
            n_valid=int(valid.size),
            accuracy=(tp + tn) / valid.size if valid.size else math.nan,
            tp=tp, fp=fp, tn=tn, fn=fn,
        ))
    logfire.info("Classification finished", accuracy=report.accuracy, **report.confusion)
    return report


@track_performance("harness", "classify")
def classify_events(
    config: ExperimentConfig,
    records: Optional[Sequence[WaveformRecord]] = None,
    jobs: int = 1,
) -> ClassificationReport:
    records = records if records is not None else prepare_records(config, jobs)
    if not any(not r.scenario.is_fault for r in records):
        raise HarnessError("classification needs non-fault records; none were generated")
    if all(not r.scenario.is_fault for r in records):
        raise HarnessError("classification needs fault records; none were generated")
    matrix = build_feature_matrix(
        records, config.n_window, config.classify_channel_mode, Task.CLASSIFICATION,
        config.n_folds, config.seed,
    )
    return classify_matrix(matrix, Hyperparams(**config.classifier_params), config.seed)


# ----- noise sweep -----

@track_performance("harness", "noise_sweep")
def noise_sweep(
    config: ExperimentConfig,
    records: Optional[Sequence[WaveformRecord]] = None,
    jobs: int = 1,
) -> NoiseTable:
    """
    Repeat k-fold evaluation with white noise added at each SNR.

    Record i gets noise seed `config.seed + i`; None means no noise.
    """
    if not config.noise_levels:
        raise HarnessError("noise level list is empty")
    records = records if records is not None else prepare_records(config, jobs)
    roster = [config.model_spec(name) for name in config.noise_models]

    table = NoiseTable()
    for level in config.noise_levels:
        noisy = [add_noise(r, level, config.seed + i) for i, r in enumerate(records)]
        snr = math.inf if level is None else float(level)
        for mode in config.channel_modes:
            matrix = _regression_matrix(config, noisy, mode)
            results, _ = cross_validate(matrix, roster, config.seed, timing_repeats=1, jobs=jobs)
            for spec in roster:
                maes = [r.mae_km for r in results if r.model == spec.name]
                table.rows.append(NoiseRow(
                    snr_db=snr,
                    channel_mode=mode,
                    model=spec.name,
                    mean_mae_km=float(np.mean(maes)),
                    std_mae_km=float(np.std(maes)),
                ))
        logfire.info("Noise level evaluated", snr_db=snr)
    return table


# ----- sensitivity -----

def _bins(values: np.ndarray, edges: Sequence[float]) -> List[Tuple[float, float, np.ndarray]]:
    out = []
    for i, (low, high) in enumerate(zip(edges[:-1], edges[1:])):
        last = i == len(edges) - 2
        mask = (values >= low) & ((values <= high) if last else (values < high))
        out.append((float(low), float(high), mask))
    return out


def sensitivity_table(report: EvalReport, records: Sequence[WaveformRecord]) -> SensitivityTable:
    """Out-of-fold absolute error binned by fault resistance, limiting inductance and distance."""
    scenarios = {r.scenario.scenario_id: r.scenario for r in records}
    table = SensitivityTable()
    for oof in report.out_of_fold:
        try:
            rows = [scenarios[sid] for sid in oof.scenario_ids]
        except KeyError as e:
            raise HarnessError(f"report references scenario {e.args[0]} missing from the records")
        factors = {
            "fault_resistance": (np.array([s.fault_resistance for s in rows]), FAULT_RESISTANCE_EDGES),
            "limiting_inductance": (np.array([s.limiting_inductance for s in rows]), LIMITING_INDUCTANCE_EDGES),
        }
        distance = np.array([s.distance_km for s in rows], dtype=float)
        top = DISTANCE_BIN_KM * max(1, math.ceil(distance.max() / DISTANCE_BIN_KM)) if distance.size else DISTANCE_BIN_KM
        factors["distance_km"] = (distance, list(np.arange(0.0, top + DISTANCE_BIN_KM / 2, DISTANCE_BIN_KM)))

        targets = np.asarray(oof.targets)
        for model, predicted in oof.predictions.items():
            errors = np.abs(np.asarray(predicted) - targets)
            for factor, (values, edges) in factors.items():
                for low, high, mask in _bins(values, edges):
                    count = int(mask.sum())
                    if count == 0:
                        continue
                    table.rows.append(SensitivityRow(
                        channel_mode=oof.channel_mode,
                        model=model,
                        factor=factor,
                        bin_low=low,
                        bin_high=high,
                        n=count,
                        mae_km=float(np.mean(errors[mask])),
                    ))
    return table


# ----- impedance baseline -----

def impedance_estimate(
    record: WaveformRecord,
    network: NetworkConfig,
    rf_assumed: float = 0.0,
    oracle: bool = True,
    path_branch: int = 1,
) -> float:
    """Impedance-locator distance along the measuring branch plus `path_branch`."""
    measuring = network.branches[network.measuring_terminal]
    inputs = impedance_from_record(
        record, network.path_length(path_branch), measuring.r_per_km, rf_assumed, oracle
    )
    return impedance_locate(inputs)


def impedance_table(
    records: Sequence[WaveformRecord],
    network: NetworkConfig,
    rf_assumed: float = 0.0,
    path_branch: int = 1,
) -> ImpedanceTable:
    """Oracle and blind impedance estimates for every fault record."""
    table = ImpedanceTable(rf_assumed=rf_assumed, path_length_km=network.path_length(path_branch))
    for record in records:
        scenario = record.scenario
        if not scenario.is_fault:
            continue
        estimates = []
        for oracle in (True, False):
            try:
                estimates.append(impedance_estimate(record, network, rf_assumed, oracle, path_branch))
            except BaselineError as e:
                logger.warning("Impedance estimate failed for scenario %d: %s", scenario.scenario_id, e)
                estimates.append(math.nan)
        table.rows.append(ImpedanceRow(
            scenario_id=scenario.scenario_id,
            branch_index=scenario.branch_index,
            distance_km=scenario.distance_km,
            fault_resistance=scenario.fault_resistance,
            limiting_inductance=scenario.limiting_inductance,
            estimate_oracle_km=estimates[0],
            estimate_blind_km=estimates[1],
            error_oracle_km=estimates[0] - scenario.distance_km,
            error_blind_km=estimates[1] - scenario.distance_km,
        ))
    return table


def locate_scenario(
    records: Sequence[WaveformRecord],
    network: NetworkConfig,
    scenario_id: int,
    rf_assumed: float = 0.0,
    oracle: bool = False,
    path_branch: int = 1,
) -> Tuple[WaveformRecord, float]:
    """Impedance estimate for one stored scenario."""
    for record in records:
        if record.scenario.scenario_id == scenario_id:
            return record, impedance_estimate(record, network, rf_assumed, oracle, path_branch)
    raise HarnessError(f"scenario {scenario_id} not found among {len(records)} records")


# ----- final model -----

@dataclass(frozen=True)
class TrainedModel:
    """A roster model fit on every fault record, with the scaler its inputs need."""
    name: str
    channel_mode: str
    n_window: int
    model: FittedModel
    scaler: StandardScaler


@track_performance("harness", "train")
def train_model(
    config: ExperimentConfig,
    records: Optional[Sequence[WaveformRecord]] = None,
    model: Optional[str] = None,
    channel_mode: Optional[str] = None,
    jobs: int = 1,
) -> TrainedModel:
    """
    Fit one roster model on all fault records for deployment.

    The scaler is fit on the same rows. Defaults are the config's curve model
    and first channel mode.
    """
    records = records if records is not None else prepare_records(config, jobs)
    spec = config.model_spec(model or config.curve_model)
    mode = channel_mode or config.channel_modes[0]
    matrix = _regression_matrix(config, records, mode)
    scaler = fit_scaler(matrix.X)
    estimator = build_estimator(spec)
    X = transform(scaler, matrix.X)
    fitted, fit_time = median_timing(lambda: estimator.fit(X, matrix.y), 1)
    TrainingMetrics.track_fit(spec.name, len(matrix), fit_time)
    logfire.info("Final model trained", model=spec.name, channel_mode=mode, n_rows=len(matrix))
    return TrainedModel(name=spec.name, channel_mode=mode, n_window=config.n_window, model=fitted, scaler=scaler)


def predict_records(
    model: FittedModel,
    scaler: StandardScaler,
    records: Sequence[WaveformRecord],
    n_window: int,
    channel_mode: str,
    name: str = "model",
) -> PredictionTable:
    """
    Distance estimates of a stored model for every fault record.

    Raises:
        HarnessError: If no fault records are given
        DatasetError: If the window and channels do not match the scaler
    """
    faults = [r for r in records if r.scenario.is_fault]
    if not faults:
        raise HarnessError("no fault records to locate")
    X = np.vstack([window_features(r, n_window, channel_mode).values for r in faults])
    estimates = np.asarray(predict_model(model, transform(scaler, X)), dtype=float)

    table = PredictionTable(model=name, channel_mode=channel_mode)
    for record, estimate in zip(faults, estimates):
        distance = float(record.scenario.distance_km)
        table.rows.append(PredictionRow(
            scenario_id=record.scenario.scenario_id,
            distance_km=distance,
            estimate_km=float(estimate),
            error_km=float(estimate) - distance,
        ))
    return table
