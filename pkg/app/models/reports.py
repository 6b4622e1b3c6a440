"""
Report Models

Result records produced by the evaluation harness and consumed by the CSV and
SVG emitters.
"""

import math
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, Field


class FoldResult(BaseModel):
    """Validation outcome of one model on one fold."""
    channel_mode: str
    model: str
    fold: int
    n_train: int
    n_valid: int
    mae_km: float
    fit_time_s: float = 0.0
    error: Optional[str] = None


class OutOfFold(BaseModel):
    """Validation predictions of every model for every row of one channel mode."""
    channel_mode: str
    scenario_ids: List[int]
    targets: List[float]
    folds: List[int]
    predictions: Dict[str, List[float]] = Field(default_factory=dict)


class EvalReport(BaseModel):
    fingerprint: str
    results: List[FoldResult] = Field(default_factory=list)
    out_of_fold: List[OutOfFold] = Field(default_factory=list)

    @property
    def models(self) -> List[str]:
        return list(dict.fromkeys(r.model for r in self.results))

    @property
    def channel_modes(self) -> List[str]:
        return list(dict.fromkeys(r.channel_mode for r in self.results))

    def fold_maes(self, model: str, channel_mode: str) -> List[float]:
        rows = [r for r in self.results if r.model == model and r.channel_mode == channel_mode]
        return [r.mae_km for r in sorted(rows, key=lambda r: r.fold)]

    def mean_mae(self, model: str, channel_mode: str) -> float:
        """Mean validation MAE over folds; NaN when any fold failed."""
        maes = self.fold_maes(model, channel_mode)
        return float(np.mean(maes)) if maes else math.nan

    def overall_mean(self, model: str) -> float:
        """Mean of the per-channel-mode means."""
        means = [self.mean_mae(model, mode) for mode in self.channel_modes]
        return float(np.mean(means)) if means else math.nan

    def total_fit_time(self, model: str, channel_mode: str) -> float:
        return float(sum(
            r.fit_time_s for r in self.results if r.model == model and r.channel_mode == channel_mode
        ))

    def predictions_for(self, channel_mode: str) -> Optional[OutOfFold]:
        for oof in self.out_of_fold:
            if oof.channel_mode == channel_mode:
                return oof
        return None


class CurvePoint(BaseModel):
    n_train: int
    train_mae_km: float
    valid_mae_km: float
    fit_time_s: float
    cumulative_time_s: float


class LearningCurve(BaseModel):
    model: str
    channel_mode: str
    points: List[CurvePoint] = Field(default_factory=list)

    @property
    def sizes(self) -> List[int]:
        return [p.n_train for p in self.points]


class ClassificationFold(BaseModel):
    fold: int
    n_valid: int
    accuracy: float
    tp: int
    fp: int
    tn: int
    fn: int


class ClassificationReport(BaseModel):
    channel_mode: str
    folds: List[ClassificationFold] = Field(default_factory=list)

    @property
    def confusion(self) -> Dict[str, int]:
        return {
            key: sum(getattr(f, key) for f in self.folds) for key in ("tp", "fp", "tn", "fn")
        }

    @property
    def accuracy(self) -> float:
        """Pooled accuracy over every validation row."""
        counts = self.confusion
        total = sum(counts.values())
        return (counts["tp"] + counts["tn"]) / total if total else math.nan


class NoiseRow(BaseModel):
    snr_db: float
    channel_mode: str
    model: str
    mean_mae_km: float
    std_mae_km: float


class NoiseTable(BaseModel):
    rows: List[NoiseRow] = Field(default_factory=list)

    def mean_mae(self, snr_db: float, model: str) -> float:
        """Average over channel modes at one noise level."""
        values = [r.mean_mae_km for r in self.rows if r.snr_db == snr_db and r.model == model]
        return float(np.mean(values)) if values else math.nan


class SensitivityRow(BaseModel):
    channel_mode: str
    model: str
    factor: str
    bin_low: float
    bin_high: float
    n: int
    mae_km: float


class SensitivityTable(BaseModel):
    rows: List[SensitivityRow] = Field(default_factory=list)


class ImpedanceRow(BaseModel):
    scenario_id: int
    branch_index: int
    distance_km: float
    fault_resistance: float
    limiting_inductance: float
    estimate_oracle_km: float
    estimate_blind_km: float
    error_oracle_km: float
    error_blind_km: float


class ImpedanceTable(BaseModel):
    rf_assumed: float
    path_length_km: float
    rows: List[ImpedanceRow] = Field(default_factory=list)

    def mean_abs_error(self, mode: str = "oracle") -> float:
        attr = "error_oracle_km" if mode == "oracle" else "error_blind_km"
        values = [abs(getattr(r, attr)) for r in self.rows]
        return float(np.mean(values)) if values else math.nan


class PredictionRow(BaseModel):
    scenario_id: int
    distance_km: float
    estimate_km: float
    error_km: float


class PredictionTable(BaseModel):
    model: str
    channel_mode: str
    rows: List[PredictionRow] = Field(default_factory=list)

    @property
    def mae_km(self) -> float:
        values = [abs(r.error_km) for r in self.rows]
        return float(np.mean(values)) if values else math.nan
