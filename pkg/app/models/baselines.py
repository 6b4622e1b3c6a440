"""
Baseline Models

Fitted parameter containers for the comparison regressors and the inputs of
the single-ended impedance locator.
"""

from dataclasses import dataclass

import numpy as np

from app.models.ensemble import TreeNode


@dataclass(frozen=True)
class ImpedanceInputs:
    """Terminal measurements plus line data for V_S = m Z_l I_S + R_F I_F."""
    v_s: float
    i_s: float
    i_f: float
    r_f_assumed: float
    z_total: float
    line_length: float


@dataclass(frozen=True)
class MeanModel:
    value: float
    n_features: int


@dataclass(frozen=True)
class OlsModel:
    weights: np.ndarray
    intercept: float
    jittered: bool = False

    @property
    def n_features(self) -> int:
        return int(self.weights.size)


@dataclass(frozen=True)
class KnnModel:
    X: np.ndarray
    y: np.ndarray
    k: int = 5

    @property
    def n_features(self) -> int:
        return int(self.X.shape[1])


@dataclass(frozen=True)
class TreeModel:
    root: TreeNode
    n_features: int
