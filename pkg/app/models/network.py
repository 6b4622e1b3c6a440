"""
Network and Scenario Models

Pydantic schemas for the radial three-terminal network, the scenario parameter
ranges and the labeled scenarios, plus the waveform container produced by the
transient simulator.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.config.settings import settings

NOMINAL_VOLTAGE = 640e3
DEFAULT_LOAD_CONDUCTANCE = 500e6 / NOMINAL_VOLTAGE ** 2
N_TERMINALS = 3

FAULT_RESISTANCE_BOUNDS = (0.01, 200.0)
LIMITING_INDUCTANCE_BOUNDS = (1e-3, 200e-3)
NON_FAULT_LABEL = "non-fault"


class LineParams(BaseModel):
    """Per-km constants of one radial branch and its lumped discretization."""
    model_config = ConfigDict(frozen=True)

    r_per_km: float = Field(0.03206, gt=0, description="Resistance in ohm/km")
    l_per_km: float = Field(0.86e-3, gt=0, description="Inductance in H/km")
    c_per_km: float = Field(0.012e-6, gt=0, description="Capacitance in F/km")
    length_km: float = Field(..., gt=0, description="Branch length in km")
    n_sections: int = Field(..., ge=10, description="Number of cascaded pi-sections")

    @property
    def section_length_km(self) -> float:
        return self.length_km / self.n_sections

    @property
    def travel_time_per_km(self) -> float:
        """Wave travel time per km, sqrt(l*c), in seconds."""
        return math.sqrt(self.l_per_km * self.c_per_km)

    @property
    def section_travel_time(self) -> float:
        return self.section_length_km * self.travel_time_per_km


def _default_branches() -> List[LineParams]:
    return [
        LineParams(length_km=400.0, n_sections=40),
        LineParams(length_km=300.0, n_sections=30),
        LineParams(length_km=300.0, n_sections=30),
    ]


class NetworkConfig(BaseModel):
    """Radial monopole network: three terminals joined by three branches at one junction."""
    model_config = ConfigDict(frozen=True)

    nominal_voltage: float = Field(NOMINAL_VOLTAGE, gt=0, description="DC pole-to-pole voltage in V")
    branches: List[LineParams] = Field(default_factory=_default_branches)
    source_resistance: List[float] = Field(default_factory=lambda: [0.5, 0.5, 0.5])
    source_enabled: List[bool] = Field(default_factory=lambda: [True, True, True])
    converter_capacitance: float = Field(100e-6, gt=0, description="Converter dc-side capacitance in F")
    limiting_inductance: float = Field(0.1, gt=0, description="Series inductor at each terminal in H")
    measuring_terminal: int = Field(0, ge=0, le=N_TERMINALS - 1)
    load_conductances: List[float] = Field(
        default_factory=lambda: [0.0, DEFAULT_LOAD_CONDUCTANCE, DEFAULT_LOAD_CONDUCTANCE]
    )

    @field_validator("branches", "source_resistance", "source_enabled", "load_conductances")
    @classmethod
    def _three_terminals(cls, value: list) -> list:
        if len(value) != N_TERMINALS:
            raise ValueError(f"expected {N_TERMINALS} entries, got {len(value)}")
        return value

    @field_validator("source_resistance")
    @classmethod
    def _positive_resistance(cls, value: List[float]) -> List[float]:
        if any(r <= 0 for r in value):
            raise ValueError(f"source resistances must be positive: {value}")
        return value

    @field_validator("load_conductances")
    @classmethod
    def _non_negative_loads(cls, value: List[float]) -> List[float]:
        if any(g < 0 for g in value):
            raise ValueError(f"load conductances must be non-negative: {value}")
        return value

    def path_length(self, branch_index: int) -> float:
        """Length from the measuring terminal to the far end of a branch, in km."""
        measuring = self.branches[self.measuring_terminal].length_km
        if branch_index == self.measuring_terminal:
            return measuring
        return measuring + self.branches[branch_index].length_km


class ScenarioRanges(BaseModel):
    """Sampling ranges for scenario generation; each pair is (min, max)."""
    fault_resistance: Tuple[float, float] = FAULT_RESISTANCE_BOUNDS
    limiting_inductance: Tuple[float, float] = LIMITING_INDUCTANCE_BOUNDS
    load_step_fraction: Tuple[float, float] = (0.10, 0.50)
    inception_time: Tuple[float, float] = Field(
        default_factory=lambda: (settings.SIMULATION.INCEPTION_TIME, settings.SIMULATION.INCEPTION_TIME)
    )

    @model_validator(mode="after")
    def _check_ranges(self) -> "ScenarioRanges":
        for name in ("fault_resistance", "limiting_inductance", "load_step_fraction", "inception_time"):
            low, high = getattr(self, name)
            if not low <= high:
                raise ValueError(f"{name} range is empty: ({low}, {high})")
        lo, hi = self.fault_resistance
        if lo < FAULT_RESISTANCE_BOUNDS[0] or hi > FAULT_RESISTANCE_BOUNDS[1]:
            raise ValueError(f"fault_resistance must lie within {FAULT_RESISTANCE_BOUNDS} ohm")
        lo, hi = self.limiting_inductance
        if lo < LIMITING_INDUCTANCE_BOUNDS[0] or hi > LIMITING_INDUCTANCE_BOUNDS[1]:
            raise ValueError(f"limiting_inductance must lie within {LIMITING_INDUCTANCE_BOUNDS} H")
        lo, hi = self.load_step_fraction
        if lo < 0 or hi >= 1:
            raise ValueError("load_step_fraction magnitudes must lie in [0, 1)")
        if self.inception_time[0] <= 0:
            raise ValueError("inception_time must be positive")
        return self


class EventKind(str, Enum):
    POLE_TO_POLE = "pole-to-pole"
    LOAD_STEP = "load-step"


class FaultScenario(BaseModel):
    """One labeled simulation event."""
    model_config = ConfigDict(frozen=True)

    scenario_id: int = Field(0, ge=0)
    kind: EventKind
    branch_index: int = Field(..., ge=0, le=N_TERMINALS - 1)
    distance_km: Optional[float] = Field(None, description="Distance from the measuring terminal along its path")
    fault_resistance: Optional[float] = Field(None, description="R_F in ohm")
    inception_time: float = Field(0.02, gt=0)
    limiting_inductance: float = Field(0.1, gt=0)
    load_step_fraction: float = Field(0.0, gt=-1.0)

    @model_validator(mode="after")
    def _check_kind(self) -> "FaultScenario":
        if self.kind is EventKind.POLE_TO_POLE:
            if self.fault_resistance is None or self.distance_km is None:
                raise ValueError("fault scenarios need distance_km and fault_resistance")
            lo, hi = FAULT_RESISTANCE_BOUNDS
            if not lo <= self.fault_resistance <= hi:
                raise ValueError(f"fault_resistance {self.fault_resistance} outside [{lo}, {hi}] ohm")
            if self.distance_km <= 0:
                raise ValueError(f"distance_km must be positive, got {self.distance_km}")
        return self

    @property
    def is_fault(self) -> bool:
        return self.kind is EventKind.POLE_TO_POLE

    @property
    def label(self) -> Union[float, str]:
        """Regression target for faults, the non-fault class otherwise."""
        return float(self.distance_km) if self.is_fault else NON_FAULT_LABEL


@dataclass
class WaveformRecord:
    """Terminal voltage and current sampled at a fixed rate for one scenario."""
    dt_output: float
    voltage: np.ndarray
    current: np.ndarray
    scenario: FaultScenario
    fault_current: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.voltage = np.asarray(self.voltage, dtype=float)
        self.current = np.asarray(self.current, dtype=float)
        if self.voltage.shape != self.current.shape:
            raise ValueError(
                f"voltage and current lengths differ: {self.voltage.size} != {self.current.size}"
            )
        if self.fault_current is None:
            self.fault_current = np.zeros_like(self.voltage)
        else:
            self.fault_current = np.asarray(self.fault_current, dtype=float)

    def __len__(self) -> int:
        return int(self.voltage.size)

    @property
    def duration(self) -> float:
        return len(self) * self.dt_output

    @property
    def time(self) -> np.ndarray:
        return np.arange(len(self)) * self.dt_output

    @property
    def inception_index(self) -> int:
        """Index of the first output sample at or after the event."""
        return int(math.ceil(self.scenario.inception_time / self.dt_output - 1e-9))

    @property
    def post_event_index(self) -> int:
        """Index of the first output sample strictly after the event."""
        return int(math.floor(self.scenario.inception_time / self.dt_output + 1e-9)) + 1


class ManifestEntry(BaseModel):
    """One waveform file and the scenario that produced it."""
    file: str
    scenario: FaultScenario
    label: Union[float, str]
    fault_current: List[float]


class WaveformManifest(BaseModel):
    network: NetworkConfig
    dt_output: float = Field(..., gt=0)
    records: List[ManifestEntry] = Field(default_factory=list)
