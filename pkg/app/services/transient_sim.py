"""
Transient Simulator

Lumped cascaded-section model of the radial three-terminal DC network. Each
branch is a chain of series R-L sections with half the section capacitance
lumped at both ends; each terminal is an ideal source behind its source
resistance feeding a converter capacitor, joined to the line through the
current-limiting inductor. States are node voltages and inductor currents,
integrated with the trapezoidal rule.
"""

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import logfire
import numpy as np
import pandas as pd
from pydantic import ValidationError
from scipy import linalg

from app.config.settings import settings
from app.core.errors import FaultLocatorError
from app.models.network import (
    N_TERMINALS,
    EventKind,
    FaultScenario,
    ManifestEntry,
    NetworkConfig,
    ScenarioRanges,
    WaveformManifest,
    WaveformRecord,
)
from app.utils.logger import get_logger
from app.utils.observability import track_performance

logger = get_logger(__name__)

MANIFEST_NAME = "manifest.json"
WAVEFORM_COLUMNS = ["t", "v", "i"]


class SimulationError(FaultLocatorError):
    """Raised for invalid networks, unreachable faults and numerical divergence."""
    pass


@dataclass
class NetworkLayout:
    """Node and inductor indexing of a built network."""
    n_nodes: int
    n_inductors: int
    converter_nodes: Tuple[int, ...]
    junction_node: int
    branch_nodes: List[np.ndarray]
    branch_positions: List[np.ndarray]
    limiter_index: Tuple[int, ...]
    incidence: np.ndarray
    capacitance: np.ndarray
    inductance: np.ndarray
    resistance: np.ndarray

    def line_node(self, terminal: int) -> int:
        """Relay node on the line side of a terminal's limiter."""
        return int(self.branch_nodes[terminal][0])


@dataclass
class SimState:
    network: NetworkConfig
    layout: NetworkLayout
    voltages: np.ndarray
    currents: np.ndarray
    dt_internal: float
    dt_output: float
    time: float = 0.0

    @property
    def n_nodes(self) -> int:
        return self.layout.n_nodes

    @property
    def steps_per_sample(self) -> int:
        return int(round(self.dt_output / self.dt_internal))

    def copy(self) -> "SimState":
        return replace(self, voltages=self.voltages.copy(), currents=self.currents.copy())


def _internal_step(network: NetworkConfig, dt_output: float, max_dt_internal: float) -> float:
    """Largest step dividing dt_output evenly that stays under the section travel-time bound."""
    bound = min(max_dt_internal, min(b.section_travel_time for b in network.branches) / 2.0)
    ratio = math.ceil(dt_output / bound - 1e-9)
    return dt_output / max(1, ratio)


def _build_layout(network: NetworkConfig) -> NetworkLayout:
    converter_nodes = tuple(range(N_TERMINALS))
    junction = N_TERMINALS
    next_node = junction + 1

    branch_nodes: List[np.ndarray] = []
    branch_positions: List[np.ndarray] = []
    for branch in network.branches:
        nodes = np.arange(next_node, next_node + branch.n_sections)
        branch_nodes.append(nodes)
        branch_positions.append(np.arange(branch.n_sections) * branch.section_length_km)
        next_node += branch.n_sections
    n_nodes = next_node

    edges: List[Tuple[int, int]] = []
    inductance: List[float] = []
    resistance: List[float] = []
    capacitance = np.zeros(n_nodes)
    capacitance[list(converter_nodes)] = network.converter_capacitance

    limiter_index = []
    for terminal in range(N_TERMINALS):
        limiter_index.append(len(edges))
        edges.append((converter_nodes[terminal], int(branch_nodes[terminal][0])))
        inductance.append(network.limiting_inductance)
        resistance.append(0.0)

    for b, branch in enumerate(network.branches):
        dx = branch.section_length_km
        chain = list(branch_nodes[b]) + [junction]
        for start, end in zip(chain[:-1], chain[1:]):
            edges.append((int(start), int(end)))
            inductance.append(branch.l_per_km * dx)
            resistance.append(branch.r_per_km * dx)
            half_c = branch.c_per_km * dx / 2.0
            capacitance[start] += half_c
            capacitance[end] += half_c

    incidence = np.zeros((len(edges), n_nodes))
    for k, (start, end) in enumerate(edges):
        incidence[k, start] = 1.0
        incidence[k, end] = -1.0

    return NetworkLayout(
        n_nodes=n_nodes,
        n_inductors=len(edges),
        converter_nodes=converter_nodes,
        junction_node=junction,
        branch_nodes=branch_nodes,
        branch_positions=branch_positions,
        limiter_index=tuple(limiter_index),
        incidence=incidence,
        capacitance=capacitance,
        inductance=np.asarray(inductance),
        resistance=np.asarray(resistance),
    )


class TransientSolver:
    """
    Steps the network states with the trapezoidal rule.

    The affine one-step map x' = M x + c is factored once per topology. After a
    switching event the next step is replaced by two backward-Euler half steps
    (critical damping adjustment) so that the stiff fault mode does not ring.
    Advances over many steps use powers of the augmented map.
    """

    def __init__(self, state: SimState, limiting_inductance: Optional[float] = None):
        self.state = state
        layout = state.layout
        network = state.network

        self._source_g = np.zeros(layout.n_nodes)
        self._load_g = np.zeros(layout.n_nodes)
        self._injection = np.zeros(layout.n_nodes)
        for terminal, node in enumerate(layout.converter_nodes):
            if network.source_enabled[terminal]:
                self._source_g[node] = 1.0 / network.source_resistance[terminal]
                self._injection[node] = network.nominal_voltage / network.source_resistance[terminal]
            self._load_g[node] = network.load_conductances[terminal]
        self._fault_g = np.zeros(layout.n_nodes)
        self.fault: Optional[Tuple[int, float]] = None

        self._inductance = layout.inductance.copy()
        if limiting_inductance is not None:
            if limiting_inductance <= 0:
                raise SimulationError(f"limiting inductance must be positive, got {limiting_inductance}")
            self._inductance[list(layout.limiter_index)] = limiting_inductance

        self._half_b = np.zeros(layout.n_nodes + layout.n_inductors)
        self._damp_next = False
        self._map: Optional[Tuple[np.ndarray, np.ndarray, tuple]] = None
        self._powers: Dict[int, np.ndarray] = {}

    # ----- system assembly -----

    @property
    def h(self) -> float:
        return self.state.dt_internal

    @property
    def conductance(self) -> np.ndarray:
        return self._source_g + self._load_g + self._fault_g

    def _system(self) -> Tuple[np.ndarray, np.ndarray]:
        layout = self.state.layout
        c = layout.capacitance
        inc = layout.incidence
        top = np.hstack([-np.diag(self.conductance / c), -(inc.T / c[:, None])])
        bottom = np.hstack([inc / self._inductance[:, None], -np.diag(layout.resistance / self._inductance)])
        A = np.vstack([top, bottom])
        b = np.concatenate([self._injection / c, np.zeros(layout.n_inductors)])
        return A, b

    def _invalidate(self) -> None:
        self._map = None
        self._powers = {}
        self._damp_next = True

    def _one_step_map(self) -> Tuple[np.ndarray, np.ndarray, tuple]:
        if self._map is None:
            A, b = self._system()
            n = A.shape[0]
            half = 0.5 * self.h * A
            lu = linalg.lu_factor(np.eye(n) - half)
            M = linalg.lu_solve(lu, np.eye(n) + half)
            c = linalg.lu_solve(lu, self.h * b)
            self._map = (M, c, lu)
            self._half_b = 0.5 * self.h * b
        return self._map

    def _power(self, n_steps: int) -> np.ndarray:
        if n_steps not in self._powers:
            M, c, _ = self._one_step_map()
            size = M.shape[0]
            augmented = np.zeros((size + 1, size + 1))
            augmented[:size, :size] = M
            augmented[:size, size] = c
            augmented[size, size] = 1.0
            self._powers[n_steps] = np.linalg.matrix_power(augmented, n_steps)
        return self._powers[n_steps]

    # ----- state access -----

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([self.state.voltages, self.state.currents])

    def _store(self, x: np.ndarray, n_steps: int) -> None:
        if not np.all(np.isfinite(x)):
            raise SimulationError(
                f"non-finite state at t={self.state.time + n_steps * self.h:.6e} s "
                f"(dt_internal={self.h:.3e} s)"
            )
        n = self.state.layout.n_nodes
        self.state.voltages = x[:n]
        self.state.currents = x[n:]
        self.state.time += n_steps * self.h

    def steady_state(self) -> np.ndarray:
        """DC operating point of the current topology."""
        if self.conductance.sum() <= 0:
            raise SimulationError("no shunt path to ground: every terminal is open")
        A, b = self._system()
        try:
            x = linalg.solve(A, -b)
        except (linalg.LinAlgError, ValueError) as e:
            raise SimulationError(f"singular steady-state solve: {e}")
        if not np.all(np.isfinite(x)):
            raise SimulationError("steady-state solve produced non-finite values")
        return x

    # ----- stepping -----

    def step(self) -> None:
        M, c, lu = self._one_step_map()
        if self._damp_next:
            x = self.x
            for _ in range(2):
                x = linalg.lu_solve(lu, x + self._half_b)
            self._damp_next = False
        else:
            x = M @ self.x + c
        self._store(x, 1)

    def advance(self, n_steps: int) -> None:
        """Advance by n internal steps."""
        if n_steps <= 0:
            return
        if self._damp_next:
            self.step()
            n_steps -= 1
        if n_steps == 0:
            return
        if n_steps == 1:
            self.step()
            return
        P = self._power(n_steps)
        size = P.shape[0] - 1
        self._store(P[:size, :size] @ self.x + P[:size, size], n_steps)

    # ----- switching -----

    def apply_fault(self, node: int, resistance: float) -> None:
        if resistance <= 0:
            raise SimulationError(f"fault resistance must be positive, got {resistance}")
        self._fault_g = np.zeros_like(self._fault_g)
        self._fault_g[node] = 1.0 / resistance
        self.fault = (node, resistance)
        self._invalidate()

    def set_load(self, terminal: int, conductance: float) -> None:
        if conductance < 0:
            raise SimulationError(f"load conductance must be non-negative, got {conductance}")
        self._load_g[self.state.layout.converter_nodes[terminal]] = conductance
        self._invalidate()

    def load(self, terminal: int) -> float:
        return float(self._load_g[self.state.layout.converter_nodes[terminal]])

    def remove_sources(self) -> None:
        """Zero every source EMF; the source resistances stay as passive shunts."""
        self._injection = np.zeros_like(self._injection)
        self._invalidate()

    # ----- observables -----

    def stored_energy(self) -> float:
        layout = self.state.layout
        return float(
            0.5 * np.sum(layout.capacitance * self.state.voltages ** 2)
            + 0.5 * np.sum(self._inductance * self.state.currents ** 2)
        )

    def measure(self, terminal: int) -> Tuple[float, float, float]:
        """Relay voltage, limiter current and fault current."""
        layout = self.state.layout
        v = float(self.state.voltages[layout.line_node(terminal)])
        i = float(self.state.currents[layout.limiter_index[terminal]])
        i_f = 0.0
        if self.fault is not None:
            node, resistance = self.fault
            i_f = float(self.state.voltages[node] / resistance)
        return v, i, i_f


def build_network(
    config: NetworkConfig,
    dt_output: Optional[float] = None,
    max_dt_internal: Optional[float] = None,
) -> SimState:
    """
    Lay out the network and initialize it at its DC operating point.

    Args:
        config: Network description
        dt_output: Output sample period, defaults to settings
        max_dt_internal: Upper bound on the integration step, defaults to settings

    Returns:
        SimState at steady state

    Raises:
        SimulationError: If a parameter is non-positive or the steady state is singular
    """
    dt_output = dt_output if dt_output is not None else settings.SIMULATION.DT_OUTPUT
    max_dt_internal = max_dt_internal if max_dt_internal is not None else settings.SIMULATION.MAX_DT_INTERNAL
    if dt_output <= 0 or max_dt_internal <= 0:
        raise SimulationError(f"time steps must be positive: dt_output={dt_output}, max_dt={max_dt_internal}")
    for b, branch in enumerate(config.branches):
        if min(branch.r_per_km, branch.l_per_km, branch.c_per_km, branch.length_km) <= 0:
            raise SimulationError(f"branch {b} has a non-positive line parameter")

    layout = _build_layout(config)
    dt_internal = _internal_step(config, dt_output, max_dt_internal)
    state = SimState(
        network=config,
        layout=layout,
        voltages=np.zeros(layout.n_nodes),
        currents=np.zeros(layout.n_inductors),
        dt_internal=dt_internal,
        dt_output=dt_output,
    )
    x = TransientSolver(state).steady_state()
    state.voltages = x[:layout.n_nodes]
    state.currents = x[layout.n_nodes:]

    logger.debug(
        "Network built: nodes=%d inductors=%d dt_internal=%.3e",
        layout.n_nodes, layout.n_inductors, dt_internal,
    )
    return state


def fault_node(state: SimState, branch_index: int, distance_km: float) -> int:
    """
    Nearest node of the faulted branch to a distance measured from the measuring terminal.

    Raises:
        SimulationError: If the distance lies outside the branch's path
    """
    network = state.network
    layout = state.layout
    path = network.path_length(branch_index)
    if not 0 < distance_km <= path + 1e-9:
        raise SimulationError(
            f"fault at {distance_km} km is unreachable on branch {branch_index} (path {path} km)"
        )

    branch = network.branches[branch_index]
    if branch_index == network.measuring_terminal:
        position = distance_km
    else:
        beyond_junction = distance_km - network.branches[network.measuring_terminal].length_km
        if beyond_junction < 0:
            raise SimulationError(
                f"fault at {distance_km} km does not reach branch {branch_index} past the junction"
            )
        position = branch.length_km - beyond_junction

    positions = np.append(layout.branch_positions[branch_index], branch.length_km)
    nodes = np.append(layout.branch_nodes[branch_index], layout.junction_node)
    return int(nodes[int(np.argmin(np.abs(positions - position)))])


def _apply_event(solver: TransientSolver, state: SimState, scenario: FaultScenario) -> None:
    if scenario.kind is EventKind.POLE_TO_POLE:
        node = fault_node(state, scenario.branch_index, scenario.distance_km)  # type: ignore[arg-type]
        solver.apply_fault(node, scenario.fault_resistance)  # type: ignore[arg-type]
    else:
        terminal = scenario.branch_index
        solver.set_load(terminal, solver.load(terminal) * (1.0 + scenario.load_step_fraction))


def simulate(
    state: SimState,
    scenario: FaultScenario,
    duration: Optional[float] = None,
) -> WaveformRecord:
    """
    Simulate one scenario from the steady state held in `state`.

    The input state is not modified. Output samples are every k-th internal
    step, k = dt_output / dt_internal.

    Args:
        state: Steady-state network from build_network
        scenario: Event to apply at its inception time
        duration: Window length in seconds, defaults to settings

    Returns:
        WaveformRecord of the measuring terminal

    Raises:
        SimulationError: On an unreachable fault, a bad window or divergence
    """
    duration = duration if duration is not None else settings.SIMULATION.DURATION
    if not 0 < scenario.inception_time < duration:
        raise SimulationError(
            f"inception time {scenario.inception_time} s outside the {duration} s window"
        )
    if scenario.kind is EventKind.POLE_TO_POLE:
        fault_node(state, scenario.branch_index, scenario.distance_km)  # type: ignore[arg-type]

    local = state.copy()
    solver = TransientSolver(local, limiting_inductance=scenario.limiting_inductance)
    k = local.steps_per_sample
    n_samples = int(round(duration / local.dt_output))
    event_step = int(round(scenario.inception_time / local.dt_internal))
    terminal = local.network.measuring_terminal

    voltage = np.empty(n_samples)
    current = np.empty(n_samples)
    fault_current = np.empty(n_samples)
    step = 0
    applied = False
    for j in range(n_samples):
        target = j * k
        if not applied and event_step <= target:
            solver.advance(event_step - step)
            step = event_step
            _apply_event(solver, local, scenario)
            applied = True
        solver.advance(target - step)
        step = target
        voltage[j], current[j], fault_current[j] = solver.measure(terminal)

    logfire.debug(
        "Scenario simulated",
        scenario_id=scenario.scenario_id,
        kind=scenario.kind.value,
        n_samples=n_samples,
    )
    return WaveformRecord(
        dt_output=local.dt_output,
        voltage=voltage,
        current=current,
        scenario=scenario,
        fault_current=fault_current,
    )


def _simulate_one(args: Tuple[SimState, FaultScenario, Optional[float]]) -> WaveformRecord:
    state, scenario, duration = args
    return simulate(state, scenario, duration)


@track_performance("simulation", "batch")
def simulate_batch(
    state: SimState,
    scenarios: Sequence[FaultScenario],
    duration: Optional[float] = None,
    jobs: int = 1,
) -> List[WaveformRecord]:
    """Simulate independent scenarios, optionally across worker processes; order is preserved."""
    logfire.info("Simulating scenario batch", n_scenarios=len(scenarios), jobs=jobs)
    work = [(state, scenario, duration) for scenario in scenarios]
    if jobs <= 1 or len(work) <= 1:
        return [_simulate_one(item) for item in work]
    chunksize = max(1, len(work) // (4 * jobs))
    with ProcessPoolExecutor(max_workers=jobs) as executor:
        return list(executor.map(_simulate_one, work, chunksize=chunksize))


def _log_uniform(rng: np.random.Generator, low: float, high: float) -> float:
    if low == high:
        return float(low)
    return float(np.clip(math.exp(rng.uniform(math.log(low), math.log(high))), low, high))


def _uniform(rng: np.random.Generator, low: float, high: float) -> float:
    if low == high:
        return float(low)
    return float(rng.uniform(low, high))


def generate_scenarios(
    seed: int,
    n_fault: int,
    n_nonfault: int,
    ranges: Optional[ScenarioRanges] = None,
    network: Optional[NetworkConfig] = None,
) -> List[FaultScenario]:
    """
    Draw labeled scenarios; faults first, then load steps, ids sequential.

    Fault positions are uniform over the whole radial network and expressed as
    distance from the measuring terminal along the path through the faulted
    branch. R_F is log-uniform, the limiting inductance uniform, load steps
    uniform in magnitude with a random sign at a non-measuring terminal.

    Raises:
        SimulationError: On negative or all-zero counts or empty ranges
    """
    if n_fault < 0 or n_nonfault < 0 or n_fault + n_nonfault == 0:
        raise SimulationError(f"scenario counts must be non-negative and not both zero: {n_fault}, {n_nonfault}")
    try:
        ranges = ScenarioRanges.model_validate((ranges or ScenarioRanges()).model_dump())
    except ValidationError as e:
        raise SimulationError(f"invalid scenario ranges: {e}")
    network = network or NetworkConfig()

    rng = np.random.default_rng(seed)
    measuring = network.measuring_terminal
    lengths = np.array([b.length_km for b in network.branches])
    offsets = np.concatenate([[0.0], np.cumsum(lengths)])
    total = float(offsets[-1])
    scenarios: List[FaultScenario] = []

    for _ in range(n_fault):
        position = float(np.clip(rng.uniform(0.0, total), 1e-9 * total, total * (1 - 1e-12)))
        branch = int(np.searchsorted(offsets, position, side="right") - 1)
        along = position - offsets[branch]
        if branch == measuring:
            distance = along
        else:
            distance = lengths[measuring] + (lengths[branch] - along)
        scenarios.append(FaultScenario(
            scenario_id=len(scenarios),
            kind=EventKind.POLE_TO_POLE,
            branch_index=branch,
            distance_km=float(distance),
            fault_resistance=_log_uniform(rng, *ranges.fault_resistance),
            limiting_inductance=_uniform(rng, *ranges.limiting_inductance),
            inception_time=_uniform(rng, *ranges.inception_time),
        ))

    loaded = [t for t in range(N_TERMINALS) if t != measuring and network.load_conductances[t] > 0]
    targets = loaded or [t for t in range(N_TERMINALS) if t != measuring]
    for _ in range(n_nonfault):
        terminal = int(targets[rng.integers(len(targets))])
        magnitude = _uniform(rng, *ranges.load_step_fraction)
        sign = 1.0 if rng.random() < 0.5 else -1.0
        scenarios.append(FaultScenario(
            scenario_id=len(scenarios),
            kind=EventKind.LOAD_STEP,
            branch_index=terminal,
            load_step_fraction=sign * magnitude,
            limiting_inductance=_uniform(rng, *ranges.limiting_inductance),
            inception_time=_uniform(rng, *ranges.inception_time),
        ))

    logfire.info("Scenarios generated", seed=seed, n_fault=n_fault, n_nonfault=n_nonfault)
    return scenarios


def add_noise(record: WaveformRecord, snr_db: Optional[float], seed: int) -> WaveformRecord:
    """
    Add white Gaussian noise to voltage and current at a given SNR.

    Noise variance per channel is mean(x^2) / 10^(snr_db/10). None or +inf
    returns the record unchanged. The fault-current oracle stays clean.
    """
    if snr_db is None or (math.isinf(snr_db) and snr_db > 0):
        return record
    if not math.isfinite(snr_db):
        raise SimulationError(f"snr_db must be finite or +inf, got {snr_db}")

    rng = np.random.default_rng(seed)
    ratio = 10.0 ** (snr_db / 10.0)
    noisy = []
    for signal in (record.voltage, record.current):
        sigma = math.sqrt(float(np.mean(signal ** 2)) / ratio)
        noisy.append(signal + rng.normal(0.0, sigma, size=signal.size))
    return replace(record, voltage=noisy[0], current=noisy[1])


# ----- waveform files -----

def _record_filename(scenario_id: int) -> str:
    return f"scenario_{scenario_id:05d}.csv"


def save_waveforms(
    records: Sequence[WaveformRecord],
    directory: Union[str, Path],
    network: NetworkConfig,
) -> Path:
    """
    Write one `t,v,i` CSV per record plus a JSON manifest.

    Returns:
        Path of the manifest

    Raises:
        SimulationError: If the directory cannot be written
    """
    out = Path(directory)
    entries = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        for record in records:
            name = _record_filename(record.scenario.scenario_id)
            frame = pd.DataFrame({"t": record.time, "v": record.voltage, "i": record.current})
            frame.to_csv(out / name, index=False, float_format="%.17g")
            entries.append(ManifestEntry(
                file=name,
                scenario=record.scenario,
                label=record.scenario.label,
                fault_current=record.fault_current.tolist(),
            ))
        dt_output = records[0].dt_output if records else settings.SIMULATION.DT_OUTPUT
        manifest = WaveformManifest(network=network, dt_output=dt_output, records=entries)
        manifest_path = out / MANIFEST_NAME
        manifest_path.write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
    except OSError as e:
        raise SimulationError(f"cannot write waveforms to {out}: {e}")

    logfire.info("Waveforms saved", directory=str(out), n_records=len(entries))
    return manifest_path


def load_waveforms(directory: Union[str, Path]) -> Tuple[List[WaveformRecord], NetworkConfig]:
    """
    Read records written by save_waveforms.

    Raises:
        SimulationError: On a missing or malformed manifest or waveform file
    """
    src = Path(directory)
    manifest_path = src / MANIFEST_NAME
    try:
        manifest = WaveformManifest.model_validate(json.loads(manifest_path.read_text(encoding="utf-8")))
    except FileNotFoundError:
        raise SimulationError(f"no waveform manifest at {manifest_path}")
    except (OSError, json.JSONDecodeError, ValidationError) as e:
        raise SimulationError(f"malformed manifest {manifest_path}: {e}")

    records = []
    for entry in manifest.records:
        path = src / entry.file
        try:
            frame = pd.read_csv(path, float_precision="round_trip")
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise SimulationError(f"cannot read waveform {path}: {e}")
        if list(frame.columns) != WAVEFORM_COLUMNS:
            raise SimulationError(f"{path}: expected header {','.join(WAVEFORM_COLUMNS)}, got {','.join(frame.columns)}")
        if len(frame) != len(entry.fault_current):
            raise SimulationError(
                f"{path}: {len(frame)} samples but manifest lists {len(entry.fault_current)}"
            )
        records.append(WaveformRecord(
            dt_output=manifest.dt_output,
            voltage=frame["v"].to_numpy(dtype=float),
            current=frame["i"].to_numpy(dtype=float),
            scenario=entry.scenario,
            fault_current=np.asarray(entry.fault_current, dtype=float),
        ))
    return records, manifest.network
