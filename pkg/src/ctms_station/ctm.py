"""CTM-s: cell transmission model of a highway stretch with one service station.

A stretch of N cells exchanges flows limited by the triangular fundamental
diagram. A fraction ``station_ratio`` of the access-cell outflow enters the
service station, spends ``round(delta / T)`` steps there, and then queues to
merge back into the exit cell against the mainstream, with priority
``mainstream_priority`` for through traffic.

Variables (per step k, cells 1..N)::

    rho_i(k)          density                              [veh/km]
    phi_i(k)          flow entering cell i from i-1        [veh/h]
    Phi+_i, Phi-_i    total flow entering / leaving i      [veh/h]
    r_i, s_i          on-ramp / off-ramp flow              [veh/h]
    ss(k), rs(k)      flow into / out of the station       [veh/h]
    ell(k), e(k)      vehicles at the station / queuing    [veh]

Density update::

    rho_i(k+1) = rho_i(k) + T / L_i * (Phi+_i(k) - Phi-_i(k))
    Phi-_i = phi_{i+1} + s_i + ss_i,   Phi+_i = phi_i + r_i + rs_i

Station::

    ell(k+1) = ell(k) + T * (ss(k) - rs(k))
    e(k+1)   = e(k)   + T * (ss(k - d) - rs(k))
    D_s(k)   = min(ss(k - d) + e(k) / T, r_s_max)

The public :func:`simulate` runs a compiled kernel; :func:`step_with_flows`
is the plain-Python version of one step and is what the kernel is tested
against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Sequence

import numpy as np

from . import _kernel
from .errors import ConfigurationError, DomainError, SimulationError

DEFAULT_STEP_HOURS = 0.0025
HOURS_PER_DAY = 24.0


@dataclass(frozen=True)
class CellParams:
    """Physical parameters of one cell (triangular fundamental diagram)."""

    length_km: float
    free_flow_speed: float
    wave_speed: float
    capacity: float
    jam_density: float
    offramp_ratio: float = 0.0

    def __post_init__(self):
        for name in ("length_km", "free_flow_speed", "wave_speed", "capacity", "jam_density"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise DomainError(f"{name} must be positive and finite, got {value!r}")
        if not (0.0 <= self.offramp_ratio < 1.0):
            raise DomainError(f"offramp_ratio must lie in [0, 1), got {self.offramp_ratio!r}")
        if self.wave_speed >= self.free_flow_speed:
            raise DomainError(
                f"wave_speed ({self.wave_speed}) must be below free_flow_speed "
                f"({self.free_flow_speed})"
            )


@dataclass(frozen=True)
class StretchParams:
    """An ordered sequence of N >= 2 cells. Cell indices are 1-based."""

    cells: tuple[CellParams, ...]

    def __post_init__(self):
        object.__setattr__(self, "cells", tuple(self.cells))
        if len(self.cells) < 2:
            raise DomainError(f"a stretch needs at least 2 cells, got {len(self.cells)}")

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def cell(self, index: int) -> CellParams:
        """Cell by its 1-based index."""
        if not 1 <= index <= self.n_cells:
            raise DomainError(f"cell index {index} outside 1..{self.n_cells}")
        return self.cells[index - 1]

    @cached_property
    def lengths(self) -> np.ndarray:
        return np.array([c.length_km for c in self.cells], dtype=float)

    @cached_property
    def free_flow_speeds(self) -> np.ndarray:
        return np.array([c.free_flow_speed for c in self.cells], dtype=float)

    @cached_property
    def wave_speeds(self) -> np.ndarray:
        return np.array([c.wave_speed for c in self.cells], dtype=float)

    @cached_property
    def capacities(self) -> np.ndarray:
        return np.array([c.capacity for c in self.cells], dtype=float)

    @cached_property
    def jam_densities(self) -> np.ndarray:
        return np.array([c.jam_density for c in self.cells], dtype=float)

    @cached_property
    def offramp_ratios(self) -> np.ndarray:
        return np.array([c.offramp_ratio for c in self.cells], dtype=float)

    @property
    def max_step_hours(self) -> float:
        """Largest time step satisfying the CFL condition T * v_i <= L_i."""
        return float(np.min(self.lengths / self.free_flow_speeds))

    def free_flow_travel_time(self) -> float:
        """Sum of L_i / v_i in hours."""
        return float(np.sum(self.lengths / self.free_flow_speeds))

    def check_cfl(self, step_hours: float) -> None:
        if not step_hours > 0:
            raise ConfigurationError(f"time step must be positive, got {step_hours!r}")
        ratios = step_hours * self.free_flow_speeds / self.lengths
        worst = int(np.argmax(ratios))
        if ratios[worst] > 1.0:
            raise ConfigurationError(
                f"CFL violated: T={step_hours} h exceeds L/v={self.max_step_hours:.6g} h "
                f"(cell {worst + 1})"
            )


@dataclass(frozen=True, order=True)
class StationDesign:
    """Decision vector (i, j, delta, beta_s).

    ``service_time_min`` is the canonical storage for delta (minutes, the unit
    of the design bounds and report tables); ``service_time`` gives hours.
    """

    access_cell: int
    exit_cell: int
    service_time_min: float
    station_ratio: float

    def __post_init__(self):
        for name in ("access_cell", "exit_cell"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value:
                raise DomainError(f"{name} must be an integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        object.__setattr__(self, "service_time_min", float(self.service_time_min))
        object.__setattr__(self, "station_ratio", float(self.station_ratio))
        if not 1 <= self.access_cell < self.exit_cell:
            raise DomainError(
                f"need 1 <= access_cell < exit_cell, got ({self.access_cell}, {self.exit_cell})"
            )
        if not (math.isfinite(self.service_time_min) and self.service_time_min >= 0):
            raise DomainError(f"service_time must be >= 0, got {self.service_time_min!r} min")
        if not 0.0 <= self.station_ratio <= 1.0:
            raise DomainError(f"station_ratio must lie in [0, 1], got {self.station_ratio!r}")

    @property
    def service_time(self) -> float:
        """Average time spent at the station, hours."""
        return self.service_time_min / 60.0

    def lag_steps(self, step_hours: float) -> int:
        """Service delay as a whole number of steps, nearest-step rounding."""
        return int(math.floor(self.service_time / step_hours + 0.5))

    def as_vector(self) -> tuple[float, float, float, float]:
        return (float(self.access_cell), float(self.exit_cell),
                self.service_time_min, self.station_ratio)

    def check_against(self, stretch: StretchParams) -> None:
        if self.exit_cell > stretch.n_cells:
            raise DomainError(f"exit cell {self.exit_cell} beyond N={stretch.n_cells}")
        beta = stretch.cell(self.access_cell).offramp_ratio
        if self.station_ratio + beta > 1.0:
            raise DomainError(
                f"station_ratio + offramp_ratio at cell {self.access_cell} exceeds 1 "
                f"({self.station_ratio} + {beta})"
            )

    def __str__(self) -> str:
        return (f"({self.access_cell}, {self.exit_cell}, "
                f"{self.service_time_min:g} min, {self.station_ratio:g})")


@dataclass(frozen=True)
class FixedParams:
    """Parameters held fixed during design: p_ms, r_s_max, station span."""

    mainstream_priority: float = 0.95
    ramp_capacity: float = 1500.0
    station_cell_span: int = 2

    def __post_init__(self):
        if not 0.0 < self.mainstream_priority <= 1.0:
            raise DomainError(
                f"mainstream_priority must lie in (0, 1], got {self.mainstream_priority!r}")
        if not self.ramp_capacity > 0:
            raise DomainError(f"ramp_capacity must be positive, got {self.ramp_capacity!r}")
        if int(self.station_cell_span) != self.station_cell_span or self.station_cell_span < 1:
            raise DomainError(
                f"station_cell_span must be an integer >= 1, got {self.station_cell_span!r}")
        object.__setattr__(self, "station_cell_span", int(self.station_cell_span))

    def as_vector(self) -> tuple[float, float, float]:
        return (self.mainstream_priority, self.ramp_capacity, float(self.station_cell_span))


@dataclass(frozen=True, eq=False)
class DemandProfile:
    """External inputs: mainstream inflow phi_1(k) and optional on-ramp demand.

    ``onramp_demand`` has shape (horizon_steps, N) when given.
    """

    step_hours: float
    mainstream_inflow: np.ndarray
    onramp_demand: np.ndarray | None = None

    def __post_init__(self):
        inflow = np.asarray(self.mainstream_inflow, dtype=float)
        if inflow.ndim != 1 or inflow.size == 0:
            raise DomainError("mainstream_inflow must be a non-empty 1-D series")
        if not (np.all(np.isfinite(inflow)) and np.all(inflow >= 0)):
            raise DomainError("mainstream_inflow must be finite and >= 0")
        inflow.setflags(write=False)
        object.__setattr__(self, "mainstream_inflow", inflow)
        if self.onramp_demand is not None:
            ramps = np.asarray(self.onramp_demand, dtype=float)
            if ramps.ndim != 2 or ramps.shape[0] != inflow.size:
                raise DomainError(
                    f"onramp_demand must have shape ({inflow.size}, N), got {ramps.shape}")
            if not (np.all(np.isfinite(ramps)) and np.all(ramps >= 0)):
                raise DomainError("onramp_demand must be finite and >= 0")
            ramps.setflags(write=False)
            object.__setattr__(self, "onramp_demand", ramps)
        if not self.step_hours > 0:
            raise DomainError(f"step_hours must be positive, got {self.step_hours!r}")

    @property
    def horizon_steps(self) -> int:
        return int(self.mainstream_inflow.size)

    @classmethod
    def constant(cls, flow: float, horizon_steps: int,
                 step_hours: float = DEFAULT_STEP_HOURS) -> "DemandProfile":
        return cls(step_hours, np.full(horizon_steps, float(flow)))

    def __eq__(self, other):
        if not isinstance(other, DemandProfile):
            return NotImplemented
        if self.step_hours != other.step_hours:
            return False
        if not np.array_equal(self.mainstream_inflow, other.mainstream_inflow):
            return False
        if (self.onramp_demand is None) != (other.onramp_demand is None):
            return False
        return self.onramp_demand is None or np.array_equal(self.onramp_demand,
                                                            other.onramp_demand)


@dataclass(frozen=True, eq=False)
class SimState:
    """State x(k) of the CTM-s.

    ``service_buffer`` holds the station-entry flows ss(k-d), ..., ss(k-1),
    oldest first (empty when d = 0). ``origin_queue`` holds mainstream demand
    that cell 1 could not accept yet.
    """

    density: np.ndarray
    station_count: float = 0.0
    exit_queue: float = 0.0
    service_buffer: tuple[float, ...] = ()
    ramp_queues: np.ndarray | None = None
    origin_queue: float = 0.0

    def __post_init__(self):
        density = np.array(self.density, dtype=float)
        density.setflags(write=False)
        object.__setattr__(self, "density", density)
        queues = (np.zeros_like(density) if self.ramp_queues is None
                  else np.array(self.ramp_queues, dtype=float))
        queues.setflags(write=False)
        object.__setattr__(self, "ramp_queues", queues)
        object.__setattr__(self, "service_buffer", tuple(float(x) for x in self.service_buffer))

    @classmethod
    def empty(cls, stretch: StretchParams, design: StationDesign | None = None,
              step_hours: float = DEFAULT_STEP_HOURS) -> "SimState":
        """Empty network with a zero-filled service buffer."""
        lag = design.lag_steps(step_hours) if design is not None else 0
        return cls(np.zeros(stretch.n_cells), service_buffer=(0.0,) * lag)

    def vehicles(self, stretch: StretchParams) -> float:
        """Vehicles in cells, station and all queues."""
        return float(np.dot(self.density, stretch.lengths) + self.station_count
                     + self.ramp_queues.sum() + self.origin_queue)

    def check(self, stretch: StretchParams, atol: float = 1e-9) -> None:
        """Raise DomainError if a state invariant is violated."""
        if self.density.shape != (stretch.n_cells,):
            raise DomainError(
                f"density has shape {self.density.shape}, expected ({stretch.n_cells},)")
        if not np.all(np.isfinite(self.density)):
            raise DomainError("density contains non-finite values")
        if np.any(self.density < 0) or np.any(self.density > stretch.jam_densities):
            bad = int(np.argmax((self.density < 0) | (self.density > stretch.jam_densities)))
            raise DomainError(f"density of cell {bad + 1} outside [0, jam density]")
        if self.exit_queue < -atol or self.station_count < self.exit_queue - atol:
            raise DomainError(
                f"need station_count >= exit_queue >= 0, got {self.station_count}, "
                f"{self.exit_queue}")
        if any(x < 0 for x in self.service_buffer) or np.any(self.ramp_queues < 0) \
                or self.origin_queue < 0:
            raise DomainError("buffers and queues must be non-negative")

    def __eq__(self, other):
        if not isinstance(other, SimState):
            return NotImplemented
        return (np.array_equal(self.density, other.density)
                and self.station_count == other.station_count
                and self.exit_queue == other.exit_queue
                and self.service_buffer == other.service_buffer
                and np.array_equal(self.ramp_queues, other.ramp_queues)
                and self.origin_queue == other.origin_queue)


@dataclass(frozen=True, eq=False)
class StepFlows:
    """Flows realised during one step (veh/h) plus realised speeds (km/h)."""

    phi: np.ndarray          # phi_1..phi_{N+1}; phi_{N+1} leaves the stretch
    total_in: np.ndarray
    total_out: np.ndarray
    onramp: np.ndarray
    offramp: np.ndarray
    station_in: float
    station_out: float
    station_demand: float
    speed: np.ndarray


@dataclass(frozen=True, eq=False)
class SimTrajectory:
    """Time-indexed record of a simulated horizon.

    Row k holds the state at the start of step k and the flows realised during
    step k; ``final_state`` is the state after the last step.
    """

    step_hours: float
    density: np.ndarray
    phi: np.ndarray
    total_in: np.ndarray
    total_out: np.ndarray
    onramp: np.ndarray
    offramp: np.ndarray
    speed: np.ndarray
    ramp_queues: np.ndarray
    station_in: np.ndarray
    station_out: np.ndarray
    station_demand: np.ndarray
    station_count: np.ndarray
    exit_queue: np.ndarray
    origin_queue: np.ndarray
    initial_state: SimState
    final_state: SimState
    design: StationDesign | None = None

    @property
    def horizon_steps(self) -> int:
        return int(self.density.shape[0])

    @property
    def n_cells(self) -> int:
        return int(self.density.shape[1])

    def vehicle_balance(self, stretch: StretchParams, profile: DemandProfile) -> tuple[float, float]:
        """Return (residual, scale) of the whole-horizon vehicle balance.

        residual = initial stock + T * sum(inflow demand + on-ramp demand)
                   - T * sum(outflow of cell N + off-ramp flows) - final stock
        Stock counts cells, station and queues; scale is the largest term.
        """
        T = self.step_hours
        start = self.initial_state.vehicles(stretch)
        end = self.final_state.vehicles(stretch)
        entered = T * float(profile.mainstream_inflow.sum())
        if profile.onramp_demand is not None:
            entered += T * float(profile.onramp_demand.sum())
        left = T * float(self.phi[:, -1].sum() + self.offramp.sum())
        residual = start + entered - left - end
        scale = max(start, entered, left, end, 1.0)
        return residual, scale


# --------------------------------------------------------------------------
# fundamental-diagram closures
# --------------------------------------------------------------------------

def _check_density(cell: CellParams, density: float) -> None:
    if not (math.isfinite(density) and 0.0 <= density <= cell.jam_density):
        raise DomainError(f"density {density!r} outside [0, {cell.jam_density}]")


def cell_demand(cell: CellParams, density: float) -> float:
    """Sending function min(v * rho, q_max), veh/h."""
    _check_density(cell, density)
    return min(cell.free_flow_speed * density, cell.capacity)


def cell_supply(cell: CellParams, density: float) -> float:
    """Receiving function min(w * (rho_max - rho), q_max), veh/h."""
    _check_density(cell, density)
    return min(cell.wave_speed * (cell.jam_density - density), cell.capacity)


def _median(a: float, b: float, c: float) -> float:
    return max(min(a, b), min(max(a, b), c))


def merge_at_exit(mainstream_demand: float, station_demand: float, supply: float,
                  priority: float) -> tuple[float, float]:
    """Priority merge of mainstream and station flow into one cell.

    Without contention both demands pass. Otherwise each side gets the median
    of its demand, what the other side leaves, and its priority share.
    """
    for name, value in (("mainstream_demand", mainstream_demand),
                        ("station_demand", station_demand), ("supply", supply)):
        if not (math.isfinite(value) and value >= 0):
            raise DomainError(f"{name} must be finite and >= 0, got {value!r}")
    if not 0.0 < priority <= 1.0:
        raise DomainError(f"priority must lie in (0, 1], got {priority!r}")
    if mainstream_demand + station_demand <= supply:
        return mainstream_demand, station_demand
    main = _median(mainstream_demand, supply - station_demand, priority * supply)
    side = _median(station_demand, supply - mainstream_demand, (1.0 - priority) * supply)
    return main, side


def station_exit_demand(state: SimState, design: StationDesign, fixed: FixedParams,
                        step_hours: float, current_entry: float = 0.0) -> float:
    """Demand of vehicles trying to merge back: min(ss(k-d) + e/T, r_s_max).

    For d >= 1, ss(k-d) is the oldest buffer entry. For d = 0 it is the entry
    flow of the current step, which the caller passes as ``current_entry``.
    """
    lag = design.lag_steps(step_hours)
    if lag >= 1:
        if len(state.service_buffer) != lag:
            raise DomainError(
                f"service buffer holds {len(state.service_buffer)} entries, expected {lag}")
        past = state.service_buffer[0]
    else:
        past = current_entry
    return min(past + state.exit_queue / step_hours, fixed.ramp_capacity)


# --------------------------------------------------------------------------
# one step, plain Python
# --------------------------------------------------------------------------

def _loop_exit_demand(send_a, frac_a, ratio, supply_x, ramp_dem, priority, queued,
                      step_hours, rsmax) -> float:
    # Zero lag with exit = access + 1: solve y = g(y) by bisection, g non-increasing.
    def g(y):
        sec = ramp_dem + y
        if sec > 0.0:
            m = merge_at_exit(send_a, sec, supply_x, priority)[0]
        else:
            m = min(send_a, supply_x)
        return min(ratio * (m / frac_a) + queued / step_hours, rsmax)

    lo, hi = 0.0, g(0.0)
    if hi == 0.0:
        return 0.0
    for _ in range(_kernel._BISECTION_ITERS):
        y = 0.5 * (lo + hi)
        if g(y) >= y:
            lo = y
        else:
            hi = y
        if hi - lo <= 1e-13 * max(1.0, hi):
            break
    return lo


def step_with_flows(state: SimState, stretch: StretchParams, design: StationDesign | None,
                    fixed: FixedParams, inflow: float, onramp: Sequence[float] | None = None,
                    step_hours: float = DEFAULT_STEP_HOURS) -> tuple[SimState, StepFlows]:
    """Advance the state by one step and return the flows of that step.

    Order: sending/receiving functions, station exit demand, cell-by-cell
    inflows (merging mainstream with station and on-ramps where present),
    split reconstruction Phi-_i = phi_{i+1} / (1 - beta_i - beta_s_i),
    density update, station and queue bookkeeping, buffer shift.
    """
    stretch.check_cfl(step_hours)
    n = stretch.n_cells
    T = step_hours
    if design is not None:
        design.check_against(stretch)
        a, x = design.access_cell - 1, design.exit_cell - 1
        ratio, lag = design.station_ratio, design.lag_steps(T)
    else:
        a = x = -1
        ratio, lag = 0.0, 0
    if len(state.service_buffer) != lag:
        raise DomainError(f"service buffer holds {len(state.service_buffer)} entries, "
                          f"expected {lag}")
    if not (math.isfinite(inflow) and inflow >= 0):
        raise DomainError(f"inflow must be finite and >= 0, got {inflow!r}")
    ramps = [0.0] * n if onramp is None else [float(v) for v in onramp]
    if len(ramps) != n or any(not (math.isfinite(v) and v >= 0) for v in ramps):
        raise DomainError("onramp must hold N finite non-negative values")
    state.check(stretch)

    rho = [float(v) for v in state.density]
    rq = [float(v) for v in state.ramp_queues]
    cells = stretch.cells
    p_ms, rsmax = fixed.mainstream_priority, fixed.ramp_capacity
    e, ell, oq = state.exit_queue, state.station_count, state.origin_queue

    demand = [min(c.free_flow_speed * r, c.capacity) for c, r in zip(cells, rho)]
    frac = [1.0 - c.offramp_ratio for c in cells]
    if a >= 0:
        frac[a] -= ratio
    send = [f * d for f, d in zip(frac, demand)]
    supply = [min(c.wave_speed * (c.jam_density - r), c.capacity) for c, r in zip(cells, rho)]

    past = state.service_buffer[0] if lag >= 1 else 0.0
    origin_dem = inflow + oq / T
    phi = [0.0] * (n + 1)
    r = [0.0] * n
    s = [0.0] * n
    restricted = [False] * n
    ss_now = rs = ds = 0.0

    for c in range(n):
        mdem = origin_dem if c == 0 else send[c - 1]
        ramp_dem = ramps[c] + rq[c] / T if onramp is not None else 0.0
        sec = ramp_dem
        if c == x:
            if lag >= 1:
                ds = min(past + e / T, rsmax)
            elif c - 1 != a or frac[a] <= 0.0:
                ds = min(ss_now + e / T, rsmax)
            else:
                ds = _loop_exit_demand(send[a], frac[a], ratio, supply[c], ramp_dem,
                                       p_ms, e, T, rsmax)
            sec = ramp_dem + ds
        if sec > 0.0:
            m, sf = merge_at_exit(mdem, sec, supply[c], p_ms)
            if c == x:
                rs = sf * (ds / sec)
                r[c] = sf * (ramp_dem / sec)
            else:
                r[c] = sf
        else:
            m = min(mdem, supply[c])
        phi[c] = m
        if c >= 1:
            prev = c - 1
            restricted[prev] = m < send[prev]
            tot = m / frac[prev] if frac[prev] > 0.0 else demand[prev]
            s[prev] = cells[prev].offramp_ratio * tot
            if prev == a:
                ss_now = ratio * tot

    phi[n] = send[n - 1]
    tot = send[n - 1] / frac[n - 1] if frac[n - 1] > 0.0 else demand[n - 1]
    s[n - 1] = cells[n - 1].offramp_ratio * tot
    if lag == 0:
        past = ss_now

    t_in = [0.0] * n
    t_out = [0.0] * n
    speed = [0.0] * n
    new_rho = [0.0] * n
    for c, cell in enumerate(cells):
        t_out[c] = phi[c + 1] + s[c] + (ss_now if c == a else 0.0)
        t_in[c] = phi[c] + r[c] + (rs if c == x else 0.0)
        if rho[c] <= 0.0:
            speed[c] = cell.free_flow_speed
        elif not restricted[c] and cell.free_flow_speed * rho[c] <= cell.capacity:
            speed[c] = cell.free_flow_speed
        else:
            speed[c] = min(cell.free_flow_speed, t_out[c] / rho[c])
        new_rho[c] = rho[c] + (T / cell.length_km) * (t_in[c] - t_out[c])
        if not math.isfinite(new_rho[c]) or new_rho[c] < 0.0 or new_rho[c] > cell.jam_density:
            raise SimulationError(f"density of cell {c + 1} left [0, jam] ({new_rho[c]!r})",
                                  design=design)
    if min(phi) < 0 or min(r) < 0 or min(s) < 0 or ss_now < 0 or rs < 0:
        raise SimulationError("negative flow", design=design)

    new_ell = ell + T * (ss_now - rs)
    new_e = 0.0 if rs >= past + e / T else e + T * (past - rs)
    buffer = state.service_buffer[1:] + (ss_now,) if lag >= 1 else ()
    new_rq = [0.0 if r[c] >= ramps[c] + rq[c] / T else rq[c] + T * (ramps[c] - r[c])
              for c in range(n)] if onramp is not None else rq
    new_oq = 0.0 if phi[0] >= origin_dem else oq + T * (inflow - phi[0])

    nxt = SimState(np.array(new_rho), new_ell, new_e, buffer, np.array(new_rq), new_oq)
    flows = StepFlows(np.array(phi), np.array(t_in), np.array(t_out), np.array(r),
                      np.array(s), ss_now, rs, ds, np.array(speed))
    return nxt, flows


def step(state: SimState, stretch: StretchParams, design: StationDesign | None,
         fixed: FixedParams, inflow: float, onramp: Sequence[float] | None = None,
         step_hours: float = DEFAULT_STEP_HOURS) -> SimState:
    """Advance the CTM-s state by one step; see :func:`step_with_flows`."""
    return step_with_flows(state, stretch, design, fixed, inflow, onramp, step_hours)[0]


# --------------------------------------------------------------------------
# whole horizon, compiled
# --------------------------------------------------------------------------

_STATUS_TEXT = {
    _kernel.NEGATIVE_DENSITY: "density became negative",
    _kernel.ABOVE_JAM: "density exceeded jam density",
    _kernel.NON_FINITE: "non-finite density",
    _kernel.NEGATIVE_FLOW: "negative flow",
}


def _prepare(stretch, design, fixed, profile, x0):
    T = profile.step_hours
    stretch.check_cfl(T)
    n = stretch.n_cells
    if design is not None:
        design.check_against(stretch)
        access, exit_ = design.access_cell - 1, design.exit_cell - 1
        ratio, lag = design.station_ratio, design.lag_steps(T)
    else:
        access = exit_ = -1
        ratio, lag = 0.0, 0
    if x0 is None:
        x0 = SimState.empty(stretch, design, T)
    x0.check(stretch)
    if len(x0.service_buffer) != lag:
        raise DomainError(f"x0 service buffer holds {len(x0.service_buffer)} entries, "
                          f"expected {lag}")
    if profile.onramp_demand is not None:
        if profile.onramp_demand.shape[1] != n:
            raise DomainError(f"onramp_demand has {profile.onramp_demand.shape[1]} columns, "
                              f"expected {n}")
        onramp, has_ramps = np.ascontiguousarray(profile.onramp_demand), True
    else:
        onramp, has_ramps = np.zeros((1, n)), False
    args = (stretch.lengths, stretch.free_flow_speeds, stretch.wave_speeds,
            stretch.capacities, stretch.jam_densities, stretch.offramp_ratios,
            access, exit_, float(ratio), lag, float(fixed.mainstream_priority),
            float(fixed.ramp_capacity), float(T),
            np.ascontiguousarray(profile.mainstream_inflow), onramp, has_ramps,
            np.array(x0.density, dtype=float), float(x0.station_count), float(x0.exit_queue),
            np.array(x0.service_buffer, dtype=float), np.array(x0.ramp_queues, dtype=float),
            float(x0.origin_queue))
    return x0, args


def _raise_on_status(out, design):
    status, bad_step, bad_cell = out[0], out[1], out[2]
    if status != _kernel.OK:
        where = f" in cell {bad_cell + 1}" if bad_cell >= 0 else ""
        raise SimulationError(_STATUS_TEXT.get(status, "inconsistent state") + where,
                              step=int(bad_step), design=design)


def simulate(stretch: StretchParams, design: StationDesign | None, fixed: FixedParams,
             profile: DemandProfile, x0: SimState | None = None) -> SimTrajectory:
    """Simulate the whole horizon of ``profile``.

    ``design=None`` means no station (the no-station baseline). ``x0`` defaults
    to the empty network. Deterministic: equal inputs give bit-identical output.
    """
    x0, args = _prepare(stretch, design, fixed, profile, x0)
    out = _kernel.run_horizon(*args, True)
    _raise_on_status(out, design)
    (_, _, _, rho, ell, e, buf, rq, oq,
     density, phi, t_in, t_out, r, s, speed, rq_hist, ss, rs, ds, ell_hist, e_hist,
     oq_hist, _delay) = out
    final = SimState(rho, ell, e, tuple(buf), rq, oq)
    return SimTrajectory(profile.step_hours, density, phi, t_in, t_out, r, s, speed, rq_hist,
                         ss, rs, ds, ell_hist, e_hist, oq_hist, x0, final, design)


def delay_series_fast(stretch: StretchParams, design: StationDesign | None, fixed: FixedParams,
                      profile: DemandProfile, x0: SimState | None = None) -> np.ndarray:
    """Delta(k) in hours computed inside the kernel without recording a trajectory."""
    _, args = _prepare(stretch, design, fixed, profile, x0)
    out = _kernel.run_horizon(*args, False)
    _raise_on_status(out, design)
    return out[-1]


def with_ratio(design: StationDesign, ratio: float) -> StationDesign:
    return replace(design, station_ratio=ratio)
