"""Congestion metrics: delay series, aggregate delay, peak reduction, design cost.

Units: the delay series Delta(k) is in hours (extra travel time over the
stretch); the aggregate xi is reported in minutes. The single hours-to-minutes
conversion happens in :func:`xi_delta`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ctm import (DemandProfile, FixedParams, SimState, SimTrajectory, StationDesign,
                  StretchParams, delay_series_fast)
from .errors import DomainError

MINUTES_PER_HOUR = 60.0
DEFAULT_ALPHA = 0.01
REPORT_COLUMNS = ("i", "j", "delta_min", "beta_s", "xi_delta_min", "pi_delta", "cost")


def delay_series(traj: SimTrajectory, stretch: StretchParams) -> np.ndarray:
    """Delta(k) = sum_i (L_i / v_i(k) - L_i / vbar_i), hours.

    A cell at free-flow speed contributes exactly 0; a stopped cell makes the
    step's delay infinite.
    """
    if traj.n_cells != stretch.n_cells:
        raise DomainError(f"trajectory has {traj.n_cells} cells, stretch has {stretch.n_cells}")
    speed = traj.speed
    vbar = stretch.free_flow_speeds
    lengths = stretch.lengths
    slow = speed < vbar
    with np.errstate(divide="ignore"):
        extra = np.where(slow, lengths / np.where(slow, speed, 1.0) - lengths / vbar, 0.0)
    # Accumulate cell by cell (same order as the compiled kernel) so both
    # paths give bit-identical series.
    total = np.zeros(extra.shape[0])
    for c in range(extra.shape[1]):
        total += extra[:, c]
    return total


def xi_delta(delta_series: Sequence[float], step_hours: float) -> float:
    """Aggregate delay T * sum_k Delta(k), returned in minutes."""
    series = np.asarray(delta_series, dtype=float)
    if np.any(np.isnan(series)) or np.any(series < 0):
        raise DomainError("delay series must be non-negative and not NaN")
    return float(step_hours * series.sum() * MINUTES_PER_HOUR)


def pi_delta_with_flag(delta_series: Sequence[float],
                       baseline_delta_series: Sequence[float]) -> tuple[float, bool]:
    """Peak reduction (max D0 - max D) / max D0 and a 'no baseline congestion' flag.

    When the baseline peak is zero the ratio is undefined; 0 is returned with
    the flag set.
    """
    series = np.asarray(delta_series, dtype=float)
    base = np.asarray(baseline_delta_series, dtype=float)
    if series.shape != base.shape:
        raise DomainError(f"series lengths differ: {series.shape} vs {base.shape}")
    if series.size == 0:
        raise DomainError("empty delay series")
    peak0 = float(base.max())
    if peak0 == 0.0:
        return 0.0, True
    peak = float(series.max())
    if math.isinf(peak0):
        return (0.0 if math.isinf(peak) else 1.0), False
    return (peak0 - peak) / peak0, False


def pi_delta(delta_series: Sequence[float], baseline_delta_series: Sequence[float]) -> float:
    """Peak reduction index; see :func:`pi_delta_with_flag`."""
    return pi_delta_with_flag(delta_series, baseline_delta_series)[0]


def design_cost(xi: float, pi: float, alpha: float = DEFAULT_ALPHA) -> float:
    """c = alpha * xi - pi (xi in minutes)."""
    return alpha * xi - pi


def rci_alpha(stretch: StretchParams) -> float:
    """alpha = 1 / sum_i(L_i / vbar_i), the choice that turns alpha * xi into the RCI."""
    return 1.0 / stretch.free_flow_travel_time()


@dataclass(frozen=True, eq=False)
class CongestionReport:
    """Congestion figures of one design on one stretch and profile."""

    delta_series: np.ndarray
    xi_delta: float
    pi_delta: float
    cost: float
    alpha: float
    baseline_peak: float
    no_baseline_congestion: bool = False
    design: StationDesign | None = None

    def csv_row(self) -> list[str]:
        """Row matching REPORT_COLUMNS; design fields empty for the no-station case."""
        d = self.design
        head = ["", "", "", ""] if d is None else [
            str(d.access_cell), str(d.exit_cell), f"{d.service_time_min:g}",
            f"{d.station_ratio:g}"]
        return head + [repr(self.xi_delta), repr(self.pi_delta), repr(self.cost)]


def report(delta: np.ndarray, baseline: np.ndarray, step_hours: float, alpha: float,
           design: StationDesign | None = None) -> CongestionReport:
    xi = xi_delta(delta, step_hours)
    pi, flag = pi_delta_with_flag(delta, baseline)
    return CongestionReport(delta, xi, pi, design_cost(xi, pi, alpha), alpha,
                            float(np.max(baseline)), flag, design)


@dataclass
class CostEvaluator:
    """Evaluates designs on one (stretch, fixed, profile) with a cached baseline.

    The no-station baseline Delta_0 is simulated once on construction. Results
    are memoised per design, so repeated candidates cost nothing.
    """

    stretch: StretchParams
    fixed: FixedParams
    profile: DemandProfile
    alpha: float = DEFAULT_ALPHA
    x0: SimState | None = None
    baseline: np.ndarray = field(init=False, repr=False)
    _cache: dict = field(init=False, default_factory=dict, repr=False)

    def __post_init__(self):
        self.baseline = delay_series_fast(self.stretch, None, self.fixed, self.profile, self.x0)
        self.baseline.setflags(write=False)

    @property
    def simulations(self) -> int:
        """Number of distinct designs simulated so far."""
        return len(self._cache)

    def evaluate(self, design: StationDesign) -> CongestionReport:
        cached = self._cache.get(design)
        if cached is not None:
            return cached
        x0 = self.x0
        if x0 is not None:
            lag = design.lag_steps(self.profile.step_hours)
            if len(x0.service_buffer) != lag:
                x0 = SimState(x0.density, x0.station_count, x0.exit_queue, (0.0,) * lag,
                              x0.ramp_queues, x0.origin_queue)
        delta = delay_series_fast(self.stretch, design, self.fixed, self.profile, x0)
        result = report(delta, self.baseline, self.profile.step_hours, self.alpha, design)
        self._cache[design] = result
        return result

    def cost(self, design: StationDesign) -> float:
        return self.evaluate(design).cost

    def baseline_report(self) -> CongestionReport:
        return report(self.baseline, self.baseline, self.profile.step_hours, self.alpha)
