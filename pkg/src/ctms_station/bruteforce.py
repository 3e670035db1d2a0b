"""Exhaustive grid search over the feasible designs (ground-truth baseline for the GA)."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .ctm import DemandProfile, FixedParams, StationDesign, StretchParams
from .design_space import DesignBounds
from .errors import ConfigurationError
from .metrics import DEFAULT_ALPHA, CongestionReport, CostEvaluator

TABLE_COLUMNS = ("i", "j", "delta_min", "beta_s", "xi", "pi", "cost")


@dataclass(frozen=True)
class GridSpec:
    """Lattice steps: delta in minutes, beta_s as a fraction. Cells step by 1."""

    delta_step: float = 5.0
    ratio_step: float = 0.01

    def __post_init__(self):
        for name in ("delta_step", "ratio_step"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigurationError(f"{name} must be positive, got {value!r}")


def lattice(lo: float, hi: float, step: float) -> list[float]:
    """lo, lo + step, ... up to hi (inclusive within 1e-9 steps), rounded to 12 decimals."""
    if step > hi - lo and hi > lo:
        raise ConfigurationError(f"grid step {step} exceeds the range width {hi - lo}")
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return [min(round(lo + k * step, 12), hi) for k in range(count)]


def enumerate_designs(bounds: DesignBounds, stretch: StretchParams,
                      grid: GridSpec) -> list[StationDesign]:
    """All feasible grid designs in row-major (i, delta, beta_s) order."""
    cells = bounds.admissible_access_cells(stretch)
    if not cells:
        raise ConfigurationError("empty grid: no admissible access cell")
    deltas = lattice(*bounds.service_time_range, grid.delta_step)
    designs = []
    for i in cells:
        upper = bounds.ratio_upper(stretch, i)
        ratios = [r for r in lattice(*bounds.ratio_range, grid.ratio_step) if r <= upper]
        for delta in deltas:
            for ratio in ratios:
                designs.append(StationDesign(i, i + bounds.span, delta, ratio))
    if not designs:
        raise ConfigurationError("empty grid: no feasible lattice point")
    return designs


@dataclass(frozen=True)
class SearchResult:
    best: StationDesign
    cost: float
    table: tuple[CongestionReport, ...]

    def write_table(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(TABLE_COLUMNS)
            for rep in self.table:
                writer.writerow(rep.csv_row())


def search(stretch: StretchParams, fixed: FixedParams, profile: DemandProfile,
           bounds: DesignBounds, alpha: float = DEFAULT_ALPHA, grid: GridSpec = GridSpec(),
           evaluator: CostEvaluator | None = None) -> SearchResult:
    """Evaluate every grid design; return the argmin (ties: smallest (i, delta, beta_s))."""
    designs = enumerate_designs(bounds, stretch, grid)
    if evaluator is None:
        evaluator = CostEvaluator(stretch, fixed, profile, alpha)
    table = tuple(evaluator.evaluate(d) for d in designs)
    costs = np.array([rep.cost for rep in table])
    best = int(np.argmin(costs))  # first minimum in row-major order = lexicographic tie-break
    return SearchResult(designs[best], float(costs[best]), table)
