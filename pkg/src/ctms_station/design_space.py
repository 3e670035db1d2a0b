"""Feasible set of station designs: box bounds, span equality, excluded cells.

A design (i, j, delta, beta_s) is feasible when

* i is an admissible access cell: inside ``cell_range``, not excluded, and
  its exit cell j = i + span is inside the stretch and not excluded;
* delta (minutes) and beta_s lie in their boxes;
* beta_s + beta_i <= 1 at the access cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ctm import StationDesign, StretchParams
from .errors import ConfigurationError, DomainError

DEFAULT_SERVICE_TIME_RANGE = (0.0, 720.0)
DEFAULT_RATIO_RANGE = (0.0, 0.2)


@dataclass(frozen=True)
class DesignBounds:
    """Bounds of the design space.

    ``cell_range`` is an inclusive (first, last) range of admissible access
    cells; ``None`` means every cell whose exit fits in the stretch.
    ``service_time_range`` is in minutes.
    """

    span: int = 2
    cell_range: tuple[int, int] | None = None
    service_time_range: tuple[float, float] = DEFAULT_SERVICE_TIME_RANGE
    ratio_range: tuple[float, float] = DEFAULT_RATIO_RANGE
    excluded_cells: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        if int(self.span) != self.span or self.span < 1:
            raise ConfigurationError(f"span must be an integer >= 1, got {self.span!r}")
        object.__setattr__(self, "span", int(self.span))
        if self.cell_range is not None:
            lo, hi = (int(v) for v in self.cell_range)
            if not 1 <= lo <= hi:
                raise ConfigurationError(f"cell_range must satisfy 1 <= first <= last, "
                                         f"got {self.cell_range!r}")
            object.__setattr__(self, "cell_range", (lo, hi))
        for name, upper in (("service_time_range", math.inf), ("ratio_range", 1.0)):
            lo, hi = (float(v) for v in getattr(self, name))
            if not (0.0 <= lo <= hi <= upper):
                raise ConfigurationError(f"{name} must satisfy 0 <= lo <= hi"
                                         f"{' <= 1' if upper == 1.0 else ''}, got ({lo}, {hi})")
            object.__setattr__(self, name, (lo, hi))
        object.__setattr__(self, "excluded_cells", frozenset(int(c) for c in self.excluded_cells))

    def admissible_access_cells(self, stretch: StretchParams) -> list[int]:
        """Access cells i whose design (i, i + span) can be feasible, ascending."""
        n = stretch.n_cells
        lo, hi = self.cell_range if self.cell_range is not None else (1, n)
        return [i for i in range(max(lo, 1), min(hi, n - self.span) + 1)
                if i not in self.excluded_cells and i + self.span not in self.excluded_cells]

    def ratio_upper(self, stretch: StretchParams, access_cell: int) -> float:
        """Largest beta_s allowed at ``access_cell`` (box and beta_s + beta_i <= 1)."""
        return min(self.ratio_range[1], 1.0 - stretch.cell(access_cell).offramp_ratio)

    def check_nonempty(self, stretch: StretchParams) -> list[int]:
        cells = self.admissible_access_cells(stretch)
        if not cells:
            raise ConfigurationError(
                f"no admissible access cell for N={stretch.n_cells}, span={self.span}, "
                f"cell_range={self.cell_range}, excluded={sorted(self.excluded_cells)}")
        for i in cells:
            if self.ratio_upper(stretch, i) >= self.ratio_range[0]:
                return cells
        raise ConfigurationError("ratio_range lower bound exceeds 1 - offramp_ratio "
                                 "at every admissible access cell")


def is_feasible(design: StationDesign, bounds: DesignBounds, stretch: StretchParams) -> bool:
    """True iff the design satisfies the span equality, the boxes and the exclusions."""
    i, j = design.access_cell, design.exit_cell
    if j - i != bounds.span or j > stretch.n_cells:
        return False
    if i not in bounds.admissible_access_cells(stretch):
        return False
    lo, hi = bounds.service_time_range
    if not lo <= design.service_time_min <= hi:
        return False
    return bounds.ratio_range[0] <= design.station_ratio <= bounds.ratio_upper(stretch, i)


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_uniform(bounds: DesignBounds, stretch: StretchParams, rng_seed) -> StationDesign:
    """Uniformly random feasible design.

    ``rng_seed`` is an int seed or a ``numpy.random.Generator`` (advanced in place).
    """
    cells = bounds.check_nonempty(stretch)
    rng = _rng(rng_seed)
    i = cells[int(rng.integers(len(cells)))]
    return StationDesign(i, i + bounds.span, sample_service_time(bounds, rng),
                         sample_ratio(bounds, stretch, i, rng))


def sample_service_time(bounds: DesignBounds, rng: np.random.Generator) -> float:
    lo, hi = bounds.service_time_range
    return float(rng.uniform(lo, hi))


def sample_ratio(bounds: DesignBounds, stretch: StretchParams, access_cell: int,
                 rng: np.random.Generator) -> float:
    lo, hi = bounds.ratio_range[0], bounds.ratio_upper(stretch, access_cell)
    if hi < lo:
        raise ConfigurationError(f"empty ratio range at access cell {access_cell}")
    return float(rng.uniform(lo, hi))


def _clamp(value: float, lo: float, hi: float) -> float:
    if math.isnan(value):
        return lo
    return min(max(value, lo), hi)


def nearest_access_cell(raw: float, cells: Sequence[int]) -> int:
    """Admissible cell closest to ``raw``; ties go to the lower index."""
    if math.isnan(raw):
        return cells[0]
    return min(cells, key=lambda c: (abs(c - raw), c))


def project(raw: Sequence[float], bounds: DesignBounds, stretch: StretchParams) -> StationDesign:
    """Map an arbitrary real 4-vector (i, j, delta_min, beta_s) onto the feasible set.

    The access cell snaps to the nearest admissible cell (lower index on ties)
    and the exit cell follows from the span; the raw exit value is ignored.
    delta and beta_s are clamped to their boxes; NaN maps to the lower bound.
    """
    if len(raw) != 4:
        raise DomainError(f"expected a 4-vector (i, j, delta, beta_s), got {len(raw)} values")
    cells = bounds.check_nonempty(stretch)
    i_raw, _, delta_raw, ratio_raw = (float(v) for v in raw)
    candidates = [c for c in cells if bounds.ratio_upper(stretch, c) >= bounds.ratio_range[0]]
    i = nearest_access_cell(i_raw, candidates)
    delta = _clamp(delta_raw, *bounds.service_time_range)
    ratio = _clamp(ratio_raw, bounds.ratio_range[0], bounds.ratio_upper(stretch, i))
    return StationDesign(i, i + bounds.span, delta, ratio)
