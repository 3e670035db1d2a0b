"""Training corpus: random stretches solved by the GA.

Each record is a tuple (P, F, S*_GA) plus the achieved congestion figures.
Records are independent; record k draws its stretch and GA seed from the k-th
child of a master ``numpy.random.SeedSequence``, so the corpus is identical
for a given master seed regardless of the number of worker processes.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import ga
from .ctm import CellParams, DemandProfile, FixedParams, StationDesign, StretchParams
from .design_space import DesignBounds
from .errors import CTMSError, ConfigurationError
from .metrics import DEFAULT_ALPHA, CostEvaluator

log = logging.getLogger(__name__)

CELL_FEATURES = ("L", "vbar", "w", "qmax", "rhomax", "beta")
FIXED_FEATURES = ("p_ms", "rs_max", "span")
TARGET_NAMES = ("i", "j", "delta_min", "beta_s")


@dataclass(frozen=True)
class StretchRanges:
    """Uniform sampling ranges for random stretches (length in metres).

    ``priority_range`` / ``ramp_capacity_range`` of ``None`` keep the
    corresponding value of ``fixed``; a (lo, hi) pair draws it per stretch.
    """

    length_m: tuple[float, float] = (300.0, 1000.0)
    free_flow: tuple[float, float] = (80.0, 110.0)
    wave: tuple[float, float] = (10.0, 40.0)
    capacity: tuple[float, float] = (1500.0, 2500.0)
    jam: tuple[float, float] = (70.0, 100.0)
    fixed: FixedParams = FixedParams()
    n_cells: int = 15
    count: int = 100
    priority_range: tuple[float, float] | None = None
    ramp_capacity_range: tuple[float, float] | None = None

    def __post_init__(self):
        for name in ("length_m", "free_flow", "wave", "capacity", "jam"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi and math.isfinite(hi)):
                raise ConfigurationError(f"{name} range must satisfy 0 < lo <= hi, "
                                         f"got ({lo}, {hi})")
        if self.wave[0] >= self.free_flow[1]:
            raise ConfigurationError("wave range lies entirely above the free-flow range")
        if self.n_cells < 2:
            raise ConfigurationError(f"n_cells must be >= 2, got {self.n_cells}")
        if self.count < 1:
            raise ConfigurationError(f"count must be >= 1, got {self.count}")

    def feature_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-feature (min, max) of the 6N + 3 feature vector implied by the ranges."""
        cell_lo = [self.length_m[0] / 1000.0, self.free_flow[0], self.wave[0],
                   self.capacity[0], self.jam[0], 0.0]
        cell_hi = [self.length_m[1] / 1000.0, self.free_flow[1], self.wave[1],
                   self.capacity[1], self.jam[1], 0.0]
        f = self.fixed
        pr = self.priority_range or (f.mainstream_priority,) * 2
        rr = self.ramp_capacity_range or (f.ramp_capacity,) * 2
        lo = cell_lo * self.n_cells + [pr[0], rr[0], f.station_cell_span]
        hi = cell_hi * self.n_cells + [pr[1], rr[1], f.station_cell_span]
        return np.array(lo, dtype=float), np.array(hi, dtype=float)


def random_stretch(ranges: StretchRanges, rng) -> StretchParams:
    """N cells with every parameter uniform in its range and no ramps.

    A cell whose wave speed is not below its free-flow speed is redrawn.
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    cells = []
    while len(cells) < ranges.n_cells:
        length = rng.uniform(*ranges.length_m) / 1000.0
        vbar = rng.uniform(*ranges.free_flow)
        wave = rng.uniform(*ranges.wave)
        cap = rng.uniform(*ranges.capacity)
        jam = rng.uniform(*ranges.jam)
        if wave >= vbar:
            continue
        cells.append(CellParams(float(length), float(vbar), float(wave), float(cap),
                                float(jam), 0.0))
    return StretchParams(tuple(cells))


def random_fixed(ranges: StretchRanges, rng: np.random.Generator) -> FixedParams:
    f = ranges.fixed
    p = f.mainstream_priority if ranges.priority_range is None \
        else float(rng.uniform(*ranges.priority_range))
    r = f.ramp_capacity if ranges.ramp_capacity_range is None \
        else float(rng.uniform(*ranges.ramp_capacity_range))
    return FixedParams(p, r, f.station_cell_span)


@dataclass(frozen=True)
class DesignRecord:
    stretch: StretchParams
    fixed: FixedParams
    target: StationDesign
    cost: float
    xi_delta: float
    pi_delta: float
    seed: int
    generations: int = 0

    def features(self) -> np.ndarray:
        """Raw (unscaled) 6N + 3 feature vector."""
        return raw_features(self.stretch, self.fixed)

    def target_vector(self) -> np.ndarray:
        return np.array(self.target.as_vector(), dtype=float)

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "cells": [[c.length_km, c.free_flow_speed, c.wave_speed, c.capacity,
                       c.jam_density, c.offramp_ratio] for c in self.stretch.cells],
            "fixed": [self.fixed.mainstream_priority, self.fixed.ramp_capacity,
                      self.fixed.station_cell_span],
            "target": [self.target.access_cell, self.target.exit_cell,
                       self.target.service_time_min, self.target.station_ratio],
            "cost": self.cost,
            "xi_delta_min": self.xi_delta,
            "pi_delta": self.pi_delta,
            "generations": self.generations,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "DesignRecord":
        stretch = StretchParams(tuple(CellParams(*c) for c in doc["cells"]))
        p, r, span = doc["fixed"]
        return cls(stretch, FixedParams(p, r, int(span)), StationDesign(*doc["target"]),
                   doc["cost"], doc["xi_delta_min"], doc["pi_delta"], doc["seed"],
                   doc.get("generations", 0))


def raw_features(stretch: StretchParams, fixed: FixedParams) -> np.ndarray:
    cells = [v for c in stretch.cells for v in (c.length_km, c.free_flow_speed, c.wave_speed,
                                                c.capacity, c.jam_density, c.offramp_ratio)]
    return np.array(cells + list(fixed.as_vector()), dtype=float)


def feature_names(n_cells: int) -> list[str]:
    return [f"{name}_{k}" for k in range(1, n_cells + 1) for name in CELL_FEATURES] \
        + list(FIXED_FEATURES)


def no_station_design(bounds: DesignBounds, stretch: StretchParams) -> StationDesign:
    """A design with beta_s = 0, equivalent to having no station."""
    i = bounds.check_nonempty(stretch)[0]
    return StationDesign(i, i + bounds.span, bounds.service_time_range[0], 0.0)


def record_seeds(master_seed: int, count: int) -> list[int]:
    """Independent 63-bit seeds, one per record, derived from the master seed."""
    children = np.random.SeedSequence(master_seed).spawn(count)
    return [int(c.generate_state(1, np.uint64)[0] >> np.uint64(1)) for c in children]


def solve_record(seed: int, ranges: StretchRanges, ga_config: ga.GAConfig,
                 bounds: DesignBounds, profile: DemandProfile,
                 alpha: float = DEFAULT_ALPHA) -> DesignRecord:
    """Draw one stretch from ``seed`` and solve it with the GA."""
    rng = np.random.default_rng(seed)
    stretch = random_stretch(ranges, rng)
    fixed = random_fixed(ranges, rng)
    ga_seed = int(rng.integers(2 ** 63))
    bounds = replace(bounds, span=fixed.station_cell_span)
    config = replace(ga_config, rng_seed=ga_seed,
                     seed_designs=(no_station_design(bounds, stretch),))
    evaluator = CostEvaluator(stretch, fixed, profile, alpha)
    result = ga.run(stretch, fixed, profile, bounds, alpha, config, evaluator=evaluator)
    rep = evaluator.evaluate(result.best_design)
    return DesignRecord(stretch, fixed, result.best_design, rep.cost, rep.xi_delta,
                        rep.pi_delta, seed, result.generations_run)


def _solve_safe(args):
    seed = args[0]
    try:
        return solve_record(*args), None
    except CTMSError as exc:
        return None, f"seed {seed}: {exc}"


def build_corpus(ranges: StretchRanges, ga_config: ga.GAConfig, bounds: DesignBounds,
                 profile: DemandProfile, alpha: float = DEFAULT_ALPHA, parallelism: int = 1,
                 master_seed: int = 0, failures: list | None = None) -> list[DesignRecord]:
    """Solve ``ranges.count`` random stretches; records come back in index order.

    A record whose GA run fails is skipped with a warning (and appended to
    ``failures`` when given); the corpus build never aborts for one failure.
    """
    seeds = record_seeds(master_seed, ranges.count)
    jobs = [(s, ranges, ga_config, bounds, profile, alpha) for s in seeds]
    if parallelism > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            outcomes = list(pool.map(_solve_safe, jobs, chunksize=max(1, len(jobs) // (
                4 * parallelism))))
    else:
        outcomes = [_solve_safe(j) for j in jobs]
    records = []
    failed = []
    for rec, err in outcomes:
        if rec is None:
            failed.append(err)
        else:
            records.append(rec)
    if failed:
        log.warning("%d of %d corpus records failed and were skipped", len(failed), len(jobs))
        if failures is not None:
            failures.extend(failed)
    return records


def write_ndjson(records: Iterable[DesignRecord], path) -> None:
    with open(path, "w", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), separators=(",", ":")) + "\n")


def read_ndjson(path) -> list[DesignRecord]:
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(DesignRecord.from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ConfigurationError(f"{path}: bad record on line {lineno}: {exc}") from None
    return records


def write_csv(records: Sequence[DesignRecord], path) -> None:
    """Flat export: 6N stretch features, 3 fixed features, 4 targets per row."""
    if not records:
        raise ConfigurationError("no records to export")
    n = records[0].stretch.n_cells
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(feature_names(n) + list(TARGET_NAMES))
        for rec in records:
            if rec.stretch.n_cells != n:
                raise ConfigurationError("records with different cell counts")
            t = rec.target
            writer.writerow([repr(float(v)) for v in rec.features()]
                            + [t.access_cell, t.exit_cell, repr(t.service_time_min),
                               repr(t.station_ratio)])
