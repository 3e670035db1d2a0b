"""Scenarios: JSON persistence, synthetic demand, built-in A2/A4 catalog, design comparison.

Scenario file layout (all keys required unless marked optional)::

    {
      "name": "A2",
      "step_hours": 0.0015,
      "alpha": 0.01,
      "cells": [{"length_km", "free_flow_speed", "wave_speed", "capacity",
                 "jam_density", "offramp_ratio"}, ...],
      "fixed": {"mainstream_priority", "ramp_capacity", "station_cell_span"},
      "bounds": {"cell_range": [first, last] | null, "service_time_range_min": [lo, hi],
                 "ratio_range": [lo, hi], "excluded_cells": [...]},
      "profile": {"kind": "bimodal", "base_flow", "morning_peak_flow", "morning_peak_hour",
                  "morning_width_h", "evening_peak_flow", "evening_peak_hour",
                  "evening_width_h"}
               | {"kind": "series", "mainstream_inflow": [...], "onramp_demand": [[...]]?},
      "reference_designs": {"S_real": [i, j, delta_min, beta_s], ...},
      "reference_metrics": {"S_real": [xi_min, pi], ...}            (optional)
    }
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

import jsonschema
import numpy as np

from .ctm import (CellParams, DemandProfile, FixedParams, StationDesign, StretchParams)
from .design_space import DesignBounds, is_feasible
from .errors import ConfigurationError, DomainError
from .metrics import CongestionReport, CostEvaluator

HORIZON_HOURS = 24.0
COMPARISON_COLUMNS = ("name", "i", "j", "delta_min", "beta_s", "xi_delta_min", "pi_delta",
                      "cost")

# --------------------------------------------------------------------------
# synthetic demand
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BimodalProfileSpec:
    """Base flow plus a morning and an evening Gaussian bump (flows veh/h, hours)."""

    base_flow: float = 350.0
    morning_peak_flow: float = 1500.0
    morning_peak_hour: float = 8.0
    morning_width_h: float = 1.5
    evening_peak_flow: float = 1500.0
    evening_peak_hour: float = 17.5
    evening_width_h: float = 1.5

    def __post_init__(self):
        for name in ("base_flow", "morning_peak_flow", "evening_peak_flow"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise DomainError(f"{name} must be finite and >= 0, got {value!r}")
        for name in ("morning_peak_hour", "evening_peak_hour"):
            if not 0.0 <= getattr(self, name) < HORIZON_HOURS:
                raise DomainError(f"{name} must lie in [0, 24), got {getattr(self, name)!r}")
        for name in ("morning_width_h", "evening_width_h"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive, got {getattr(self, name)!r}")

    def daily_volume(self) -> float:
        """Closed-form integral over the day (untruncated Gaussians), vehicles."""
        root = math.sqrt(2.0 * math.pi)
        return (self.base_flow * HORIZON_HOURS
                + self.morning_peak_flow * self.morning_width_h * root
                + self.evening_peak_flow * self.evening_width_h * root)


def horizon_steps(step_hours: float) -> int:
    return int(round(HORIZON_HOURS / step_hours))


def synthesize_profile(spec: BimodalProfileSpec, step_hours: float) -> DemandProfile:
    """phi_1(t_k), t_k = k T for k = 0 .. round(24 / T) - 1."""
    if not step_hours > 0:
        raise DomainError(f"step_hours must be positive, got {step_hours!r}")
    t = np.arange(horizon_steps(step_hours)) * step_hours
    flow = np.full(t.shape, spec.base_flow)
    for peak, hour, width in ((spec.morning_peak_flow, spec.morning_peak_hour,
                               spec.morning_width_h),
                              (spec.evening_peak_flow, spec.evening_peak_hour,
                               spec.evening_width_h)):
        flow = flow + peak * np.exp(-0.5 * ((t - hour) / width) ** 2)
    return DemandProfile(step_hours, flow)


# --------------------------------------------------------------------------
# scenario type
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    stretch: StretchParams
    fixed: FixedParams
    bounds: DesignBounds
    profile_source: BimodalProfileSpec | DemandProfile
    alpha: float = 0.01
    step_hours: float = 0.0025
    reference_designs: Mapping[str, StationDesign] = field(default_factory=dict)
    reference_metrics: Mapping[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "reference_designs", dict(self.reference_designs))
        object.__setattr__(self, "reference_metrics",
                           {k: tuple(v) for k, v in self.reference_metrics.items()})
        self.stretch.check_cfl(self.step_hours)
        if isinstance(self.profile_source, DemandProfile):
            if self.profile_source.step_hours != self.step_hours:
                raise ConfigurationError("profile step differs from scenario step_hours")
            ramps = self.profile_source.onramp_demand
            if ramps is not None and ramps.shape[1] != self.stretch.n_cells:
                raise ConfigurationError("onramp_demand column count differs from N")
        if self.bounds.span != self.fixed.station_cell_span:
            raise ConfigurationError(f"bounds span {self.bounds.span} differs from "
                                     f"station_cell_span {self.fixed.station_cell_span}")
        for name, design in self.reference_designs.items():
            try:
                design.check_against(self.stretch)
            except DomainError as exc:
                raise ConfigurationError(f"reference design {name!r}: {exc}") from None

    @property
    def profile(self) -> DemandProfile:
        if isinstance(self.profile_source, DemandProfile):
            return self.profile_source
        return synthesize_profile(self.profile_source, self.step_hours)

    def with_excluded_cells(self, cells: Iterable[int]) -> "Scenario":
        bounds = replace(self.bounds, excluded_cells=frozenset(cells))
        return replace(self, bounds=bounds)

    def evaluator(self, alpha: float | None = None) -> CostEvaluator:
        return CostEvaluator(self.stretch, self.fixed, self.profile,
                             self.alpha if alpha is None else alpha)

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return (self.name == other.name and self.stretch == other.stretch
                and self.fixed == other.fixed and self.bounds == other.bounds
                and self.profile_source == other.profile_source
                and self.alpha == other.alpha and self.step_hours == other.step_hours
                and self.reference_designs == other.reference_designs
                and self.reference_metrics == other.reference_metrics)


# --------------------------------------------------------------------------
# JSON schema and (de)serialisation
# --------------------------------------------------------------------------

_NUMBER = {"type": "number"}
_POSITIVE = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_PAIR = {"type": "array", "items": _NONNEG, "minItems": 2, "maxItems": 2}

SCENARIO_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["name", "step_hours", "alpha", "cells", "fixed", "bounds", "profile",
                 "reference_designs"],
    "properties": {
        "name": {"type": "string"},
        "step_hours": _POSITIVE,
        "alpha": _NUMBER,
        "cells": {
            "type": "array", "minItems": 2,
            "items": {
                "type": "object", "additionalProperties": False,
                "required": ["length_km", "free_flow_speed", "wave_speed", "capacity",
                             "jam_density", "offramp_ratio"],
                "properties": {
                    "length_km": _POSITIVE, "free_flow_speed": _POSITIVE,
                    "wave_speed": _POSITIVE, "capacity": _POSITIVE, "jam_density": _POSITIVE,
                    "offramp_ratio": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                },
            },
        },
        "fixed": {
            "type": "object", "additionalProperties": False,
            "required": ["mainstream_priority", "ramp_capacity", "station_cell_span"],
            "properties": {
                "mainstream_priority": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "ramp_capacity": _POSITIVE,
                "station_cell_span": {"type": "integer", "minimum": 1},
            },
        },
        "bounds": {
            "type": "object", "additionalProperties": False,
            "required": ["cell_range", "service_time_range_min", "ratio_range",
                         "excluded_cells"],
            "properties": {
                "cell_range": {"oneOf": [
                    {"type": "null"},
                    {"type": "array", "items": {"type": "integer", "minimum": 1},
                     "minItems": 2, "maxItems": 2}]},
                "service_time_range_min": _PAIR,
                "ratio_range": {"type": "array", "minItems": 2, "maxItems": 2,
                                "items": {"type": "number", "minimum": 0, "maximum": 1}},
                "excluded_cells": {"type": "array",
                                   "items": {"type": "integer", "minimum": 1}},
            },
        },
        "profile": {
            "oneOf": [
                {"type": "object", "additionalProperties": False,
                 "required": ["kind", "base_flow", "morning_peak_flow", "morning_peak_hour",
                              "morning_width_h", "evening_peak_flow", "evening_peak_hour",
                              "evening_width_h"],
                 "properties": {
                     "kind": {"const": "bimodal"},
                     "base_flow": _NONNEG, "morning_peak_flow": _NONNEG,
                     "evening_peak_flow": _NONNEG,
                     "morning_peak_hour": {"type": "number", "minimum": 0,
                                           "exclusiveMaximum": 24},
                     "evening_peak_hour": {"type": "number", "minimum": 0,
                                           "exclusiveMaximum": 24},
                     "morning_width_h": _POSITIVE, "evening_width_h": _POSITIVE}},
                {"type": "object", "additionalProperties": False,
                 "required": ["kind", "mainstream_inflow"],
                 "properties": {
                     "kind": {"const": "series"},
                     "mainstream_inflow": {"type": "array", "minItems": 1, "items": _NONNEG},
                     "onramp_demand": {"type": "array",
                                       "items": {"type": "array", "items": _NONNEG}}}},
            ],
        },
        "reference_designs": {
            "type": "object",
            "additionalProperties": {"type": "array", "minItems": 4, "maxItems": 4,
                                     "items": _NUMBER},
        },
        "reference_metrics": {
            "type": "object",
            "additionalProperties": {"type": "array", "minItems": 2, "maxItems": 2,
                                     "items": _NUMBER},
        },
    },
}

_VALIDATOR = jsonschema.Draft202012Validator(SCENARIO_SCHEMA)


def _path_text(path: Iterable) -> str:
    text = ""
    for part in path:
        text += f"[{part}]" if isinstance(part, int) else (f".{part}" if text else str(part))
    return text or "<root>"


def _best_error(error: jsonschema.ValidationError) -> jsonschema.ValidationError:
    # A profile fails "oneOf" as a whole; report the error of the branch whose
    # "kind" matches so the message names the real offending field.
    while error.context:
        branches = {"bimodal": 0, "series": 1}
        kind = error.instance.get("kind") if isinstance(error.instance, dict) else None
        chosen = [e for e in error.context if e.schema_path and e.schema_path[0] ==
                  branches.get(kind)]
        error = jsonschema.exceptions.best_match(chosen or error.context)
    return error


def validate_document(doc) -> None:
    """Raise ConfigurationError naming the offending key path for schema violations."""
    errors = sorted(_VALIDATOR.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = _best_error(errors[0])
        if err.validator == "additionalProperties":
            extra = [k for k in err.instance if k not in err.schema.get("properties", {})]
            where = _path_text(list(err.absolute_path) + extra[:1])
            raise ConfigurationError(f"{where}: unknown field")
        raise ConfigurationError(f"{_path_text(err.absolute_path)}: {err.message}")


def scenario_from_dict(doc) -> Scenario:
    validate_document(doc)
    cells = []
    for idx, raw in enumerate(doc["cells"]):
        try:
            cells.append(CellParams(**raw))
        except DomainError as exc:
            raise ConfigurationError(f"cells[{idx}]: {exc}") from None
    stretch = StretchParams(tuple(cells))
    fixed = FixedParams(**doc["fixed"])
    b = doc["bounds"]
    bounds = DesignBounds(span=fixed.station_cell_span,
                          cell_range=None if b["cell_range"] is None else tuple(b["cell_range"]),
                          service_time_range=tuple(b["service_time_range_min"]),
                          ratio_range=tuple(b["ratio_range"]),
                          excluded_cells=frozenset(b["excluded_cells"]))
    step_hours = float(doc["step_hours"])
    p = dict(doc["profile"])
    kind = p.pop("kind")
    if kind == "bimodal":
        profile = BimodalProfileSpec(**{k: float(v) for k, v in p.items()})
    else:
        ramps = p.get("onramp_demand")
        try:
            profile = DemandProfile(step_hours, np.array(p["mainstream_inflow"], dtype=float),
                                    None if ramps is None else np.array(ramps, dtype=float))
        except (DomainError, ValueError) as exc:
            raise ConfigurationError(f"profile: {exc}") from None
    designs = {}
    for name, vec in doc["reference_designs"].items():
        try:
            designs[name] = StationDesign(*vec)
        except DomainError as exc:
            raise ConfigurationError(f"reference_designs.{name}: {exc}") from None
    return Scenario(doc["name"], stretch, fixed, bounds, profile, float(doc["alpha"]),
                    step_hours, designs, doc.get("reference_metrics", {}))


def scenario_to_dict(scenario: Scenario) -> dict:
    b = scenario.bounds
    src = scenario.profile_source
    if isinstance(src, BimodalProfileSpec):
        profile = {"kind": "bimodal", **{k: getattr(src, k) for k in
                                         src.__dataclass_fields__}}
    else:
        profile = {"kind": "series", "mainstream_inflow": src.mainstream_inflow.tolist()}
        if src.onramp_demand is not None:
            profile["onramp_demand"] = src.onramp_demand.tolist()
    doc = {
        "name": scenario.name,
        "step_hours": scenario.step_hours,
        "alpha": scenario.alpha,
        "cells": [{"length_km": c.length_km, "free_flow_speed": c.free_flow_speed,
                   "wave_speed": c.wave_speed, "capacity": c.capacity,
                   "jam_density": c.jam_density, "offramp_ratio": c.offramp_ratio}
                  for c in scenario.stretch.cells],
        "fixed": {"mainstream_priority": scenario.fixed.mainstream_priority,
                  "ramp_capacity": scenario.fixed.ramp_capacity,
                  "station_cell_span": scenario.fixed.station_cell_span},
        "bounds": {"cell_range": None if b.cell_range is None else list(b.cell_range),
                   "service_time_range_min": list(b.service_time_range),
                   "ratio_range": list(b.ratio_range),
                   "excluded_cells": sorted(b.excluded_cells)},
        "profile": profile,
        "reference_designs": {k: [d.access_cell, d.exit_cell, d.service_time_min,
                                  d.station_ratio]
                              for k, d in scenario.reference_designs.items()},
    }
    if scenario.reference_metrics:
        doc["reference_metrics"] = {k: list(v) for k, v in scenario.reference_metrics.items()}
    return doc


def loads_scenario(text: str) -> Scenario:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: "
                                 f"{exc.msg}") from None
    return scenario_from_dict(doc)


def load_scenario(path) -> Scenario:
    """Read and validate a scenario file."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read scenario {path}: {exc.strerror}") from None
    try:
        return loads_scenario(text)
    except ConfigurationError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None


def save_scenario(scenario: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(scenario), indent=2) + "\n")


# --------------------------------------------------------------------------
# built-in catalog
# --------------------------------------------------------------------------

BUILTIN_NAMES = ("a2", "a4")


def builtin_catalog() -> dict[str, Scenario]:
    """The A2 and A4 scenarios keyed by upper-case name."""
    out = {}
    for key in BUILTIN_NAMES:
        text = resources.files("ctms_station").joinpath("data", f"{key}.json").read_text()
        scenario = loads_scenario(text)
        out[scenario.name] = scenario
    return out


def resolve_scenario(name_or_path: str) -> Scenario:
    """A built-in scenario by name (case-insensitive) or a scenario file path."""
    if name_or_path.lower() in BUILTIN_NAMES:
        return builtin_catalog()[name_or_path.upper()]
    return load_scenario(name_or_path)


# --------------------------------------------------------------------------
# comparison
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ComparisonRow:
    name: str
    design: StationDesign
    report: CongestionReport

    def csv_row(self) -> list[str]:
        return [self.name] + self.report.csv_row()


def mixed_designs(reference: StationDesign, optimum: StationDesign) -> tuple[StationDesign,
                                                                             StationDesign]:
    """(behaviour-only, placement-only) mixes.

    behaviour-only keeps the reference placement with the optimum's delta and
    beta_s; placement-only moves to the optimum's cells with the reference
    delta and beta_s.
    """
    behaviour = StationDesign(reference.access_cell, reference.exit_cell,
                              optimum.service_time_min, optimum.station_ratio)
    placement = StationDesign(optimum.access_cell, optimum.exit_cell,
                              reference.service_time_min, reference.station_ratio)
    return behaviour, placement


def compare_designs(scenario: Scenario, designs: Mapping[str, StationDesign],
                    reference: str | None = None, optimum: str | None = None,
                    evaluator: CostEvaluator | None = None,
                    check_bounds: bool = True) -> list[ComparisonRow]:
    """Simulate named designs and tabulate (xi, pi, cost).

    When ``reference`` and ``optimum`` name entries of ``designs``, the rows
    are ordered reference, behaviour-only mix (``S_box``), placement-only mix
    (``S_bullet``), optimum, followed by any other designs.
    """
    designs = dict(designs)
    evaluator = evaluator or scenario.evaluator()
    names = list(designs)
    if reference is not None and optimum is not None:
        for key in (reference, optimum):
            if key not in designs:
                raise ConfigurationError(f"unknown design name {key!r}")
        box, bullet = mixed_designs(designs[reference], designs[optimum])
        designs["S_box"], designs["S_bullet"] = box, bullet
        head = [reference, "S_box", "S_bullet", optimum]
        names = head + [n for n in names if n not in head]
    rows = []
    for name in names:
        design = designs[name]
        try:
            design.check_against(scenario.stretch)
        except DomainError as exc:
            raise DomainError(f"design {name!r} {design}: {exc}") from None
        if check_bounds and not is_feasible(design, scenario.bounds, scenario.stretch):
            raise DomainError(f"design {name!r} {design} is not feasible for scenario "
                              f"{scenario.name!r}")
        rows.append(ComparisonRow(name, design, evaluator.evaluate(design)))
    return rows


def write_comparison(rows: Iterable[ComparisonRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COMPARISON_COLUMNS)
        for row in rows:
            writer.writerow(row.csv_row())


def format_comparison(rows: Iterable[ComparisonRow]) -> str:
    lines = [f"{'':<10} {'i':>3} {'j':>3} {'delta[min]':>11} {'beta_s':>7} "
             f"{'xi[min]':>10} {'pi':>7} {'cost':>8}"]
    for r in rows:
        d, rep = r.design, r.report
        lines.append(f"{r.name:<10} {d.access_cell:>3} {d.exit_cell:>3} "
                     f"{d.service_time_min:>11.1f} {d.station_ratio:>7.3f} "
                     f"{rep.xi_delta:>10.1f} {rep.pi_delta:>7.3f} {rep.cost:>8.3f}")
    return "\n".join(lines)


# --------------------------------------------------------------------------
# case study
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CaseStudyResult:
    scenario: Scenario
    rows: tuple[ComparisonRow, ...]
    ga_run: object
    optimum: StationDesign


def run_case_study(scenario: Scenario, seed: int = 0, excluded_cells: Iterable[int] = (),
                   ga_config=None, alpha: float | None = None,
                   reference: str = "S_real") -> CaseStudyResult:
    """Optimise the scenario's station and compare it with the reference design.

    The GA is seeded with the reference design. Its best design is then
    refined over the four placement/behaviour combinations of reference and GA
    result (reference, behaviour-only, placement-only, GA best), keeping the
    cheapest as S_star. The table rows are S_real, S_box, S_bullet, S_star.
    """
    from . import ga

    excluded = frozenset(excluded_cells)
    if excluded:
        scenario = scenario.with_excluded_cells(excluded | scenario.bounds.excluded_cells)
    if reference not in scenario.reference_designs:
        raise ConfigurationError(f"scenario {scenario.name!r} has no design {reference!r}")
    ref = scenario.reference_designs[reference]
    evaluator = scenario.evaluator(alpha)
    profile = evaluator.profile
    seeds = (ref,) if is_feasible(ref, scenario.bounds, scenario.stretch) else ()
    config = ga_config or ga.GAConfig()
    config = replace(config, rng_seed=seed, seed_designs=seeds + tuple(config.seed_designs))
    result = ga.run(scenario.stretch, scenario.fixed, profile, scenario.bounds,
                    evaluator.alpha, config, evaluator=evaluator)

    candidates = [result.best_design, *mixed_designs(ref, result.best_design)]
    if seeds:
        candidates.append(ref)
    feasible = [d for d in candidates if is_feasible(d, scenario.bounds, scenario.stretch)]
    optimum = min(feasible, key=lambda d: (evaluator.cost(d), d))
    rows = compare_designs(scenario, {reference: ref, "S_star": optimum},
                           reference=reference, optimum="S_star", evaluator=evaluator,
                           check_bounds=False)
    return CaseStudyResult(scenario, tuple(rows), result, optimum)
