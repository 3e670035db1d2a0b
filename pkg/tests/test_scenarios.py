import json
import math

import numpy as np
import pytest

from ctms_station.ctm import CellParams, DemandProfile, StationDesign
from ctms_station.design_space import DesignBounds
from ctms_station.errors import ConfigurationError, DomainError
from ctms_station.metrics import design_cost
from ctms_station.scenarios import (COMPARISON_COLUMNS, BimodalProfileSpec, Scenario,
                                    builtin_catalog, compare_designs, format_comparison,
                                    horizon_steps, load_scenario, loads_scenario, mixed_designs,
                                    resolve_scenario, save_scenario, scenario_to_dict,
                                    synthesize_profile, write_comparison)

CATALOG = builtin_catalog()
A2, A4 = CATALOG["A2"], CATALOG["A4"]


def test_zero_peaks_give_constant_profile():
    spec = BimodalProfileSpec(base_flow=420.0, morning_peak_flow=0.0, evening_peak_flow=0.0)
    profile = synthesize_profile(spec, 0.0025)
    assert profile.horizon_steps == horizon_steps(0.0025) == 9600
    assert np.all(profile.mainstream_inflow == 420.0)


def test_symmetric_profile():
    spec = BimodalProfileSpec(morning_peak_hour=6.0, evening_peak_hour=18.0)
    flow = synthesize_profile(spec, 0.0025).mainstream_inflow
    m = flow.size
    np.testing.assert_allclose(flow[1:], flow[:0:-1], rtol=1e-12)
    assert flow[m // 2 - 1] == pytest.approx(flow[m // 2 + 1], rel=1e-12)


@pytest.mark.parametrize("step", [0.0015, 0.0025, 0.01])
def test_profile_integral(step):
    spec = BimodalProfileSpec()
    flow = synthesize_profile(spec, step).mainstream_inflow
    assert flow.sum() * step == pytest.approx(spec.daily_volume(), rel=1e-3)
    assert np.all(flow >= spec.base_flow)


def test_profile_spec_validation():
    with pytest.raises(DomainError):
        BimodalProfileSpec(base_flow=-1.0)
    with pytest.raises(DomainError):
        BimodalProfileSpec(morning_peak_hour=24.0)
    with pytest.raises(DomainError):
        synthesize_profile(BimodalProfileSpec(), 0.0)


def test_builtin_catalog_examples():
    assert A2.stretch.n_cells == 15 and A4.stretch.n_cells == 15
    assert A2.stretch.cell(1) == CellParams(0.65, 103.0, 31.0, 1870.0, 79.0, 0.0)
    assert A4.stretch.cell(7) == CellParams(0.44, 112.0, 56.0, 2148.0, 58.0, 0.0)
    assert A2.reference_designs["S_real"] == StationDesign(11, 13, 80.0, 0.10)
    assert A4.reference_designs["S_real"] == StationDesign(7, 9, 65.0, 0.11)
    assert A2.reference_designs["S_star"] == StationDesign(4, 6, 95.0, 0.19)
    assert A2.fixed.as_vector() == (0.95, 1500.0, 2)
    assert A2.step_hours == A4.step_hours == 0.0015
    assert resolve_scenario("a2") == A2 and resolve_scenario("A4") == A4


def test_save_load_round_trip(tmp_path):
    for scenario in (A2, A4):
        path = tmp_path / f"{scenario.name}.json"
        save_scenario(scenario, path)
        assert load_scenario(path) == scenario
        assert resolve_scenario(str(path)) == scenario


def test_series_profile_round_trip(tmp_path):
    steps = 200
    ramps = np.zeros((steps, 15))
    ramps[:, 3] = 120.0
    profile = DemandProfile(A2.step_hours, np.linspace(100, 900, steps), ramps)
    scenario = Scenario("custom", A2.stretch, A2.fixed, DesignBounds(excluded_cells=frozenset({2})),
                        profile, 0.02, A2.step_hours, {"S_real": StationDesign(5, 7, 12.5, 0.05)})
    path = tmp_path / "custom.json"
    save_scenario(scenario, path)
    loaded = load_scenario(path)
    assert loaded == scenario and loaded.profile == profile


def _doc():
    return scenario_to_dict(A2)


def test_offramp_ratio_error_names_cell_and_field():
    doc = _doc()
    doc["cells"][2]["offramp_ratio"] = 1.2
    with pytest.raises(ConfigurationError, match=r"cells\[2\]\.offramp_ratio"):
        loads_scenario(json.dumps(doc))


def test_unknown_field_is_rejected_with_path():
    doc = _doc()
    doc["cells"][4]["lanes"] = 2
    with pytest.raises(ConfigurationError, match=r"cells\[4\]\.lanes: unknown field"):
        loads_scenario(json.dumps(doc))
    doc = _doc()
    doc["colour"] = "red"
    with pytest.raises(ConfigurationError, match="colour: unknown field"):
        loads_scenario(json.dumps(doc))


def test_profile_error_names_branch_field():
    doc = _doc()
    doc["profile"]["morning_peak_flow"] = -5
    with pytest.raises(ConfigurationError, match=r"profile\.morning_peak_flow"):
        loads_scenario(json.dumps(doc))


def test_parse_error_names_line(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "name": "x",\n  "cells": [\n}\n')
    with pytest.raises(ConfigurationError, match="line 4"):
        load_scenario(path)
    with pytest.raises(ConfigurationError, match="cannot read"):
        load_scenario(tmp_path / "missing.json")


def test_cfl_violation_is_rejected():
    doc = _doc()
    doc["step_hours"] = 0.01
    with pytest.raises((ConfigurationError, DomainError)):
        loads_scenario(json.dumps(doc))


def test_mixed_designs_example():
    box, bullet = mixed_designs(StationDesign(11, 13, 80, 0.10), StationDesign(4, 6, 95, 0.19))
    assert box == StationDesign(11, 13, 95, 0.19) == A2.reference_designs["S_box"]
    assert bullet == StationDesign(4, 6, 80, 0.10) == A2.reference_designs["S_bullet"]


@pytest.fixture(scope="module")
def a2_evaluator():
    return A2.evaluator()


def test_compare_single_design(a2_evaluator):
    rows = compare_designs(A2, {"S_real": A2.reference_designs["S_real"]},
                           evaluator=a2_evaluator)
    assert len(rows) == 1 and rows[0].name == "S_real"


def test_compare_builds_mixed_rows_and_costs(a2_evaluator, tmp_path):
    designs = {"S_real": A2.reference_designs["S_real"],
               "S_star": A2.reference_designs["S_star"],
               "other": StationDesign(8, 10, 30.0, 0.05)}
    rows = compare_designs(A2, designs, reference="S_real", optimum="S_star",
                           evaluator=a2_evaluator)
    assert [r.name for r in rows] == ["S_real", "S_box", "S_bullet", "S_star", "other"]
    assert rows[1].design == StationDesign(11, 13, 95, 0.19)
    fresh = A2.evaluator()
    for row in rows:
        rep = fresh.evaluate(row.design)
        assert row.report.cost == design_cost(rep.xi_delta, rep.pi_delta, A2.alpha)
        assert row.report.cost == pytest.approx(A2.alpha * row.report.xi_delta
                                                - row.report.pi_delta, abs=1e-12)
    path = tmp_path / "cmp.csv"
    write_comparison(rows, path)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(COMPARISON_COLUMNS) and len(lines) == 6
    assert format_comparison(rows).count("\n") == 5


def test_compare_rejects_infeasible(a2_evaluator):
    with pytest.raises(DomainError, match="bad"):
        compare_designs(A2, {"bad": StationDesign(4, 6, 95, 0.5)}, evaluator=a2_evaluator)
    with pytest.raises(DomainError, match="bad"):
        compare_designs(A2, {"bad": StationDesign(14, 16, 95, 0.1)}, evaluator=a2_evaluator)
    with pytest.raises(ConfigurationError):
        compare_designs(A2, {"S_real": A2.reference_designs["S_real"]}, reference="S_real",
                        optimum="nope", evaluator=a2_evaluator)


def test_excluded_cells_view():
    excluded = A2.with_excluded_cells({4, 5, 6})
    assert excluded.bounds.excluded_cells == {4, 5, 6}
    assert A2.bounds.excluded_cells == frozenset()
    assert math.isclose(excluded.alpha, 0.01)
