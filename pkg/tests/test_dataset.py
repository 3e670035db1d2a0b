import csv
import math
import time

import numpy as np
import pytest

from ctms_station import dataset, ga
from ctms_station.ctm import DemandProfile, FixedParams, StationDesign, delay_series_fast
from ctms_station.dataset import (DesignRecord, StretchRanges, build_corpus, random_stretch,
                                  read_ndjson, record_seeds, write_csv, write_ndjson)
from ctms_station.design_space import DesignBounds, is_feasible
from ctms_station.errors import ConfigurationError, SimulationError
from ctms_station.metrics import CostEvaluator
from ctms_station.scenarios import BimodalProfileSpec, synthesize_profile

T = 0.0015
PROFILE = synthesize_profile(BimodalProfileSpec(), T)
RANGES = StretchRanges()


def _in(value, bounds):
    return bounds[0] <= value <= bounds[1]


def test_random_stretch_within_ranges_and_deterministic():
    for seed in range(50):
        s = random_stretch(RANGES, seed)
        assert s.n_cells == 15
        for c in s.cells:
            assert _in(c.length_km * 1000, RANGES.length_m)
            assert _in(c.free_flow_speed, RANGES.free_flow)
            assert _in(c.wave_speed, RANGES.wave) and c.wave_speed < c.free_flow_speed
            assert _in(c.capacity, RANGES.capacity) and _in(c.jam_density, RANGES.jam)
            assert c.offramp_ratio == 0.0
    assert random_stretch(RANGES, 3) == random_stretch(RANGES, 3)


def test_random_stretch_redraws_inconsistent_wave():
    ranges = StretchRanges(free_flow=(80.0, 90.0), wave=(10.0, 120.0), n_cells=40)
    s = random_stretch(ranges, 0)
    assert all(c.wave_speed < c.free_flow_speed for c in s.cells)


def test_random_stretch_means():
    rng = np.random.default_rng(0)
    ranges = StretchRanges(n_cells=2)
    draws = np.array([[c.length_km * 1000, c.free_flow_speed, c.wave_speed, c.capacity,
                       c.jam_density] for c in (random_stretch(ranges, rng).cells[0]
                                                for _ in range(1000))])
    for col, (lo, hi) in enumerate([RANGES.length_m, RANGES.free_flow, RANGES.wave,
                                    RANGES.capacity, RANGES.jam]):
        sigma = (hi - lo) / math.sqrt(12) / math.sqrt(len(draws))
        assert abs(draws[:, col].mean() - (lo + hi) / 2) < 3 * sigma


def test_ranges_validation():
    with pytest.raises(ConfigurationError):
        StretchRanges(count=0)
    with pytest.raises(ConfigurationError):
        StretchRanges(capacity=(2500.0, 1500.0))
    with pytest.raises(ConfigurationError):
        StretchRanges(free_flow=(20.0, 30.0), wave=(40.0, 50.0))


def test_random_fixed_modes():
    assert dataset.random_fixed(RANGES, np.random.default_rng(0)) == FixedParams()
    ranges = StretchRanges(priority_range=(0.5, 0.9), ramp_capacity_range=(800.0, 1200.0))
    f = dataset.random_fixed(ranges, np.random.default_rng(0))
    assert _in(f.mainstream_priority, (0.5, 0.9)) and _in(f.ramp_capacity, (800.0, 1200.0))
    lo, hi = ranges.feature_bounds()
    assert lo[-3:].tolist() == [0.5, 800.0, 2] and hi[-3:].tolist() == [0.9, 1200.0, 2]


def test_record_seeds():
    seeds = record_seeds(7, 50)
    assert seeds == record_seeds(7, 50) and len(set(seeds)) == 50
    assert record_seeds(7, 60)[:50] == seeds
    assert all(0 <= s < 2 ** 63 for s in seeds)


def test_single_record_corpus(tmp_path):
    records = build_corpus(StretchRanges(count=1), ga.GAConfig(), DesignBounds(), PROFILE)
    assert len(records) == 1
    rec = records[0]
    assert is_feasible(rec.target, DesignBounds(), rec.stretch)
    assert rec.features().shape == (93,) and rec.target_vector().shape == (4,)
    assert DesignRecord.from_json(rec.to_json()) == rec


@pytest.fixture(scope="module")
def desk_corpus():
    return build_corpus(StretchRanges(count=100), ga.GAConfig(), DesignBounds(), PROFILE,
                        parallelism=4, master_seed=11)


def test_desk_corpus_elitism_and_recomputation(desk_corpus):
    assert len(desk_corpus) == 100
    bounds = DesignBounds()
    for rec in desk_corpus[:100:7]:
        ev = CostEvaluator(rec.stretch, rec.fixed, PROFILE)
        assert is_feasible(rec.target, bounds, rec.stretch)
        assert rec.cost <= ev.cost(dataset.no_station_design(bounds, rec.stretch))
        rep = ev.evaluate(rec.target)
        assert abs(rep.cost - rec.cost) <= 1e-12
        assert rep.xi_delta == rec.xi_delta and rep.pi_delta == rec.pi_delta


def test_corpus_is_deterministic_across_parallelism(desk_corpus, tmp_path):
    serial = build_corpus(StretchRanges(count=6), ga.GAConfig(), DesignBounds(), PROFILE,
                          parallelism=1, master_seed=11)
    parallel = build_corpus(StretchRanges(count=6), ga.GAConfig(), DesignBounds(), PROFILE,
                            parallelism=3, master_seed=11)
    assert serial == parallel == desk_corpus[:6]
    a, b = tmp_path / "a.ndjson", tmp_path / "b.ndjson"
    write_ndjson(serial, a)
    write_ndjson(parallel, b)
    assert a.read_bytes() == b.read_bytes()
    assert read_ndjson(a) == serial


def test_csv_export(desk_corpus, tmp_path):
    path = tmp_path / "corpus.csv"
    write_csv(desk_corpus[:5], path)
    rows = list(csv.reader(path.open()))
    assert len(rows) == 6 and len(rows[0]) == 6 * 15 + 3 + 4
    assert rows[0][:6] == ["L_1", "vbar_1", "w_1", "qmax_1", "rhomax_1", "beta_1"]
    assert rows[0][-4:] == ["i", "j", "delta_min", "beta_s"]
    np.testing.assert_array_equal([float(v) for v in rows[1][:93]], desk_corpus[0].features())
    with pytest.raises(ConfigurationError):
        write_csv([], path)


def test_bad_ndjson_line(tmp_path):
    path = tmp_path / "bad.ndjson"
    path.write_text('{"seed": 1}\n')
    with pytest.raises(ConfigurationError, match="line 1"):
        read_ndjson(path)


def test_failed_records_are_skipped(monkeypatch, caplog):
    real = ga.run
    calls = []

    def flaky(*args, **kwargs):
        calls.append(1)
        if len(calls) == 2:
            raise SimulationError("negative density", step=3)
        return real(*args, **kwargs)

    monkeypatch.setattr(ga, "run", flaky)
    failures = []
    records = build_corpus(StretchRanges(count=3, n_cells=6), ga.GAConfig(max_generations=2),
                           DesignBounds(), PROFILE, failures=failures)
    assert len(records) == 2 and len(failures) == 1
    assert "1 of 3" in caplog.text


def test_simulation_throughput():
    stretch = random_stretch(RANGES, 0)
    design = StationDesign(4, 6, 95.0, 0.19)
    delay_series_fast(stretch, design, FixedParams(), PROFILE)
    start = time.perf_counter()
    delay_series_fast(stretch, design, FixedParams(), PROFILE)
    assert time.perf_counter() - start < 2.0
