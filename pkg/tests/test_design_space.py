import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ctms_station.ctm import StationDesign
from ctms_station.design_space import DesignBounds, is_feasible, project, sample_uniform
from ctms_station.errors import ConfigurationError
from helpers import uniform_stretch

N15 = uniform_stretch(n=15)
N10 = uniform_stretch(n=10)
BOUNDS = DesignBounds()


@pytest.mark.parametrize("design, expected", [
    (StationDesign(4, 6, 95, 0.19), True),
    (StationDesign(4, 7, 95, 0.19), False),
    (StationDesign(4, 6, 95, 0.25), False),
    (StationDesign(4, 6, 721, 0.19), False),
    (StationDesign(14, 16, 95, 0.1), False),
])
def test_is_feasible_examples(design, expected):
    assert is_feasible(design, BOUNDS, N15) is expected


def test_is_feasible_respects_offramp_and_exclusions():
    stretch = uniform_stretch(n=10, offramps=[0, 0, 0.85, 0, 0, 0, 0, 0, 0, 0])
    assert not is_feasible(StationDesign(3, 5, 10, 0.19), BOUNDS, stretch)
    assert is_feasible(StationDesign(3, 5, 10, 0.15), BOUNDS, stretch)
    excl = DesignBounds(excluded_cells=frozenset({4, 5, 6}))
    assert not is_feasible(StationDesign(2, 4, 10, 0.1), excl, N15)
    assert not is_feasible(StationDesign(5, 7, 10, 0.1), excl, N15)
    assert is_feasible(StationDesign(7, 9, 10, 0.1), excl, N15)
    ranged = DesignBounds(cell_range=(3, 5))
    assert [i for i in range(1, 14) if is_feasible(StationDesign(i, i + 2, 1, 0.1), ranged,
                                                   N15)] == [3, 4, 5]


def test_sample_uniform_examples():
    for seed in range(200):
        d = sample_uniform(BOUNDS, N10, seed)
        assert 1 <= d.access_cell <= 8 and d.exit_cell == d.access_cell + 2
        assert is_feasible(d, BOUNDS, N10)
    assert sample_uniform(BOUNDS, N10, 5) == sample_uniform(BOUNDS, N10, 5)


def test_sample_uniform_ratio_mean():
    rng = np.random.default_rng(0)
    ratios = np.array([sample_uniform(BOUNDS, N10, rng).station_ratio for _ in range(10_000)])
    sigma = 0.2 / math.sqrt(12) / math.sqrt(ratios.size)
    assert abs(ratios.mean() - 0.1) < 3 * sigma
    cells = np.array([sample_uniform(BOUNDS, N10, rng).access_cell for _ in range(8000)])
    counts = np.bincount(cells, minlength=9)[1:]
    assert counts.min() > 850 and counts.max() < 1150


def test_empty_feasible_set():
    bounds = DesignBounds(excluded_cells=frozenset(range(1, 16)))
    with pytest.raises(ConfigurationError):
        sample_uniform(bounds, N15, 0)
    with pytest.raises(ConfigurationError):
        project((1, 3, 10, 0.1), bounds, N15)


@pytest.mark.parametrize("raw, expected", [
    ((4.4, 6.1, 95, 0.19), StationDesign(4, 6, 95, 0.19)),
    ((-3, 99, 10000, 0.9), StationDesign(1, 3, 720, 0.2)),
    ((4.5, 0, 10, 0.1), StationDesign(4, 6, 10, 0.1)),
    ((math.nan, math.nan, math.nan, math.nan), StationDesign(1, 3, 0, 0)),
    ((40, 0, -5, -1), StationDesign(13, 15, 0, 0)),
])
def test_project_examples(raw, expected):
    assert project(raw, BOUNDS, N15) == expected


def test_project_skips_excluded_cells():
    bounds = DesignBounds(excluded_cells=frozenset({4, 5, 6}))
    assert project((5.0, 7.0, 80, 0.10), bounds, N15) == StationDesign(7, 9, 80, 0.10)


def test_bounds_validation():
    with pytest.raises(ConfigurationError):
        DesignBounds(span=0)
    with pytest.raises(ConfigurationError):
        DesignBounds(ratio_range=(0.3, 0.2))
    with pytest.raises(ConfigurationError):
        DesignBounds(cell_range=(5, 2))


reals = st.floats(allow_nan=True, allow_infinity=True)
excluded = st.frozensets(st.integers(1, 15), max_size=6)


@given(st.tuples(reals, reals, reals, reals), excluded)
def test_project_is_feasible_and_idempotent(raw, excl):
    bounds = DesignBounds(excluded_cells=excl)
    if not bounds.admissible_access_cells(N15):
        return
    d = project(raw, bounds, N15)
    assert is_feasible(d, bounds, N15)
    assert project(d.as_vector(), bounds, N15) == d


@given(st.integers(0, 2 ** 32), excluded)
def test_sampled_designs_are_feasible(seed, excl):
    bounds = DesignBounds(excluded_cells=excl)
    if not bounds.admissible_access_cells(N15):
        return
    assert is_feasible(sample_uniform(bounds, N15, seed), bounds, N15)
