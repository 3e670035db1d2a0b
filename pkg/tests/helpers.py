"""Builders shared by the test modules."""

import numpy as np

from ctms_station.ctm import CellParams, StretchParams


def uniform_stretch(n=6, length=0.5, vbar=100.0, wave=25.0, cap=2000.0, jam=80.0,
                    offramps=None):
    offramps = offramps or [0.0] * n
    return StretchParams(tuple(CellParams(length, vbar, wave, cap, jam, b) for b in offramps))


def random_stretch_params(rng, n, offramp_max=0.0):
    cells = []
    for _ in range(n):
        vbar = rng.uniform(80, 110)
        cells.append(CellParams(rng.uniform(0.3, 1.0), vbar, rng.uniform(10, 40),
                                rng.uniform(1500, 2500), rng.uniform(70, 100),
                                rng.uniform(0, offramp_max) if offramp_max else 0.0))
    return StretchParams(tuple(cells))


def peaked_inflow(steps, step_hours, base=300.0, peak=1700.0):
    t = np.arange(steps) * step_hours
    centre = t[-1] / 2 if steps > 1 else 0.0
    width = max(t[-1] / 6, step_hours)
    return base + peak * np.exp(-0.5 * ((t - centre) / width) ** 2)


def random_case(seed, n_range=(2, 8), steps=400, with_ramps=True):
    """Random (stretch, design, fixed, profile) with off-ramps, on-ramps and a station.

    The step is chosen from the CFL bound so every lag (including 0) occurs.
    """
    from ctms_station.ctm import DemandProfile, FixedParams, StationDesign

    rng = np.random.default_rng(seed)
    n = int(rng.integers(n_range[0], n_range[1] + 1))
    stretch = random_stretch_params(rng, n, offramp_max=0.15)
    step_hours = float(rng.uniform(0.3, 1.0) * stretch.max_step_hours)
    span = int(rng.integers(1, n))
    access = int(rng.integers(1, n - span + 1))
    beta = stretch.cell(access).offramp_ratio
    design = StationDesign(access, access + span, float(rng.choice([0.0, rng.uniform(0, 30)])),
                           float(rng.uniform(0, min(0.5, 1 - beta))))
    fixed = FixedParams(float(rng.uniform(0.5, 1.0)), float(rng.uniform(50, 1500)), span)
    inflow = peaked_inflow(steps, step_hours, base=rng.uniform(0, 800),
                           peak=rng.uniform(0, 2500))
    ramps = None
    if with_ramps and rng.random() < 0.6:
        ramps = rng.uniform(0, 400, (steps, n)) * (rng.random(n) < 0.4)
    return stretch, design, fixed, DemandProfile(step_hours, inflow, ramps)


def bottleneck_stretch(n=6, at=5, cap=1200.0, **kw):
    """Uniform stretch whose cell ``at`` (1-based) has a reduced capacity."""
    base = uniform_stretch(n=n, **kw)
    cells = list(base.cells)
    c = cells[at - 1]
    cells[at - 1] = CellParams(c.length_km, c.free_flow_speed, c.wave_speed, cap,
                               c.jam_density, c.offramp_ratio)
    return StretchParams(tuple(cells))


def check_trajectory_bounds(traj, stretch, fixed):
    """Assert the per-step state bounds and flow signs of a recorded trajectory."""
    assert np.all(traj.density >= 0) and np.all(traj.density <= stretch.jam_densities)
    assert np.all(traj.exit_queue >= -1e-9)
    assert np.all(traj.station_count >= traj.exit_queue - 1e-9)
    for name in ("phi", "total_in", "total_out", "onramp", "offramp", "station_in",
                 "station_out", "ramp_queues", "origin_queue"):
        assert np.all(getattr(traj, name) >= 0), name
    assert np.all(traj.station_out <= fixed.ramp_capacity * (1 + 1e-12))
    traj.final_state.check(stretch)


ACCEPTANCE: dict[int, str] = {}


def record_criterion(number, passed, detail):
    """Store (and print) the one-line verdict of an acceptance criterion."""
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'} - {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return passed
