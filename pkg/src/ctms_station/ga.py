"""Elitist genetic algorithm over station designs.

Each generation the population is ranked by fitness -c(S|P); the best
``elite_count`` individuals survive unchanged and the remaining slots are
filled with double-point-crossover children of uniformly drawn elite pairs,
each child passed through per-gene mutation. The run stops once the best
fitness has not improved for ``stagnation_limit`` consecutive generations, or
at ``max_generations``.

Genes are the ordered vector (i, j, delta_min, beta_s). The placement genes
(i, j) are tied by the span equality, so mutation resamples them jointly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .ctm import DemandProfile, FixedParams, StationDesign, StretchParams, delay_series_fast
from .design_space import (DesignBounds, _rng, is_feasible, nearest_access_cell, project,
                           sample_ratio, sample_service_time, sample_uniform)
from .errors import ConfigurationError, DomainError
from .metrics import DEFAULT_ALPHA, CostEvaluator, design_cost, pi_delta, xi_delta

IMPROVEMENT_THRESHOLD = 1e-12
PENALTY_FITNESS = -1e6
GENERATION_LOG_COLUMNS = ("generation", "best_fitness", "mean_fitness",
                          "i", "j", "delta_min", "beta_s")

Genes = tuple[float, float, float, float]


@dataclass(frozen=True)
class GAConfig:
    """GA hyper-parameters.

    ``infeasible_policy`` is ``"repair"`` (project every child onto the
    feasible set) or ``"penalty"`` (keep infeasible children with fitness
    ``PENALTY_FITNESS``).
    """

    population_size: int = 16
    elite_count: int = 4
    mutation_prob: float = 0.1
    stagnation_limit: int = 7
    max_generations: int = 200
    rng_seed: int | None = 0
    seed_designs: tuple[StationDesign, ...] = ()
    infeasible_policy: str = "repair"

    def __post_init__(self):
        object.__setattr__(self, "seed_designs", tuple(self.seed_designs))
        if self.population_size < 1:
            raise ConfigurationError("population_size must be >= 1")
        if not 1 <= self.elite_count <= self.population_size:
            raise ConfigurationError(
                f"need 1 <= elite_count <= population_size, got {self.elite_count}")
        if not 0.0 <= self.mutation_prob <= 1.0:
            raise ConfigurationError(f"mutation_prob must lie in [0, 1], got {self.mutation_prob}")
        if self.stagnation_limit < 1:
            raise ConfigurationError("stagnation_limit must be >= 1")
        if self.max_generations < 1:
            raise ConfigurationError("max_generations must be >= 1")
        if self.infeasible_policy not in ("repair", "penalty"):
            raise ConfigurationError(
                f"infeasible_policy must be 'repair' or 'penalty', got {self.infeasible_policy!r}")


@dataclass(frozen=True)
class GenerationStats:
    generation: int
    best_fitness: float
    mean_fitness: float
    best_design: StationDesign


@dataclass(frozen=True)
class GARun:
    """Outcome of one GA run. ``fitness_history[g]`` is the best fitness after generation g+1."""

    best_design: StationDesign
    best_cost: float
    fitness_history: tuple[float, ...]
    generations_run: int
    evaluations_count: int
    generations: tuple[GenerationStats, ...] = field(default=(), repr=False)

    def write_generation_log(self, path) -> None:
        """CSV with one row per generation (best/mean fitness and best design)."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(GENERATION_LOG_COLUMNS)
            for g in self.generations:
                d = g.best_design
                writer.writerow([g.generation, repr(g.best_fitness), repr(g.mean_fitness),
                                 d.access_cell, d.exit_cell, repr(d.service_time_min),
                                 repr(d.station_ratio)])


def evaluate_fitness(design: StationDesign, stretch: StretchParams, fixed: FixedParams,
                     profile: DemandProfile, alpha: float, baseline: np.ndarray) -> float:
    """Fitness -c(S|P) of one design against a precomputed no-station delay series."""
    delta = delay_series_fast(stretch, design, fixed, profile)
    xi = xi_delta(delta, profile.step_hours)
    return -design_cost(xi, pi_delta(delta, baseline), alpha)


def _genes(design: StationDesign) -> Genes:
    return design.as_vector()


def _swap_segment(a: Genes, b: Genes, cuts: tuple[int, int]) -> Genes:
    lo, hi = cuts
    if not 0 <= lo <= hi <= 4:
        raise DomainError(f"cut points must satisfy 0 <= lo <= hi <= 4, got {cuts}")
    return tuple(b[g] if lo <= g < hi else a[g] for g in range(4))


def _draw_cuts(rng: np.random.Generator) -> tuple[int, int]:
    lo, hi = sorted(int(c) for c in rng.choice(5, size=2, replace=False))
    return lo, hi


def crossover_double_point(parent_a: StationDesign, parent_b: StationDesign, rng,
                           bounds: DesignBounds, stretch: StretchParams,
                           cuts: tuple[int, int] | None = None) -> StationDesign:
    """Swap genes [lo, hi) of ``parent_a`` for those of ``parent_b`` and repair.

    Cut points are two distinct positions in 0..4 drawn from ``rng`` unless
    ``cuts`` is given.
    """
    if cuts is None:
        cuts = _draw_cuts(_rng(rng))
    return project(_swap_segment(_genes(parent_a), _genes(parent_b), cuts), bounds, stretch)


def _mutate_genes(genes: Genes, bounds: DesignBounds, stretch: StretchParams,
                  mutation_prob: float, rng: np.random.Generator) -> Genes:
    i, j, delta, ratio = genes
    flips = rng.random(3) < mutation_prob
    if flips[0]:
        cells = bounds.check_nonempty(stretch)
        i = float(cells[int(rng.integers(len(cells)))])
        j = i + bounds.span
    if flips[1]:
        delta = sample_service_time(bounds, rng)
    access = int(i)
    valid_access = float(i).is_integer() and 1 <= access <= stretch.n_cells
    if flips[2] and valid_access:
        ratio = sample_ratio(bounds, stretch, access, rng)
    elif flips[0] and valid_access:
        ratio = min(ratio, bounds.ratio_upper(stretch, access))
    return (i, j, delta, ratio)


def mutate(design: StationDesign, bounds: DesignBounds, mutation_prob: float, rng,
           stretch: StretchParams) -> StationDesign:
    """Per-gene resampling: each of placement (i, j jointly), delta, beta_s is
    redrawn uniformly from its range with probability ``mutation_prob``.
    """
    if not 0.0 <= mutation_prob <= 1.0:
        raise DomainError(f"mutation_prob must lie in [0, 1], got {mutation_prob}")
    if mutation_prob == 0.0:
        return design
    genes = _mutate_genes(_genes(design), bounds, stretch, mutation_prob, _rng(rng))
    return project(genes, bounds, stretch) if genes != _genes(design) else design


def _as_design(genes: Genes, bounds: DesignBounds, stretch: StretchParams) -> StationDesign | None:
    """The design for ``genes`` if it is feasible, else None."""
    i, j, delta, ratio = genes
    try:
        design = StationDesign(int(i), int(j), delta, ratio)
    except DomainError:
        return None
    if (int(i), int(j)) != (i, j) or not is_feasible(design, bounds, stretch):
        return None
    return design


def run(stretch: StretchParams, fixed: FixedParams, profile: DemandProfile,
        bounds: DesignBounds, alpha: float = DEFAULT_ALPHA, config: GAConfig = GAConfig(),
        evaluator: CostEvaluator | None = None,
        on_generation: Callable[[GenerationStats], None] | None = None) -> GARun:
    """Run the elitist GA and return the best design found.

    ``evaluator`` may be passed to share the cached baseline and evaluations
    across runs on the same (stretch, fixed, profile); it must match them.
    """
    bounds.check_nonempty(stretch)
    if bounds.span != fixed.station_cell_span:
        raise ConfigurationError(f"bounds span {bounds.span} differs from the fixed station "
                                 f"span {fixed.station_cell_span}")
    if evaluator is None:
        evaluator = CostEvaluator(stretch, fixed, profile, alpha)
    elif evaluator.stretch is not stretch and evaluator.stretch != stretch:
        raise ConfigurationError("evaluator was built for a different stretch")
    rng = np.random.default_rng(config.rng_seed)
    repair = config.infeasible_policy == "repair"

    population: list[Genes] = []
    for seed_design in config.seed_designs[:config.population_size]:
        if not is_feasible(seed_design, bounds, stretch):
            raise ConfigurationError(f"seed design {seed_design} is not feasible")
        population.append(_genes(seed_design))
    while len(population) < config.population_size:
        population.append(_genes(sample_uniform(bounds, stretch, rng)))

    fitness_of: dict[Genes, float] = {}
    simulated_before = evaluator.simulations

    def fitness(genes: Genes) -> float:
        value = fitness_of.get(genes)
        if value is None:
            design = _as_design(genes, bounds, stretch)
            value = PENALTY_FITNESS if design is None else -evaluator.cost(design)
            fitness_of[genes] = value
        return value

    history: list[float] = []
    stats: list[GenerationStats] = []
    best_fit = -math.inf
    best_genes = population[0]
    stagnant = 0
    generation = 0
    while True:
        generation += 1
        scores = [fitness(g) for g in population]
        order = sorted(range(len(population)), key=lambda q: (-scores[q], population[q]))
        ranked = [population[q] for q in order]
        gen_best = scores[order[0]]
        if not history or gen_best > best_fit + IMPROVEMENT_THRESHOLD:
            stagnant = 0
        else:
            stagnant += 1
        if gen_best > best_fit:
            best_fit, best_genes = gen_best, ranked[0]
        history.append(best_fit)
        finite = [s for s in scores if math.isfinite(s)]
        mean = float(np.mean(finite)) if len(finite) == len(scores) else -math.inf
        gen_stats = GenerationStats(generation, best_fit, mean,
                                    _as_design(best_genes, bounds, stretch))
        stats.append(gen_stats)
        if on_generation is not None:
            on_generation(gen_stats)
        if stagnant >= config.stagnation_limit or generation >= config.max_generations:
            break

        elites = ranked[:config.elite_count]
        children: list[Genes] = []
        for _ in range(config.population_size - config.elite_count):
            pa = elites[int(rng.integers(len(elites)))]
            pb = elites[int(rng.integers(len(elites)))]
            child = _swap_segment(pa, pb, _draw_cuts(rng))
            if repair:
                child = _genes(project(child, bounds, stretch))
            child = _mutate_genes(child, bounds, stretch, config.mutation_prob, rng)
            if repair:
                child = _genes(project(child, bounds, stretch))
            children.append(child)
        population = elites + children

    best_design = _as_design(best_genes, bounds, stretch)
    if best_design is None:
        raise ConfigurationError("no feasible design was evaluated")
    return GARun(best_design, -best_fit, tuple(history), generation,
                 evaluator.simulations - simulated_before, tuple(stats))
