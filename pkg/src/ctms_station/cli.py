"""Command-line entry point: ``ctms-station <subcommand> ...``.

Exit codes: 0 success, 1 domain/validation error, 2 usage error.
Every file written with ``--out`` gets a ``<out>.manifest.json`` next to it
recording the command line, resolved configuration, seed, version, input
digests and timing.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

from . import __version__, bruteforce, dataset, ga, scenarios, surrogate
from .ctm import StationDesign, simulate
from .design_space import DesignBounds
from .errors import CTMSError
from .metrics import delay_series

SEED_ENV = "CTMS_SEED"


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------

def _parse_design(text: str) -> StationDesign:
    parts = text.split(",")
    if len(parts) != 4:
        raise UsageError(f"design must be i,j,delta_min,beta_s; got {text!r}")
    try:
        i, j, delta, ratio = int(parts[0]), int(parts[1]), float(parts[2]), float(parts[3])
    except ValueError:
        raise UsageError(f"cannot parse design {text!r}") from None
    return StationDesign(i, j, delta, ratio)


def _parse_cells(text: str) -> frozenset[int]:
    try:
        return frozenset(int(c) for c in text.split(",") if c.strip())
    except ValueError:
        raise UsageError(f"cell list must be comma-separated integers, got {text!r}") from None


def _seed(args, required: bool = True) -> int | None:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    if required:
        raise UsageError(f"this command is randomized: pass --seed or set {SEED_ENV}")
    return None


def _digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _scenario(args) -> scenarios.Scenario:
    scenario = scenarios.resolve_scenario(args.scenario)
    if getattr(args, "alpha", None) is not None:
        scenario = replace(scenario, alpha=args.alpha)
    return scenario


def _inputs(args) -> dict:
    out = {}
    for name in ("scenario", "corpus", "model"):
        value = getattr(args, name, None)
        if value and Path(value).is_file():
            out[value] = _digest(value)
    return out


def _write_manifest(out: str, args, argv, config: dict, seed, started: float) -> None:
    manifest = {
        "subcommand": args.command,
        "argv": list(argv),
        "config": config,
        "seed": seed,
        "version": __version__,
        "inputs": _inputs(args),
        "outputs": {out: _digest(out)},
        "wall_seconds": round(time.perf_counter() - started, 3),
    }
    Path(f"{out}.manifest.json").write_text(json.dumps(manifest, indent=2, default=str) + "\n")


def _design_config(d: StationDesign | None):
    return None if d is None else [d.access_cell, d.exit_cell, d.service_time_min,
                                   d.station_ratio]


def _csv_writer(fh):
    return csv.writer(fh, lineterminator="\n")


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_simulate(args, argv, started):
    sc = _scenario(args)
    design = _parse_design(args.design) if args.design else None
    traj = simulate(sc.stretch, design, sc.fixed, sc.profile)
    delta = delay_series(traj, sc.stretch)
    ev = sc.evaluator()
    rep = ev.evaluate(design) if design is not None else ev.baseline_report()
    print(f"scenario {sc.name}: design {design if design else 'none'}  "
          f"xi={rep.xi_delta:.3f} min  pi={rep.pi_delta:.4f}  cost={rep.cost:.4f}")
    if args.out:
        n = sc.stretch.n_cells
        cols = ["k", "time_h"]
        for prefix in ("rho", "phi", "r", "s", "v"):
            cols += [f"{prefix}_{c}" for c in range(1, n + 1)]
        cols += [f"phi_{n + 1}", "station_in", "station_out", "station_count", "exit_queue",
                 "origin_queue", "delta_h"]
        with open(args.out, "w", newline="") as fh:
            w = _csv_writer(fh)
            w.writerow(cols)
            T = traj.step_hours
            for k in range(traj.horizon_steps):
                row = [k, repr(k * T)]
                for arr in (traj.density[k], traj.phi[k, :n], traj.onramp[k], traj.offramp[k],
                            traj.speed[k]):
                    row += [repr(float(x)) for x in arr]
                row += [repr(float(x)) for x in (traj.phi[k, n], traj.station_in[k],
                                                 traj.station_out[k], traj.station_count[k],
                                                 traj.exit_queue[k], traj.origin_queue[k],
                                                 delta[k])]
                w.writerow(row)
        _write_manifest(args.out, args, argv, {"scenario": sc.name,
                                               "design": _design_config(design),
                                               "alpha": sc.alpha}, None, started)
    return 0


def _ga_config(args, seed) -> ga.GAConfig:
    return ga.GAConfig(population_size=args.population, elite_count=args.elites,
                       mutation_prob=args.mutation_prob, stagnation_limit=args.stagnation,
                       max_generations=args.max_generations, rng_seed=seed)


def cmd_optimize_ga(args, argv, started):
    seed = _seed(args)
    sc = _scenario(args)
    config = _ga_config(args, seed)
    if args.seed_reference:
        ref = sc.reference_designs.get(args.seed_reference)
        if ref is None:
            raise UsageError(f"scenario has no design {args.seed_reference!r}")
        config = replace(config, seed_designs=(ref,))
    result = ga.run(sc.stretch, sc.fixed, sc.profile, sc.bounds, sc.alpha, config)
    print(f"best design {result.best_design}  cost={result.best_cost:.6f}  "
          f"generations={result.generations_run}  evaluations={result.evaluations_count}")
    if args.out:
        result.write_generation_log(args.out)
        cfg = asdict(config)
        cfg["seed_designs"] = [_design_config(d) for d in config.seed_designs]
        _write_manifest(args.out, args, argv, {"scenario": sc.name, "alpha": sc.alpha,
                                               "ga": cfg,
                                               "best_design": _design_config(result.best_design),
                                               "best_cost": result.best_cost}, seed, started)
    return 0


def cmd_optimize_bf(args, argv, started):
    sc = _scenario(args)
    grid = bruteforce.GridSpec(args.grid_delta_step, args.grid_ratio_step)
    result = bruteforce.search(sc.stretch, sc.fixed, sc.profile, sc.bounds, sc.alpha, grid)
    print(f"best design {result.best}  cost={result.cost:.6f}  grid points={len(result.table)}")
    if args.out:
        result.write_table(args.out)
        _write_manifest(args.out, args, argv, {"scenario": sc.name, "alpha": sc.alpha,
                                               "grid": asdict(grid),
                                               "best_design": _design_config(result.best),
                                               "best_cost": result.cost}, None, started)
    return 0


def cmd_gen_dataset(args, argv, started):
    seed = _seed(args)
    ranges = dataset.StretchRanges(n_cells=args.cells, count=args.count)
    profile = scenarios.synthesize_profile(scenarios.BimodalProfileSpec(), args.step_hours)
    config = _ga_config(args, 0)
    failures: list = []
    records = dataset.build_corpus(ranges, config, DesignBounds(), profile, args.alpha,
                                   args.jobs, seed, failures)
    dataset.write_ndjson(records, args.out)
    if args.csv:
        dataset.write_csv(records, args.csv)
    print(f"wrote {len(records)} records to {args.out} ({len(failures)} failed)")
    cfg = {"count": args.count, "cells": args.cells, "alpha": args.alpha,
           "step_hours": args.step_hours, "profile": asdict(scenarios.BimodalProfileSpec()),
           "ga": {k: v for k, v in asdict(config).items() if k not in ("rng_seed",
                                                                      "seed_designs")},
           "failures": failures}
    _write_manifest(args.out, args, argv, cfg, seed, started)
    if args.csv:
        _write_manifest(args.csv, args, argv, cfg, seed, started)
    return 0


def cmd_train_nn(args, argv, started):
    seed = _seed(args)
    records = dataset.read_ndjson(args.corpus)
    config = surrogate.TrainConfig(batch_size=args.batch, epochs=args.epochs, rng_seed=seed)
    model, curves = surrogate.train(records, config)
    model.save(args.out)
    if args.loss_csv:
        curves.write_csv(args.loss_csv)
    print(f"trained on {len(records)} records: validation MSLE epoch 1 "
          f"{curves.validation[0]:.4f} -> epoch {len(curves.validation)} "
          f"{curves.validation[-1]:.4f}")
    cfg = {k: v for k, v in asdict(config).items() if k != "feature_ranges"}
    _write_manifest(args.out, args, argv, cfg, seed, started)
    if args.loss_csv:
        _write_manifest(args.loss_csv, args, argv, cfg, seed, started)
    return 0


def cmd_predict_nn(args, argv, started):
    sc = _scenario(args)
    model = surrogate.MLPModel.load(args.model)
    t0 = time.perf_counter()
    design = surrogate.predict(model, sc.stretch, sc.fixed, sc.bounds)
    latency = time.perf_counter() - t0
    rep = sc.evaluator().evaluate(design)
    print(f"predicted design {design}  xi={rep.xi_delta:.3f} min  pi={rep.pi_delta:.4f}  "
          f"cost={rep.cost:.4f}  (inference {latency * 1000:.2f} ms)")
    if args.out:
        Path(args.out).write_text(json.dumps({"design": _design_config(design),
                                              "xi_delta_min": rep.xi_delta,
                                              "pi_delta": rep.pi_delta,
                                              "cost": rep.cost}, indent=2) + "\n")
        _write_manifest(args.out, args, argv, {"scenario": sc.name, "alpha": sc.alpha},
                        None, started)
    return 0


def cmd_case_study(args, argv, started):
    seed = _seed(args)
    sc = scenarios.resolve_scenario(args.name)
    if args.alpha is not None:
        sc = replace(sc, alpha=args.alpha)
    excluded = _parse_cells(args.exclude_cells) if args.exclude_cells else frozenset()
    result = scenarios.run_case_study(sc, seed=seed, excluded_cells=excluded,
                                      ga_config=_ga_config(args, seed))
    print(f"case study {sc.name}" + (f" (excluded cells {sorted(excluded)})" if excluded
                                      else ""))
    print(scenarios.format_comparison(result.rows))
    if args.out:
        scenarios.write_comparison(result.rows, args.out)
        _write_manifest(args.out, args, argv, {"scenario": sc.name, "alpha": sc.alpha,
                                               "excluded_cells": sorted(excluded)},
                        seed, started)
    return 0


def cmd_compare(args, argv, started):
    sc = _scenario(args)
    designs = dict(sc.reference_designs) if not args.design else {}
    for item in args.design or ():
        name, sep, vec = item.partition("=")
        if not sep:
            raise UsageError(f"--design expects name=i,j,delta,beta_s, got {item!r}")
        designs[name] = _parse_design(vec)
    rows = scenarios.compare_designs(sc, designs, reference=args.reference,
                                     optimum=args.optimum)
    print(scenarios.format_comparison(rows))
    if args.out:
        scenarios.write_comparison(rows, args.out)
        _write_manifest(args.out, args, argv, {"scenario": sc.name, "alpha": sc.alpha,
                                               "designs": {k: _design_config(v)
                                                           for k, v in designs.items()}},
                        None, started)
    return 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def _add_common(p, scenario=True):
    if scenario:
        p.add_argument("--scenario", required=True,
                       help="built-in scenario name (a2, a4) or scenario JSON path")
    p.add_argument("--seed", type=int, default=None,
                   help=f"random seed (falls back to ${SEED_ENV})")
    p.add_argument("--alpha", type=float, default=None, help="cost weight of xi (per minute)")
    p.add_argument("--out", default=None, help="output file")
    p.add_argument("--jobs", type=int, default=1, help="maximum worker processes")


def _add_ga(p):
    d = ga.GAConfig()
    p.add_argument("--population", type=int, default=d.population_size)
    p.add_argument("--elites", type=int, default=d.elite_count)
    p.add_argument("--mutation-prob", type=float, default=d.mutation_prob)
    p.add_argument("--stagnation", type=int, default=d.stagnation_limit)
    p.add_argument("--max-generations", type=int, default=d.max_generations)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctms-station",
                                     description="Service-station design on CTM-s highways")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate one design (or none) and export the trajectory")
    _add_common(p)
    p.add_argument("--design", help="i,j,delta_min,beta_s (omit for no station)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("optimize-ga", help="optimise the station with the genetic algorithm")
    _add_common(p)
    _add_ga(p)
    p.add_argument("--seed-reference", default=None,
                   help="name of a scenario reference design to seed the population")
    p.set_defaults(func=cmd_optimize_ga)

    p = sub.add_parser("optimize-bf", help="exhaustive grid search")
    _add_common(p)
    p.add_argument("--grid-delta-step", type=float, default=5.0, help="minutes")
    p.add_argument("--grid-ratio-step", type=float, default=0.01)
    p.set_defaults(func=cmd_optimize_bf)

    p = sub.add_parser("gen-dataset", help="build a GA-labelled training corpus")
    _add_common(p, scenario=False)
    _add_ga(p)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--cells", type=int, default=15)
    p.add_argument("--step-hours", type=float, default=0.0025)
    p.add_argument("--csv", default=None, help="also write a flat CSV export")
    p.set_defaults(func=cmd_gen_dataset, alpha_default=0.01)

    p = sub.add_parser("train-nn", help="train the MLP surrogate on a corpus")
    _add_common(p, scenario=False)
    p.add_argument("--corpus", required=True)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--loss-csv", default=None, help="per-epoch loss curves")
    p.set_defaults(func=cmd_train_nn)

    p = sub.add_parser("predict-nn", help="predict a design with a trained surrogate")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_predict_nn)

    p = sub.add_parser("case-study", help="GA optimum vs reference with mixed designs")
    p.add_argument("name", choices=scenarios.BUILTIN_NAMES)
    _add_common(p, scenario=False)
    _add_ga(p)
    p.add_argument("--exclude-cells", default=None, help="comma-separated cells, e.g. 4,5,6")
    p.set_defaults(func=cmd_case_study)

    p = sub.add_parser("compare", help="tabulate xi, pi and cost of named designs")
    _add_common(p)
    p.add_argument("--design", action="append",
                   help="name=i,j,delta_min,beta_s (repeatable; default: reference designs)")
    p.add_argument("--reference", default=None, help="name of the reference design")
    p.add_argument("--optimum", default=None, help="name of the optimal design")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    if args.command == "gen-dataset" and args.alpha is None:
        args.alpha = args.alpha_default
    if args.command == "gen-dataset" and not args.out:
        parser.print_usage(sys.stderr)
        print("ctms-station: error: gen-dataset requires --out", file=sys.stderr)
        return 2
    if args.command == "train-nn" and not args.out:
        parser.print_usage(sys.stderr)
        print("ctms-station: error: train-nn requires --out", file=sys.stderr)
        return 2
    started = time.perf_counter()
    try:
        return args.func(args, argv, started)
    except UsageError as exc:
        print(f"ctms-station: error: {exc}", file=sys.stderr)
        return 2
    except CTMSError as exc:
        print(f"ctms-station: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
