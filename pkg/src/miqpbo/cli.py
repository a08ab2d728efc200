"""Command-line front end: run experiments, export models, emit tables.

Subcommands:
  bo-run        replicated optimization runs with per-seed traces + summary
  solve-acq     one acquisition instance, global solver vs simplex baseline
  export-model  write an acquisition model as LP text
  linearize     write the kernel knot table and its error report

Configuration merges, in increasing precedence: built-in defaults, an INI
file given by --config, command-line flags, then the MIQPBO_TIME_LIMIT and
MIQPBO_SUB_TIME_LIMIT environment variables (operations overrides). Every
run directory receives a snapshot of the effective configuration.

Trace files are deterministic for a given config and seed: stage timings go
to a separate timings sidecar so reruns stay byte-identical.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .benchmarks import NelderMeadConfig, get_benchmark, list_benchmarks, \
    nelder_mead
from .bo import (BoConfig, BoTrace, IterationRecord, Problem, latin_hypercube,
                 lcb, polish, run_bo, save_trace)
from .gp import (Box, Dataset, KernelParams, build_gp, chol_with_jitter,
                 fit_hyperparameters, kernel_matrix, load_dataset, posterior)
from .model import build_full_model, export_lp_text, parse_lp_text
from .pwl import PwlErrorReport, build_pwl, max_error, save_breakpoints
from .solver import SolverConfig, solve

TIME_LIMIT_ENV = "MIQPBO_TIME_LIMIT"
SUB_TIME_LIMIT_ENV = "MIQPBO_SUB_TIME_LIMIT"


@dataclass(frozen=True)
class ExperimentConfig:
    """Effective settings for one subcommand invocation."""

    benchmark: str | None
    replications: int
    budget: int
    seed: int
    out_dir: str | None
    bo: BoConfig

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if self.benchmark is not None \
                and self.benchmark not in list_benchmarks():
            known = ", ".join(list_benchmarks())
            raise ValueError(f"unknown benchmark {self.benchmark!r}; "
                             f"choose from {known}")


def _fmt(value) -> str:
    return format(float(value), ".17g")


# Defaults shared by the config file and the flag parser. One source of
# truth, so the snapshot written next to results is complete.
_DEFAULTS = {
    "experiment": {"benchmark": "", "replications": "20", "budget": "20",
                   "seed": "0", "out_dir": "", "workers": "1"},
    "bo": {"init_samples": "", "pool_size": "10", "beta_coefficient": "0.2",
           "beta_kind": "empirical", "polish_steps": "50",
           "polish_step_size": "0.5", "addgp_groups": "",
           "no_warm_start": "false", "segment_scale": "1"},
    "solver": {"mip_gap": "0.5", "time_limit": "5400", "sub_time_limit": "",
               "node_limit": "100000", "pool_size": "10"},
}


def _read_config_file(path) -> dict:
    parser = configparser.ConfigParser()
    with open(path) as handle:
        parser.read_file(handle)
    merged = {section: dict(values) for section, values in _DEFAULTS.items()}
    for section in parser.sections():
        if section not in merged:
            raise ValueError(f"unknown config section [{section}]")
        for key, value in parser[section].items():
            if key not in merged[section]:
                raise ValueError(f"unknown config key {section}.{key}")
            merged[section][key] = value
    return merged


def _parse_groups(text: str):
    if not text.strip():
        return None
    groups = []
    for chunk in text.split("|"):
        dims = tuple(int(v) for v in chunk.replace(",", " ").split())
        if not dims:
            raise ValueError("empty group in addgp_groups")
        groups.append(dims)
    return tuple(groups)


def _merge_settings(args) -> dict:
    settings = {section: dict(values) for section, values in _DEFAULTS.items()}
    if getattr(args, "config", None):
        settings = _read_config_file(args.config)

    def override(section, key, value):
        if value is not None:
            settings[section][key] = str(value)

    override("experiment", "benchmark", getattr(args, "benchmark", None))
    override("experiment", "replications", getattr(args, "replications", None))
    override("experiment", "budget", getattr(args, "budget", None))
    override("experiment", "seed", getattr(args, "seed", None))
    override("experiment", "out_dir", getattr(args, "out_dir", None))
    override("experiment", "workers", getattr(args, "workers", None))
    override("bo", "init_samples", getattr(args, "init_samples", None))
    override("bo", "pool_size", getattr(args, "pool_size", None))
    override("bo", "addgp_groups", getattr(args, "addgp_groups", None))
    if getattr(args, "no_warm_start", False):
        settings["bo"]["no_warm_start"] = "true"
    override("bo", "segment_scale", getattr(args, "segment_scale", None))
    override("solver", "mip_gap", getattr(args, "mip_gap", None))
    override("solver", "time_limit", getattr(args, "time_limit", None))
    override("solver", "sub_time_limit", getattr(args, "sub_time_limit", None))
    override("solver", "node_limit", getattr(args, "node_limit", None))

    env_limit = os.environ.get(TIME_LIMIT_ENV)
    if env_limit is not None:
        settings["solver"]["time_limit"] = env_limit
    env_sub = os.environ.get(SUB_TIME_LIMIT_ENV)
    if env_sub is not None:
        settings["solver"]["sub_time_limit"] = env_sub
    return settings


def _build_experiment(settings: dict) -> ExperimentConfig:
    solver_section = settings["solver"]
    solver = SolverConfig(mip_gap=float(solver_section["mip_gap"]),
                          time_limit_s=float(solver_section["time_limit"]),
                          pool_size=int(solver_section["pool_size"]),
                          node_limit=int(solver_section["node_limit"]),
                          seed=int(settings["experiment"]["seed"]))
    sub_limit = solver_section["sub_time_limit"].strip()
    sub_solver = None
    if sub_limit:
        sub_solver = SolverConfig(mip_gap=solver.mip_gap,
                                  time_limit_s=float(sub_limit),
                                  pool_size=solver.pool_size,
                                  node_limit=solver.node_limit,
                                  seed=solver.seed)
    bo_section = settings["bo"]
    init_text = bo_section["init_samples"].strip()
    bo = BoConfig(
        max_iterations=int(settings["experiment"]["budget"]),
        init_samples=int(init_text) if init_text else None,
        pool_size=int(bo_section["pool_size"]),
        beta_coefficient=float(bo_section["beta_coefficient"]),
        beta_kind=bo_section["beta_kind"],
        polish_steps=int(bo_section["polish_steps"]),
        polish_step_size=float(bo_section["polish_step_size"]),
        addgp_groups=_parse_groups(bo_section["addgp_groups"]),
        solver=solver, sub_solver=sub_solver,
        use_warm_start=bo_section["no_warm_start"].lower()
        not in ("true", "1", "yes"),
        segment_scale=int(bo_section["segment_scale"]),
        seed=int(settings["experiment"]["seed"]))
    benchmark = settings["experiment"]["benchmark"].strip() or None
    out_dir = settings["experiment"]["out_dir"].strip() or None
    return ExperimentConfig(benchmark=benchmark,
                            replications=int(
                                settings["experiment"]["replications"]),
                            budget=int(settings["experiment"]["budget"]),
                            seed=int(settings["experiment"]["seed"]),
                            out_dir=out_dir, bo=bo)


def _write_snapshot(settings: dict, path: Path) -> None:
    parser = configparser.ConfigParser()
    for section, values in settings.items():
        parser[section] = values
    with open(path, "w") as handle:
        parser.write(handle)


def _deterministic_copy(trace: BoTrace) -> BoTrace:
    """The same trace with wall-clock stages zeroed, for stable files."""
    copy = BoTrace(initial_X=trace.initial_X, initial_y=trace.initial_y)
    for record in trace.records:
        copy.append(IterationRecord(
            iteration=record.iteration, x=record.x, value=record.value,
            best=record.best, regret=record.regret, beta=record.beta,
            gap=record.gap, fallback=record.fallback,
            timings={stage: 0.0 for stage in record.timings}))
    return copy


def _write_timings(trace: BoTrace, path: Path) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        stages = ("fit", "build", "warm", "solve", "polish")
        writer.writerow(("iteration",) + tuple(f"t_{s}" for s in stages))
        for record in trace.records:
            writer.writerow([str(record.iteration)]
                            + [_fmt(record.timings.get(s, 0.0))
                               for s in stages])


def _benchmark_problem(name: str) -> Problem:
    fn = get_benchmark(name)
    return Problem(objective=fn.eval, bounds=fn.bounds,
                   known_constraints=fn.constraints,
                   known_optimum=fn.reference_min)


def _run_one_seed(benchmark: str, bo: BoConfig, seed: int):
    problem = _benchmark_problem(benchmark)
    return seed, run_bo(problem, dataclasses.replace(bo, seed=seed))


def _write_summary(traces: dict, budget: int, path: Path) -> None:
    """Per-iteration mean and population std of simple regret over seeds."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["iteration", "regret_mean", "regret_std"])
        for t in range(1, budget + 1):
            regrets = [trace.records[t - 1].regret
                       for trace in traces.values()
                       if len(trace.records) >= t]
            if not regrets:
                break
            writer.writerow([str(t), _fmt(np.mean(regrets)),
                             _fmt(np.std(regrets))])


def cmd_bo_run(args) -> int:
    settings = _merge_settings(args)
    experiment = _build_experiment(settings)
    if experiment.benchmark is None:
        raise ValueError("bo-run needs --benchmark")
    if experiment.out_dir is None:
        raise ValueError("bo-run needs --out-dir")
    out = Path(experiment.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_snapshot(settings, out / "config.ini")

    seeds = [experiment.seed + k for k in range(experiment.replications)]
    workers = int(settings["experiment"]["workers"])
    traces = {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_one_seed, experiment.benchmark,
                                   experiment.bo, seed) for seed in seeds]
            for future in futures:
                seed, trace = future.result()
                traces[seed] = trace
    else:
        for seed in seeds:
            seed, trace = _run_one_seed(experiment.benchmark,
                                        experiment.bo, seed)
            traces[seed] = trace

    for seed in seeds:
        save_trace(_deterministic_copy(traces[seed]),
                   out / f"trace_seed{seed}.csv")
        _write_timings(traces[seed], out / f"timings_seed{seed}.csv")
    _write_summary(traces, experiment.budget, out / "summary.csv")
    print(f"wrote {len(seeds)} trace(s) and summary.csv to {out}")
    return 0


def random_acquisition_instance(dim: int, n_points: int, seed: int,
                                beta: float, noise: float = 1e-6):
    """A reproducible test instance: GP prior draw on a Latin design.

    Returns the fitted GP, the linearised kernel, the acquisition model and
    the instance data, all on the unit box.
    """
    box = Box(lower=np.zeros(dim), upper=np.ones(dim))
    X = latin_hypercube(n_points, dim, box, seed=seed)
    draw_params = KernelParams(variance=1.0, lengthscale=0.25, noise=noise)
    K = kernel_matrix(X, X, draw_params)
    K[np.diag_indices_from(K)] += noise
    L, _ = chol_with_jitter(K)
    rng = np.random.default_rng([seed, 331])
    y = L @ rng.standard_normal(n_points)
    data = Dataset(X, y)
    params = fit_hyperparameters(data, seed=seed)
    gp = build_gp(data, params)
    pwl = build_pwl(params, dim=dim, box=box)
    model = build_full_model(pwl, data, beta=beta, bounds=box)
    return {"box": box, "dataset": data, "gp": gp, "pwl": pwl,
            "model": model, "beta": beta}


def solve_acquisition_instance(instance, solver_config: SolverConfig,
                               polish_steps: int = 50):
    """Global solve vs simplex baseline on one instance's true LCB."""
    gp, beta, box = instance["gp"], instance["beta"], instance["box"]

    def true_lcb(x):
        mean, var = posterior(gp, np.asarray(x, dtype=float).reshape(-1))
        return lcb(mean, math.sqrt(max(var, 0.0)), beta)

    result = solve(instance["model"], solver_config)
    candidates = [sol.assignment[:box.dim] for sol in result.pool]
    if not candidates:
        raise RuntimeError("solver returned no candidates")
    selected = min(candidates, key=true_lcb)
    polished = polish(selected, gp, beta, steps=polish_steps, step_size=0.5,
                      bounds=box)

    nm_x, _ = nelder_mead(true_lcb, box, NelderMeadConfig())
    return {"status": result.status, "gap": result.gap,
            "nodes": result.nodes_explored,
            "miqp_x": polished, "miqp_lcb": true_lcb(polished),
            "nm_x": nm_x, "nm_lcb": true_lcb(nm_x)}


def cmd_solve_acq(args) -> int:
    settings = _merge_settings(args)
    experiment = _build_experiment(settings)
    solver_config = experiment.bo.solver
    if args.dataset:
        data = load_dataset(args.dataset)
        box = Box(lower=np.min(data.X, axis=0), upper=np.max(data.X, axis=0))
        params = fit_hyperparameters(data, seed=experiment.seed)
        gp = build_gp(data, params)
        pwl = build_pwl(params, dim=data.dim, box=box)
        model = build_full_model(pwl, data, beta=args.beta, bounds=box)
        instance = {"box": box, "dataset": data, "gp": gp, "pwl": pwl,
                    "model": model, "beta": args.beta}
    else:
        instance = random_acquisition_instance(args.dim, args.points,
                                               experiment.seed, args.beta)
    report = solve_acquisition_instance(instance, solver_config,
                                        experiment.bo.polish_steps)
    winner = "miqp" if report["miqp_lcb"] < report["nm_lcb"] - 1e-12 else (
        "nelder_mead" if report["nm_lcb"] < report["miqp_lcb"] - 1e-12
        else "tie")
    lines = [
        f"instance dim={instance['box'].dim} "
        f"points={instance['dataset'].n} seed={experiment.seed} "
        f"beta={_fmt(instance['beta'])}",
        f"status={report['status']} nodes={report['nodes']} "
        f"gap={_fmt(report['gap'])}",
        "miqp_lcb=" + _fmt(report["miqp_lcb"]) + " at "
        + " ".join(_fmt(v) for v in report["miqp_x"]),
        "nelder_mead_lcb=" + _fmt(report["nm_lcb"]) + " at "
        + " ".join(_fmt(v) for v in report["nm_x"]),
        f"winner={winner}",
    ]
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if experiment.out_dir:
        out = Path(experiment.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_snapshot(settings, out / "config.ini")
        (out / "report.txt").write_text(text)
    return 0


def cmd_export_model(args) -> int:
    data = load_dataset(args.dataset)
    lower = [float(v) for v in args.lower.split(",")]
    upper = [float(v) for v in args.upper.split(",")]
    box = Box(lower=lower, upper=upper)
    params = KernelParams(variance=args.variance, lengthscale=args.lengthscale,
                          noise=args.noise)
    pwl = build_pwl(params, dim=data.dim, box=box,
                    segment_scale=args.segment_scale)
    model = build_full_model(pwl, data, beta=args.beta, bounds=box)
    text = export_lp_text(model)
    parse_lp_text(text)   # refuse to write anything we cannot read back
    Path(args.out).write_text(text)
    print(f"wrote {args.out}: {len(model.variables)} variables, "
          f"{len(model.linear)} linear rows")
    return 0


def cmd_linearize(args) -> int:
    lower = [float(v) for v in args.lower.split(",")]
    upper = [float(v) for v in args.upper.split(",")]
    box = Box(lower=lower, upper=upper)
    params = KernelParams(variance=args.variance, lengthscale=args.lengthscale,
                          noise=args.noise)
    pwl = build_pwl(params, dim=args.dim, box=box,
                    segment_scale=args.segment_scale)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_breakpoints(pwl, out / "breakpoints.csv")
    report: PwlErrorReport = max_error(pwl)
    with open(out / "error.csv", "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["field", "value"])
        writer.writerow(["eps_m", _fmt(report.eps_max)])
        writer.writerow(["segments", str(pwl.n_segments)])
        writer.writerow(["r_max", _fmt(pwl.r_max)])
        for index, value in enumerate(report.segment_errors):
            writer.writerow([f"segment_{index}", _fmt(value)])
    print(f"wrote {out / 'breakpoints.csv'} ({pwl.knots.size} knots) and "
          f"{out / 'error.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="miqpbo",
        description="Bayesian optimization with a mixed-integer acquisition "
                    "solver")
    commands = parser.add_subparsers(dest="command", required=True)

    def common(sub):
        sub.add_argument("--config", help="INI settings file")
        sub.add_argument("--seed", type=int, help="base random seed")
        sub.add_argument("--out-dir", help="output directory")
        sub.add_argument("--mip-gap", type=float, dest="mip_gap")
        sub.add_argument("--time-limit", type=float, dest="time_limit")
        sub.add_argument("--node-limit", type=int, dest="node_limit")
        sub.add_argument("--sub-time-limit", type=float,
                         dest="sub_time_limit")
        sub.add_argument("--pool-size", type=int, dest="pool_size")

    bo_run = commands.add_parser("bo-run", help="replicated BO runs")
    common(bo_run)
    bo_run.add_argument("--benchmark", choices=list_benchmarks())
    bo_run.add_argument("--replications", type=int)
    bo_run.add_argument("--budget", type=int)
    bo_run.add_argument("--init-samples", type=int, dest="init_samples")
    bo_run.add_argument("--addgp-groups", dest="addgp_groups",
                        help="dimension groups, e.g. '0,1|2'")
    bo_run.add_argument("--no-warm-start", action="store_true",
                        dest="no_warm_start")
    bo_run.add_argument("--segment-scale", type=int, dest="segment_scale")
    bo_run.add_argument("--workers", type=int)
    bo_run.set_defaults(handler=cmd_bo_run)

    solve_acq = commands.add_parser("solve-acq",
                                    help="one acquisition instance")
    common(solve_acq)
    solve_acq.add_argument("--dataset", help="CSV dataset instead of a draw")
    solve_acq.add_argument("--dim", type=int, default=1)
    solve_acq.add_argument("--points", type=int, default=8)
    solve_acq.add_argument("--beta", type=float, default=2.0)
    solve_acq.set_defaults(handler=cmd_solve_acq)

    export = commands.add_parser("export-model", help="write LP text")
    export.add_argument("--dataset", required=True)
    export.add_argument("--variance", type=float, required=True)
    export.add_argument("--lengthscale", type=float, required=True)
    export.add_argument("--noise", type=float, default=1e-6)
    export.add_argument("--beta", type=float, default=2.0)
    export.add_argument("--lower", required=True,
                        help="comma-separated box lower bounds")
    export.add_argument("--upper", required=True,
                        help="comma-separated box upper bounds")
    export.add_argument("--segment-scale", type=int, default=1,
                        dest="segment_scale")
    export.add_argument("--out", required=True)
    export.set_defaults(handler=cmd_export_model)

    linearize = commands.add_parser("linearize", help="write knot table")
    linearize.add_argument("--variance", type=float, required=True)
    linearize.add_argument("--lengthscale", type=float, required=True)
    linearize.add_argument("--noise", type=float, default=1e-6)
    linearize.add_argument("--dim", type=int, required=True)
    linearize.add_argument("--lower", required=True)
    linearize.add_argument("--upper", required=True)
    linearize.add_argument("--segment-scale", type=int, default=1,
                           dest="segment_scale")
    linearize.add_argument("--out-dir", required=True, dest="out_dir")
    linearize.set_defaults(handler=cmd_linearize)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except (ValueError, KeyError, OSError, RuntimeError) as error:
        print(f"error: {error}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
