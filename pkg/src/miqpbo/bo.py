"""Bayesian-optimization driver around the mixed-integer acquisition solver.

One iteration: standardize the data, refit kernel hyperparameters, linearise
the kernel, collect warm starts from the posterior-mean sub-model plus random
feasible draws, solve the full acquisition model globally, pick the candidate
with the lowest exact-posterior LCB, polish it by projected gradient descent,
and unscale. Additive runs apply the same pipeline per dimension group and
concatenate the proposals.

Everything between standardize and unscale happens in the unit box with
outputs mapped to [0, 1], so solver tolerances keep a consistent scale across
problems.
"""

from __future__ import annotations

import csv
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .gp import (Box, Dataset, GpModel, build_gp, fit_hyperparameters,
                 posterior, standardize)
from .model import (LinearConstraint, QuadConstraint, build_full_model,
                    build_sub_model, evaluate_candidate)
from .pwl import build_pwl
from .solver import SolverConfig, solve

BETA_KINDS = ("empirical", "theoretical")

DUPLICATE_TOL = 1e-6
FEASIBILITY_TOL = 1e-6
REJECTION_ATTEMPTS = 10_000


@dataclass(frozen=True)
class BoConfig:
    """Loop budget, pool sizes, schedule and solver settings.

    init_samples of None means the usual min(10 D, 30) starting design.
    addgp_groups, when given, must partition the coordinate indices; each
    group gets its own kernel fit and its own acquisition solve.
    """

    max_iterations: int = 20
    init_samples: int | None = None
    pool_size: int = 10
    beta_coefficient: float = 0.2
    beta_kind: str = "empirical"
    polish_steps: int = 50
    polish_step_size: float = 0.5
    addgp_groups: tuple | None = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    sub_solver: SolverConfig | None = None
    use_warm_start: bool = True
    segment_scale: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be non-negative")
        if self.init_samples is not None and self.init_samples < 2:
            raise ValueError("init_samples must be at least 2")
        if self.pool_size < 1:
            raise ValueError("pool_size must be at least 1")
        if self.beta_coefficient <= 0.0:
            raise ValueError("beta_coefficient must be positive")
        if self.beta_kind not in BETA_KINDS:
            raise ValueError(f"beta_kind must be one of {BETA_KINDS}")
        if self.polish_steps < 0:
            raise ValueError("polish_steps must be non-negative")
        if self.polish_step_size <= 0.0:
            raise ValueError("polish_step_size must be positive")
        if self.segment_scale < 1:
            raise ValueError("segment_scale must be at least 1")
        if self.addgp_groups is not None:
            groups = tuple(tuple(int(d) for d in g) for g in self.addgp_groups)
            if not groups or any(not g for g in groups):
                raise ValueError("addgp_groups must be nonempty groups")
            object.__setattr__(self, "addgp_groups", groups)

    def resolved_init(self, dim: int) -> int:
        if self.init_samples is not None:
            return self.init_samples
        return min(10 * dim, 30)


@dataclass(frozen=True)
class Problem:
    """Objective callback on a finite box, optionally with known constraints."""

    objective: object
    bounds: Box
    known_constraints: tuple = ()
    known_optimum: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "known_constraints",
                           tuple(self.known_constraints))
        if not callable(self.objective):
            raise ValueError("objective must be callable")


@dataclass(frozen=True)
class IterationRecord:
    """One proposal: where, what it cost, and how the search behaved."""

    iteration: int
    x: np.ndarray
    value: float
    best: float
    regret: float
    beta: float
    gap: float
    fallback: bool
    timings: dict


@dataclass
class BoTrace:
    """Initial design plus one record per iteration."""

    initial_X: np.ndarray
    initial_y: np.ndarray
    records: list = field(default_factory=list)

    def append(self, record: IterationRecord) -> None:
        if self.records and record.best > self.records[-1].best + 1e-12:
            raise ValueError("incumbent best must be non-increasing")
        self.records.append(record)

    def best_history(self):
        return [record.best for record in self.records]

    @property
    def final_best(self) -> float:
        if self.records:
            return self.records[-1].best
        return float(np.min(self.initial_y))


TRACE_STAGES = ("fit", "build", "warm", "solve", "polish")


def save_trace(trace: BoTrace, path) -> None:
    """Write a trace as delimited text, one row per evaluation.

    Initial-design rows carry iteration 0 and nan in the loop-only columns.
    """
    dim = trace.initial_X.shape[1]
    header = (["iteration"] + [f"x{d}" for d in range(dim)]
              + ["f", "best", "regret", "beta", "gap"]
              + [f"t_{stage}" for stage in TRACE_STAGES] + ["fallback"])

    def fmt(value):
        return format(float(value), ".17g")

    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        best = np.inf
        for x, y in zip(trace.initial_X, trace.initial_y):
            best = min(best, float(y))
            writer.writerow(["0"] + [fmt(v) for v in x]
                            + [fmt(y), fmt(best), "nan", "nan", "nan"]
                            + ["0"] * len(TRACE_STAGES) + ["0"])
        for record in trace.records:
            timings = [fmt(record.timings.get(stage, 0.0))
                       for stage in TRACE_STAGES]
            writer.writerow([str(record.iteration)] + [fmt(v) for v in record.x]
                            + [fmt(record.value), fmt(record.best),
                               fmt(record.regret), fmt(record.beta),
                               fmt(record.gap)] + timings
                            + [str(int(record.fallback))])


def load_trace(path) -> BoTrace:
    """Read a trace written by save_trace."""
    with open(path, newline="") as handle:
        rows = list(csv.reader(handle))
    if not rows:
        raise ValueError("empty trace file")
    header = rows[0]
    dim = sum(1 for name in header if name.startswith("x"))
    init_X, init_y, records = [], [], []
    for row in rows[1:]:
        iteration = int(row[0])
        x = np.array([float(v) for v in row[1:1 + dim]])
        value, best, regret, beta, gap = (float(v)
                                          for v in row[1 + dim:6 + dim])
        if iteration == 0:
            init_X.append(x)
            init_y.append(value)
            continue
        timings = {stage: float(row[6 + dim + k])
                   for k, stage in enumerate(TRACE_STAGES)}
        records.append(IterationRecord(
            iteration=iteration, x=x, value=value, best=best, regret=regret,
            beta=beta, gap=gap, fallback=bool(int(row[-1])), timings=timings))
    trace = BoTrace(initial_X=np.array(init_X), initial_y=np.array(init_y))
    for record in records:
        trace.append(record)
    return trace


def beta_schedule(t: int, dim: int) -> float:
    """Exploration weight 0.2 D ln(2t) at iteration t >= 1."""
    if t < 1:
        raise ValueError("iterations are counted from 1")
    return 0.2 * dim * math.log(2.0 * t)


def theoretical_beta(t: int, dim: int, delta: float = 0.1, a: float = 1.0,
                     b: float = 1.0, r: float = 1.0) -> float:
    """Confidence-bound schedule from the regret analysis.

    Grows like log t^2 plus a dimension term; much more conservative than
    beta_schedule, so it explores harder. Constants keep their usual meaning:
    delta is the failure probability, a and b the kernel tail constants, r
    the box radius.
    """
    if t < 1:
        raise ValueError("iterations are counted from 1")
    tail = math.sqrt(math.log(4.0 * dim * a / delta))
    return (2.0 * math.log(2.0 * t * t * math.pi ** 2 / (3.0 * delta))
            + 2.0 * dim * math.log(t * t * dim * b * r * tail))


def lcb(mean, std, beta):
    """Lower confidence bound mean - sqrt(beta) std."""
    if np.any(np.asarray(std) < 0.0):
        raise ValueError("std must be non-negative")
    if beta < 0.0:
        raise ValueError("beta must be non-negative")
    return mean - math.sqrt(beta) * std


def latin_hypercube(n: int, dim: int, bounds: Box, seed) -> np.ndarray:
    """n points, one per axis stratum in every dimension, jittered uniformly."""
    if n < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    unit = np.empty((n, dim))
    for d in range(dim):
        strata = rng.permutation(n)
        unit[:, d] = (strata + rng.random(n)) / n
    return bounds.lower + unit * bounds.widths


def constraint_violation(constraints, x) -> float:
    """Largest violation of the constraint list at x; 0 when all hold."""
    x = np.asarray(x, dtype=float).reshape(-1)
    worst = 0.0
    for con in constraints:
        if isinstance(con, QuadConstraint):
            value = sum(c * x[a] * x[b] for (a, b), c in con.quad.items())
            value += sum(c * x[k] for k, c in con.linear.items())
        else:
            value = sum(c * x[k] for k, c in con.coefficients.items())
        if con.sense == "<=":
            worst = max(worst, value - con.rhs)
        elif con.sense == ">=":
            worst = max(worst, con.rhs - value)
        else:
            worst = max(worst, abs(value - con.rhs))
    return float(worst)


def _scale_constraints(constraints, transform):
    """Rewrite constraints on original coordinates for the unit box."""
    lo, width = transform.x_low, transform.x_width
    scaled = []
    for con in constraints:
        if isinstance(con, QuadConstraint):
            quad, linear, shift = {}, {}, 0.0
            for (a, b), coef in con.quad.items():
                quad[(a, b)] = quad.get((a, b), 0.0) + coef * width[a] * width[b]
                linear[b] = linear.get(b, 0.0) + coef * lo[a] * width[b]
                linear[a] = linear.get(a, 0.0) + coef * lo[b] * width[a]
                shift += coef * lo[a] * lo[b]
            for k, coef in con.linear.items():
                linear[k] = linear.get(k, 0.0) + coef * width[k]
                shift += coef * lo[k]
            scaled.append(QuadConstraint(quad=quad, linear=linear,
                                         sense=con.sense, rhs=con.rhs - shift,
                                         tag=con.tag, name=con.name))
        else:
            coefficients = {k: coef * width[k]
                            for k, coef in con.coefficients.items()}
            shift = sum(coef * lo[k] for k, coef in con.coefficients.items())
            scaled.append(LinearConstraint(coefficients=coefficients,
                                           sense=con.sense,
                                           rhs=con.rhs - shift, name=con.name))
    return tuple(scaled)


def _slice_constraints(constraints, groups):
    """Assign each constraint to the single group holding all its variables."""
    sliced = [[] for _ in groups]
    position = {}
    for g, dims in enumerate(groups):
        for local, d in enumerate(dims):
            position[d] = (g, local)
    for con in constraints:
        keys = (set(con.linear) | {k for ab in con.quad for k in ab}
                if isinstance(con, QuadConstraint) else set(con.coefficients))
        owners = {position[k][0] for k in keys}
        if len(owners) > 1:
            raise ValueError("constraint spans multiple additive groups")
        g = owners.pop() if owners else 0
        remap = {k: position[k][1] for k in keys}
        if isinstance(con, QuadConstraint):
            sliced[g].append(QuadConstraint(
                quad={(remap[a], remap[b]): c for (a, b), c in con.quad.items()},
                linear={remap[k]: c for k, c in con.linear.items()},
                sense=con.sense, rhs=con.rhs, tag=con.tag, name=con.name))
        else:
            sliced[g].append(LinearConstraint(
                coefficients={remap[k]: c
                              for k, c in con.coefficients.items()},
                sense=con.sense, rhs=con.rhs, name=con.name))
    return [tuple(group) for group in sliced]


def warm_start(pwl, dataset, bounds, known_constraints, config: BoConfig):
    """Candidate x points: posterior-mean pool plus random feasible draws.

    The sub-model solve contributes up to pool_size points; rejection
    sampling contributes pool_size more, each given up to 10000 attempts
    before a warning drops it.
    """
    sub = build_sub_model(pwl, dataset, bounds, known_constraints)
    settings = config.sub_solver or config.solver
    sub_config = SolverConfig(mip_gap=settings.mip_gap,
                              time_limit_s=settings.time_limit_s,
                              pool_size=config.pool_size,
                              node_limit=settings.node_limit,
                              seed=settings.seed)
    result = solve(sub, sub_config)
    points = [sol.assignment[:bounds.dim] for sol in result.pool]

    rng = np.random.default_rng([config.seed, dataset.n])
    for _ in range(config.pool_size):
        for _ in range(REJECTION_ATTEMPTS):
            x = rng.uniform(bounds.lower, bounds.upper)
            if constraint_violation(known_constraints, x) <= FEASIBILITY_TOL:
                points.append(x)
                break
        else:
            warnings.warn("rejection sampling found no feasible point",
                          RuntimeWarning, stacklevel=2)

    candidates = []
    for x in points:
        try:
            evaluate_candidate(sub, x)
        except ValueError:
            continue
        candidates.append(np.asarray(x, dtype=float))
    return candidates


def polish(x0, gp: GpModel, beta: float, steps: int, step_size: float,
           bounds: Box):
    """Projected gradient descent on the exact-posterior LCB.

    Gradients come from central differences; each step backtracks by halving
    until it improves, giving up after 20 halvings. The result never has a
    worse LCB than the start.
    """
    def objective(x):
        mean, var = posterior(gp, x)
        return lcb(mean, math.sqrt(max(var, 0.0)), beta)

    x = bounds.clip(np.asarray(x0, dtype=float).reshape(-1))
    value = objective(x)
    h = 1e-6
    for _ in range(steps):
        grad = np.zeros(bounds.dim)
        for d in range(bounds.dim):
            bump = np.zeros(bounds.dim)
            bump[d] = h
            grad[d] = (objective(x + bump) - objective(x - bump)) / (2.0 * h)
        if not np.any(grad):
            break
        eta = step_size
        improved = False
        for _ in range(20):
            candidate = bounds.clip(x - eta * grad)
            candidate_value = objective(candidate)
            if candidate_value < value - 1e-12:
                x, value = candidate, candidate_value
                improved = True
                break
            eta *= 0.5
        if not improved:
            break
    return x


def _propose_group(data: Dataset, bounds: Box, constraints, beta: float,
                   config: BoConfig):
    """One acquisition round in scaled space; returns (x, info)."""
    timings = {}
    clock = time.monotonic()
    params = fit_hyperparameters(data, seed=config.seed)
    gp = build_gp(data, params)
    timings["fit"] = time.monotonic() - clock

    clock = time.monotonic()
    pwl = build_pwl(params, dim=bounds.dim, box=bounds,
                    segment_scale=config.segment_scale)
    model = build_full_model(pwl, data, beta=beta, bounds=bounds,
                             known_constraints=constraints)
    timings["build"] = time.monotonic() - clock

    clock = time.monotonic()
    starts = warm_start(pwl, data, bounds, constraints, config) \
        if config.use_warm_start else []
    timings["warm"] = time.monotonic() - clock

    clock = time.monotonic()
    result = solve(model, config.solver, warm_starts=starts)
    timings["solve"] = time.monotonic() - clock

    candidates = [sol.assignment[:bounds.dim] for sol in result.pool]
    candidates.extend(starts)
    fallback = result.status == "infeasible" or not result.pool
    if not candidates:
        raise RuntimeError("no feasible candidate for this round")

    def true_lcb(x):
        mean, var = posterior(gp, x)
        return lcb(mean, math.sqrt(max(var, 0.0)), beta)

    values = [true_lcb(c) for c in candidates]
    selected = candidates[int(np.argmin(values))]
    lcb_pool = float(min(values))
    warm_values = values[len(result.pool):]
    lcb_warm = float(min(warm_values)) if warm_values else float("nan")

    clock = time.monotonic()
    polished = polish(selected, gp, beta, config.polish_steps,
                      config.polish_step_size, bounds)
    if constraints and constraint_violation(constraints,
                                            polished) > FEASIBILITY_TOL:
        polished = selected
    timings["polish"] = time.monotonic() - clock
    return polished, {"gap": result.gap, "fallback": fallback,
                      "timings": timings,
                      "lcb_chain": (true_lcb(polished), lcb_pool, lcb_warm)}


def _resolve_groups(config: BoConfig, dim: int):
    if config.addgp_groups is None:
        return (tuple(range(dim)),)
    groups = config.addgp_groups
    seen = [d for group in groups for d in group]
    if sorted(seen) != list(range(dim)):
        raise ValueError("addgp_groups must partition the dimensions")
    return groups


def bo_step(dataset: Dataset, problem: Problem, t: int,
            config: BoConfig) -> np.ndarray:
    """Next sample in original units for iteration t given the data so far."""
    x, _ = _step_with_details(dataset, problem, t, config)
    return x


def _step_with_details(dataset: Dataset, problem: Problem, t: int,
                       config: BoConfig):
    if dataset.n < 1:
        raise ValueError("dataset must be nonempty")
    dim = problem.bounds.dim
    groups = _resolve_groups(config, dim)
    scaled_data, transform = standardize(dataset, problem.bounds)
    scaled_constraints = _scale_constraints(problem.known_constraints,
                                            transform)
    per_group = _slice_constraints(scaled_constraints, groups)

    proposal = np.empty(dim)
    info = {"gap": 0.0, "fallback": False,
            "timings": {stage: 0.0 for stage in TRACE_STAGES},
            "lcb_chain": []}
    for g, dims in enumerate(groups):
        group_box = Box(lower=np.zeros(len(dims)), upper=np.ones(len(dims)))
        group_data = Dataset(scaled_data.X[:, dims], scaled_data.y)
        beta = _beta_value(config, t, len(dims))
        x_group, group_info = _propose_group(group_data, group_box,
                                             per_group[g], beta, config)
        proposal[list(dims)] = x_group
        info["gap"] = max(info["gap"], group_info["gap"])
        info["fallback"] = info["fallback"] or group_info["fallback"]
        info["lcb_chain"].append(group_info["lcb_chain"])
        for stage in TRACE_STAGES:
            info["timings"][stage] += group_info["timings"].get(stage, 0.0)

    proposal = _dodge_duplicates(proposal, scaled_data.X, scaled_constraints,
                                 config, t)
    return transform.unscale_x(proposal), info


def _beta_value(config: BoConfig, t: int, dim: int) -> float:
    if config.beta_kind == "theoretical":
        return theoretical_beta(t, dim)
    return config.beta_coefficient * dim * math.log(2.0 * t)


def _dodge_duplicates(x, existing, constraints, config: BoConfig, t: int):
    """Replace a proposal that collides with a sample by a fresh feasible draw.

    Re-sampling a point the model already knows would make the Gram matrix
    singular on the next fit.
    """
    def collides(point):
        return bool(np.any(np.max(np.abs(existing - point), axis=1)
                           <= DUPLICATE_TOL))

    if not collides(x):
        return x
    rng = np.random.default_rng([config.seed, t, 104729])
    for _ in range(REJECTION_ATTEMPTS):
        draw = rng.uniform(0.0, 1.0, x.size)
        if collides(draw):
            continue
        if constraint_violation(constraints, draw) <= FEASIBILITY_TOL:
            return draw
    raise RuntimeError("could not find a fresh feasible point")


def _initial_design(problem: Problem, config: BoConfig) -> np.ndarray:
    dim = problem.bounds.dim
    X = latin_hypercube(config.resolved_init(dim), dim, problem.bounds,
                        config.seed)
    if not problem.known_constraints:
        return X
    rng = np.random.default_rng([config.seed, 7919])
    for k in range(X.shape[0]):
        if constraint_violation(problem.known_constraints,
                                X[k]) <= FEASIBILITY_TOL:
            continue
        for _ in range(REJECTION_ATTEMPTS):
            draw = rng.uniform(problem.bounds.lower, problem.bounds.upper)
            if constraint_violation(problem.known_constraints,
                                    draw) <= FEASIBILITY_TOL:
                X[k] = draw
                break
        else:
            raise RuntimeError("could not repair the initial design")
    return X


def run_bo(problem: Problem, config: BoConfig, observer=None) -> BoTrace:
    """Full loop: initial design, then max_iterations acquisition rounds.

    An objective failure mid-run aborts with the partial trace and a warning
    rather than losing the evaluations already paid for. An observer, when
    given, is called after each round as observer(record, info); info carries
    per-group diagnostics such as the confidence-bound chain of the selected,
    pooled and warm-started candidates.
    """
    initial_X = _initial_design(problem, config)
    initial_y = []
    for x in initial_X:
        try:
            initial_y.append(float(problem.objective(x)))
        except Exception as error:  # noqa: BLE001 - callback owned by caller
            warnings.warn(f"objective failed on the initial design: {error}",
                          RuntimeWarning, stacklevel=2)
            kept = len(initial_y)
            return BoTrace(initial_X=initial_X[:kept],
                           initial_y=np.array(initial_y))
    trace = BoTrace(initial_X=initial_X, initial_y=np.array(initial_y))

    dataset = Dataset(initial_X.copy(), np.array(initial_y))
    best = float(np.min(dataset.y))
    for t in range(1, config.max_iterations + 1):
        x, info = _step_with_details(dataset, problem, t, config)
        try:
            value = float(problem.objective(x))
        except Exception as error:  # noqa: BLE001 - callback owned by caller
            warnings.warn(f"objective failed at iteration {t}: {error}",
                          RuntimeWarning, stacklevel=2)
            return trace
        dataset = dataset.append(x, value)
        best = min(best, value)
        regret = best - problem.known_optimum \
            if problem.known_optimum is not None else float("nan")
        record = IterationRecord(
            iteration=t, x=np.asarray(x, dtype=float), value=value, best=best,
            regret=regret, beta=_beta_value(config, t, problem.bounds.dim),
            gap=info["gap"], fallback=info["fallback"],
            timings=info["timings"])
        trace.append(record)
        if observer is not None:
            observer(record, info)
    return trace


def additive_run(problem: Problem, config: BoConfig,
                 observer=None) -> BoTrace:
    """run_bo with the per-group decomposition required to be configured."""
    if config.addgp_groups is None:
        raise ValueError("additive_run needs addgp_groups")
    _resolve_groups(config, problem.bounds.dim)
    return run_bo(problem, config, observer=observer)
