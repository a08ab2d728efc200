"""Benchmark objectives, their reference optima, and a simplex baseline.

Every function validates its input against the stated box before evaluating,
so out-of-domain probes fail loudly instead of silently extrapolating. The
stored reference minima are derived by scripts/derive_reference_minima.py
(dense grid plus multistart simplex refinement); tests re-derive them at
reduced density.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .gp import Box
from .model import LinearConstraint


def _check_bounds(x, lower, upper, name):
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != len(lower):
        raise ValueError(f"{name} expects {len(lower)} coordinates")
    for v, lo, hi in zip(x, lower, upper):
        if not lo - 1e-9 <= v <= hi + 1e-9:
            raise ValueError(f"{name} evaluated outside [{lo}, {hi}]")
    return x


def eval_bumpy(x) -> float:
    x = _check_bounds(x, [-10.0], [10.0], "bumpy")
    v = x[0]
    return float(-sum(i * math.sin((i + 1) * v + i) for i in range(1, 7)))


def eval_multimodal(x) -> float:
    x = _check_bounds(x, [-2.7], [7.5], "multimodal")
    v = x[0]
    return float(math.sin(v) + math.sin(10.0 * v / 3.0))


def eval_ackley(x) -> float:
    x = _check_bounds(x, [-32.0, -32.0], [16.0, 16.0], "ackley")
    square = 0.5 * float(x @ x)
    cosine = 0.5 * float(np.sum(np.cos(2.0 * math.pi * x)))
    return float(-20.0 * math.exp(-0.2 * math.sqrt(square))
                 - math.exp(cosine) + 20.0 + math.e)


def eval_branin(x) -> float:
    x = _check_bounds(x, [-5.0, 0.0], [10.0, 15.0], "branin")
    a, b, c = 1.0, 5.1 / (4.0 * math.pi ** 2), 5.0 / math.pi
    r, s, t = 6.0, 10.0, 1.0 / (8.0 * math.pi)
    return float(a * (x[1] - b * x[0] ** 2 + c * x[0] - r) ** 2
                 + s * (1.0 - t) * math.cos(x[0]) + s)


def eval_rosenbrock(x) -> float:
    x = _check_bounds(x, [-2.0, -1.0], [2.0, 3.0], "rosenbrock")
    return float((1.0 - x[0]) ** 2 + 100.0 * (x[1] - x[0] ** 2) ** 2)


HARTMANN_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])
HARTMANN_A = np.array([[3.0, 10.0, 30.0],
                       [0.1, 10.0, 35.0],
                       [3.0, 10.0, 30.0],
                       [0.1, 10.0, 35.0]])
HARTMANN_P = 1e-4 * np.array([[3689.0, 1170.0, 2673.0],
                              [4699.0, 4387.0, 7470.0],
                              [1091.0, 8732.0, 5547.0],
                              [381.0, 5743.0, 8828.0]])


def eval_hartmann(x) -> float:
    x = _check_bounds(x, [0.0] * 3, [1.0] * 3, "hartmann")
    inner = np.sum(HARTMANN_A * (x[None, :] - HARTMANN_P) ** 2, axis=1)
    return float(-np.sum(HARTMANN_ALPHA * np.exp(-inner)))


def eval_michalewicz(x) -> float:
    x = _check_bounds(x, [0.0] * 5, [math.pi] * 5, "michalewicz")
    total = 0.0
    for i, v in enumerate(x, start=1):
        total -= math.sin(v) * math.sin(i * v * v / math.pi) ** 20
    return float(total)


def eval_ks224(x) -> float:
    x = _check_bounds(x, [0.0, 0.0], [6.0, 6.0], "ks224")
    return float(2.0 * x[0] ** 2 + x[1] ** 2 - 48.0 * x[0] - 40.0 * x[1])


KS224_CONSTRAINTS = (
    LinearConstraint({0: -1.0, 1: -3.0}, "<=", 0.0, name="plane_lower"),
    LinearConstraint({0: 1.0, 1: 3.0}, "<=", 18.0, name="plane_upper"),
    LinearConstraint({0: -1.0, 1: -1.0}, "<=", 0.0, name="diag_lower"),
    LinearConstraint({0: 1.0, 1: 1.0}, "<=", 8.0, name="diag_upper"),
)


@dataclass(frozen=True)
class BenchmarkFn:
    """A named objective with its box, constraints and certified optimum."""

    name: str
    dim: int
    bounds: Box
    eval: object
    constraints: tuple = ()
    reference_min: float | None = None
    reference_argmin: np.ndarray | None = None
    feasible_witness: np.ndarray | None = None

    def __post_init__(self):
        witness = self.feasible_witness
        if witness is None:
            witness = 0.5 * (self.bounds.lower + self.bounds.upper)
            object.__setattr__(self, "feasible_witness", witness)
        feasible, violation = constraint_checker(self, witness, tol=1e-9)
        if not feasible:
            raise ValueError(f"witness for {self.name} is infeasible "
                             f"(violation {violation})")


def constraint_checker(fn: BenchmarkFn, x, tol: float = 1e-6):
    """(feasible, max violation) of fn's constraints at x; non-strict."""
    x = np.asarray(x, dtype=float).reshape(-1)
    worst = 0.0
    for con in fn.constraints:
        value = sum(c * x[k] for k, c in con.coefficients.items())
        if con.sense == "<=":
            worst = max(worst, value - con.rhs)
        elif con.sense == ">=":
            worst = max(worst, con.rhs - value)
        else:
            worst = max(worst, abs(value - con.rhs))
    return worst <= tol, float(worst)


def penalized_objective(fn: BenchmarkFn, weight: float):
    """Objective plus weight times the summed positive constraint parts.

    Exactly equals the raw objective wherever all constraints hold, which is
    what makes penalty sweeps comparable to the constrained solves.
    """
    if weight < 0.0:
        raise ValueError("penalty weight must be non-negative")

    def penalized(x):
        x = np.asarray(x, dtype=float).reshape(-1)
        total = fn.eval(x)
        for con in fn.constraints:
            value = sum(c * x[k] for k, c in con.coefficients.items())
            if con.sense == "<=":
                total += weight * max(0.0, value - con.rhs)
            elif con.sense == ">=":
                total += weight * max(0.0, con.rhs - value)
            else:
                total += weight * abs(value - con.rhs)
        return float(total)

    return penalized


# Reference minima below are frozen outputs of
# scripts/derive_reference_minima.py; rerun it after touching any formula.
_REGISTRY_SPECS = (
    ("bumpy", 1, ([-10.0], [10.0]), eval_bumpy, ()),
    ("multimodal", 1, ([-2.7], [7.5]), eval_multimodal, ()),
    ("ackley", 2, ([-32.0, -32.0], [16.0, 16.0]), eval_ackley, ()),
    ("branin", 2, ([-5.0, 0.0], [10.0, 15.0]), eval_branin, ()),
    ("rosenbrock", 2, ([-2.0, -1.0], [2.0, 3.0]), eval_rosenbrock, ()),
    ("hartmann", 3, ([0.0] * 3, [1.0] * 3), eval_hartmann, ()),
    ("michalewicz", 5, ([0.0] * 5, [math.pi] * 5), eval_michalewicz, ()),
    ("ks224", 2, ([0.0, 0.0], [6.0, 6.0]), eval_ks224, KS224_CONSTRAINTS),
)

_REFERENCE_MINIMA = {
    # Exact where the optimum is analytic (confirmed by the oracle run),
    # otherwise the oracle's converged digits.
    "ackley": (0.0, (0.0, 0.0)),
    "branin": (0.39788735772973816, (-3.1415926632296554, 12.27500001473755)),
    "bumpy": (-16.532194721073324, (-6.8412850908215885,)),
    "hartmann": (-3.8627797873326628,
                 (0.11458888151739963, 0.55564889580187393,
                  0.85254698590494749)),
    "ks224": (-304.0, (4.0, 4.0)),
    "michalewicz": (-4.6876581790881504,
                    (2.202905520181444, 1.5707963226213026, 1.284991570363565,
                     1.9230584697873772, 1.7204697730119607)),
    "multimodal": (-1.8995993491521137, (5.1457352875030846,)),
    "rosenbrock": (0.0, (1.0, 1.0)),
}

_WITNESSES = {"ks224": np.array([1.0, 1.0])}


def benchmark_registry():
    """Name-keyed mapping of every benchmark."""
    registry = {}
    for name, dim, (lower, upper), evaluator, constraints in _REGISTRY_SPECS:
        reference = _REFERENCE_MINIMA.get(name)
        registry[name] = BenchmarkFn(
            name=name, dim=dim, bounds=Box(lower=lower, upper=upper),
            eval=evaluator, constraints=constraints,
            reference_min=None if reference is None else reference[0],
            reference_argmin=None if reference is None
            else np.array(reference[1]),
            feasible_witness=_WITNESSES.get(name))
    return registry


def get_benchmark(name: str) -> BenchmarkFn:
    registry = benchmark_registry()
    if name not in registry:
        known = ", ".join(sorted(registry))
        raise KeyError(f"unknown benchmark {name!r}; choose from {known}")
    return registry[name]


def list_benchmarks():
    return sorted(name for name, *_ in _REGISTRY_SPECS)


@dataclass(frozen=True)
class NelderMeadConfig:
    """Simplex-search settings; start of None begins at the box centre."""

    tolerance: float = 1e-6
    max_iterations: int = 1000
    start: object = None
    initial_step: float = 0.05

    def __post_init__(self):
        if self.tolerance <= 0.0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if not 0.0 < self.initial_step <= 0.5:
            raise ValueError("initial_step must lie in (0, 0.5]")


def nelder_mead(objective, bounds: Box, config: NelderMeadConfig = None):
    """Box-projected downhill simplex; returns (best x, best value).

    Standard reflect/expand/contract/shrink with every trial point clipped
    into the box. Deterministic: the start simplex is the start point plus
    one axis step per dimension.
    """
    config = config or NelderMeadConfig()
    dim = bounds.dim
    start = bounds.clip(config.start if config.start is not None
                        else 0.5 * (bounds.lower + bounds.upper))

    simplex = [np.asarray(start, dtype=float)]
    for d in range(dim):
        vertex = simplex[0].copy()
        step = config.initial_step * bounds.widths[d]
        vertex[d] = vertex[d] + step if vertex[d] + step <= bounds.upper[d] \
            else vertex[d] - step
        simplex.append(vertex)
    values = [float(objective(v)) for v in simplex]

    for _ in range(config.max_iterations):
        order = np.argsort(values, kind="stable")
        simplex = [simplex[k] for k in order]
        values = [values[k] for k in order]
        spread_f = abs(values[-1] - values[0])
        spread_x = max(float(np.max(np.abs(v - simplex[0])))
                       for v in simplex[1:])
        if spread_f <= config.tolerance and spread_x <= config.tolerance:
            break

        centroid = np.mean(simplex[:-1], axis=0)
        worst = simplex[-1]

        def evaluate(point):
            clipped = bounds.clip(point)
            return clipped, float(objective(clipped))

        reflected, f_reflected = evaluate(centroid + (centroid - worst))
        if values[0] <= f_reflected < values[-2]:
            simplex[-1], values[-1] = reflected, f_reflected
            continue
        if f_reflected < values[0]:
            expanded, f_expanded = evaluate(centroid
                                            + 2.0 * (centroid - worst))
            if f_expanded < f_reflected:
                simplex[-1], values[-1] = expanded, f_expanded
            else:
                simplex[-1], values[-1] = reflected, f_reflected
            continue
        if f_reflected < values[-1]:
            contracted, f_contracted = evaluate(
                centroid + 0.5 * (reflected - centroid))
        else:
            contracted, f_contracted = evaluate(
                centroid + 0.5 * (worst - centroid))
        if f_contracted < min(f_reflected, values[-1]):
            simplex[-1], values[-1] = contracted, f_contracted
            continue
        for k in range(1, dim + 1):
            simplex[k] = bounds.clip(simplex[0]
                                     + 0.5 * (simplex[k] - simplex[0]))
            values[k] = float(objective(simplex[k]))

    best = int(np.argmin(values))
    return simplex[best].copy(), values[best]
