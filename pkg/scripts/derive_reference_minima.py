"""Derive certified reference minima for every registered benchmark.

Method: dense grid scan, then multistart simplex refinement from the best
grid cells. Michalewicz separates per coordinate, so its scan runs on the
five 1D terms (cross-checked against the full evaluation) and the refined
per-coordinate minima are summed. Run from the repository root:

    python3 scripts/derive_reference_minima.py [--density N]

Prints one line per benchmark in the exact literal form expected by
_REFERENCE_MINIMA in miqpbo/benchmarks.py, then verification diagnostics.
"""

import argparse
import math
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from miqpbo.benchmarks import (NelderMeadConfig, benchmark_registry,
                               constraint_checker, eval_michalewicz,
                               nelder_mead, penalized_objective)
from miqpbo.gp import Box


def refine(objective, bounds, starts, tolerance=1e-10):
    best_x, best_v = None, np.inf
    for start in starts:
        config = NelderMeadConfig(tolerance=tolerance, max_iterations=4000,
                                  start=np.asarray(start, dtype=float))
        x, value = nelder_mead(objective, bounds, config)
        if value < best_v:
            best_x, best_v = x, value
    return best_x, best_v


def grid_starts(fn, density, top):
    axes = [np.linspace(lo, hi, density)
            for lo, hi in zip(fn.bounds.lower, fn.bounds.upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.column_stack([m.ravel() for m in mesh])
    if fn.constraints:
        keep = [k for k in range(points.shape[0])
                if constraint_checker(fn, points[k], tol=0.0)[0]]
        points = points[keep]
    values = np.array([fn.eval(p) for p in points])
    order = np.argsort(values)[:top]
    return points[order], float(values[order[0]])


def michalewicz_term(i, v):
    # One separable summand; cross-checked against eval_michalewicz below.
    return -math.sin(v) * math.sin(i * v * v / math.pi) ** 20


def derive_michalewicz(density):
    rng = np.random.default_rng(0)
    probe = rng.uniform(0.0, math.pi, 5)
    recombined = sum(michalewicz_term(i, v)
                     for i, v in enumerate(probe, start=1))
    assert abs(recombined - eval_michalewicz(probe)) <= 1e-12, \
        "separable term drifted from the full formula"

    argmin = np.empty(5)
    total = 0.0
    line = Box(lower=[0.0], upper=[math.pi])
    grid = np.linspace(0.0, math.pi, density * 100)
    for i in range(1, 6):
        values = np.array([michalewicz_term(i, v) for v in grid])
        starts = grid[np.argsort(values)[:10]][:, None]
        x, value = refine(lambda p, i=i: michalewicz_term(i, float(p[0])),
                          line, starts)
        argmin[i - 1] = x[0]
        total += value
    return total, argmin


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--density", type=int, default=2001,
                        help="grid points per axis (1D scans use 100x)")
    args = parser.parse_args()

    registry = benchmark_registry()
    results = {}
    for name, fn in sorted(registry.items()):
        if name == "michalewicz":
            value, argmin = derive_michalewicz(args.density)
            grid_best = value
        else:
            density = args.density if fn.dim <= 2 else 41
            one_dim_boost = 100 if fn.dim == 1 else 1
            starts, grid_best = grid_starts(fn, density * one_dim_boost,
                                            top=20)
            objective = fn.eval if not fn.constraints \
                else penalized_objective(fn, 1e8)
            argmin, value = refine(objective, fn.bounds, starts)
            if fn.constraints:
                feasible, violation = constraint_checker(fn, argmin, tol=1e-9)
                assert feasible, f"{name} refinement left feasibility " \
                                 f"(violation {violation})"
                value = fn.eval(argmin)
        results[name] = (value, argmin)
        assert value <= grid_best + 1e-9, f"{name} refinement beat by grid"

    print("_REFERENCE_MINIMA = {")
    for name, (value, argmin) in sorted(results.items()):
        coords = ", ".join(format(v, ".17g") for v in np.atleast_1d(argmin))
        print(f'    "{name}": ({format(value, ".17g")}, ({coords}{"," if np.atleast_1d(argmin).size == 1 else ""})),')
    print("}")

    for name, (value, argmin) in sorted(results.items()):
        fn = registry[name]
        check = fn.eval(np.atleast_1d(argmin))
        print(f"# {name}: f(argmin) = {check:.17g} (delta "
              f"{abs(check - value):.3g})")


if __name__ == "__main__":
    main()
