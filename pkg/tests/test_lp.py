"""LP wrapper correctness against an independent tableau-simplex oracle."""

import numpy as np
import pytest

from miqpbo.solver import Lp, lp_solve

from simplex_oracle import solve_lp_reference


def make_lp(objective, a_ub=None, b_ub=None, a_eq=None, b_eq=None,
            lower=None, upper=None):
    objective = np.asarray(objective, dtype=float)
    n = objective.size
    return Lp(objective=objective,
              a_ub=None if a_ub is None else np.asarray(a_ub, dtype=float),
              b_ub=None if b_ub is None else np.asarray(b_ub, dtype=float),
              a_eq=None if a_eq is None else np.asarray(a_eq, dtype=float),
              b_eq=None if b_eq is None else np.asarray(b_eq, dtype=float),
              lower=np.zeros(n) if lower is None else np.asarray(lower, float),
              upper=np.ones(n) if upper is None else np.asarray(upper, float))


def random_instance(rng):
    """Interior-point construction, so the instance is always feasible."""
    n = int(rng.integers(2, 51))
    m = int(rng.integers(1, 2 * n + 1))
    a = rng.normal(size=(m, n))
    lower = rng.uniform(-3.0, 0.0, n)
    upper = lower + rng.uniform(0.5, 4.0, n)
    x0 = rng.uniform(lower, upper)
    b = a @ x0 + rng.uniform(0.1, 2.0, m)
    c = rng.normal(size=n)
    a_eq = b_eq = None
    if int(rng.integers(0, 2)):
        k = int(rng.integers(1, 3))
        a_eq = rng.normal(size=(k, n))
        b_eq = a_eq @ x0
    return c, a, b, a_eq, b_eq, lower, upper


def test_minimal_instance():
    # min x subject to x >= 3 written as an upper row
    lp = make_lp([1.0], a_ub=[[-1.0]], b_ub=[-3.0], lower=[0.0], upper=[10.0])
    status, x, value = lp_solve(lp)
    assert status == "optimal"
    assert abs(value - 3.0) <= 1e-9
    assert abs(x[0] - 3.0) <= 1e-9


def test_duplicate_rows_are_harmless():
    lp = make_lp([-1.0, -1.0], a_ub=[[1.0, 1.0], [1.0, 1.0]],
                 b_ub=[1.0, 1.0], lower=[0.0, 0.0], upper=[1.0, 1.0])
    status, _, value = lp_solve(lp)
    assert status == "optimal"
    assert abs(value + 1.0) <= 1e-9
    status, _, ref = solve_lp_reference([-1.0, -1.0], [[1.0, 1.0], [1.0, 1.0]],
                                        [1.0, 1.0], lower=np.zeros(2),
                                        upper=np.ones(2))
    assert status == "optimal"
    assert abs(value - ref) <= 1e-9


def test_random_instances_match_oracle():
    rng = np.random.default_rng(11)
    for _ in range(20):
        c, a, b, a_eq, b_eq, lower, upper = random_instance(rng)
        status, x, value = lp_solve(make_lp(c, a, b, a_eq, b_eq, lower, upper))
        ref_status, ref_x, ref_value = solve_lp_reference(
            c, a, b, a_eq, b_eq, lower, upper)
        assert status == "optimal"
        assert ref_status == "optimal"
        assert abs(value - ref_value) <= 1e-6
        assert np.all(a @ x - b <= 1e-7)
        if a_eq is not None:
            assert np.max(np.abs(a_eq @ x - b_eq)) <= 1e-7
        assert np.all(x >= lower - 1e-9) and np.all(x <= upper + 1e-9)


def test_infeasible_detected_by_both():
    a = [[1.0, 0.0], [-1.0, 0.0]]
    b = [0.2, -0.8]   # x0 <= 0.2 and x0 >= 0.8
    lp = make_lp([1.0, 1.0], a_ub=a, b_ub=b)
    assert lp_solve(lp)[0] == "infeasible"
    assert solve_lp_reference([1.0, 1.0], a, b, lower=np.zeros(2),
                              upper=np.ones(2))[0] == "infeasible"


def test_equality_pins_variable():
    lp = make_lp([1.0], a_eq=[[1.0]], b_eq=[0.3])
    status, x, value = lp_solve(lp)
    assert status == "optimal"
    assert abs(x[0] - 0.3) <= 1e-9


def test_crossed_bounds_are_infeasible():
    lp = make_lp([1.0], lower=[1.0], upper=[0.0])
    assert lp_solve(lp)[0] == "infeasible"


def test_infinite_bounds_rejected():
    lp = make_lp([1.0], lower=[0.0], upper=[np.inf])
    with pytest.raises(ValueError):
        lp_solve(lp)
