"""Branch-and-bound behaviour on small acquisition models.

The reference optimum comes from a dense grid over the linearised posterior,
which bounds the continuous optimum from above on instances this smooth.
"""

import numpy as np
import pytest

from miqpbo.gp import Box, Dataset, KernelParams
from miqpbo.model import LinearConstraint, build_full_model, check_assignment, \
    evaluate_candidate
from miqpbo.pwl import approx_posterior, build_pwl
from miqpbo.solver import Node, SolverConfig, branch, lp_solve, \
    node_relaxation, root_node, solve

BETA = 1.0


@pytest.fixture(scope="module")
def setup():
    params = KernelParams(variance=1.0, lengthscale=0.35, noise=1e-6)
    box = Box(lower=[0.0], upper=[1.0])
    data = Dataset(X=np.array([[0.1], [0.55], [0.85]]),
                   y=np.array([0.2, -0.7, 0.4]))
    pwl = build_pwl(params, dim=1, box=box)
    model = build_full_model(pwl, data, beta=BETA, bounds=box)
    grid = np.linspace(0.0, 1.0, 10001)
    mean, var = approx_posterior(pwl, data, grid[:, None])
    lcb = mean - np.sqrt(BETA) * np.sqrt(var)
    best = int(np.argmin(lcb))
    return {"pwl": pwl, "data": data, "box": box, "model": model,
            "grid_min": float(lcb[best]), "grid_arg": float(grid[best])}


@pytest.fixture(scope="module")
def tight_result(setup):
    config = SolverConfig(mip_gap=1e-6, time_limit_s=120.0, pool_size=5,
                          node_limit=20_000, seed=0)
    return solve(setup["model"], config)


def test_reaches_grid_optimum(setup, tight_result):
    result = tight_result
    assert result.status == "optimal"
    assert result.incumbent is not None
    slack = max(1e-3, result.gap * abs(result.incumbent.objective))
    assert abs(result.incumbent.objective - setup["grid_min"]) <= slack


def test_bound_gap_consistency(setup, tight_result):
    result = tight_result
    incumbent = result.incumbent.objective
    assert result.best_bound <= setup["grid_min"] + 1e-6
    assert result.best_bound <= incumbent + 1e-9
    expected_gap = (incumbent - result.best_bound) / max(1e-9, abs(incumbent))
    assert abs(result.gap - expected_gap) <= 1e-12
    assert result.gap <= 1e-6


def test_pool_sorted_distinct_feasible(setup, tight_result):
    model = setup["model"]
    pool = tight_result.pool
    assert 1 <= len(pool) <= 5
    objectives = [sol.objective for sol in pool]
    assert objectives == sorted(objectives)
    assert objectives[0] == tight_result.incumbent.objective
    for sol in pool:
        assert check_assignment(model, sol.assignment) <= 1e-6
    for a in range(len(pool)):
        for b in range(a + 1, len(pool)):
            gap = np.max(np.abs(pool[a].assignment[:1] - pool[b].assignment[:1]))
            assert gap > 1e-6


def test_warm_start_never_lost(setup):
    model = setup["model"]
    x_best = np.array([setup["grid_arg"]])
    _, objective = evaluate_candidate(model, x_best)
    config = SolverConfig(mip_gap=1e-6, time_limit_s=120.0, pool_size=5,
                          node_limit=20_000, seed=0)
    result = solve(model, config, warm_starts=[x_best])
    assert result.incumbent.objective <= objective + 1e-12


def test_zero_time_limit_returns_best_warm_start(setup):
    model = setup["model"]
    starts = [np.array([0.3]), np.array([0.7])]
    best = min(evaluate_candidate(model, x)[1] for x in starts)
    config = SolverConfig(mip_gap=1e-6, time_limit_s=0.0, pool_size=5,
                          node_limit=20_000, seed=0)
    result = solve(model, config, warm_starts=starts)
    assert result.status == "time_limit"
    assert result.nodes_explored == 0
    assert result.incumbent.objective == best


def test_infeasible_warm_start_dropped(setup):
    model = setup["model"]
    config = SolverConfig(mip_gap=0.5, time_limit_s=60.0, pool_size=5,
                          node_limit=20_000, seed=0)
    with pytest.warns(RuntimeWarning):
        result = solve(model, config, warm_starts=[np.array([7.0])])
    assert result.incumbent is not None


def test_coarse_gap_soundness(setup):
    model = setup["model"]
    config = SolverConfig(mip_gap=0.5, time_limit_s=120.0, pool_size=5,
                          node_limit=20_000, seed=0)
    result = solve(model, config)
    assert result.status in ("optimal", "gap_reached")
    assert result.gap <= 0.5 + 1e-12
    incumbent = result.incumbent.objective
    assert incumbent - result.best_bound <= 0.5 * abs(incumbent) + 1e-9
    assert result.best_bound <= setup["grid_min"] + 1e-6


def test_deterministic_replay(setup):
    model = setup["model"]
    config = SolverConfig(mip_gap=0.5, time_limit_s=120.0, pool_size=5,
                          node_limit=20_000, seed=0)
    first = solve(model, config)
    second = solve(model, config)
    assert first.status == second.status
    assert first.nodes_explored == second.nodes_explored
    assert first.best_bound == second.best_bound
    assert first.incumbent.objective == second.incumbent.objective
    assert [s.objective for s in first.pool] == [s.objective for s in second.pool]


def test_contradictory_constraints_infeasible(setup):
    model = build_full_model(setup["pwl"], setup["data"], beta=BETA,
                             bounds=setup["box"], known_constraints=[
                                 LinearConstraint({0: 1.0}, "<=", 0.2),
                                 LinearConstraint({0: -1.0}, "<=", -0.8)])
    config = SolverConfig(mip_gap=1e-6, time_limit_s=60.0, pool_size=5,
                          node_limit=20_000, seed=0)
    result = solve(model, config)
    assert result.status == "infeasible"
    assert result.incumbent is None
    assert result.pool == ()


def test_forcing_constraint_pins_pool(setup):
    model = build_full_model(setup["pwl"], setup["data"], beta=BETA,
                             bounds=setup["box"], known_constraints=[
                                 LinearConstraint({0: 1.0}, "<=", 0.0)])
    config = SolverConfig(mip_gap=1e-6, time_limit_s=60.0, pool_size=5,
                          node_limit=20_000, seed=0)
    result = solve(model, config)
    assert result.status == "optimal"
    for sol in result.pool:
        assert abs(sol.assignment[0] - 0.0) <= 1e-7


def test_point_node_matches_candidate(setup):
    model = setup["model"]
    x = np.array([0.37])
    assignment, objective = evaluate_candidate(model, x)
    segments = []
    for i in range(model.n_train):
        weights = [assignment[model.ix_lam(i, s)]
                   for s in range(model.n_segments)]
        s = int(np.argmax(weights))
        segments.append((s, s))
    node = Node(x_lower=x, x_upper=x, segments=tuple(segments),
                lower_bound=-np.inf, depth=0)
    bound, point = node_relaxation(model, node, cut_rounds=8)
    assert point is not None
    assert abs(bound - objective) <= 1e-6


def test_root_bound_below_candidates(setup):
    model = setup["model"]
    bound, point = node_relaxation(model, root_node(model))
    assert point is not None
    for xv in (0.05, 0.3, 0.55, 0.8, 0.95):
        _, objective = evaluate_candidate(model, np.array([xv]))
        assert bound <= objective + 1e-9


def test_box_halving_keeps_bounds_monotone(setup):
    model = setup["model"]
    parent = root_node(model)
    parent_bound, _ = node_relaxation(model, parent, cut_rounds=0)
    mid = 0.5 * (parent.x_lower + parent.x_upper)
    left = Node(parent.x_lower, mid, parent.segments, parent_bound, 1)
    right = Node(mid, parent.x_upper, parent.segments, parent_bound, 1)
    for child in (left, right):
        child_bound, _ = node_relaxation(model, child, cut_rounds=0)
        assert child_bound >= parent_bound - 1e-9


def test_branch_partitions_segment_interval(setup):
    model = setup["model"]
    root = root_node(model)
    _, point = node_relaxation(model, root)
    left, right = branch(model, root, point)
    assert np.array_equal(left.x_lower, root.x_lower)
    assert np.array_equal(right.x_upper, root.x_upper)
    changed = [i for i in range(model.n_train)
               if left.segments[i] != right.segments[i]]
    assert len(changed) == 1
    i = changed[0]
    lo, hi = root.segments[i]
    assert left.segments[i][0] == lo and right.segments[i][1] == hi
    assert left.segments[i][1] + 1 == right.segments[i][0]


def test_branch_bisects_box_on_integral_selectors(setup):
    model = setup["model"]
    segments = tuple((2, 2) for _ in range(model.n_train))
    node = Node(np.array([0.0]), np.array([1.0]), segments, -np.inf, 0)
    bound, point = node_relaxation(model, node, cut_rounds=0)
    assert point is not None
    left, right = branch(model, node, point)
    assert left.x_upper[0] == right.x_lower[0]
    assert 0.0 < left.x_upper[0] < 1.0
    assert left.segments == segments and right.segments == segments


def test_branch_rejects_feasible_point(setup):
    model = setup["model"]
    x = np.array([0.37])
    assignment, _ = evaluate_candidate(model, x)
    segments = []
    for i in range(model.n_train):
        weights = [assignment[model.ix_lam(i, s)]
                   for s in range(model.n_segments)]
        s = int(np.argmax(weights))
        segments.append((s, s))
    node = Node(x, x, tuple(segments), -np.inf, 0)
    with pytest.raises(ValueError):
        branch(model, node, assignment)


def test_unreachable_segment_interval_is_infeasible(setup):
    model = setup["model"]
    # Point index 1 sits mid box; its far corner lies below the last knots.
    segments = tuple((6, 6) if i == 1 else (0, model.n_segments - 1)
                     for i in range(model.n_train))
    node = Node(np.array([0.0]), np.array([1.0]), segments, -np.inf, 0)
    bound, point = node_relaxation(model, node)
    assert point is None
    assert bound == np.inf


def test_node_budget_stays_small(setup, tight_result):
    assert tight_result.nodes_explored <= 10_000


def test_two_dimensional_instance():
    box = Box(lower=[0.0, 0.0], upper=[1.0, 1.0])
    rng = np.random.default_rng(3)
    X = rng.uniform(0.0, 1.0, size=(5, 2))
    data = Dataset(X=X, y=np.sin(3 * X[:, 0]) + np.cos(2 * X[:, 1]))
    params = KernelParams(variance=1.0, lengthscale=0.4, noise=1e-6)
    pwl = build_pwl(params, dim=2, box=box)
    model = build_full_model(pwl, data, beta=2.0, bounds=box)
    axis = np.linspace(0.0, 1.0, 201)
    gx, gy = np.meshgrid(axis, axis)
    points = np.column_stack([gx.ravel(), gy.ravel()])
    mean, var = approx_posterior(pwl, data, points)
    grid_min = float(np.min(mean - np.sqrt(2.0) * np.sqrt(var)))
    config = SolverConfig(mip_gap=1e-4, time_limit_s=300.0, pool_size=5,
                          node_limit=50_000, seed=0)
    result = solve(model, config)
    assert result.status == "optimal"
    assert result.best_bound <= grid_min + 1e-6
    slack = max(1e-3, result.gap * abs(result.incumbent.objective))
    assert abs(result.incumbent.objective - grid_min) <= slack


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(mip_gap=1.0)
    with pytest.raises(ValueError):
        SolverConfig(pool_size=0)
    with pytest.raises(ValueError):
        SolverConfig(node_limit=0)
    with pytest.raises(ValueError):
        SolverConfig(time_limit_s=-1.0)


def test_node_validation():
    with pytest.raises(ValueError):
        Node(np.array([1.0]), np.array([0.0]), ((0, 6),), -np.inf, 0)
    with pytest.raises(ValueError):
        Node(np.array([0.0]), np.array([1.0]), ((3, 2),), -np.inf, 0)
