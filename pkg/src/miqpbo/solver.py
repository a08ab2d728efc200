"""Branch-and-bound solver for the linearised acquisition models.

Every node is solved as a pure LP. Binaries relax onto their allowed segment
interval, the convex variance cone enters through outer-approximation cuts
(valid everywhere, so they accumulate in a shared pool), and each nonconvex
distance equality is sandwiched between tangent underestimators and box
secants that hold only inside the node. Selection is best-bound: the smallest
enqueued bound is a valid lower bound on the model optimum at all times,
which is what makes the reported relative gap trustworthy.

The weight encoding needs no extra linking cuts: with the binaries relaxed,
the convex-combination rows already confine each (distance, kernel value)
pair to the convex hull of the knot polyline. Branching only has to repair
the distance equalities and the integrality of the segment selectors.
"""

from __future__ import annotations

import heapq
import time
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .model import (MiqpModel, check_assignment, evaluate_candidate,
                    objective_value)

# Outer-approximation rounds per node visit; every generated cut gets a tiny
# right-hand-side slack so floating-point noise cannot cut off the optimum.
CUT_ROUNDS = 2
CUT_SLACK = 1e-9

INTEGRALITY_TOL = 1e-6
EQUALITY_TOL = 1e-6
PRUNE_TOL = 1e-12

# Shared cut pool cap; dropping old cuts never hurts validity.
MAX_POOL_CUTS = 256


@dataclass(frozen=True)
class SolverConfig:
    """Search budget and termination targets."""

    mip_gap: float = 0.5
    time_limit_s: float = 5400.0
    pool_size: int = 10
    node_limit: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.mip_gap < 1.0:
            raise ValueError("mip_gap must lie in [0, 1)")
        if self.pool_size < 1:
            raise ValueError("pool_size must be at least 1")
        if self.node_limit < 1:
            raise ValueError("node_limit must be at least 1")
        if self.time_limit_s < 0.0:
            raise ValueError("time_limit_s must be non-negative")


@dataclass(frozen=True, eq=False)
class Node:
    """Search-tree node: an x box plus allowed segment intervals per point."""

    x_lower: np.ndarray
    x_upper: np.ndarray
    segments: tuple
    lower_bound: float
    depth: int

    def __post_init__(self):
        object.__setattr__(self, "x_lower",
                           np.asarray(self.x_lower, dtype=float).reshape(-1))
        object.__setattr__(self, "x_upper",
                           np.asarray(self.x_upper, dtype=float).reshape(-1))
        if self.x_lower.shape != self.x_upper.shape:
            raise ValueError("box bounds must have matching shapes")
        if np.any(self.x_lower > self.x_upper + 1e-12):
            raise ValueError("empty node box")
        for lo, hi in self.segments:
            if lo > hi:
                raise ValueError("empty allowed segment interval")


def root_node(model: MiqpModel) -> Node:
    return Node(x_lower=model.box.lower.copy(), x_upper=model.box.upper.copy(),
                segments=tuple((0, model.n_segments - 1)
                               for _ in range(model.n_train)),
                lower_bound=-np.inf, depth=0)


@dataclass(frozen=True, eq=False)
class Solution:
    """A feasible assignment with its objective."""

    assignment: np.ndarray
    objective: float


@dataclass(frozen=True, eq=False)
class SolveResult:
    """Search outcome: incumbent, solution pool, bound, gap, effort."""

    status: str
    incumbent: Solution | None
    pool: tuple
    best_bound: float
    gap: float
    nodes_explored: int


@dataclass(frozen=True, eq=False)
class Lp:
    """Dense LP: minimise objective subject to rows and finite variable bounds."""

    objective: np.ndarray
    a_ub: np.ndarray
    b_ub: np.ndarray
    a_eq: np.ndarray
    b_eq: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


def lp_solve(lp: Lp):
    """Solve an LP; returns (status, point, objective).

    Statuses: "optimal", "infeasible", "error". A numerical failure is
    retried once with bounds widened by 1e-9 before giving up.
    """
    if not (np.all(np.isfinite(lp.lower)) and np.all(np.isfinite(lp.upper))):
        raise ValueError("all variable bounds must be finite")
    if np.any(lp.lower > lp.upper + 1e-12):
        return "infeasible", None, None
    upper = np.maximum(lp.lower, lp.upper)

    def attempt(lower, upper):
        return linprog(lp.objective,
                       A_ub=lp.a_ub if lp.a_ub is not None and len(lp.a_ub) else None,
                       b_ub=lp.b_ub if lp.b_ub is not None and len(lp.b_ub) else None,
                       A_eq=lp.a_eq if lp.a_eq is not None and len(lp.a_eq) else None,
                       b_eq=lp.b_eq if lp.b_eq is not None and len(lp.b_eq) else None,
                       bounds=list(zip(lower, upper)), method="highs")

    result = attempt(lp.lower, upper)
    if result.status == 0:
        return "optimal", np.asarray(result.x, dtype=float), float(result.fun)
    if result.status == 2:
        return "infeasible", None, None
    result = attempt(lp.lower - 1e-9, upper + 1e-9)
    if result.status == 0:
        return "optimal", np.asarray(result.x, dtype=float), float(result.fun)
    if result.status == 2:
        return "infeasible", None, None
    return "error", None, None


class _BaseLp:
    """Node-independent LP data for one model, built once per solve."""

    def __init__(self, model: MiqpModel):
        self.model = model
        n = model.n_vars
        self.objective = np.zeros(n)
        for key, coef in model.objective.items():
            self.objective[key] = coef
        a_eq, b_eq, a_ub, b_ub = [], [], [], []
        for row in model.linear:
            vec = np.zeros(n)
            for key, coef in row.coefficients.items():
                vec[key] = coef
            if row.sense == "=":
                a_eq.append(vec)
                b_eq.append(row.rhs)
            elif row.sense == "<=":
                a_ub.append(vec)
                b_ub.append(row.rhs)
            else:
                a_ub.append(-vec)
                b_ub.append(-row.rhs)
        self.a_eq = np.array(a_eq) if a_eq else None
        self.b_eq = np.array(b_eq) if b_eq else None
        self.a_ub = np.array(a_ub) if a_ub else np.zeros((0, n))
        self.b_ub = np.array(b_ub) if b_ub else np.zeros(0)
        self.lower = model.lower_bounds()
        self.upper = model.upper_bounds()
        self.convex = tuple(c for c in model.quadratic if c.tag == "convex")
        self.inv_l2 = 1.0 / (model.params.lengthscale ** 2)

    def oa_cut(self, con, z):
        """Gradient cut of a convex row at z, valid everywhere."""
        n = self.model.n_vars
        grad = np.zeros(n)
        value = 0.0
        for (a, b), coef in con.quad.items():
            grad[a] += coef * z[b]
            grad[b] += coef * z[a]
            value += coef * z[a] * z[b]
        for key, coef in con.linear.items():
            grad[key] += coef
            value += coef * z[key]
        rhs = con.rhs - value + float(grad @ z) + CUT_SLACK
        return grad, rhs

    def convex_violation(self, z) -> float:
        worst = 0.0
        for con in self.convex:
            value = sum(c * z[a] * z[b] for (a, b), c in con.quad.items())
            value += sum(c * z[k] for k, c in con.linear.items())
            worst = max(worst, value - con.rhs)
        return float(worst)


def _radius_bounds(base: _BaseLp, node: Node):
    """Per-point scaled-distance interval from geometry and allowed segments."""
    model = base.model
    knots = model.knots
    intervals = []
    for i, (lo, hi) in enumerate(node.segments):
        center = model.train_X[i]
        below = np.maximum(node.x_lower - center, 0.0)
        above = np.maximum(center - node.x_upper, 0.0)
        d_min = float(np.linalg.norm(np.maximum(below, above)))
        d_max = float(np.linalg.norm(np.maximum(
            np.abs(node.x_lower - center), np.abs(node.x_upper - center))))
        rl = max(float(knots[lo]), d_min / model.params.lengthscale, 0.0)
        ru = min(float(knots[hi + 1]), d_max / model.params.lengthscale,
                 float(model.r_upper[i]))
        if rl > ru + 1e-9:
            return None
        intervals.append((min(rl, ru), ru))
    return intervals


def _node_variable_bounds(base: _BaseLp, node: Node, radii):
    model = base.model
    lower, upper = base.lower.copy(), base.upper.copy()
    dim, m = model.dim, model.n_segments
    lower[:dim] = np.maximum(lower[:dim], node.x_lower)
    upper[:dim] = np.minimum(upper[:dim], node.x_upper)
    for i, (lo, hi) in enumerate(node.segments):
        rl, ru = radii[i]
        k = model.ix_r(i)
        lower[k] = max(lower[k], rl)
        upper[k] = min(upper[k], ru)
        for j in range(m + 1):
            if j < lo or j > hi + 1:
                upper[model.ix_w(i, j)] = 0.0
        for s in range(m):
            if s < lo or s > hi:
                upper[model.ix_lam(i, s)] = 0.0
    return lower, upper


def _secant(base: _BaseLp, xl, xu, center):
    """Per-dimension chords of (x-c)^2 / l^2 over [xl, xu]: slope, offset."""
    slope = (xl + xu - 2.0 * center) * base.inv_l2
    offset = (center * center - xl * xu) * base.inv_l2
    return slope, offset


def _radius_tangent_row(base: _BaseLp, node: Node, i: int, r_hat: float):
    """Tangent of r^2 at r_hat below the box secant of the squared distance."""
    model = base.model
    slope, offset = _secant(base, node.x_lower, node.x_upper,
                            model.train_X[i])
    vec = np.zeros(model.n_vars)
    vec[model.ix_r(i)] = 2.0 * r_hat
    vec[:model.dim] = -slope
    return vec, r_hat * r_hat + float(offset.sum()) + CUT_SLACK


def _point_tangent_row(base: _BaseLp, i: int, rl: float, ru: float, x_hat):
    """Tangent of the squared distance at x_hat below the secant of r^2."""
    model = base.model
    center = model.train_X[i]
    grad = 2.0 * (x_hat - center) * base.inv_l2
    q_val = float(np.sum((x_hat - center) ** 2)) * base.inv_l2
    vec = np.zeros(model.n_vars)
    vec[:model.dim] = grad
    vec[model.ix_r(i)] = -(rl + ru)
    return vec, -rl * ru - q_val + float(grad @ x_hat) + CUT_SLACK


def _base_distance_rows(base: _BaseLp, node: Node, radii):
    """Sandwich rows for every distance equality over the node.

    Tangent anchors at the radius-interval ends and at the two box corners
    keep the relaxation monotone under box shrink: a child's anchors sit
    between the parent's, so each parent row is dominated by a child row.
    """
    rows, rhs = [], []
    for i in range(base.model.n_train):
        rl, ru = radii[i]
        for r_hat in (rl, ru):
            vec, bound = _radius_tangent_row(base, node, i, r_hat)
            rows.append(vec)
            rhs.append(bound)
        for corner in (node.x_lower, node.x_upper):
            vec, bound = _point_tangent_row(base, i, rl, ru, corner)
            rows.append(vec)
            rhs.append(bound)
    return rows, rhs


def _refining_distance_rows(base: _BaseLp, node: Node, radii, z):
    """Extra sandwich rows anchored at the relaxed point."""
    model = base.model
    x_hat = z[:model.dim]
    rows, rhs = [], []
    for i in range(model.n_train):
        rl, ru = radii[i]
        r_hat = min(max(float(z[model.ix_r(i)]), rl), ru)
        vec, bound = _radius_tangent_row(base, node, i, r_hat)
        rows.append(vec)
        rhs.append(bound)
        vec, bound = _point_tangent_row(base, i, rl, ru, x_hat)
        rows.append(vec)
        rhs.append(bound)
    return rows, rhs


def node_relaxation(model: MiqpModel, node: Node, cut_pool=None,
                    cut_rounds: int = CUT_ROUNDS, _base: _BaseLp = None):
    """Lower bound and relaxed point for a node; (inf, None) when infeasible.

    cut_pool is a mutable list of globally valid (row, rhs) cuts; cuts
    generated here are appended so later nodes can reuse them. A numerical
    failure returns (node.lower_bound, None): a valid but unimproved bound.
    """
    base = _base if _base is not None else _BaseLp(model)
    pool = cut_pool if cut_pool is not None else []
    radii = _radius_bounds(base, node)
    if radii is None:
        return np.inf, None
    lower, upper = _node_variable_bounds(base, node, radii)
    if np.any(lower > upper + 1e-12):
        return np.inf, None
    local_rows, local_rhs = _base_distance_rows(base, node, radii)

    bound, point = -np.inf, None
    for round_index in range(cut_rounds + 1):
        a_ub = np.vstack([base.a_ub] + [row for row, _ in pool] + local_rows)
        b_ub = np.concatenate([base.b_ub,
                               np.array([r for _, r in pool], dtype=float),
                               np.array(local_rhs, dtype=float)])
        lp = Lp(objective=base.objective, a_ub=a_ub, b_ub=b_ub,
                a_eq=base.a_eq, b_eq=base.b_eq, lower=lower, upper=upper)
        status, z, objective = lp_solve(lp)
        if status == "infeasible":
            return np.inf, None
        if status == "error":
            return node.lower_bound, None
        bound, point = objective, z
        if round_index == cut_rounds:
            break
        added = False
        if base.convex_violation(z) > 1e-12:
            for con in base.convex:
                pool.append(base.oa_cut(con, z))
            added = True
        rows, rhs = _refining_distance_rows(base, node, radii, z)
        for row, r in zip(rows, rhs):
            if float(row @ z) > r + 1e-12:
                local_rows.append(row)
                local_rhs.append(r)
                added = True
        if not added:
            break
    if len(pool) > MAX_POOL_CUTS:
        del pool[:len(pool) - MAX_POOL_CUTS]
    return bound, point


def _fractionality(model: MiqpModel, node: Node, z):
    """Most fractional segment selector: (score, point index) or None."""
    best = None
    for i, (lo, hi) in enumerate(node.segments):
        if hi == lo:
            continue
        for s in range(lo, hi + 1):
            score = abs(z[model.ix_lam(i, s)] - 0.5)
            if best is None or score < best[0]:
                best = (score, i)
    if best is None or best[0] >= 0.5 - INTEGRALITY_TOL:
        return None
    return best


def _distance_violations(model: MiqpModel, z):
    x = z[:model.dim]
    diffs = x[None, :] - model.train_X
    q = np.sum(diffs * diffs, axis=1) / model.params.lengthscale ** 2
    r = np.array([z[model.ix_r(i)] for i in range(model.n_train)])
    return np.abs(r * r - q)


def branch(model: MiqpModel, node: Node, relaxed_point):
    """Split a node: segment interval at the weighted-median knot when a
    selector is fractional, otherwise bisect the x coordinate with the
    loosest secant on the worst distance equality."""
    z = np.asarray(relaxed_point, dtype=float).reshape(-1)
    fractional = _fractionality(model, node, z)
    violations = _distance_violations(model, z)
    if fractional is None and float(violations.max()) <= EQUALITY_TOL:
        raise ValueError("relaxed point is feasible; update the incumbent")
    if fractional is not None:
        _, i = fractional
        lo, hi = node.segments[i]
        weights = np.array([max(z[model.ix_lam(i, s)], 0.0)
                            for s in range(lo, hi + 1)])
        total = float(weights.sum())
        if total <= 0.0:
            split = lo + (hi - lo) // 2
        else:
            cumulative = np.cumsum(weights) / total
            split = lo + int(np.searchsorted(cumulative, 0.5))
        split = min(max(split, lo), hi - 1)
        left = node.segments[:i] + ((lo, split),) + node.segments[i + 1:]
        right = node.segments[:i] + ((split + 1, hi),) + node.segments[i + 1:]
        child_a = Node(node.x_lower, node.x_upper, left,
                       node.lower_bound, node.depth + 1)
        child_b = Node(node.x_lower, node.x_upper, right,
                       node.lower_bound, node.depth + 1)
        return child_a, child_b
    # Spatial split on the coordinate whose secant is loosest at the point.
    worst = int(np.argmax(violations))
    center = model.train_X[worst]
    x = z[:model.dim]
    inv_l2 = 1.0 / model.params.lengthscale ** 2
    slope = (node.x_lower + node.x_upper - 2.0 * center) * inv_l2
    offset = (center * center - node.x_lower * node.x_upper) * inv_l2
    slack = slope * x + offset - (x - center) ** 2 * inv_l2
    widths = node.x_upper - node.x_lower
    if float(slack.max()) > 1e-12:
        d = int(np.argmax(slack))
    else:
        d = int(np.argmax(widths))
    lo_d, hi_d = node.x_lower[d], node.x_upper[d]
    point = min(max(float(x[d]), lo_d + 0.1 * widths[d]), hi_d - 0.1 * widths[d])
    left_upper = node.x_upper.copy()
    left_upper[d] = point
    right_lower = node.x_lower.copy()
    right_lower[d] = point
    child_a = Node(node.x_lower, left_upper, node.segments,
                   node.lower_bound, node.depth + 1)
    child_b = Node(right_lower, node.x_upper, node.segments,
                   node.lower_bound, node.depth + 1)
    return child_a, child_b


def _distinct(pool, z, dim) -> bool:
    x = z[:dim]
    return all(float(np.max(np.abs(sol.assignment[:dim] - x))) > 1e-6
               for sol in pool)


def _try_pool_insert(pool, solution, dim, pool_size):
    """Keep the best pool_size solutions with pairwise distinct x parts."""
    for k, existing in enumerate(pool):
        if float(np.max(np.abs(existing.assignment[:dim]
                               - solution.assignment[:dim]))) <= 1e-6:
            if solution.objective < existing.objective:
                pool[k] = solution
            return
    pool.append(solution)
    pool.sort(key=lambda sol: sol.objective)
    del pool[pool_size:]


def solve(model: MiqpModel, config: SolverConfig, warm_starts=()) -> SolveResult:
    """Best-bound branch and bound over the model.

    Warm starts may be full assignments (validated, infeasible ones dropped
    with a warning) or bare x points (completed like any candidate). The
    incumbent never ends worse than the best surviving warm start, and the
    result is a deterministic function of (model, config, warm_starts).
    """
    started = time.monotonic()
    base = _BaseLp(model)
    cut_pool = []
    pool = []
    incumbent = None

    def offer(z, objective):
        nonlocal incumbent
        solution = Solution(assignment=np.asarray(z, dtype=float).copy(),
                            objective=float(objective))
        if incumbent is None or solution.objective < incumbent.objective:
            incumbent = solution
        _try_pool_insert(pool, solution, model.dim, config.pool_size)

    for k, start in enumerate(warm_starts):
        z = np.asarray(start, dtype=float).reshape(-1)
        try:
            if z.size == model.dim:
                z, objective = evaluate_candidate(model, z)
            elif z.size == model.n_vars:
                if check_assignment(model, z) > 1e-6:
                    warnings.warn(f"dropping infeasible warm start {k}",
                                  RuntimeWarning, stacklevel=2)
                    continue
                objective = objective_value(model, z)
            else:
                warnings.warn(f"warm start {k} has a bad shape",
                              RuntimeWarning, stacklevel=2)
                continue
        except ValueError:
            warnings.warn(f"dropping infeasible warm start {k}",
                          RuntimeWarning, stacklevel=2)
            continue
        offer(z, objective)
        for con in base.convex:
            cut_pool.append(base.oa_cut(con, z))

    nodes_explored = 0
    stuck_bound = np.inf
    status = None
    final_bound = -np.inf
    heap = []
    tie = 0
    if config.time_limit_s > 0.0:
        root = root_node(model)
        heapq.heappush(heap, (root.lower_bound, tie, root))
        tie += 1
    else:
        status = "time_limit"

    def relative_gap(bound):
        if incumbent is None:
            return np.inf
        return (incumbent.objective - bound) / max(1e-9,
                                                   abs(incumbent.objective))

    while status is None:
        if not heap:
            # Tree exhausted: nothing feasible remains below the incumbent.
            if incumbent is None:
                status = "infeasible"
                final_bound = np.inf
            else:
                final_bound = min(incumbent.objective, stuck_bound)
                status = "optimal" if relative_gap(final_bound) <= 1e-6 \
                    else "gap_reached"
            break
        candidate_bound = min(heap[0][0], stuck_bound)
        if incumbent is not None:
            # Regions pruned against the incumbent are only proven to be no
            # better than it, so the dual bound must never exceed it.
            candidate_bound = min(candidate_bound,
                                  incumbent.objective - PRUNE_TOL)
        gap_now = relative_gap(candidate_bound)
        if gap_now <= 1e-6:
            status, final_bound = "optimal", candidate_bound
            break
        if gap_now <= config.mip_gap:
            status, final_bound = "gap_reached", candidate_bound
            break
        if time.monotonic() - started > config.time_limit_s:
            status, final_bound = "time_limit", candidate_bound
            break
        if nodes_explored >= config.node_limit:
            status, final_bound = "time_limit", candidate_bound
            break

        popped_bound, _, node = heapq.heappop(heap)
        bound, z = node_relaxation(model, node, cut_pool, CUT_ROUNDS,
                                   _base=base)
        nodes_explored += 1
        bound = max(bound, popped_bound)
        if z is None:
            if bound < np.inf:
                # Numerical failure: fathom but remember the weak bound.
                stuck_bound = min(stuck_bound, bound)
            continue
        try:
            completed, objective = evaluate_candidate(model, z[:model.dim])
            offer(completed, objective)
        except ValueError:
            pass
        if incumbent is not None and bound >= incumbent.objective - PRUNE_TOL:
            continue
        fractional = _fractionality(model, node, z)
        violation = float(_distance_violations(model, z).max())
        if fractional is None and violation <= EQUALITY_TOL:
            if base.convex_violation(z) <= 1e-6:
                # The relaxed point is feasible: this node is solved.
                continue
            # Only the cone is violated; the cuts just added will bite on
            # the next visit, so requeue rather than branch.
            heapq.heappush(heap, (bound, tie, Node(node.x_lower, node.x_upper,
                                                   node.segments, bound,
                                                   node.depth)))
            tie += 1
            continue
        child_a, child_b = branch(model, node, z)
        for child in (child_a, child_b):
            heapq.heappush(heap, (bound, tie,
                                  Node(child.x_lower, child.x_upper,
                                       child.segments, bound, child.depth)))
            tie += 1

    if status == "time_limit" and not heap and np.isinf(stuck_bound):
        final_bound = incumbent.objective if incumbent is not None else -np.inf
    gap = relative_gap(final_bound)
    return SolveResult(status=status, incumbent=incumbent, pool=tuple(pool),
                       best_bound=float(final_bound), gap=float(gap),
                       nodes_explored=nodes_explored)
