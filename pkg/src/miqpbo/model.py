"""Mixed-integer quadratic model of the linearised acquisition problem.

The decision vector stacks the query point x, one scaled distance r_i and one
kernel value kx_i per training point, convex-combination weights w_i_j over
the knot grid with binary segment selectors lam_i_j, and the posterior pair
(mu, sigma). Everything data-dependent (mean-row weights, the inverse Gram of
the variance cone) is precomputed from the piecewise kernel, so the built
model is a plain algebraic object: bounded variables, sparse linear rows,
sparse quadratic rows, a linear objective to minimise.

Only the distance equalities are nonconvex; the variance row is a convex
quadratic inequality and everything else is linear. The kernel-value bounds
lean on the interpolant being monotone decreasing in the scaled distance.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_solve

from .gp import Box, Dataset, KernelParams
from .pwl import PwlKernel, approx_gram, eval_pwl

SENSES = ("<=", "=", ">=")

# Candidate points may miss the box or a known constraint by this much before
# they are rejected; LP-relaxed points land well inside it.
FEASIBILITY_TOL = 1e-7


def _constant_row_holds(sense: str, rhs: float) -> bool:
    """Whether an all-zero row is vacuously true."""
    if sense == "<=":
        return 0.0 <= rhs
    if sense == ">=":
        return 0.0 >= rhs
    return rhs == 0.0


@dataclass(frozen=True)
class VariableDef:
    """One decision variable: kind, finite bounds, diagnostic name."""

    id: int
    kind: str
    lower: float
    upper: float
    name: str

    def __post_init__(self):
        if self.kind not in ("continuous", "binary"):
            raise ValueError(f"unknown variable kind {self.kind!r}")
        lower, upper = float(self.lower), float(self.upper)
        if not (np.isfinite(lower) and np.isfinite(upper)):
            raise ValueError(f"bounds of {self.name} must be finite")
        if lower > upper:
            raise ValueError(f"empty bound interval for {self.name}")
        if self.kind == "binary" and (lower, upper) != (0.0, 1.0):
            raise ValueError("binary variables must have bounds {0, 1}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)


@dataclass(frozen=True)
class LinearConstraint:
    """Sparse row: sum_k coef_k z_k (sense) rhs.

    Zero coefficients are dropped at construction. An empty row is legal only
    when vacuously true, so harmless placeholders like 0'x <= 1 can be passed
    around and silently skipped.
    """

    coefficients: dict
    sense: str
    rhs: float
    name: str = ""

    def __post_init__(self):
        if self.sense not in SENSES:
            raise ValueError(f"unknown sense {self.sense!r}")
        rhs = float(self.rhs)
        if not np.isfinite(rhs):
            raise ValueError("constraint rhs must be finite")
        coefs = {}
        for key, value in self.coefficients.items():
            value = float(value)
            if not np.isfinite(value):
                raise ValueError("constraint coefficients must be finite")
            if value != 0.0:
                coefs[int(key)] = value
        if not coefs and not _constant_row_holds(self.sense, rhs):
            raise ValueError("constant constraint is infeasible")
        object.__setattr__(self, "coefficients", coefs)
        object.__setattr__(self, "rhs", rhs)

    @property
    def is_vacuous(self) -> bool:
        return not self.coefficients


@dataclass(frozen=True)
class QuadConstraint:
    """Sparse row: z'Qz + c'z (sense) rhs, with Q stored symmetrically.

    Off-diagonal input coefficients are split evenly across the (a, b) and
    (b, a) slots so the stored map is symmetric no matter how it was written.
    """

    quad: dict
    linear: dict
    sense: str
    rhs: float
    tag: str
    name: str = ""

    def __post_init__(self):
        if self.sense not in SENSES:
            raise ValueError(f"unknown sense {self.sense!r}")
        if self.tag not in ("convex", "nonconvex-equality"):
            raise ValueError(f"unknown tag {self.tag!r}")
        rhs = float(self.rhs)
        if not np.isfinite(rhs):
            raise ValueError("constraint rhs must be finite")
        quad = {}
        for (a, b), value in self.quad.items():
            value = float(value)
            if not np.isfinite(value):
                raise ValueError("quadratic coefficients must be finite")
            if value == 0.0:
                continue
            a, b = int(a), int(b)
            if a == b:
                quad[(a, a)] = quad.get((a, a), 0.0) + value
            else:
                quad[(a, b)] = quad.get((a, b), 0.0) + 0.5 * value
                quad[(b, a)] = quad.get((b, a), 0.0) + 0.5 * value
        linear = {}
        for key, value in self.linear.items():
            value = float(value)
            if not np.isfinite(value):
                raise ValueError("linear coefficients must be finite")
            if value != 0.0:
                linear[int(key)] = value
        object.__setattr__(self, "quad", quad)
        object.__setattr__(self, "linear", linear)
        object.__setattr__(self, "rhs", rhs)


def _linear_value(coefficients: dict, z: np.ndarray) -> float:
    return float(sum(coef * z[key] for key, coef in coefficients.items()))


def _quad_value(con: QuadConstraint, z: np.ndarray) -> float:
    value = sum(coef * z[a] * z[b] for (a, b), coef in con.quad.items())
    return float(value) + _linear_value(con.linear, z)


def _sense_violation(value: float, sense: str, rhs: float) -> float:
    if sense == "<=":
        return max(0.0, value - rhs)
    if sense == ">=":
        return max(0.0, rhs - value)
    return abs(value - rhs)


@dataclass(frozen=True, eq=False)
class MiqpModel:
    """Immutable acquisition model plus the data needed to complete points.

    The trailing fields replicate exactly what the reference linearised
    posterior uses: alpha is Gram^{-1} y and gram_inv the full inverse, both
    from the noisy, jitter-repaired approximate Gram matrix.
    """

    variables: tuple
    linear: tuple
    quadratic: tuple
    objective: dict
    beta: float
    has_sigma: bool
    params: KernelParams
    box: Box
    train_X: np.ndarray
    knots: np.ndarray
    values: np.ndarray
    alpha: np.ndarray
    gram_inv: np.ndarray
    r_upper: np.ndarray
    known_constraints: tuple = ()

    @property
    def n_vars(self) -> int:
        return len(self.variables)

    @property
    def n_train(self) -> int:
        return self.train_X.shape[0]

    @property
    def dim(self) -> int:
        return self.train_X.shape[1]

    @property
    def n_segments(self) -> int:
        return self.knots.size - 1

    # Variable layout: x block, r block, kx block, w block, lam block, mu,
    # then sigma on full models. All index helpers mirror this order.
    def ix_x(self, d: int) -> int:
        return d

    def ix_r(self, i: int) -> int:
        return self.dim + i

    def ix_kx(self, i: int) -> int:
        return self.dim + self.n_train + i

    def ix_w(self, i: int, j: int) -> int:
        return self.dim + 2 * self.n_train + i * (self.n_segments + 1) + j

    def ix_lam(self, i: int, s: int) -> int:
        base = self.dim + 2 * self.n_train + self.n_train * (self.n_segments + 1)
        return base + i * self.n_segments + s

    @property
    def ix_mu(self) -> int:
        base = self.dim + 2 * self.n_train + self.n_train * (self.n_segments + 1)
        return base + self.n_train * self.n_segments

    @property
    def ix_sigma(self) -> int:
        if not self.has_sigma:
            raise ValueError("model has no deviation variable")
        return self.ix_mu + 1

    def lower_bounds(self) -> np.ndarray:
        return np.array([v.lower for v in self.variables])

    def upper_bounds(self) -> np.ndarray:
        return np.array([v.upper for v in self.variables])

    def binary_ids(self) -> tuple:
        return tuple(v.id for v in self.variables if v.kind == "binary")


def _validate_known(con, dim: int, fallback_name: str):
    """Check a user constraint touches only x variables; None when vacuous."""
    if isinstance(con, LinearConstraint):
        if con.is_vacuous:
            return None
        keys = con.coefficients.keys()
    elif isinstance(con, QuadConstraint):
        if not con.quad:
            # Rows without quadratic terms travel as plain linear rows.
            return _validate_known(
                LinearConstraint(con.linear, con.sense, con.rhs, con.name),
                dim, fallback_name)
        if con.tag != "convex" or con.sense != "<=":
            raise ValueError(
                "known quadratic constraints must be convex inequalities")
        keys = set(con.linear)
        for a, b in con.quad:
            keys.update((a, b))
    else:
        raise TypeError("known constraints must be Linear or Quad constraints")
    if any(key < 0 or key >= dim for key in keys):
        raise ValueError("known constraints may reference only x variables")
    if not con.name:
        con = replace(con, name=fallback_name)
    return con


def _known_violation(con, x: np.ndarray) -> float:
    if isinstance(con, LinearConstraint):
        return _sense_violation(_linear_value(con.coefficients, x),
                                con.sense, con.rhs)
    return _sense_violation(_quad_value(con, x), con.sense, con.rhs)


def _build(pwl: PwlKernel, dataset: Dataset, box: Box, known_constraints,
           beta: float, with_variance: bool) -> MiqpModel:
    if beta < 0.0 or not np.isfinite(beta):
        raise ValueError("beta must be non-negative and finite")
    if box.dim != dataset.dim:
        raise ValueError("box dimension does not match dataset")
    params = pwl.params
    n, dim, m = dataset.n, dataset.dim, pwl.n_segments
    knots, values = pwl.knots, pwl.values

    # Same noisy repaired Gram as the reference linearised posterior; the
    # repair raises when even the largest jitter cannot make it factorise.
    gram = approx_gram(pwl, dataset.X, noise=params.noise)
    chol = np.linalg.cholesky(gram)
    alpha = cho_solve((chol, True), dataset.y)
    gram_inv = cho_solve((chol, True), np.eye(n))
    gram_inv = 0.5 * (gram_inv + gram_inv.T)

    # Per-point distance cap: the farthest box point from x_i sits at a
    # corner, so the per-dimension farthest offsets give its distance.
    far = np.linalg.norm(
        np.maximum(dataset.X - box.lower, box.upper - dataset.X), axis=1)
    r_upper = np.minimum(pwl.r_max, far / params.lengthscale)
    kx_lower = np.asarray(eval_pwl(pwl, r_upper), dtype=float).reshape(-1)

    def ixx(d):
        return d

    def ixr(i):
        return dim + i

    def ixk(i):
        return dim + n + i

    def ixw(i, j):
        return dim + 2 * n + i * (m + 1) + j

    def ixl(i, s):
        return dim + 2 * n + n * (m + 1) + i * m + s

    ix_mu = dim + 2 * n + n * (m + 1) + n * m
    ix_sigma = ix_mu + 1

    variables = []
    for d in range(dim):
        variables.append(VariableDef(ixx(d), "continuous",
                                     box.lower[d], box.upper[d], f"x_{d}"))
    for i in range(n):
        variables.append(VariableDef(ixr(i), "continuous",
                                     0.0, float(r_upper[i]), f"r_{i}"))
    for i in range(n):
        variables.append(VariableDef(ixk(i), "continuous",
                                     float(kx_lower[i]), params.variance,
                                     f"kx_{i}"))
    for i in range(n):
        for j in range(m + 1):
            variables.append(VariableDef(ixw(i, j), "continuous",
                                         0.0, 1.0, f"w_{i}_{j}"))
    for i in range(n):
        for s in range(m):
            variables.append(VariableDef(ixl(i, s), "binary",
                                         0.0, 1.0, f"lam_{i}_{s + 1}"))
    # Interval arithmetic on the mean row gives finite mu bounds.
    low_terms = np.minimum(alpha * kx_lower, alpha * params.variance)
    high_terms = np.maximum(alpha * kx_lower, alpha * params.variance)
    variables.append(VariableDef(ix_mu, "continuous",
                                 float(low_terms.sum()), float(high_terms.sum()),
                                 "mu"))
    if with_variance:
        variables.append(VariableDef(ix_sigma, "continuous",
                                     0.0, float(np.sqrt(params.variance)),
                                     "sigma"))

    rows = []
    mean_row = {ix_mu: 1.0}
    mean_row.update({ixk(i): -float(alpha[i]) for i in range(n)})
    rows.append(LinearConstraint(mean_row, "=", 0.0, "mean_def"))
    for i in range(n):
        rows.append(LinearConstraint({ixw(i, j): 1.0 for j in range(m + 1)},
                                     "=", 1.0, f"weights_sum_{i}"))
        radius_row = {ixr(i): 1.0}
        radius_row.update({ixw(i, j): -float(knots[j]) for j in range(1, m + 1)})
        rows.append(LinearConstraint(radius_row, "=", 0.0, f"radius_interp_{i}"))
        kernel_row = {ixk(i): 1.0}
        kernel_row.update({ixw(i, j): -float(values[j]) for j in range(m + 1)})
        rows.append(LinearConstraint(kernel_row, "=", 0.0, f"kernel_interp_{i}"))
        rows.append(LinearConstraint({ixl(i, s): 1.0 for s in range(m)},
                                     "=", 1.0, f"segment_pick_{i}"))
        # Knot j belongs to segments j and j+1 (1-based); a weight may be
        # positive only when one of its segments is selected.
        for j in range(m + 1):
            cap = {ixw(i, j): 1.0}
            if j >= 1:
                cap[ixl(i, j - 1)] = -1.0
            if j <= m - 1:
                cap[ixl(i, j)] = -1.0
            rows.append(LinearConstraint(cap, "<=", 0.0, f"adjacency_{i}_{j}"))

    quads = []
    if with_variance:
        cone = {(ix_sigma, ix_sigma): 1.0}
        for a in range(n):
            for b in range(n):
                coef = float(gram_inv[a, b])
                if coef != 0.0:
                    cone[(ixk(a), ixk(b))] = coef
        quads.append(QuadConstraint(cone, {}, "<=", params.variance,
                                    "convex", "variance_cone"))
    inv_l2 = 1.0 / (params.lengthscale * params.lengthscale)
    for i in range(n):
        center = dataset.X[i]
        quad = {(ixr(i), ixr(i)): 1.0}
        lin = {}
        rhs = 0.0
        for d in range(dim):
            quad[(ixx(d), ixx(d))] = quad.get((ixx(d), ixx(d)), 0.0) - inv_l2
            if center[d] != 0.0:
                lin[ixx(d)] = 2.0 * center[d] * inv_l2
            rhs += center[d] * center[d] * inv_l2
        quads.append(QuadConstraint(quad, lin, "=", rhs,
                                    "nonconvex-equality", f"distance_sq_{i}"))

    known = []
    for k, con in enumerate(known_constraints):
        checked = _validate_known(con, dim, f"known_{k}")
        if checked is not None:
            known.append(checked)
    rows.extend(c for c in known if isinstance(c, LinearConstraint))
    quads.extend(c for c in known if isinstance(c, QuadConstraint))

    objective = {ix_mu: 1.0}
    if with_variance and beta > 0.0:
        objective[ix_sigma] = -float(np.sqrt(beta))

    return MiqpModel(variables=tuple(variables), linear=tuple(rows),
                     quadratic=tuple(quads), objective=objective,
                     beta=float(beta), has_sigma=with_variance, params=params,
                     box=box, train_X=dataset.X.copy(), knots=knots.copy(),
                     values=values.copy(), alpha=np.asarray(alpha, dtype=float),
                     gram_inv=gram_inv, r_upper=r_upper,
                     known_constraints=tuple(known))


def build_full_model(pwl: PwlKernel, dataset: Dataset, beta: float, bounds: Box,
                     known_constraints=()) -> MiqpModel:
    """Full acquisition model: minimise mu - sqrt(beta) sigma."""
    return _build(pwl, dataset, bounds, known_constraints,
                  beta=float(beta), with_variance=True)


def build_sub_model(pwl: PwlKernel, dataset: Dataset, bounds: Box,
                    known_constraints=()) -> MiqpModel:
    """Mean-only model: same feasible set minus the variance cone and sigma."""
    return _build(pwl, dataset, bounds, known_constraints,
                  beta=0.0, with_variance=False)


def add_known_constraints(model: MiqpModel, constraints) -> MiqpModel:
    """Append user constraints on x; returns a new model."""
    offset = len(model.known_constraints)
    extra = []
    for k, con in enumerate(constraints):
        checked = _validate_known(con, model.dim, f"known_{offset + k}")
        if checked is not None:
            extra.append(checked)
    linear = model.linear + tuple(c for c in extra
                                  if isinstance(c, LinearConstraint))
    quadratic = model.quadratic + tuple(c for c in extra
                                        if isinstance(c, QuadConstraint))
    return replace(model, linear=linear, quadratic=quadratic,
                   known_constraints=model.known_constraints + tuple(extra))


def evaluate_candidate(model: MiqpModel, x_hat):
    """Complete a query point into a feasible assignment and its objective.

    Distances locate the bracketing segment, the two knot weights reproduce
    the interpolated kernel value exactly, and sigma is set so the variance
    cone is tight. The result doubles as warm start and incumbent witness.
    """
    x = np.asarray(x_hat, dtype=float).reshape(-1)
    if x.size != model.dim:
        raise ValueError("candidate dimension does not match the model")
    if not model.box.contains(x, tol=FEASIBILITY_TOL):
        raise ValueError("candidate lies outside the box")
    x = model.box.clip(x)
    for con in model.known_constraints:
        if _known_violation(con, x) > FEASIBILITY_TOL:
            raise ValueError(f"candidate violates known constraint {con.name!r}")

    m = model.n_segments
    knots, values = model.knots, model.values
    z = np.zeros(model.n_vars)
    z[:model.dim] = x
    for i in range(model.n_train):
        d = float(np.linalg.norm(x - model.train_X[i]) / model.params.lengthscale)
        d = min(d, float(model.r_upper[i]))
        seg = int(np.clip(np.searchsorted(knots, d, side="right") - 1, 0, m - 1))
        theta = (d - knots[seg]) / (knots[seg + 1] - knots[seg])
        theta = min(max(theta, 0.0), 1.0)
        z[model.ix_r(i)] = d
        z[model.ix_w(i, seg)] = 1.0 - theta
        if theta > 0.0:
            z[model.ix_w(i, seg + 1)] = theta
        z[model.ix_lam(i, seg)] = 1.0
        z[model.ix_kx(i)] = (1.0 - theta) * values[seg] + theta * values[seg + 1]

    kx = z[model.ix_kx(0):model.ix_kx(0) + model.n_train]
    z[model.ix_mu] = float(model.alpha @ kx)
    if model.has_sigma:
        residual = model.params.variance - float(kx @ model.gram_inv @ kx)
        sigma = float(np.sqrt(max(residual, 0.0)))
        z[model.ix_sigma] = min(sigma, float(np.sqrt(model.params.variance)))
    objective = _linear_value(model.objective, z)
    return z, objective


def objective_value(model: MiqpModel, assignment) -> float:
    """Objective of an assignment under the model's linear objective."""
    z = np.asarray(assignment, dtype=float).reshape(-1)
    if z.size != model.n_vars:
        raise ValueError("assignment length does not match the model")
    return _linear_value(model.objective, z)


def check_assignment(model: MiqpModel, assignment) -> float:
    """Worst violation across bounds, integrality, and every constraint."""
    z = np.asarray(assignment, dtype=float).reshape(-1)
    if z.size != model.n_vars:
        raise ValueError("assignment length does not match the model")
    worst = 0.0
    for var in model.variables:
        worst = max(worst, var.lower - z[var.id], z[var.id] - var.upper)
        if var.kind == "binary":
            worst = max(worst, abs(z[var.id] - round(z[var.id])))
    for row in model.linear:
        value = _linear_value(row.coefficients, z)
        worst = max(worst, _sense_violation(value, row.sense, row.rhs))
    for con in model.quadratic:
        worst = max(worst, _sense_violation(_quad_value(con, z),
                                            con.sense, con.rhs))
    return float(max(worst, 0.0))


# ---------------------------------------------------------------------------
# LP-dialect text export and the matching parser.

@dataclass(frozen=True)
class ParsedRow:
    """One constraint as read from (or written to) the text form."""

    name: str
    linear: dict
    quad: dict
    sense: str
    rhs: float


@dataclass(frozen=True)
class ParsedLp:
    """Name-keyed image of a model as it appears in the text form."""

    objective: dict
    rows: tuple
    bounds: dict
    binaries: tuple


def _fmt(value: float) -> str:
    return repr(float(value) + 0.0)


def _expr(terms) -> str:
    """Render (coefficient, symbol) terms with explicit signs."""
    parts = []
    for coef, symbol in terms:
        if coef == 0.0:
            continue
        magnitude = abs(coef)
        body = symbol if magnitude == 1.0 else f"{_fmt(magnitude)} {symbol}"
        parts.append(("-" if coef < 0.0 else "+", body))
    if not parts:
        return "0"
    lead, body = parts[0]
    text = ("- " if lead == "-" else "") + body
    for lead, body in parts[1:]:
        text += f" {lead} {body}"
    return text


def _to_parsed(model: MiqpModel) -> ParsedLp:
    names = [v.name for v in model.variables]
    objective = {names[k]: coef
                 for k, coef in sorted(model.objective.items())}
    rows = []
    for row in model.linear:
        linear = {names[k]: coef
                  for k, coef in sorted(row.coefficients.items())}
        rows.append(ParsedRow(row.name, linear, {}, row.sense, row.rhs))
    for con in model.quadratic:
        linear = {names[k]: coef for k, coef in sorted(con.linear.items())}
        merged = {}
        for (a, b), coef in con.quad.items():
            key = (a, b) if a <= b else (b, a)
            merged[key] = merged.get(key, 0.0) + coef
        quad = {(names[a], names[b]): coef
                for (a, b), coef in sorted(merged.items())}
        rows.append(ParsedRow(con.name, linear, quad, con.sense, con.rhs))
    bounds = {v.name: (v.lower, v.upper)
              for v in model.variables if v.kind == "continuous"}
    binaries = tuple(v.name for v in model.variables if v.kind == "binary")
    return ParsedLp(objective=objective, rows=tuple(rows), bounds=bounds,
                    binaries=binaries)


def _render(parsed: ParsedLp) -> str:
    lines = ["Minimize"]
    lines.append(" obj: " + _expr(list((c, s) for s, c in parsed.objective.items())))
    lines.append("Subject To")
    for row in parsed.rows:
        pieces = []
        if row.linear:
            pieces.append(_expr([(c, s) for s, c in row.linear.items()]))
        if row.quad:
            terms = [(c, f"{a} ^ 2" if a == b else f"{a} * {b}")
                     for (a, b), c in row.quad.items()]
            pieces.append("[ " + _expr(terms) + " ]")
        body = " + ".join(pieces) if pieces else "0"
        lines.append(f" {row.name}: {body} {row.sense} {_fmt(row.rhs)}")
    lines.append("Bounds")
    for name, (lower, upper) in parsed.bounds.items():
        lines.append(f" {_fmt(lower)} <= {name} <= {_fmt(upper)}")
    if parsed.binaries:
        lines.append("Binaries")
        group = None
        row = []
        for name in parsed.binaries:
            prefix = name.rsplit("_", 1)[0]
            if group is not None and prefix != group:
                lines.append(" " + " ".join(row))
                row = []
            group = prefix
            row.append(name)
        if row:
            lines.append(" " + " ".join(row))
    lines.append("End")
    return "\n".join(lines) + "\n"


def export_lp_text(model: MiqpModel) -> str:
    """Serialise the model in the bracketed-quadratic LP text dialect."""
    return _render(_to_parsed(model))


_NUMBER = r"(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?"
_TOKEN = re.compile(
    rf"({_NUMBER}|[A-Za-z][A-Za-z0-9_]*|<=|>=|=|\[|\]|\^|\*|\+|-)")
_NUMBER_RE = re.compile(rf"^{_NUMBER}$")


def _tokenize(text: str):
    tokens = []
    pos = 0
    for match in _TOKEN.finditer(text):
        if text[pos:match.start()].strip():
            raise ValueError(f"cannot tokenise {text[pos:match.start()]!r}")
        tokens.append(match.group(1))
        pos = match.end()
    if text[pos:].strip():
        raise ValueError(f"cannot tokenise {text[pos:]!r}")
    return tokens


def _parse_signed_number(tokens, pos):
    sign = 1.0
    while pos < len(tokens) and tokens[pos] in ("+", "-"):
        if tokens[pos] == "-":
            sign = -sign
        pos += 1
    if pos >= len(tokens) or not _NUMBER_RE.match(tokens[pos]):
        raise ValueError("expected a number")
    return sign * float(tokens[pos]), pos + 1


def _parse_terms(tokens, pos, stop):
    """Read sign/coefficient/symbol terms, honouring quadratic brackets."""
    linear, quad = {}, {}
    while pos < len(tokens) and tokens[pos] not in stop:
        token = tokens[pos]
        if token in ("[", "]"):
            pos += 1
            continue
        sign = 1.0
        while tokens[pos] in ("+", "-"):
            if tokens[pos] == "-":
                sign = -sign
            pos += 1
            while tokens[pos] in ("[", "]"):
                pos += 1
        coef = 1.0
        if _NUMBER_RE.match(tokens[pos]):
            coef = float(tokens[pos])
            pos += 1
        name = tokens[pos]
        if _NUMBER_RE.match(name):
            raise ValueError("expected a variable name")
        pos += 1
        if pos < len(tokens) and tokens[pos] == "^":
            if tokens[pos + 1] != "2":
                raise ValueError("only squares appear in quadratic terms")
            pos += 2
            key = (name, name)
            quad[key] = quad.get(key, 0.0) + sign * coef
        elif pos < len(tokens) and tokens[pos] == "*":
            other = tokens[pos + 1]
            pos += 2
            key = (name, other)
            quad[key] = quad.get(key, 0.0) + sign * coef
        else:
            linear[name] = linear.get(name, 0.0) + sign * coef
    return linear, quad, pos


def parse_lp_text(text: str) -> ParsedLp:
    """Parse the dialect written by export_lp_text back into name-keyed form."""
    section = None
    objective = {}
    rows = []
    bounds = {}
    binaries = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("\\"):
            continue
        lowered = line.lower()
        if lowered in ("minimize", "subject to", "bounds", "binaries", "end"):
            section = lowered
            continue
        if section == "minimize":
            _, _, body = line.partition(":")
            tokens = _tokenize(body)
            linear, quad, pos = _parse_terms(tokens, 0, stop=())
            if quad or pos != len(tokens):
                raise ValueError("objective must be linear")
            objective.update(linear)
        elif section == "subject to":
            name, _, body = line.partition(":")
            tokens = _tokenize(body)
            linear, quad, pos = _parse_terms(tokens, 0, stop=("<=", ">=", "="))
            if pos >= len(tokens):
                raise ValueError(f"constraint {name!r} has no sense")
            sense = tokens[pos]
            rhs, pos = _parse_signed_number(tokens, pos + 1)
            if pos != len(tokens):
                raise ValueError(f"trailing tokens in constraint {name!r}")
            rows.append(ParsedRow(name.strip(), linear, quad, sense, rhs))
        elif section == "bounds":
            tokens = _tokenize(line)
            lower, pos = _parse_signed_number(tokens, 0)
            if tokens[pos] != "<=":
                raise ValueError("malformed bounds line")
            name = tokens[pos + 1]
            if tokens[pos + 2] != "<=":
                raise ValueError("malformed bounds line")
            upper, pos = _parse_signed_number(tokens, pos + 3)
            bounds[name] = (lower, upper)
        elif section == "binaries":
            binaries.extend(line.split())
        elif section == "end":
            raise ValueError("content after End")
        else:
            raise ValueError(f"line outside any section: {line!r}")
    return ParsedLp(objective=objective, rows=tuple(rows), bounds=bounds,
                    binaries=tuple(binaries))
