"""Piecewise-linear approximation of the Matern 3/2 kernel in distance space.

The kernel is linearised on a knot grid whose density follows the kernel's
curvature: the high-curvature head and bend get twice the per-dimension
segment count of the near-linear middle, and the flat tail keeps the doubled
count so long tails stay cheap. Breakpoint placement, interpolation, the
approximation-error report, and the approximated Gram/posterior all live here.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.spatial.distance import cdist

from miqpbo.gp import Box, Dataset, KernelParams, chol_with_jitter, matern32, \
    matern32_curvature

# The curvature threshold sits at this fraction of the curvature peak.
CURVATURE_FRACTION = 0.5

# Default grid resolution for approximation-error reports.
ERROR_GRID = 100_000

_BISECT_TOL = 1e-8


def _bisect(fn, lo: float, hi: float, tol: float = _BISECT_TOL) -> float:
    flo, fhi = fn(lo), fn(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if flo * fhi > 0.0:
        raise ValueError("bisection bracket does not change sign")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        fmid = fn(mid)
        if fmid == 0.0:
            return mid
        if flo * fmid < 0.0:
            hi = mid
        else:
            lo, flo = mid, fmid
    return 0.5 * (lo + hi)


def curvature_breakpoints(tol: float = _BISECT_TOL):
    """Radii where |k''| crosses half its peak, found by bisection.

    The crossings are invariant to the kernel variance. |k''| starts at its
    global maximum at r = 0, falls to zero at the inflection 1/sqrt(3), rises
    to the positive peak at 2/sqrt(3) and decays to zero, giving exactly three
    crossings r1 < r2 < r3.
    """
    threshold = CURVATURE_FRACTION * 3.0 * np.exp(-2.0)

    def gap(r):
        return abs(float(matern32_curvature(r))) - threshold

    inflection = 1.0 / np.sqrt(3.0)
    peak = 2.0 / np.sqrt(3.0)
    r1 = _bisect(gap, 0.0, inflection, tol)
    r2 = _bisect(gap, inflection, peak, tol)
    r3 = _bisect(gap, peak, 40.0, tol)
    return r1, r2, r3


@dataclass(frozen=True)
class BreakpointSet:
    """Strictly increasing knot radii with the curvature region of each segment."""

    knots: np.ndarray
    region_ids: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        region_ids = np.asarray(self.region_ids, dtype=int)
        if knots.ndim != 1 or knots.size < 2:
            raise ValueError("need at least two knots")
        if knots[0] != 0.0:
            raise ValueError("knot grid must start at zero")
        if np.any(np.diff(knots) <= 1e-12):
            raise ValueError("knots must be strictly increasing")
        if region_ids.shape != (knots.size - 1,):
            raise ValueError("one region id per segment required")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "region_ids", region_ids)

    @property
    def n_segments(self) -> int:
        return self.knots.size - 1


def build_breakpoints(dim: int, box: Box, lengthscale: float,
                      segment_scale: int = 1) -> BreakpointSet:
    """Curvature-adapted knot grid covering scaled distances [0, diameter/l].

    Region segment counts default to (2, 1, 2, 2) per dimension; trailing
    regions that fall beyond the reachable distance are dropped, with the last
    surviving region truncated, so every surviving region keeps its count.
    """
    if dim < 1:
        raise ValueError("dim must be at least 1")
    if segment_scale < 1:
        raise ValueError("segment_scale must be at least 1")
    if lengthscale <= 0.0:
        raise ValueError("lengthscale must be positive")
    r1, r2, r3 = curvature_breakpoints()
    r_max = box.diameter() / lengthscale
    per_dim = (2, 1, 2, 2)
    edges = (0.0, r1, r2, r3, r_max)
    pieces, region_ids = [], []
    for region in range(4):
        lo, hi = edges[region], min(edges[region + 1], r_max)
        if lo >= r_max - 1e-12 or hi <= lo + 1e-12:
            break
        count = per_dim[region] * dim * segment_scale
        pieces.append(np.linspace(lo, hi, count, endpoint=False))
        region_ids.extend([region] * count)
    knots = np.append(np.concatenate(pieces), r_max)
    return BreakpointSet(knots, np.asarray(region_ids, dtype=int))


@dataclass(frozen=True)
class PwlKernel:
    """Piecewise-linear kernel: knot radii with exact kernel values at each."""

    params: KernelParams
    knots: np.ndarray
    values: np.ndarray
    region_ids: np.ndarray

    @property
    def n_segments(self) -> int:
        return self.knots.size - 1

    @property
    def r_max(self) -> float:
        return float(self.knots[-1])


def build_pwl(params: KernelParams, dim: int, box: Box,
              segment_scale: int = 1) -> PwlKernel:
    """Linearise the kernel over the scaled distances reachable in the box."""
    breakpoints = build_breakpoints(dim, box, params.lengthscale, segment_scale)
    values = matern32(breakpoints.knots, params.variance)
    return PwlKernel(params=params, knots=breakpoints.knots, values=values,
                     region_ids=breakpoints.region_ids)


def eval_pwl(pwl: PwlKernel, r):
    """Interpolated kernel value at scaled distance r; clamps beyond the grid."""
    r = np.asarray(r, dtype=float)
    if np.any(r < -1e-12):
        raise ValueError("distances must be non-negative")
    if np.any(r > pwl.r_max * (1.0 + 1e-12) + 1e-12):
        warnings.warn("distance beyond the knot grid; clamped to the final value",
                      RuntimeWarning, stacklevel=2)
    out = np.interp(r, pwl.knots, pwl.values)
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class PwlErrorReport:
    """Dense-grid approximation error, overall and split by segment/region."""

    eps_max: float
    segment_errors: np.ndarray
    region_errors: dict


def max_error(pwl: PwlKernel, grid_size: int = ERROR_GRID) -> PwlErrorReport:
    """Exhaustive |k - k~| sweep over [0, r_max]."""
    grid = np.linspace(0.0, pwl.r_max, grid_size)
    errors = np.abs(matern32(grid, pwl.params.variance) - eval_pwl(pwl, grid))
    seg = np.clip(np.searchsorted(pwl.knots, grid, side="right") - 1,
                  0, pwl.n_segments - 1)
    segment_errors = np.zeros(pwl.n_segments)
    np.maximum.at(segment_errors, seg, errors)
    region_errors = {}
    for region in np.unique(pwl.region_ids):
        mask = pwl.region_ids[seg] == region
        region_errors[int(region)] = float(errors[mask].max()) if mask.any() else 0.0
    return PwlErrorReport(eps_max=float(errors.max()),
                          segment_errors=segment_errors,
                          region_errors=region_errors)


def approx_gram(pwl: PwlKernel, X, noise: float = 0.0) -> np.ndarray:
    """Approximated Gram matrix, PSD-repaired by the smallest workable jitter.

    Chord interpolation is not a positive-definite kernel, and on crowded
    datasets (or lengthscales much larger than the box) the negative
    eigenvalues can exceed the standard jitter ladder. When that happens the
    diagonal is lifted by the exact spectral floor instead of failing.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    r = cdist(X, X) / pwl.params.lengthscale
    K = eval_pwl(pwl, r)
    K = 0.5 * (K + K.T)
    K[np.diag_indices_from(K)] += noise
    try:
        _, jitter = chol_with_jitter(K)
    except np.linalg.LinAlgError:
        jitter = 1e-8 - float(np.linalg.eigvalsh(K)[0])
    K[np.diag_indices_from(K)] += jitter
    return K


def approx_posterior(pwl: PwlKernel, dataset: Dataset, X):
    """Posterior mean/variance with every kernel evaluation linearised.

    This is the reference the mixed-integer model must reproduce: identical
    noisy repaired Gram, identical interpolated cross-kernel vectors, variance
    clamped at zero.
    """
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    Xq = np.atleast_2d(X)
    K = approx_gram(pwl, dataset.X, noise=pwl.params.noise)
    L = np.linalg.cholesky(K)
    alpha = cho_solve((L, True), dataset.y)
    rq = cdist(Xq, dataset.X) / pwl.params.lengthscale
    Kq = eval_pwl(pwl, rq)
    mean = Kq @ alpha
    v = solve_triangular(L, Kq.T, lower=True)
    var = np.maximum(pwl.params.variance - np.sum(v * v, axis=0), 0.0)
    if single:
        return float(mean[0]), float(var[0])
    return mean, var


def save_breakpoints(pwl: PwlKernel, path) -> None:
    """Write the knot table as two-column delimited text (radius, value)."""
    np.savetxt(path, np.column_stack([pwl.knots, pwl.values]), fmt="%.17g",
               delimiter=",", header="r,k", comments="")
