"""Tests for the piecewise-linear kernel approximation.

Error numbers are always measured against the closed-form kernel on dense
grids, with the interpolation recomputed by hand where the test would
otherwise trust the code under test.
"""

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from miqpbo.gp import Box, Dataset, KernelParams, matern32, matern32_curvature
from miqpbo.pwl import (
    approx_gram,
    approx_posterior,
    build_breakpoints,
    build_pwl,
    curvature_breakpoints,
    eval_pwl,
    max_error,
    save_breakpoints,
)

UNIT_1D = Box(np.array([0.0]), np.array([1.0]))
UNIT_2D = Box(np.array([0.0, 0.0]), np.array([1.0, 1.0]))


def manual_interp(knots, values, r):
    # Independent linear interpolation via searchsorted.
    j = np.clip(np.searchsorted(knots, r, side="right"), 1, knots.size - 1)
    t = (r - knots[j - 1]) / (knots[j] - knots[j - 1])
    t = np.clip(t, 0.0, 1.0)
    return values[j - 1] * (1.0 - t) + values[j] * t


def test_breakpoint_values():
    r1, r2, r3 = curvature_breakpoints()
    assert r1 == pytest.approx(0.4866, abs=1e-3)
    assert r2 == pytest.approx(0.7113, abs=1e-3)
    assert r3 == pytest.approx(2.1237, abs=1e-3)
    assert 0.0 < r1 < r2 < r3


def test_breakpoints_sit_on_the_threshold():
    threshold = 0.5 * 3.0 * np.exp(-2.0)
    for r in curvature_breakpoints():
        assert abs(matern32_curvature(r)) == pytest.approx(threshold, abs=1e-6)


def test_default_segment_counts():
    bp = build_breakpoints(1, Box(np.array([0.0]), np.array([5.0])), 1.0)
    assert bp.n_segments == 7
    assert bp.knots[0] == 0.0
    assert bp.knots[-1] == pytest.approx(5.0)
    bp2 = build_breakpoints(2, UNIT_2D, 0.25)
    assert bp2.n_segments == 14
    assert np.all(np.diff(bp2.knots) > 0)


def test_segment_scale_multiplies_counts():
    bp = build_breakpoints(1, Box(np.array([0.0]), np.array([5.0])), 1.0,
                           segment_scale=3)
    assert bp.n_segments == 21


def test_truncated_tail_keeps_surviving_regions():
    # Reachable distance 1.0 lies between r2 and r3: the last region is
    # dropped, the bend region is truncated, counts stay (2, 1, 2).
    bp = build_breakpoints(1, UNIT_1D, 1.0)
    assert bp.n_segments == 5
    assert bp.knots[-1] == pytest.approx(1.0)
    assert list(np.unique(bp.region_ids)) == [0, 1, 2]
    # Reachable distance below r1 leaves a single doubled region.
    bp_short = build_breakpoints(1, UNIT_1D, 3.0)
    assert bp_short.n_segments == 2
    assert list(np.unique(bp_short.region_ids)) == [0]


def test_eval_exact_at_knots():
    pwl = build_pwl(KernelParams(1.7, 0.3), 1, UNIT_1D)
    assert np.allclose(eval_pwl(pwl, pwl.knots), pwl.values, atol=1e-15)
    value = eval_pwl(pwl, float(pwl.knots[2]))
    assert isinstance(value, float)


def test_eval_beyond_grid_clamps_with_warning():
    pwl = build_pwl(KernelParams(), 1, UNIT_1D)
    with pytest.warns(RuntimeWarning):
        value = eval_pwl(pwl, pwl.r_max + 1.0)
    assert value == pytest.approx(pwl.values[-1])


def test_chord_sides_follow_curvature_sign():
    # Concave head: chords under the kernel. Convex bend and tail: chords over.
    pwl = build_pwl(KernelParams(1.0, 0.2), 2, UNIT_2D)
    mids = 0.5 * (pwl.knots[:-1] + pwl.knots[1:])
    exact = matern32(mids)
    approx = eval_pwl(pwl, mids)
    for m, e, a, region in zip(mids, exact, approx, pwl.region_ids):
        if region == 0:
            assert a <= e + 1e-12
        elif region >= 2:
            assert a >= e - 1e-12


def test_near_linear_region_error_bound():
    # The half-peak threshold caps the error on [r1, r2] at 0.025 * variance
    # for the default per-dimension build.
    for dim, box in [(1, UNIT_1D), (2, UNIT_2D)]:
        for variance in (1.0, 2.3):
            pwl = build_pwl(KernelParams(variance, 0.2), dim, box)
            report = max_error(pwl)
            assert report.region_errors[1] <= 0.025 * variance


def test_global_error_default_2d_build():
    pwl = build_pwl(KernelParams(1.0, 0.5), 2, UNIT_2D)
    grid = np.linspace(0.0, pwl.r_max, 100_000)
    oracle = np.abs(matern32(grid) - manual_interp(pwl.knots, pwl.values, grid))
    assert oracle.max() <= 0.03
    report = max_error(pwl)
    assert report.eps_max == pytest.approx(oracle.max(), abs=1e-12)
    assert report.segment_errors.max() == pytest.approx(report.eps_max)


def test_error_shrinks_with_segment_scale():
    params = KernelParams(1.0, 0.3)
    eps = {scale: max_error(build_pwl(params, 1, UNIT_1D, scale)).eps_max
           for scale in (1, 2, 4)}
    assert eps[2] < eps[1]
    assert eps[4] <= eps[1] / 2.0


def test_approx_gram_single_point_and_symmetry():
    pwl = build_pwl(KernelParams(2.5, 0.4), 1, UNIT_1D)
    K1 = approx_gram(pwl, np.array([[0.3]]))
    assert K1.shape == (1, 1)
    assert K1[0, 0] == pytest.approx(2.5)
    rng = np.random.default_rng(0)
    X = rng.uniform(0, 1, size=(8, 1))
    K = approx_gram(pwl, X)
    assert np.array_equal(K, K.T)
    np.linalg.cholesky(K)


def test_approx_gram_entries_within_eps_max():
    rng = np.random.default_rng(1)
    params = KernelParams(1.4, 0.35)
    pwl = build_pwl(params, 2, UNIT_2D)
    X = rng.uniform(0, 1, size=(10, 2))
    K = approx_gram(pwl, X)
    exact = matern32(np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(-1))
                     / params.lengthscale, params.variance)
    eps = max_error(pwl).eps_max
    # Allow the repair jitter on the diagonal.
    assert np.abs(K - exact).max() <= eps + 1e-4 + 1e-12


def test_approx_posterior_matches_dense_inverse_oracle():
    rng = np.random.default_rng(2)
    params = KernelParams(1.0, 0.5)
    X = rng.uniform(0, 1, size=(7, 1))
    dataset = Dataset(X, rng.normal(size=7))
    pwl = build_pwl(params, 1, UNIT_1D)
    Xq = rng.uniform(0, 1, size=(9, 1))
    mean, var = approx_posterior(pwl, dataset, Xq)
    K = approx_gram(pwl, dataset.X, noise=params.noise)
    rq = np.abs(Xq - dataset.X.T) / params.lengthscale
    kq = manual_interp(pwl.knots, pwl.values, rq)
    mean_ref = kq @ np.linalg.inv(K) @ dataset.y
    var_ref = params.variance - np.sum((kq @ np.linalg.inv(K)) * kq, axis=1)
    assert np.allclose(mean, mean_ref, atol=1e-10)
    assert np.allclose(var, np.maximum(var_ref, 0.0), atol=1e-10)


def test_approx_posterior_converges_with_segments():
    from miqpbo.gp import build_gp, posterior

    rng = np.random.default_rng(3)
    params = KernelParams(1.0, 0.15)
    # Points spread at least half a lengthscale apart keep the Gram well
    # conditioned, so the posterior error tracks the kernel error.
    X = ((np.arange(8) + 0.5) / 8 + rng.uniform(-0.03, 0.03, 8)).reshape(-1, 1)
    dataset = Dataset(X, rng.normal(size=8))
    exact = build_gp(dataset, params)
    grid = np.linspace(0, 1, 200).reshape(-1, 1)
    mean_ref, var_ref = posterior(exact, grid)
    gaps = {}
    for scale in (1, 4):
        mean, var = approx_posterior(build_pwl(params, 1, UNIT_1D, scale),
                                     dataset, grid)
        gaps[scale] = (np.abs(mean - mean_ref).max(),
                       np.abs(np.sqrt(var) - np.sqrt(var_ref)).max())
    assert gaps[4][0] <= gaps[1][0] / 2.0
    assert gaps[4][1] <= gaps[1][1] / 2.0


def test_save_breakpoints_two_columns(tmp_path):
    pwl = build_pwl(KernelParams(), 1, UNIT_1D)
    path = tmp_path / "knots.csv"
    save_breakpoints(pwl, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "r,k"
    assert len(lines) == pwl.knots.size + 1
    table = np.loadtxt(path, delimiter=",", skiprows=1)
    assert np.array_equal(table[:, 0], pwl.knots)
    assert np.array_equal(table[:, 1], pwl.values)


def test_build_breakpoints_validation():
    with pytest.raises(ValueError):
        build_breakpoints(0, UNIT_1D, 1.0)
    with pytest.raises(ValueError):
        build_breakpoints(1, UNIT_1D, 1.0, segment_scale=0)
    with pytest.raises(ValueError):
        build_breakpoints(1, UNIT_1D, -1.0)


def test_approx_gram_rescues_indefinite_clusters():
    # A lengthscale far beyond the box makes the exact Gram nearly rank one,
    # so the chord sag drives eigenvalues below the standard jitter ladder.
    box = Box(lower=[0.0, 0.0], upper=[1.0, 1.0])
    params = KernelParams(variance=1.3, lengthscale=1.8, noise=1e-6)
    pwl = build_pwl(params, dim=2, box=box)
    X = np.random.default_rng(2).uniform(0.0, 1.0, (24, 2))

    raw = eval_pwl(pwl, cdist(X, X) / params.lengthscale)
    raw = 0.5 * (raw + raw.T)
    raw[np.diag_indices_from(raw)] += params.noise
    assert np.linalg.eigvalsh(raw)[0] < -1e-4

    K = approx_gram(pwl, X, noise=params.noise)
    np.linalg.cholesky(K)
    assert np.abs(K - K.T).max() == 0.0
    off = ~np.eye(24, dtype=bool)
    assert np.array_equal(K[off], raw[off])

    y = np.sin(3.0 * X[:, 0]) - X[:, 1]
    mean, var = approx_posterior(pwl, Dataset(X, y), X[:3])
    assert np.all(np.isfinite(mean)) and np.all(var >= 0.0)
