"""Gaussian process regression with a Matern 3/2 kernel.

All exact inference runs through Cholesky factorisations of the noisy Gram
matrix; hyperparameters are fitted by multi-start maximisation of the log
marginal likelihood in log-parameter space with analytic gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

SQRT3 = float(np.sqrt(3.0))

# Jitter ladder tried in order whenever a Gram matrix fails to factorise.
JITTERS = (0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)

# Hyperparameter search bounds; the observation noise stays fixed because the
# toolkit targets noiseless objectives.
VARIANCE_BOUNDS = (0.05, 20.0)
LENGTHSCALE_BOUNDS = (0.005, 20.0)
DEFAULT_NOISE = 1e-6

# Two sample rows closer than this are considered duplicates.
DUPLICATE_TOL = 1e-12


@dataclass(frozen=True)
class Box:
    """Axis-aligned search box with strictly positive widths."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.ndim != 1 or lower.shape != upper.shape:
            raise ValueError("bounds must be two vectors of equal length")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise ValueError("bounds must be finite")
        if np.any(upper <= lower):
            raise ValueError("upper bounds must exceed lower bounds")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    def diameter(self) -> float:
        return float(np.linalg.norm(self.widths))

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def clip(self, x) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=float), self.lower, self.upper)

    def unit(self) -> "Box":
        """The standardised image of this box."""
        return Box(np.zeros(self.dim), np.ones(self.dim))


@dataclass(frozen=True)
class Dataset:
    """Immutable training set: N rows of D inputs and one output each."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2 or X.shape[0] < 1:
            raise ValueError("X must be a non-empty (N, D) array")
        y = y.reshape(-1)
        if y.shape[0] != X.shape[0]:
            raise ValueError("X and y row counts differ")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains non-finite values")
        if X.shape[0] > 1:
            dists = cdist(X, X, metric="chebyshev")
            np.fill_diagonal(dists, np.inf)
            if dists.min() <= DUPLICATE_TOL:
                raise ValueError("dataset contains duplicate input rows")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def append(self, x, y_value: float) -> "Dataset":
        x = np.asarray(x, dtype=float).reshape(1, -1)
        return Dataset(np.vstack([self.X, x]), np.append(self.y, float(y_value)))


def save_dataset(dataset: Dataset, path) -> None:
    """Write a dataset as delimited text: header, one row per sample."""
    names = [f"x{d + 1}" for d in range(dataset.dim)] + ["y"]
    table = np.column_stack([dataset.X, dataset.y])
    np.savetxt(path, table, fmt="%.17g", delimiter=",",
               header=",".join(names), comments="")


def load_dataset(path) -> Dataset:
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if table.shape[1] < 2:
        raise ValueError("dataset file needs at least one input column and y")
    return Dataset(table[:, :-1], table[:, -1])


@dataclass(frozen=True)
class KernelParams:
    """Matern 3/2 kernel hyperparameters."""

    variance: float = 1.0
    lengthscale: float = 1.0
    noise: float = DEFAULT_NOISE

    def __post_init__(self):
        for name in ("variance", "lengthscale", "noise"):
            value = float(getattr(self, name))
            if not np.isfinite(value) or value <= 0.0:
                raise ValueError(f"{name} must be positive and finite")
            object.__setattr__(self, name, value)


def matern32(r, variance: float = 1.0):
    """Matern 3/2 kernel value at scaled distance ``r = ||x - x'|| / l``."""
    r = np.asarray(r, dtype=float)
    s = SQRT3 * r
    return variance * (1.0 + s) * np.exp(-s)


def matern32_curvature(r, variance: float = 1.0):
    """Second derivative of the Matern 3/2 kernel with respect to ``r``.

    Equals ``3 * variance * (sqrt(3) r - 1) exp(-sqrt(3) r)``: negative below
    the inflection at r = 1/sqrt(3), with a positive peak of
    ``3 exp(-2) * variance`` at r = 2/sqrt(3).
    """
    r = np.asarray(r, dtype=float)
    s = SQRT3 * r
    return 3.0 * variance * (s - 1.0) * np.exp(-s)


def kernel_matrix(A, B, params: KernelParams) -> np.ndarray:
    """Cross-kernel matrix k(A, B) without any noise term."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    r = cdist(A, B) / params.lengthscale
    return matern32(r, params.variance)


def chol_with_jitter(K: np.ndarray):
    """Lower Cholesky factor of K, escalating diagonal jitter as needed."""
    n = K.shape[0]
    for jitter in JITTERS:
        try:
            L = np.linalg.cholesky(K + jitter * np.eye(n))
            return L, jitter
        except np.linalg.LinAlgError:
            continue
    raise np.linalg.LinAlgError(
        "Gram matrix is not positive definite even at the largest jitter")


@dataclass(frozen=True)
class GpModel:
    """Fitted GP posterior state on a fixed training set."""

    params: KernelParams
    X: np.ndarray
    y: np.ndarray
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float


def build_gp(dataset: Dataset, params: KernelParams) -> GpModel:
    """Factorise the noisy Gram matrix and precompute the posterior weights."""
    K = kernel_matrix(dataset.X, dataset.X, params)
    K[np.diag_indices_from(K)] += params.noise
    L, jitter = chol_with_jitter(K)
    alpha = cho_solve((L, True), dataset.y)
    return GpModel(params=params, X=dataset.X.copy(), y=dataset.y.copy(),
                   chol=L, alpha=alpha, jitter=jitter)


def posterior(model: GpModel, X):
    """Posterior mean and variance at query points.

    Accepts a single point (D,) or a batch (Q, D); returns matching scalars
    or vectors. Variances are clamped at zero.
    """
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    Xq = np.atleast_2d(X)
    Kq = kernel_matrix(Xq, model.X, model.params)
    mean = Kq @ model.alpha
    v = solve_triangular(model.chol, Kq.T, lower=True)
    var = np.maximum(model.params.variance - np.sum(v * v, axis=0), 0.0)
    if single:
        return float(mean[0]), float(var[0])
    return mean, var


def log_marginal_likelihood(dataset: Dataset, params: KernelParams) -> float:
    """Log marginal likelihood of the data under a zero-mean Matern 3/2 GP."""
    value, _ = _lml_value_grad(dataset, params, want_grad=False)
    return value


def _lml_value_grad(dataset: Dataset, params: KernelParams, want_grad: bool = True):
    """LML and its gradient with respect to (log variance, log lengthscale)."""
    X, y = dataset.X, dataset.y
    n = X.shape[0]
    r = cdist(X, X) / params.lengthscale
    s = SQRT3 * r
    Kf = params.variance * (1.0 + s) * np.exp(-s)
    K = Kf + params.noise * np.eye(n)
    L, jitter = chol_with_jitter(K)
    alpha = cho_solve((L, True), y)
    lml = (-0.5 * float(y @ alpha)
           - float(np.sum(np.log(np.diag(L))))
           - 0.5 * n * np.log(2.0 * np.pi))
    if not want_grad:
        return lml, None
    Kinv = cho_solve((L, True), np.eye(n))
    # dK/d(log variance) is the noise-free kernel itself; dK/d(log lengthscale)
    # follows from dk/dr = -3 variance r exp(-sqrt(3) r) and dr/d(log l) = -r.
    dK_dlogv = Kf
    dK_dlogl = 3.0 * params.variance * (r * r) * np.exp(-s)
    grad = np.empty(2)
    for i, dK in enumerate((dK_dlogv, dK_dlogl)):
        grad[i] = 0.5 * (float(alpha @ dK @ alpha) - float(np.sum(Kinv * dK)))
    return lml, grad


def fit_hyperparameters(dataset: Dataset, restarts: int = 10, seed=None,
                        noise: float = DEFAULT_NOISE,
                        variance_bounds=VARIANCE_BOUNDS,
                        lengthscale_bounds=LENGTHSCALE_BOUNDS) -> KernelParams:
    """Fit (variance, lengthscale) by multi-start LML maximisation.

    Starting points are drawn log-uniformly within the bounds; each start runs
    bounded L-BFGS-B in log space. The best final LML wins, the earliest start
    winning ties, which keeps the result a deterministic function of the seed.
    """
    if restarts < 1:
        raise ValueError("restarts must be at least 1")
    rng = np.random.default_rng(seed)
    log_lo = np.log([variance_bounds[0], lengthscale_bounds[0]])
    log_hi = np.log([variance_bounds[1], lengthscale_bounds[1]])
    starts = rng.uniform(log_lo, log_hi, size=(restarts, 2))

    def objective(theta):
        params = KernelParams(np.exp(theta[0]), np.exp(theta[1]), noise)
        value, grad = _lml_value_grad(dataset, params)
        return -value, -grad

    best_theta, best_value = None, np.inf
    for start in starts:
        result = minimize(objective, start, jac=True, method="L-BFGS-B",
                          bounds=list(zip(log_lo, log_hi)))
        if np.isfinite(result.fun) and result.fun < best_value:
            best_value = float(result.fun)
            best_theta = np.clip(result.x, log_lo, log_hi)
    if best_theta is None:
        raise RuntimeError("all hyperparameter restarts failed")
    return KernelParams(float(np.exp(best_theta[0])),
                        float(np.exp(best_theta[1])), noise)


class MaternGP(BaseEstimator, RegressorMixin):
    """Matern 3/2 GP regressor with marginal-likelihood hyperparameter fitting.

    Parameters
    ----------
    variance, lengthscale : float
        Kernel hyperparameters, used as-is when ``n_restarts`` is 0.
    noise : float
        Fixed observation-noise variance.
    n_restarts : int
        Number of log-uniform restarts for the LML search; 0 disables fitting.
    random_state : int or None
        Seed for the restart draws.
    """

    def __init__(self, variance=1.0, lengthscale=1.0, noise=DEFAULT_NOISE,
                 n_restarts=10, random_state=None):
        self.variance = variance
        self.lengthscale = lengthscale
        self.noise = noise
        self.n_restarts = n_restarts
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        dataset = Dataset(X, y)
        if self.n_restarts > 0:
            params = fit_hyperparameters(dataset, restarts=self.n_restarts,
                                         seed=self.random_state, noise=self.noise)
        else:
            params = KernelParams(self.variance, self.lengthscale, self.noise)
        self.params_ = params
        self.model_ = build_gp(dataset, params)
        self.n_features_in_ = dataset.dim
        return self

    def predict(self, X, return_std=False):
        check_is_fitted(self, "model_")
        X = check_array(X)
        mean, var = posterior(self.model_, X)
        if return_std:
            return mean, np.sqrt(var)
        return mean

    def log_marginal_likelihood(self):
        check_is_fitted(self, "model_")
        dataset = Dataset(self.model_.X, self.model_.y)
        return log_marginal_likelihood(dataset, self.params_)


@dataclass(frozen=True)
class ScalingTransform:
    """Affine map between original and standardised coordinates.

    Inputs map onto the unit box; outputs map onto [0, 1] by their range. A
    constant output vector maps to 0.5 everywhere and unscales back exactly.
    """

    x_low: np.ndarray
    x_width: np.ndarray
    y_low: float
    y_width: float

    def scale_x(self, X):
        X = np.asarray(X, dtype=float)
        return (X - self.x_low) / self.x_width

    def unscale_x(self, X):
        X = np.asarray(X, dtype=float)
        return self.x_low + X * self.x_width

    def scale_y(self, y):
        y = np.asarray(y, dtype=float)
        if self.y_width == 0.0:
            return np.full_like(y, 0.5)
        return (y - self.y_low) / self.y_width

    def unscale_y(self, y):
        y = np.asarray(y, dtype=float)
        return self.y_low + y * self.y_width


def standardize(dataset: Dataset, box: Box):
    """Standardise a dataset: inputs to the unit box, outputs to [0, 1]."""
    if box.dim != dataset.dim:
        raise ValueError("box dimension does not match dataset")
    y_low = float(dataset.y.min())
    y_width = float(dataset.y.max() - y_low)
    transform = ScalingTransform(x_low=box.lower.copy(), x_width=box.widths.copy(),
                                 y_low=y_low, y_width=y_width)
    scaled = Dataset(transform.scale_x(dataset.X), transform.scale_y(dataset.y))
    return scaled, transform
