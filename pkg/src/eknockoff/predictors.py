"""
Base regression estimators trained on the first data split.

Every fitted predictor exposes ``predict(X)`` and
``replacement_predictions(X, X_knock)``, the latter yielding, for each
feature ``j``, the predictions on ``X`` with column ``j`` swapped for its
knockoff. Subclasses override it with exact shortcuts; the base-class
version is the generic reference path.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from scipy import linalg

from ._coordinate_descent import cd_path, cd_solve
from .errors import InsufficientDataError, InvalidInputError, NumericalError
from .gaussian_knockoffs import as_data_matrix

PREDICTOR_KINDS = ("lasso_cv", "lasso_fixed", "kernel_ridge_sigmoid")

#: Solver stopping rule: sweep cap and coefficient-change tolerance.
MAX_SWEEPS = 1000
COEF_TOL = 1e-4
#: Relative KKT tolerance enforced before the solver stops.
KKT_REL_TOL = 1e-3


@dataclass(frozen=True)
class PredictorSpec:
    """Which estimator to fit and its hyperparameters.

    ``lam`` is used by ``lasso_fixed``; ``grid_size``, ``folds`` and
    ``grid_ratio`` by ``lasso_cv``; ``gamma`` (``None`` means ``1/p``),
    ``bias`` and ``ridge`` by ``kernel_ridge_sigmoid``.
    """

    kind: str = "lasso_cv"
    lam: float = 0.1
    grid_size: int = 100
    folds: int = 5
    grid_ratio: float = 1e-4
    gamma: float | None = None
    bias: float = 1.0
    ridge: float = 1.0
    max_iter: int = MAX_SWEEPS
    tol: float = COEF_TOL

    def __post_init__(self):
        if self.kind not in PREDICTOR_KINDS:
            raise InvalidInputError(f"unknown predictor kind {self.kind!r}; expected one of {PREDICTOR_KINDS}")
        if self.grid_size < 1:
            raise InvalidInputError("grid_size must be >= 1")
        if self.folds < 2:
            raise InvalidInputError("folds must be >= 2")
        if self.lam < 0 or self.ridge < 0 or self.tol < 0:
            raise InvalidInputError("penalties and tolerances must be nonnegative")
        if not 0 < self.grid_ratio <= 1:
            raise InvalidInputError("grid_ratio must lie in (0, 1]")
        if self.gamma is not None and self.gamma <= 0:
            raise InvalidInputError("gamma must be positive")
        if self.max_iter < 1:
            raise InvalidInputError("max_iter must be >= 1")

    @property
    def is_lasso(self) -> bool:
        return self.kind in ("lasso_cv", "lasso_fixed")


def _as_response(y, n: int) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.shape != (n,):
        raise InvalidInputError(f"y must have shape ({n},), got {y.shape}")
    if not np.all(np.isfinite(y)):
        raise InvalidInputError("y contains non-finite entries")
    return y


def replace_feature(X, X_knock, j: int) -> np.ndarray:
    """Copy of ``X`` with column ``j`` (0-based) taken from ``X_knock``."""
    X = np.asarray(X, dtype=float)
    X_knock = np.asarray(X_knock, dtype=float)
    if X.shape != X_knock.shape or X.ndim != 2:
        raise InvalidInputError(f"shape mismatch: {X.shape} vs {X_knock.shape}")
    if not 0 <= j < X.shape[1]:
        raise InvalidInputError(f"feature index {j} out of range for p={X.shape[1]}")
    out = X.copy()
    out[:, j] = X_knock[:, j]
    return out


@dataclass(frozen=True)
class FittedPredictor:
    """Common state of every fitted estimator.

    ``x_mean`` and ``x_scale`` are the per-column statistics applied before
    the model (identity for models that do not standardize).
    """

    spec: PredictorSpec
    x_mean: np.ndarray = field(repr=False)
    x_scale: np.ndarray = field(repr=False)
    fitted_values: np.ndarray = field(repr=False)

    @property
    def p(self) -> int:
        return self.x_mean.shape[0]

    def _check(self, X) -> np.ndarray:
        X = as_data_matrix(X)
        if X.shape[1] != self.p:
            raise InvalidInputError(f"X has {X.shape[1]} columns, predictor was trained on {self.p}")
        return X

    def predict(self, X) -> np.ndarray:
        raise NotImplementedError

    def replacement_predictions(self, X, X_knock) -> Iterator[np.ndarray]:
        """Yield ``predict(replace_feature(X, X_knock, j))`` for ``j = 0..p-1``."""
        X = self._check(X)
        X_knock = self._check(X_knock)
        if X.shape != X_knock.shape:
            raise InvalidInputError("X and X_knock must have the same shape")
        for j in range(self.p):
            yield self.predict(replace_feature(X, X_knock, j))


@dataclass(frozen=True)
class LassoPredictor(FittedPredictor):
    """Linear model ``intercept + X @ coef`` (coefficients on the original scale)."""

    coef: np.ndarray = field(default=None, repr=False)
    intercept: float = 0.0
    lam: float = 0.0
    n_iter: int = 0
    cv_errors: np.ndarray | None = field(default=None, repr=False)
    lambdas: np.ndarray | None = field(default=None, repr=False)

    @property
    def coef_std(self) -> np.ndarray:
        """Coefficients on the standardized scale."""
        return self.coef * self.x_scale

    def predict(self, X) -> np.ndarray:
        X = self._check(X)
        return self.intercept + X @ self.coef

    def replacement_predictions(self, X, X_knock) -> Iterator[np.ndarray]:
        # f(R_j(x)) = f(x) + coef_j (x_knock_j - x_j)
        X = self._check(X)
        X_knock = self._check(X_knock)
        if X.shape != X_knock.shape:
            raise InvalidInputError("X and X_knock must have the same shape")
        base = self.predict(X)
        for j in range(self.p):
            if self.coef[j] == 0.0:
                yield base.copy()
            else:
                yield base + self.coef[j] * (X_knock[:, j] - X[:, j])


@dataclass(frozen=True)
class KernelRidgePredictor(FittedPredictor):
    """Kernel ridge regression with the sigmoid kernel ``tanh(gamma <x, x'> + bias)``."""

    X_train: np.ndarray = field(default=None, repr=False)
    dual_coef: np.ndarray = field(default=None, repr=False)
    gamma: float = 1.0
    bias: float = 1.0

    def _kernel(self, inner: np.ndarray) -> np.ndarray:
        return np.tanh(self.gamma * inner + self.bias)

    def predict(self, X) -> np.ndarray:
        X = self._check(X)
        return self._kernel(X @ self.X_train.T) @ self.dual_coef

    def replacement_predictions(self, X, X_knock) -> Iterator[np.ndarray]:
        # swapping column j shifts every inner product by (xk_j - x_j) * t_j
        X = self._check(X)
        X_knock = self._check(X_knock)
        if X.shape != X_knock.shape:
            raise InvalidInputError("X and X_knock must have the same shape")
        inner = X @ self.X_train.T
        for j in range(self.p):
            shift = np.outer(X_knock[:, j] - X[:, j], self.X_train[:, j])
            yield self._kernel(inner + shift) @ self.dual_coef


def _standardize(X: np.ndarray):
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    # constant columns can leave round-off sized spread
    usable = scale > 1e-12 * (1.0 + np.abs(mean))
    scale = np.where(usable, scale, 1.0)
    return (X - mean) / scale, mean, scale, usable


def _gram_problem(X: np.ndarray, y: np.ndarray):
    Z, mean, scale, usable = _standardize(X)
    n = X.shape[0]
    y_mean = float(y.mean())
    yc = y - y_mean
    gram = Z.T @ Z / n
    corr = Z.T @ yc / n
    gram[~usable, :] = 0.0
    gram[:, ~usable] = 0.0
    corr[~usable] = 0.0
    return gram, corr, mean, scale, usable, y_mean


def lambda_max(X, y) -> float:
    """Smallest penalty at which every standardized coefficient is zero."""
    X = as_data_matrix(X)
    y = _as_response(y, X.shape[0])
    _, corr, *_ = _gram_problem(X, y)
    return float(np.max(np.abs(corr)))


def lambda_grid(lam_max: float, grid_size: int = 100, ratio: float = 1e-4) -> np.ndarray:
    """Descending log-spaced grid from ``lam_max`` to ``ratio * lam_max``."""
    if grid_size == 1:
        return np.array([lam_max])
    return np.geomspace(lam_max, ratio * lam_max, grid_size)


def _assemble_lasso(spec, X, y, beta_std, mean, scale, usable, y_mean, lam, n_iter, **extra):
    beta_std = np.where(usable, beta_std, 0.0)
    if not np.all(np.isfinite(beta_std)):
        raise NumericalError("coordinate descent diverged (non-finite coefficient)")
    coef = beta_std / scale
    intercept = y_mean - float(mean @ coef)
    fitted = intercept + X @ coef
    return LassoPredictor(
        spec=spec, x_mean=mean, x_scale=scale, fitted_values=fitted,
        coef=coef, intercept=intercept, lam=float(lam), n_iter=int(n_iter), **extra,
    )


def coordinate_descent(gram, corr, lam, usable=None, beta0=None, max_iter=MAX_SWEEPS,
                       tol=COEF_TOL, record=False):
    """Solve one Lasso problem in Gram form.

    Returns ``(beta, n_sweeps, objective_trace)``; the trace is empty unless
    ``record`` is set.
    """
    gram = np.ascontiguousarray(gram, dtype=float)
    corr = np.ascontiguousarray(corr, dtype=float)
    p = corr.shape[0]
    usable = np.ones(p, dtype=np.bool_) if usable is None else np.asarray(usable, dtype=np.bool_)
    beta = np.zeros(p) if beta0 is None else np.array(beta0, dtype=float)
    trace = np.full(max_iter if record else 0, np.nan)
    n_iter = cd_solve(gram, corr, beta, usable, float(lam), int(max_iter), float(tol),
                      KKT_REL_TOL * lam + 1e-12, trace)
    return beta, n_iter, trace[:n_iter]


def lasso_fit(X, y, lam: float, spec: PredictorSpec | None = None) -> LassoPredictor:
    """Lasso at a fixed penalty on standardized columns.

    Minimizes ``(1/2n)|y - b0 - Z b|^2 + lam |b|_1`` where ``Z`` is the
    column-standardized design; coefficients are returned on the original
    scale. Zero-variance columns get scale 1 and a coefficient pinned to 0.
    """
    X = as_data_matrix(X)
    y = _as_response(y, X.shape[0])
    if lam < 0:
        raise InvalidInputError("lam must be nonnegative")
    spec = spec or PredictorSpec(kind="lasso_fixed", lam=lam)
    gram, corr, mean, scale, usable, y_mean = _gram_problem(X, y)
    beta, n_iter, _ = coordinate_descent(gram, corr, lam, usable, max_iter=spec.max_iter, tol=spec.tol)
    return _assemble_lasso(spec, X, y, beta, mean, scale, usable, y_mean, lam, n_iter)


def fold_indices(n: int, folds: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Seeded shuffle of ``range(n)`` split into ``folds`` near-equal parts."""
    if n < folds:
        raise InsufficientDataError(f"need at least {folds} rows for {folds}-fold CV, got {n}")
    return np.array_split(rng.permutation(n), folds)


def lasso_cv_fit(X, y, grid_size: int = 100, folds: int = 5, rng: np.random.Generator | None = None,
                 spec: PredictorSpec | None = None) -> LassoPredictor:
    """Lasso with the penalty chosen by K-fold cross-validation.

    The grid is log-spaced over ``[grid_ratio * lam_max, lam_max]`` with
    ``lam_max`` computed on all rows. Each fold is standardized with its own
    training statistics. The penalty minimizing the mean held-out squared
    error is refit on all rows.
    """
    spec = spec or PredictorSpec(kind="lasso_cv", grid_size=grid_size, folds=folds)
    X = as_data_matrix(X)
    n = X.shape[0]
    y = _as_response(y, n)
    rng = np.random.default_rng() if rng is None else rng
    parts = fold_indices(n, spec.folds, rng)

    gram, corr, mean, scale, usable, y_mean = _gram_problem(X, y)
    lam_max = float(np.max(np.abs(corr)))
    if lam_max == 0.0:
        return _assemble_lasso(spec, X, y, np.zeros(X.shape[1]), mean, scale, usable, y_mean, 0.0, 0)
    lambdas = lambda_grid(lam_max, spec.grid_size, spec.grid_ratio)

    errors = np.zeros((spec.folds, lambdas.shape[0]))
    for k, test in enumerate(parts):
        train = np.ones(n, dtype=bool)
        train[test] = False
        g_k, c_k, m_k, s_k, u_k, ym_k = _gram_problem(X[train], y[train])
        # grid fits use the plain coefficient-change rule; only the returned fit is KKT-gated
        coefs, _ = cd_path(g_k, c_k, u_k, lambdas, spec.max_iter, spec.tol, np.inf)
        coefs = np.where(u_k, coefs, 0.0) / s_k
        intercepts = ym_k - coefs @ m_k
        pred = X[test] @ coefs.T + intercepts
        errors[k] = np.mean((y[test, None] - pred) ** 2, axis=0)
    mean_err = errors.mean(axis=0)
    best = int(np.argmin(mean_err))

    path, _ = cd_path(gram, corr, usable, lambdas[:best], spec.max_iter, spec.tol, np.inf)
    warm = path[-1] if best else None
    beta, n_iter, _ = coordinate_descent(gram, corr, lambdas[best], usable, warm, spec.max_iter, spec.tol)
    return _assemble_lasso(
        spec, X, y, beta, mean, scale, usable, y_mean, lambdas[best], n_iter,
        cv_errors=mean_err, lambdas=lambdas,
    )


def kernel_ridge_fit(X, y, ridge: float = 1.0, gamma: float | None = None, bias: float = 1.0,
                     spec: PredictorSpec | None = None) -> KernelRidgePredictor:
    """Sigmoid-kernel ridge regression, solved in the dual.

    ``a = (K + ridge I)^{-1} y`` with ``K_il = tanh(gamma <x_i, x_l> + bias)``
    and ``gamma = 1/p`` by default. No intercept and no standardization.
    """
    X = as_data_matrix(X)
    n, p = X.shape
    y = _as_response(y, n)
    if ridge <= 0:
        raise InvalidInputError("ridge must be positive")
    gamma = 1.0 / p if gamma is None else float(gamma)
    spec = spec or PredictorSpec(kind="kernel_ridge_sigmoid", ridge=ridge, gamma=gamma, bias=bias)
    K = np.tanh(gamma * (X @ X.T) + bias)
    try:
        a = linalg.solve(K + ridge * np.eye(n), y)
    except linalg.LinAlgError as exc:
        raise NumericalError("kernel system (K + ridge I) is singular") from exc
    if not np.all(np.isfinite(a)):
        raise NumericalError("kernel ridge produced non-finite dual weights")
    return KernelRidgePredictor(
        spec=spec, x_mean=np.zeros(p), x_scale=np.ones(p), fitted_values=K @ a,
        X_train=X.copy(), dual_coef=a, gamma=gamma, bias=bias,
    )


def fit_predictor(spec: PredictorSpec, X, y, rng: np.random.Generator | None = None) -> FittedPredictor:
    """Dispatch on ``spec.kind``."""
    if spec.kind == "lasso_cv":
        return lasso_cv_fit(X, y, rng=rng, spec=spec)
    if spec.kind == "lasso_fixed":
        return lasso_fit(X, y, spec.lam, spec=spec)
    return kernel_ridge_fit(X, y, ridge=spec.ridge, gamma=spec.gamma, bias=spec.bias, spec=spec)


def predict(f: FittedPredictor, X) -> np.ndarray:
    return f.predict(X)
