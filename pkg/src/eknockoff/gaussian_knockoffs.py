"""
Gaussian model-X knockoffs.

Given a Gaussian model ``x ~ N(mu, Sigma)`` for the covariates, a knockoff
copy is drawn row by row from the conditional law

    x_tilde | x ~ N(mu + (x - mu) A, V),
    A = I - Sigma^{-1} diag(s),
    V = 2 diag(s) - diag(s) Sigma^{-1} diag(s),

so that ``(x, x_tilde)`` is jointly Gaussian with covariance

    G = [[Sigma, Sigma - diag(s)], [Sigma - diag(s), Sigma]].

The swap vector ``s`` is chosen by the equicorrelated rule.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import InsufficientDataError, InvalidInputError, NumericalError

#: Uniform shrink applied to the equicorrelated ``s`` so that V stays
#: strictly factorizable.
S_SHRINK = 1e-6

_JITTER_START = 1e-10
_JITTER_RETRIES = 3


def as_data_matrix(X, name: str = "X") -> np.ndarray:
    """Validate and convert a design matrix to a 2-D float array."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-dimensional, got shape {X.shape}")
    if X.shape[0] < 1 or X.shape[1] < 1:
        raise InvalidInputError(f"{name} must have at least one row and column")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return X


@dataclass(frozen=True)
class CovarianceModel:
    """Gaussian covariate model.

    Parameters
    ----------
    mean : ndarray, shape (p,)
    sigma : ndarray, shape (p, p)
        Symmetric positive definite covariance, regularization included.
    regularization : float
        Diagonal inflation ``delta`` that was added to the raw estimate.
    """

    mean: np.ndarray
    sigma: np.ndarray
    regularization: float = 0.0

    def __post_init__(self):
        sigma = np.array(self.sigma, dtype=float)
        mean = np.array(self.mean, dtype=float)
        if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
            raise InvalidInputError(f"sigma must be square, got shape {sigma.shape}")
        if mean.shape != (sigma.shape[0],):
            raise InvalidInputError("mean length does not match sigma")
        if not (np.all(np.isfinite(sigma)) and np.all(np.isfinite(mean))):
            raise InvalidInputError("covariance model contains non-finite entries")
        if np.max(np.abs(sigma - sigma.T)) > 1e-10:
            raise InvalidInputError("sigma is not symmetric")
        if self.regularization < 0:
            raise InvalidInputError("regularization must be nonnegative")
        try:
            linalg.cholesky(sigma, lower=True)
        except linalg.LinAlgError as exc:
            raise InvalidInputError("sigma is not positive definite") from exc
        sigma.setflags(write=False)
        mean.setflags(write=False)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "mean", mean)

    @property
    def p(self) -> int:
        return self.sigma.shape[0]

    @classmethod
    def centered(cls, sigma) -> "CovarianceModel":
        """Zero-mean model with the given covariance."""
        sigma = np.asarray(sigma, dtype=float)
        return cls(mean=np.zeros(sigma.shape[0]), sigma=sigma)


def estimate_covariance(X, min_eig_floor: float = 1e-6) -> CovarianceModel:
    """Empirical covariance with diagonal inflation to an eigenvalue floor.

    The raw estimate is ``(1/n) Xc^T Xc``; ``delta = max(0, floor - lambda_min)``
    is then added to the diagonal.
    """
    X = as_data_matrix(X)
    n = X.shape[0]
    if n < 2:
        raise InsufficientDataError(f"need at least 2 rows to estimate a covariance, got {n}")
    if min_eig_floor < 0:
        raise InvalidInputError("min_eig_floor must be nonnegative")
    with np.errstate(over="ignore", invalid="ignore"):
        mean = X.mean(axis=0)
        Xc = X - mean
        raw = Xc.T @ Xc / n
    if not np.all(np.isfinite(raw)):
        raise NumericalError("covariance estimate overflowed; rescale the data")
    raw = 0.5 * (raw + raw.T)
    lam_min = float(np.linalg.eigvalsh(raw)[0])
    delta = max(0.0, min_eig_floor - lam_min)
    sigma = raw + delta * np.eye(raw.shape[0])
    return CovarianceModel(mean=mean, sigma=sigma, regularization=delta)


def compute_s_equicorrelated(model: CovarianceModel) -> np.ndarray:
    """Equicorrelated swap vector.

    On the correlation scale ``s = min(2 lambda_min(C), 1) (1 - 1e-6)``,
    then rescaled by the variances. Scale-equivariant in ``Sigma``.
    """
    diag = np.diag(model.sigma)
    d = np.sqrt(diag)
    corr = model.sigma / np.outer(d, d)
    lam_min = float(np.linalg.eigvalsh(0.5 * (corr + corr.T))[0])
    if lam_min <= 0:
        raise NumericalError(f"correlation matrix is not positive definite (lambda_min={lam_min:.3e})")
    s_corr = min(2.0 * lam_min, 1.0) * (1.0 - S_SHRINK)
    return s_corr * diag


def _jittered_cholesky(V: np.ndarray) -> np.ndarray:
    try:
        return linalg.cholesky(V, lower=True)
    except linalg.LinAlgError:
        pass
    p = V.shape[0]
    jitter = _JITTER_START * np.trace(V) / p
    for _ in range(_JITTER_RETRIES):
        try:
            return linalg.cholesky(V + jitter * np.eye(p), lower=True)
        except linalg.LinAlgError:
            jitter *= 10.0
    lam_min = float(np.linalg.eigvalsh(V)[0])
    raise NumericalError(
        f"conditional knockoff covariance is not factorizable: smallest eigenvalue {lam_min:.3e}"
    )


@dataclass(frozen=True)
class KnockoffSampler:
    """Precomputed Gaussian knockoff generator; see :func:`build_sampler`."""

    model: CovarianceModel
    s: np.ndarray
    cond_transform: np.ndarray = field(repr=False)
    cond_cov: np.ndarray = field(repr=False)
    cond_cov_factor: np.ndarray = field(repr=False)

    @property
    def p(self) -> int:
        return self.model.p


def build_sampler(model: CovarianceModel, s=None) -> KnockoffSampler:
    """Precompute the conditional-mean transform and covariance factor.

    Parameters
    ----------
    model : CovarianceModel
    s : array-like, shape (p,), optional
        Swap vector; the equicorrelated rule is used when omitted.
    """
    if s is None:
        s = compute_s_equicorrelated(model)
    s = np.array(s, dtype=float)
    p = model.p
    if s.shape != (p,):
        raise InvalidInputError(f"s must have length {p}, got shape {s.shape}")
    if np.any(s <= 0) or not np.all(np.isfinite(s)):
        raise InvalidInputError("s must be strictly positive and finite")

    chol = linalg.cho_factor(model.sigma, lower=True)
    sigma_inv = linalg.cho_solve(chol, np.eye(p))
    sigma_inv = 0.5 * (sigma_inv + sigma_inv.T)
    transform = np.eye(p) - sigma_inv * s[None, :]
    V = 2.0 * np.diag(s) - s[:, None] * sigma_inv * s[None, :]
    V = 0.5 * (V + V.T)
    L = _jittered_cholesky(V)
    for arr in (s, transform, V, L):
        arr.setflags(write=False)
    return KnockoffSampler(model=model, s=s, cond_transform=transform, cond_cov=V, cond_cov_factor=L)


def fit_sampler(model: CovarianceModel) -> KnockoffSampler:
    """Shorthand for ``build_sampler(model, compute_s_equicorrelated(model))``."""
    return build_sampler(model, compute_s_equicorrelated(model))


def sample_knockoffs(sampler: KnockoffSampler, X, rng: np.random.Generator) -> np.ndarray:
    """Draw one knockoff copy of every row of ``X``.

    Row ``i`` is ``mu + (x_i - mu) A + z_i L^T`` with ``z_i`` standard normal.
    The output depends only on ``(sampler, X)`` and the state of ``rng``.
    """
    X = as_data_matrix(X)
    if X.shape[1] != sampler.p:
        raise InvalidInputError(f"X has {X.shape[1]} columns, sampler expects {sampler.p}")
    mu = sampler.model.mean
    Z = rng.standard_normal(X.shape)
    return mu + (X - mu) @ sampler.cond_transform + Z @ sampler.cond_cov_factor.T


def joint_covariance(sampler: KnockoffSampler) -> np.ndarray:
    """Covariance ``G`` of the concatenation ``(x, x_tilde)``."""
    sigma = sampler.model.sigma
    off = sigma - np.diag(sampler.s)
    return np.block([[sigma, off], [off, sigma]])
