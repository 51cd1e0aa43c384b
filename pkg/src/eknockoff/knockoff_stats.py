"""
Feature importance statistics and their binomial p-values.

The error-based statistic compares, on held-out rows, the absolute
prediction error before and after swapping feature ``j`` for its knockoff:

    T_ij = |f(R_j(x_i)) - y_i| - |f(x_i) - y_i|,
    W_j  = (1/n2) sum_i 1{T_ij > 0} - 1/2.

For an irrelevant feature ``n2 (W_j + 1/2)`` is Binomial(n2, 1/2), which
gives exact p-values. The Lasso coefficient difference (LCD) is provided
as the coefficient-based baseline.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import comb

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import InvalidInputError, NumericalError, UnsupportedStatisticError
from .gaussian_knockoffs import as_data_matrix
from .predictors import FittedPredictor, PredictorSpec, fit_predictor, replace_feature

__all__ = [
    "ImportanceVector",
    "PValueVector",
    "TieRule",
    "replace_feature",
    "error_importance",
    "pvalue",
    "pvalues",
    "lcd_importance",
]

_INTEGRAL_TOL = 1e-9
_P_FLOOR = np.finfo(float).tiny
#: Largest n2 whose tail is summed in exact integer arithmetic.
_EXACT_MAX_N2 = 4096


@dataclass(frozen=True)
class TieRule:
    """How ``T_ij`` values within ``tolerance`` of zero are counted.

    ``randomized`` counts a tie as a fair coin flip; ``strict`` counts it as
    zero, the literal reading of the strict indicator.
    """

    mode: str = "randomized"
    tolerance: float = 0.0

    def __post_init__(self):
        if self.mode not in ("randomized", "strict"):
            raise InvalidInputError(f"unknown tie mode {self.mode!r}")
        if self.tolerance < 0:
            raise InvalidInputError("tie tolerance must be nonnegative")


@dataclass(frozen=True)
class ImportanceVector:
    values: np.ndarray
    kind: str
    n2: int | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 1:
            raise InvalidInputError("importance values must be one-dimensional")
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("importance values must be finite")
        if self.kind == "error_based":
            if self.n2 is None or self.n2 < 1:
                raise InvalidInputError("error_based statistics need a positive n2")
            counts = self.n2 * (values + 0.5)
            if np.any(np.abs(counts - np.round(counts)) > _INTEGRAL_TOL) or np.any(np.abs(values) > 0.5 + 1e-12):
                raise InvalidInputError("error_based values must lie on the grid k/n2 - 1/2")
        elif self.kind != "lcd":
            raise InvalidInputError(f"unknown statistic kind {self.kind!r}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def counts(self) -> np.ndarray:
        """``n2 (W + 1/2)`` as integers (error-based only)."""
        if self.kind != "error_based":
            raise UnsupportedStatisticError("counts are defined only for the error-based statistic")
        return np.round(self.n2 * (self.values + 0.5)).astype(np.int64)


@dataclass(frozen=True)
class PValueVector:
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 1 or np.any(values <= 0) or np.any(values > 1):
            raise InvalidInputError("p-values must be a vector in (0, 1]")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.shape[0]


def _indicator_counts(T: np.ndarray, tie_rule: TieRule, rng: np.random.Generator | None) -> int:
    above = int(np.count_nonzero(T > tie_rule.tolerance))
    ties = int(np.count_nonzero(np.abs(T) <= tie_rule.tolerance))
    if ties and tie_rule.mode == "randomized":
        above += int(np.count_nonzero(rng.random(ties) < 0.5))
    return above


def error_importance(f: FittedPredictor, X2, y2, X2_knock, tie_rule: TieRule | None = None,
                     rng: np.random.Generator | None = None) -> ImportanceVector:
    """Error-difference importance ``W_j`` for every feature.

    Parameters
    ----------
    f : FittedPredictor
        Trained on data disjoint from ``(X2, y2)``.
    X2, y2 : scoring split.
    X2_knock : knockoff copy of ``X2``.
    tie_rule : TieRule, optional
        Defaults to randomized tie breaking.
    rng : Generator, optional
        Source of the tie-breaking coins. Feature ``j`` draws from its own
        sub-stream, so results do not depend on evaluation order.
    """
    tie_rule = tie_rule or TieRule()
    X2 = as_data_matrix(X2, "X2")
    X2_knock = as_data_matrix(X2_knock, "X2_knock")
    if X2.shape != X2_knock.shape:
        raise InvalidInputError(f"X2 {X2.shape} and X2_knock {X2_knock.shape} differ in shape")
    n2, p = X2.shape
    y2 = np.asarray(y2, dtype=float)
    if y2.shape != (n2,):
        raise InvalidInputError(f"y2 must have shape ({n2},), got {y2.shape}")

    base_seed = None
    if tie_rule.mode == "randomized":
        rng = np.random.default_rng() if rng is None else rng
        base_seed = int(rng.integers(2**63))

    xi = np.abs(f.predict(X2) - y2)
    if not np.all(np.isfinite(xi)):
        raise NumericalError("non-finite prediction on the unmodified scoring rows")
    counts = np.empty(p, dtype=np.int64)
    for j, pred in enumerate(f.replacement_predictions(X2, X2_knock)):
        if not np.all(np.isfinite(pred)):
            raise NumericalError(f"non-finite prediction after replacing feature {j}")
        T = np.abs(pred - y2) - xi
        sub = np.random.default_rng([base_seed, j]) if base_seed is not None else None
        counts[j] = _indicator_counts(T, tie_rule, sub)
    return ImportanceVector(values=counts / n2 - 0.5, kind="error_based", n2=n2)


@lru_cache(maxsize=65536)
def _exact_tail(m: int, n: int, doubled: bool) -> float:
    """Correctly rounded ``min(1, c sum_{i>=m} C(n, i) / 2^n)``, ``c`` in {1, 2}."""
    if m <= 0:
        return 1.0
    term = comb(n, m)
    total = 0
    for i in range(m, n + 1):
        total += term
        term = term * (n - i) // (i + 1)
    num = 2 * total if doubled else total
    return min(1.0, num / 2**n)


def _log_binom_upper_tail(m: int, n: int) -> float:
    """``log sum_{i=m}^{n} C(n, i) 2^-n``."""
    if m <= 0:
        return 0.0
    if m > n:
        return -np.inf
    i = np.arange(m, n + 1, dtype=float)
    log_terms = gammaln(n + 1.0) - gammaln(i + 1.0) - gammaln(n - i + 1.0)
    return float(logsumexp(log_terms) - n * np.log(2.0))


def pvalue(w: float, n2: int, two_sided: bool = True) -> float:
    """Exact binomial p-value of an error-based statistic.

    With ``M = max(n2 (w + 1/2), n2 (1/2 - w))`` the two-sided value is
    ``min(1, 2 sum_{i >= M} C(n2, i) / 2^n2)``. The one-sided variant uses
    ``M = n2 (w + 1/2)`` and no doubling, so only positive ``w`` is evidence.
    """
    if n2 < 1:
        raise InvalidInputError("n2 must be positive")
    k = n2 * (w + 0.5)
    k_int = int(round(k))
    if abs(k - k_int) > _INTEGRAL_TOL or not 0 <= k_int <= n2:
        raise InvalidInputError(f"n2 * (w + 0.5) = {k!r} is not an integer in [0, {n2}]")
    if n2 <= _EXACT_MAX_N2:
        m = max(k_int, n2 - k_int) if two_sided else k_int
        return max(_exact_tail(m, n2, two_sided), _P_FLOOR)
    if two_sided:
        log_p = np.log(2.0) + _log_binom_upper_tail(max(k_int, n2 - k_int), n2)
    else:
        log_p = _log_binom_upper_tail(k_int, n2)
    # floor keeps p-values strictly positive once 2^-n2 underflows
    return min(1.0, max(float(np.exp(log_p)), _P_FLOOR))


def pvalues(W: ImportanceVector, two_sided: bool = True) -> PValueVector:
    """Elementwise :func:`pvalue` over an error-based importance vector."""
    if W.kind != "error_based":
        raise UnsupportedStatisticError(f"p-values are defined only for the error-based statistic, not {W.kind!r}")
    return PValueVector(np.array([pvalue(w, W.n2, two_sided) for w in W.values]))


def lcd_importance(X, X_knock, y, spec: PredictorSpec, rng: np.random.Generator | None = None) -> ImportanceVector:
    """Lasso coefficient difference ``|b_j| - |b_{j+p}|`` on ``[X, X_knock]``."""
    if not spec.is_lasso:
        raise InvalidInputError(f"LCD needs a lasso predictor, got {spec.kind!r}")
    X = as_data_matrix(X)
    X_knock = as_data_matrix(X_knock, "X_knock")
    if X.shape != X_knock.shape:
        raise InvalidInputError(f"X {X.shape} and X_knock {X_knock.shape} differ in shape")
    p = X.shape[1]
    fit = fit_predictor(spec, np.hstack([X, X_knock]), y, rng)
    coef = np.abs(fit.coef)
    return ImportanceVector(values=coef[:p] - coef[p:], kind="lcd")
