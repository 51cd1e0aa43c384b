"""
Turning statistics into selected feature sets.

* ``select_fdr``: knockoff+ threshold on the importance statistics.
* ``select_kfwer`` / ``select_fdp``: stepdown procedures on p-values with
  the Lehmann-Romano threshold ladders.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .knockoff_stats import ImportanceVector, PValueVector

PROCEDURES = ("knockoff_fdr", "stepdown_kfwer", "stepdown_fdp")


@dataclass(frozen=True)
class SelectionResult:
    """Selected 0-based feature indices and how they were obtained.

    ``threshold_tau`` is set for ``knockoff_fdr`` (``inf`` when nothing
    qualifies); ``stepdown_m`` for the stepdown procedures.
    """

    selected: tuple[int, ...]
    procedure: str
    threshold_tau: float | None = None
    stepdown_m: int | None = None
    targets: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.procedure not in PROCEDURES:
            raise InvalidInputError(f"unknown procedure {self.procedure!r}")
        object.__setattr__(self, "selected", tuple(sorted(int(j) for j in self.selected)))

    def __len__(self) -> int:
        return len(self.selected)

    def mask(self, p: int) -> np.ndarray:
        out = np.zeros(p, dtype=bool)
        out[list(self.selected)] = True
        return out


def _check_level(name: str, value: float) -> None:
    if not 0 < value < 1:
        raise InvalidInputError(f"{name} must lie in (0, 1), got {value!r}")


def _values(W) -> np.ndarray:
    values = W.values if isinstance(W, (ImportanceVector, PValueVector)) else np.asarray(W, dtype=float)
    if values.ndim != 1:
        raise InvalidInputError("expected a one-dimensional vector")
    if not np.all(np.isfinite(values)):
        raise InvalidInputError("statistics must be finite")
    return values


def knockoff_threshold(W, q: float) -> float:
    """Knockoff+ threshold.

    Smallest ``t`` among the nonzero ``|W_j|`` with
    ``(1 + #{W_j <= -t}) / max(#{W_j >= t}, 1) <= q``; ``inf`` if none.
    """
    _check_level("q", q)
    w = _values(W)
    candidates = np.unique(np.abs(w[w != 0]))
    if candidates.size == 0:
        return math.inf
    w_sorted = np.sort(w)
    n_neg = np.searchsorted(w_sorted, -candidates, side="right")
    n_pos = w.size - np.searchsorted(w_sorted, candidates, side="left")
    ratio = (1.0 + n_neg) / np.maximum(n_pos, 1)
    ok = np.flatnonzero(ratio <= q)
    return float(candidates[ok[0]]) if ok.size else math.inf


def select_fdr(W, q: float) -> SelectionResult:
    """Select ``{j : W_j >= tau}`` with the knockoff+ threshold ``tau``."""
    tau = knockoff_threshold(W, q)
    w = _values(W)
    selected = () if math.isinf(tau) else tuple(np.flatnonzero(w >= tau))
    return SelectionResult(selected, "knockoff_fdr", threshold_tau=tau, targets={"q": q})


def kfwer_thresholds(p: int, k: int, alpha: float) -> np.ndarray:
    """``alpha_j = k alpha / p`` for ``j <= k``, else ``k alpha / (p + k - j)``."""
    _check_level("alpha", alpha)
    if p < 1:
        raise InvalidInputError("p must be >= 1")
    if not 1 <= k <= p:
        raise InvalidInputError(f"k must lie in [1, p={p}], got {k}")
    j = np.arange(1, p + 1)
    return np.where(j <= k, k * alpha / p, k * alpha / (p + k - j))


def fdp_thresholds(p: int, q: float, alpha: float) -> np.ndarray:
    """``alpha_j = (floor(q j) + 1) alpha / (p + floor(q j) + 1 - j)``."""
    _check_level("q", q)
    _check_level("alpha", alpha)
    if p < 1:
        raise InvalidInputError("p must be >= 1")
    j = np.arange(1, p + 1)
    # relative guard so e.g. q=0.29, j=100 floors to 29, not 28
    fq = np.floor(q * j * (1 + 1e-12))
    return (fq + 1) * alpha / (p + fq + 1 - j)


def stepdown_select(P, thresholds, procedure: str = "stepdown_kfwer", targets: dict | None = None) -> SelectionResult:
    """Largest prefix of the sorted p-values lying under the threshold ladder.

    P-values are sorted ascending with ties broken by feature index.
    """
    pv = _values(P)
    thresholds = np.asarray(thresholds, dtype=float)
    if thresholds.shape != pv.shape:
        raise InvalidInputError(f"{pv.shape[0]} p-values but {thresholds.shape} thresholds")
    order = np.lexsort((np.arange(pv.size), pv))
    failing = np.flatnonzero(pv[order] > thresholds)
    m = int(failing[0]) if failing.size else pv.size
    return SelectionResult(tuple(order[:m]), procedure, stepdown_m=m, targets=dict(targets or {}))


def select_kfwer(P, k: int, alpha: float) -> SelectionResult:
    pv = _values(P)
    return stepdown_select(pv, kfwer_thresholds(pv.size, k, alpha), "stepdown_kfwer", {"k": k, "alpha": alpha})


def select_fdp(P, q: float, alpha: float) -> SelectionResult:
    pv = _values(P)
    return stepdown_select(pv, fdp_thresholds(pv.size, q, alpha), "stepdown_fdp", {"q": q, "alpha": alpha})
