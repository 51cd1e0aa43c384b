from __future__ import annotations

import numpy as np
import pytest
from scipy import stats

from eknockoff.gaussian_knockoffs import fit_sampler, sample_knockoffs
from eknockoff.knockoff_stats import error_importance, pvalues
from eknockoff.predictors import PredictorSpec, fit_predictor
from eknockoff.sim_bench import ar_covariance


def simulate_null(trials=500, p=20, n1=100, n2=100, seed=2024):
    """Error-based statistics when ``y`` is independent of ``X``.

    Returns ``(counts, pvals)``, both of shape ``(trials, p)``.
    """
    model = ar_covariance(p)
    sampler = fit_sampler(model)
    L = np.linalg.cholesky(model.sigma)
    spec = PredictorSpec()
    counts = np.empty((trials, p), dtype=np.int64)
    pvals = np.empty((trials, p))
    for t in range(trials):
        data, fit, knock, tie = (np.random.default_rng(c) for c in np.random.SeedSequence([seed, t]).spawn(4))
        X = data.standard_normal((n1 + n2, p)) @ L.T
        y = data.standard_normal(n1 + n2)
        f = fit_predictor(spec, X[:n1], y[:n1], fit)
        X2 = X[n1:]
        W = error_importance(f, X2, y[n1:], sample_knockoffs(sampler, X2, knock), rng=tie)
        counts[t] = W.counts
        pvals[t] = pvalues(W).values
    return counts, pvals


@pytest.fixture(scope="session")
def null_statistics():
    return simulate_null()


def binomial_chi2(counts, n2):
    """Chi-squared test of integer counts against Binomial(n2, 1/2).

    Bins are the central values in pairs plus two pooled tails, chosen so
    every expected cell count stays above 5 at 500 draws.
    """
    counts = np.asarray(counts).ravel()
    half = n2 // 2
    edges = np.concatenate(([-1], np.arange(half - 9, half + 10, 2), [n2]))
    observed = np.histogram(counts, bins=edges + 0.5)[0]
    expected = np.diff(stats.binom.cdf(edges, n2, 0.5)) * counts.size
    return stats.chisquare(observed, expected * observed.sum() / expected.sum())


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for the acceptance summary, then assert."""

    def record(label, ok, detail):
        line = f"criterion {label}: {'PASS' if ok else 'FAIL'} | {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
