from __future__ import annotations

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from eknockoff.errors import InsufficientDataError, InvalidInputError, NumericalError
from eknockoff.gaussian_knockoffs import (
    CovarianceModel,
    build_sampler,
    compute_s_equicorrelated,
    estimate_covariance,
    fit_sampler,
    joint_covariance,
    sample_knockoffs,
)
from eknockoff.sim_bench import ar_covariance

SHRINK = 1 - 1e-6


def test_estimate_covariance_hand_computed() -> None:
    X = np.array([[1.0, 2.0], [3.0, 0.0], [2.0, 4.0]])
    # mean (2, 2); centered rows (-1, 0), (1, -2), (0, 2)
    expected = np.array([[2.0, -2.0], [-2.0, 8.0]]) / 3.0
    model = estimate_covariance(X)
    np.testing.assert_allclose(model.mean, [2.0, 2.0])
    np.testing.assert_allclose(model.sigma, expected, atol=1e-14)
    assert model.regularization == 0.0


def test_estimate_covariance_identity_rows() -> None:
    X = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
    model = estimate_covariance(X)
    np.testing.assert_allclose(model.sigma, 0.5 * np.eye(2), atol=1e-14)


def test_constant_column_triggers_floor() -> None:
    rng = np.random.default_rng(0)
    X = np.column_stack([rng.standard_normal(30), np.full(30, 3.0)])
    model = estimate_covariance(X, min_eig_floor=1e-4)
    assert model.regularization > 0
    assert np.linalg.eigvalsh(model.sigma)[0] >= 1e-4 - 1e-12


def test_estimate_covariance_concentration() -> None:
    truth = ar_covariance(5).sigma
    rng = np.random.default_rng(12)
    X = rng.multivariate_normal(np.zeros(5), truth, size=50_000)
    model = estimate_covariance(X)
    assert np.max(np.abs(model.sigma - truth)) <= 0.05


def test_estimate_covariance_errors() -> None:
    with pytest.raises(InvalidInputError):
        estimate_covariance(np.array([[1.0, np.nan], [0.0, 1.0]]))
    with pytest.raises(InsufficientDataError):
        estimate_covariance(np.ones((1, 3)))


def test_covariance_model_validates() -> None:
    with pytest.raises(InvalidInputError):
        CovarianceModel(mean=np.zeros(2), sigma=np.array([[1.0, 0.5], [0.4, 1.0]]))
    with pytest.raises(InvalidInputError):
        CovarianceModel.centered(np.array([[1.0, 2.0], [2.0, 1.0]]))


@pytest.mark.parametrize(
    "sigma, expected",
    [
        (np.eye(3), SHRINK * np.ones(3)),
        (np.array([[1.0, 0.9], [0.9, 1.0]]), 0.2 * SHRINK * np.ones(2)),
        (np.diag([4.0, 1.0]), SHRINK * np.array([4.0, 1.0])),
    ],
)
def test_equicorrelated_s(sigma, expected) -> None:
    s = compute_s_equicorrelated(CovarianceModel.centered(sigma))
    np.testing.assert_allclose(s, expected, rtol=1e-10)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), scale=st.floats(0.01, 100.0), p=st.integers(1, 6))
def test_equicorrelated_scale_equivariant(seed, scale, p) -> None:
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((p, p))
    sigma = A @ A.T + 0.5 * np.eye(p)
    s1 = compute_s_equicorrelated(CovarianceModel.centered(sigma))
    s2 = compute_s_equicorrelated(CovarianceModel.centered(scale * sigma))
    np.testing.assert_allclose(s2, scale * s1, rtol=1e-9)


def test_sampler_identity_case() -> None:
    sampler = build_sampler(CovarianceModel.centered(np.eye(3)), np.ones(3))
    np.testing.assert_allclose(sampler.cond_transform, 0.0, atol=1e-15)
    np.testing.assert_allclose(sampler.cond_cov, np.eye(3), atol=1e-15)


def test_sampler_two_dim_ar_matches_symbolic() -> None:
    model = ar_covariance(2, 0.5)
    sampler = fit_sampler(model)
    # corr(Sigma) has off-diagonal -1/2, so s = min(2 * 1/2, 1) * shrink * 4/3
    s_sym = sp.Rational(4, 3) * (1 - sp.Rational(1, 10**6))
    Sigma = sp.Matrix([[sp.Rational(4, 3), -sp.Rational(2, 3)], [-sp.Rational(2, 3), sp.Rational(4, 3)]])
    S = sp.diag(s_sym, s_sym)
    V = 2 * S - S * Sigma.inv() * S
    A = sp.eye(2) - Sigma.inv() * S
    np.testing.assert_allclose(sampler.s, [float(s_sym)] * 2, rtol=1e-12)
    np.testing.assert_allclose(sampler.cond_cov, np.array(V, dtype=float), atol=1e-10)
    np.testing.assert_allclose(sampler.cond_transform, np.array(A, dtype=float), atol=1e-10)


@pytest.mark.parametrize("p", [1, 2, 5, 20])
def test_sampler_factor_and_psd(p) -> None:
    sampler = fit_sampler(ar_covariance(p))
    L = sampler.cond_cov_factor
    assert np.max(np.abs(L @ L.T - sampler.cond_cov)) <= 1e-8
    assert np.linalg.eigvalsh(sampler.cond_cov)[0] >= -1e-10
    assert np.linalg.eigvalsh(joint_covariance(sampler))[0] >= -1e-10


def test_sampler_rejects_infeasible_s() -> None:
    with pytest.raises(NumericalError, match="eigenvalue"):
        build_sampler(CovarianceModel.centered(np.eye(2)), np.array([3.0, 3.0]))
    with pytest.raises(InvalidInputError):
        build_sampler(CovarianceModel.centered(np.eye(2)), np.array([1.0]))


def test_joint_covariance_examples() -> None:
    G = joint_covariance(build_sampler(CovarianceModel.centered(np.eye(2)), np.ones(2)))
    np.testing.assert_array_equal(G, np.eye(4))

    G = joint_covariance(build_sampler(CovarianceModel.centered(np.array([[2.5]])), np.array([1.5])))
    np.testing.assert_allclose(G, [[2.5, 1.0], [1.0, 2.5]])

    sampler = fit_sampler(ar_covariance(2))
    sigma, s = sampler.model.sigma, sampler.s
    hand = np.zeros((4, 4))
    hand[:2, :2] = hand[2:, 2:] = sigma
    hand[:2, 2:] = hand[2:, :2] = sigma - np.diag(s)
    np.testing.assert_array_equal(joint_covariance(sampler), hand)


def test_identity_knockoffs_uncorrelated() -> None:
    sampler = build_sampler(CovarianceModel.centered(np.eye(3)), np.ones(3))
    rng = np.random.default_rng(1)
    X = rng.standard_normal((100_000, 3))
    Xk = sample_knockoffs(sampler, X, rng)
    cross = np.corrcoef(X.T, Xk.T)[:3, 3:]
    assert np.max(np.abs(cross)) <= 0.02


def _joint_sample(p=5, n=200_000, seed=3):
    model = ar_covariance(p)
    sampler = fit_sampler(model)
    rng = np.random.default_rng(seed)
    X = rng.multivariate_normal(np.zeros(p), model.sigma, size=n)
    return sampler, np.hstack([X, sample_knockoffs(sampler, X, rng)])


def test_exchangeability_and_swap() -> None:
    sampler, joint = _joint_sample()
    G = joint_covariance(sampler)
    n, two_p = joint.shape
    p = two_p // 2
    emp = joint.T @ joint / n
    # Monte-Carlo standard error of a Gaussian second moment: sqrt((G_ij^2 + G_ii G_jj) / n)
    se = np.sqrt((G**2 + np.outer(np.diag(G), np.diag(G))) / n)
    assert np.all(np.abs(emp - G) <= 3 * se + 1e-12) or np.max(np.abs(emp - G)) <= 0.02
    assert np.max(np.abs(emp - G)) <= 0.02
    for j in range(p):
        perm = np.arange(two_p)
        perm[j], perm[j + p] = j + p, j
        swapped = joint[:, perm]
        assert np.max(np.abs(swapped.T @ swapped / n - G)) <= 0.02


def test_sampling_deterministic_and_shape_checked() -> None:
    sampler = fit_sampler(ar_covariance(4))
    X = np.random.default_rng(0).standard_normal((50, 4))
    a = sample_knockoffs(sampler, X, np.random.default_rng(9))
    b = sample_knockoffs(sampler, X, np.random.default_rng(9))
    assert a.shape == X.shape
    np.testing.assert_array_equal(a, b)
    with pytest.raises(InvalidInputError):
        sample_knockoffs(sampler, X[:, :3], np.random.default_rng(0))


def test_nonzero_mean_is_respected() -> None:
    rng = np.random.default_rng(4)
    X = rng.standard_normal((20_000, 3)) + np.array([5.0, -2.0, 1.0])
    sampler = fit_sampler(estimate_covariance(X))
    Xk = sample_knockoffs(sampler, X, rng)
    np.testing.assert_allclose(Xk.mean(axis=0), [5.0, -2.0, 1.0], atol=0.05)
