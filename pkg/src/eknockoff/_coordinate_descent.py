"""Covariance-update coordinate descent for the Lasso (numba kernel).

Works on the Gram form of a standardized problem: ``gram = Z^T Z / n`` and
``corr = Z^T (y - ybar) / n``. The objective, up to the constant
``|y - ybar|^2 / 2n``, is ``0.5 b^T gram b - corr^T b + lam |b|_1``.
"""
import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _kkt_ok(gram, corr, beta, usable, lam, kkt_tol):
    p = beta.shape[0]
    for j in range(p):
        if not usable[j]:
            continue
        g = corr[j]
        for k in range(p):
            g -= gram[j, k] * beta[k]
        if beta[j] > 0.0:
            if abs(g - lam) > kkt_tol:
                return False
        elif beta[j] < 0.0:
            if abs(g + lam) > kkt_tol:
                return False
        elif abs(g) > lam + kkt_tol:
            return False
    return True


@njit(cache=True, nogil=True)
def cd_solve(gram, corr, beta, usable, lam, max_iter, tol, kkt_tol, trace):
    """Cyclic coordinate descent, updating ``beta`` in place.

    Stops after a sweep whose largest coefficient change is ``<= tol`` and
    whose KKT residuals are within ``kkt_tol``, or after ``max_iter`` sweeps.
    ``trace[it]`` receives the objective after sweep ``it``; pass an empty
    array to skip recording. Returns the number of sweeps used.
    """
    p = beta.shape[0]
    q = np.zeros(p)
    for k in range(p):
        if beta[k] != 0.0:
            for j in range(p):
                q[j] += gram[j, k] * beta[k]
    record = trace.shape[0] > 0
    for it in range(max_iter):
        max_change = 0.0
        for j in range(p):
            if not usable[j]:
                continue
            gjj = gram[j, j]
            rho = corr[j] - q[j] + gjj * beta[j]
            if rho > lam:
                new = (rho - lam) / gjj
            elif rho < -lam:
                new = (rho + lam) / gjj
            else:
                new = 0.0
            delta = new - beta[j]
            if delta != 0.0:
                for k in range(p):
                    q[k] += delta * gram[k, j]
                beta[j] = new
                if abs(delta) > max_change:
                    max_change = abs(delta)
        if record:
            obj = 0.0
            for j in range(p):
                obj += beta[j] * (0.5 * q[j] - corr[j]) + lam * abs(beta[j])
            trace[it] = obj
        if max_change <= tol:
            if _kkt_ok(gram, corr, beta, usable, lam, kkt_tol):
                return it + 1
            # refresh q to clear drift from incremental updates
            for j in range(p):
                q[j] = 0.0
            for k in range(p):
                if beta[k] != 0.0:
                    for j in range(p):
                        q[j] += gram[j, k] * beta[k]
    return max_iter


@njit(cache=True, nogil=True)
def cd_path(gram, corr, usable, lambdas, max_iter, tol, kkt_rel):
    """Warm-started solutions along a (descending) grid of penalties.

    Returns ``(coefs, n_iter)`` with ``coefs[l]`` the solution at ``lambdas[l]``.
    """
    p = gram.shape[0]
    coefs = np.zeros((lambdas.shape[0], p))
    n_iter = np.zeros(lambdas.shape[0], dtype=np.int64)
    beta = np.zeros(p)
    empty = np.zeros(0)
    for i in range(lambdas.shape[0]):
        lam = lambdas[i]
        n_iter[i] = cd_solve(gram, corr, beta, usable, lam, max_iter, tol, kkt_rel * lam + 1e-12, empty)
        coefs[i, :] = beta
    return coefs, n_iter
