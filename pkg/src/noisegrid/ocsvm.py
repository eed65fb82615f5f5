"""One-class SVM (Schoelkopf nu-parameterization) with an RBF kernel.

Solves the dual

    min  1/2 sum_ij alpha_i alpha_j K(x_i, x_j)
    s.t. 0 <= alpha_i <= 1/(nu*n),  sum_i alpha_i = 1

with a two-variable SMO scheme using maximal-violating-pair working-set
selection. nu upper-bounds the fraction of training errors and lower-bounds
the fraction of support vectors. Deterministic for a fixed sample order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ZeroVarianceError

DEFAULT_NU = 0.1
DEFAULT_TOL = 0.01
KERNEL_EVAL_BUDGET = 10_000_000


@dataclass(frozen=True)
class OcSvmParams:
    nu: float = DEFAULT_NU
    gamma: float = 1.0
    tol: float = DEFAULT_TOL
    max_iter: int = 0  # 0 = derive from the kernel-evaluation budget

    def __post_init__(self):
        if not 0.0 < self.nu <= 1.0:
            raise DataError(f"nu must be in (0, 1], got {self.nu}")
        if self.gamma <= 0.0:
            raise DataError(f"gamma must be positive, got {self.gamma}")
        if self.tol <= 0.0:
            raise DataError(f"tol must be positive, got {self.tol}")


@dataclass(frozen=True)
class OcSvmModel:
    support_vectors: np.ndarray  # (k, d)
    alpha: np.ndarray            # (k,), each in (0, 1/(nu*n)], summing to 1
    rho: float
    gamma: float
    converged: bool = True
    n_iter: int = 0


def rbf_kernel(x, y, gamma: float) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise DataError(f"dimension mismatch: {x.shape} vs {y.shape}")
    d = x - y
    return float(np.exp(-gamma * np.dot(d, d)))


def _rbf_matrix(X: np.ndarray, Y: np.ndarray, gamma: float) -> np.ndarray:
    sq = (
        np.sum(X * X, axis=1)[:, None]
        + np.sum(Y * Y, axis=1)[None, :]
        - 2.0 * (X @ Y.T)
    )
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-gamma * sq)


def gamma_scale(samples) -> float:
    """1 / (n_features * population variance of all entries)."""
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim != 2:
        raise DataError(f"samples must be an n x d matrix, got shape {X.shape}")
    if X.size < 2:
        raise DataError("need at least 2 entries to estimate variance")
    var = float(X.var())
    # constant data yields var ~ (eps*scale)^2 from mean rounding, not 0
    scale = float(np.max(np.abs(X)))
    if var <= (1e-12 * scale) ** 2:
        raise ZeroVarianceError("constant data: variance is zero")
    return 1.0 / (X.shape[1] * var)


def _check_samples(samples) -> np.ndarray:
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise DataError(f"samples must be a non-empty n x d matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DataError("samples contain non-finite values")
    return X


def fit(samples, p: OcSvmParams) -> OcSvmModel:
    X = _check_samples(samples)
    n = X.shape[0]
    if n == 1:
        # degenerate cell: the lone point sits exactly on the boundary
        return OcSvmModel(
            support_vectors=X.copy(),
            alpha=np.array([1.0]),
            rho=1.0,
            gamma=p.gamma,
        )

    C = 1.0 / (p.nu * n)
    Q = _rbf_matrix(X, X, p.gamma)

    # feasible start: first floor(nu*n) coefficients at the box bound,
    # one fractional remainder, rest zero
    alpha = np.zeros(n)
    nk = int(p.nu * n)
    alpha[:nk] = C
    if nk < n:
        alpha[nk] = 1.0 - nk * C
    g = Q @ alpha

    max_iter = p.max_iter if p.max_iter > 0 else max(1000, KERNEL_EVAL_BUDGET // (2 * n))
    eps = 1e-12
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        can_up = alpha < C - eps
        can_dn = alpha > eps
        g_up = np.where(can_up, g, np.inf)
        g_dn = np.where(can_dn, g, -np.inf)
        i = int(np.argmin(g_up))  # first index on ties
        j = int(np.argmax(g_dn))
        if g_dn[j] - g_up[i] <= p.tol:
            converged = True
            break
        eta = Q[i, i] + Q[j, j] - 2.0 * Q[i, j]
        delta = (g[j] - g[i]) / max(eta, 1e-12)
        delta = min(delta, C - alpha[i], alpha[j])
        alpha[i] += delta
        alpha[j] -= delta
        g += delta * (Q[:, i] - Q[:, j])

    # offset: average gradient over free vectors, else midpoint of the
    # bound-constrained gradient interval
    tau = 1e-8 * C
    free = (alpha > tau) & (alpha < C - tau)
    if np.any(free):
        rho = float(np.mean(g[free]))
    else:
        at_c = alpha >= C - tau
        at_0 = alpha <= tau
        lb = float(np.max(g[at_c])) if np.any(at_c) else -np.inf
        ub = float(np.min(g[at_0])) if np.any(at_0) else np.inf
        if np.isfinite(lb) and np.isfinite(ub):
            rho = 0.5 * (lb + ub)
        elif np.isfinite(lb):
            rho = lb
        else:
            rho = ub

    sv = alpha > eps
    return OcSvmModel(
        support_vectors=X[sv].copy(),
        alpha=alpha[sv].copy(),
        rho=rho,
        gamma=p.gamma,
        converged=converged,
        n_iter=it,
    )


def decision(m: OcSvmModel, x) -> float:
    """f(x) = sum_i alpha_i K(sv_i, x) - rho; larger = more inlier-like."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.shape[0] != m.support_vectors.shape[1]:
        raise DataError(
            f"dimension mismatch: query has {x.shape[0]} features, "
            f"model expects {m.support_vectors.shape[1]}"
        )
    k = _rbf_matrix(m.support_vectors, x[None, :], m.gamma)[:, 0]
    return float(m.alpha @ k - m.rho)


def decision_many(m: OcSvmModel, X) -> np.ndarray:
    """Vectorized decision over the rows of X."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != m.support_vectors.shape[1]:
        raise DataError(
            f"queries must be n x {m.support_vectors.shape[1]}, got shape {X.shape}"
        )
    return _rbf_matrix(X, m.support_vectors, m.gamma) @ m.alpha - m.rho


def outlier_likelihood(m: OcSvmModel, x) -> float:
    """l(x) = -f(x): higher means more anomalous."""
    return -decision(m, x)
