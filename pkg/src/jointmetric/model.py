"""Parameters of the factored multi-view metric and their algebra.

A view's kernel is ``K_t = L @ M_t @ L.T`` with a shared ``H x D``
transform ``L`` and a ``D x D`` positive semidefinite local metric
``M_t``. The regulariser ``gamma * sum_t tr(M_t) + beta * ||L||_F^2``
depends on ``(beta, gamma)`` only through the product: its minimum over
all factorizations of fixed kernels is ``2 sqrt(beta gamma) tr(sqrt(sum_t K_t))``.

Matrices are plain float64 ndarrays; the ``check_*`` helpers validate them.
"""

import numpy as np

from .exceptions import DegenerateScaleError, InfeasibleDimensionError, NumericError, ShapeError

PSD_TOL = 1e-9
# Kernel-sum eigenvalues below this fraction of the largest count as zero.
RANK_TOL = 1e-12
# Clamped-away eigenvalues reconstruct to round-off of this relative size;
# inputs whose negative part is within it are treated as already projected.
_ROUNDOFF = 64 * np.finfo(np.float64).eps


def check_transform(L):
    L = np.asarray(L, dtype=np.float64)
    if L.ndim != 2:
        raise ShapeError(f"L must be 2-D, got shape {L.shape}")
    H, D = L.shape
    if D < 1 or D > H:
        raise ShapeError(f"embedding dimension D={D} must satisfy 1 <= D <= H={H}")
    if not np.all(np.isfinite(L)):
        raise NumericError("L has non-finite entries")
    return L


def check_metric(M, tol=PSD_TOL):
    """Validate that ``M`` is square, symmetric and PSD within ``tol``."""
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ShapeError(f"metric must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise NumericError("metric has non-finite entries")
    if np.max(np.abs(M - M.T), initial=0.0) > tol:
        raise NumericError("metric is not symmetric")
    if M.size and np.linalg.eigvalsh(M)[0] < -tol:
        raise NumericError("metric is not positive semidefinite")
    return M


def _check_reg(beta, gamma):
    if not (beta > 0 and gamma > 0):
        raise ValueError(f"beta and gamma must be positive, got beta={beta}, gamma={gamma}")


def squared_distance(L, M, x_i, x_j):
    """``(x_i - x_j)^T L M L^T (x_i - x_j)``, clamped at zero."""
    L = np.asarray(L, dtype=np.float64)
    M = np.asarray(M, dtype=np.float64)
    diff = np.asarray(x_i, dtype=np.float64) - np.asarray(x_j, dtype=np.float64)
    if diff.shape != (L.shape[0],) or M.shape != (L.shape[1], L.shape[1]):
        raise ShapeError(f"incompatible shapes: x {diff.shape}, L {L.shape}, M {M.shape}")
    v = L.T @ diff
    d = float(v @ M @ v)
    if d < 0.0:
        if d < -PSD_TOL:
            raise NumericError(f"negative squared distance {d}; M is not PSD")
        d = 0.0
    return d


def project_psd(A):
    """Frobenius-nearest PSD matrix to the symmetric part of ``A``.

    The input is symmetrized as ``(A + A.T) / 2`` and its negative
    eigenvalues are clamped to zero. If the symmetrized input has no
    eigenvalue below round-off level it is returned unchanged, so the
    projection is idempotent bit for bit.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise NumericError("cannot project a matrix with non-finite entries")
    S = (A + A.T) / 2.0
    if S.size == 0:
        return S
    w, V = np.linalg.eigh(S)
    floor = _ROUNDOFF * max(abs(w[0]), abs(w[-1]), 1e-300) * S.shape[0]
    if w[0] >= -floor:
        return S
    w = np.maximum(w, 0.0)
    P = (V * w) @ V.T
    return (P + P.T) / 2.0


def regularizer_value(L, Ms, beta, gamma):
    """``gamma * sum_t tr(M_t) + beta * ||L||_F^2``."""
    _check_reg(beta, gamma)
    L = np.asarray(L, dtype=np.float64)
    D = L.shape[1]
    trace = 0.0
    for M in Ms:
        M = np.asarray(M, dtype=np.float64)
        if M.shape != (D, D):
            raise ShapeError(f"metric shape {M.shape} does not match D={D}")
        trace += float(np.trace(M))
    return gamma * trace + beta * float(np.sum(L * L))


def balance_factor(L, Ms, beta, gamma):
    """Scale ``alpha`` such that ``alpha*L, M_t/alpha**2`` balances both penalties."""
    _check_reg(beta, gamma)
    l2 = float(np.sum(np.asarray(L) ** 2))
    tr = float(sum(np.trace(M) for M in Ms))
    if l2 <= 0.0 or tr <= 0.0:
        raise DegenerateScaleError(f"cannot rescale: ||L||_F^2={l2}, sum tr(M_t)={tr}")
    return (gamma * tr / (beta * l2)) ** 0.25


def rescale_balance(L, Ms, beta, gamma):
    """Rescale ``(L, Ms)`` so both penalty terms are equal.

    Every kernel ``L M_t L^T`` is preserved while the regulariser is
    reduced (or kept, when already balanced) to ``2 sqrt(beta gamma ||L||^2 sum tr M_t)``.
    """
    alpha = balance_factor(L, Ms, beta, gamma)
    L = np.asarray(L, dtype=np.float64)
    return alpha * L, [np.asarray(M, dtype=np.float64) / alpha**2 for M in Ms]


def _kernel_sum(Ks):
    Ks = [np.asarray(K, dtype=np.float64) for K in Ks]
    if not Ks:
        raise ValueError("need at least one kernel")
    shape = Ks[0].shape
    for K in Ks:
        if K.shape != shape or K.ndim != 2 or shape[0] != shape[1]:
            raise ShapeError("kernels must be square with a common shape")
    return Ks, np.sum(Ks, axis=0)


def _check_psd_kernel(K):
    w = np.linalg.eigvalsh((K + K.T) / 2.0)
    if w[0] < -PSD_TOL * max(1.0, abs(w[-1])):
        raise NumericError(f"kernel is not PSD (min eigenvalue {w[0]:.3e})")


def _spectrum(Kbar):
    """Eigenpairs of a kernel sum above ``RANK_TOL * lam_max``; the rest is round-off."""
    lam, U = np.linalg.eigh((Kbar + Kbar.T) / 2.0)
    lam_max = lam[-1]
    keep = lam > RANK_TOL * lam_max if lam_max > 0 else np.zeros_like(lam, dtype=bool)
    return lam[keep], U[:, keep]


def effective_regularizer(Ks, beta, gamma):
    """``2 sqrt(beta gamma) tr((sum_t K_t)^(1/2))``, the regulariser's lower bound."""
    _check_reg(beta, gamma)
    Ks, Kbar = _kernel_sum(Ks)
    for K in Ks:
        _check_psd_kernel(K)
    lam, _ = _spectrum(Kbar)
    return 2.0 * np.sqrt(beta * gamma) * float(np.sum(np.sqrt(lam)))


def prop1_construct(Ks, beta, gamma, D):
    """Factorization ``K_t = L M_t L^T`` attaining the regulariser's minimum.

    Uses the eigendecomposition ``sum_t K_t = U diag(lam) U^T`` restricted to
    eigenvalues above ``RANK_TOL * lam_max``::

        L   = U lam^(1/4) (gamma/beta)^(1/4)
        M_t = lam^(-1/4) U^T K_t U lam^(-1/4) (beta/gamma)^(1/2)

    ``L`` is zero-padded to ``D`` columns and each ``M_t`` to ``D x D``.
    The result is unique only up to an orthogonal rotation of the
    embedding space.

    Raises
    ------
    InfeasibleDimensionError
        If ``D`` is smaller than the rank of ``sum_t K_t``.
    """
    _check_reg(beta, gamma)
    Ks, Kbar = _kernel_sum(Ks)
    for K in Ks:
        _check_psd_kernel(K)
    H = Kbar.shape[0]
    if D < 1 or D > H:
        raise ShapeError(f"D={D} must satisfy 1 <= D <= H={H}")
    lam, U = _spectrum(Kbar)
    r = len(lam)
    if r > D:
        raise InfeasibleDimensionError(f"sum of kernels has rank {r} > D={D}")
    L = np.zeros((H, D))
    L[:, :r] = U * (lam**0.25 * (gamma / beta) ** 0.25)
    inv = lam**-0.25
    Ms = []
    for K in Ks:
        Mr = (inv[:, None] * (U.T @ K @ U) * inv[None, :]) * np.sqrt(beta / gamma)
        M = np.zeros((D, D))
        M[:r, :r] = (Mr + Mr.T) / 2.0
        Ms.append(M)
    return L, Ms
