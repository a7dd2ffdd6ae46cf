"""Hot inner loops: hinge loss and gradient accumulation over triplets.

Every kernel works on the embedded coordinates ``Y = X @ L`` (or ``Y = L``
when objects have no features) of one view, together with that view's
``D x D`` metric ``M``. Triplets are an ``(n, 3)`` int64 array of
``(i, j, k)`` rows, meaning "i is closer to j than to k".

Two implementations exist for every kernel: numba ``@njit`` loops and a
vectorised numpy fallback. The numba path is used when numba imports and
the environment variable ``JOINTMETRIC_DISABLE_NUMBA`` is unset (or ``0``).
:func:`use_backend` switches at runtime, mostly for tests and benchmarks.

Hinge convention: a triplet is *active* when ``1 + d_ij - d_ik > 0``
strictly; at the kink the flat side (zero subgradient) is taken.
"""

import contextlib
import os

import numpy as np

try:
    import numba
    from numba import njit, prange

    # Skip the TBB layer, whose version probe warns on older system TBB.
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

_FLAG = os.environ.get("JOINTMETRIC_DISABLE_NUMBA", "0").strip().lower()
_backend = "numba" if HAVE_NUMBA and _FLAG in ("", "0", "false", "no") else "numpy"

# Below this many triplets the chunked parallel kernels are not worth the
# thread start-up.
PARALLEL_MIN_TRIPLETS = 20000


def backend():
    """Name of the active backend, ``"numba"`` or ``"numpy"``."""
    return _backend


def set_backend(name):
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not importable")
    _backend = name


@contextlib.contextmanager
def use_backend(name):
    previous = _backend
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


def set_threads(n):
    """Cap numba worker threads (no-op on the numpy backend)."""
    if HAVE_NUMBA and n is not None:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


def _n_chunks():
    return numba.get_num_threads() if HAVE_NUMBA else 1


# ---------------------------------------------------------------------------
# numpy reference implementations


def _np_sq_dists(Y, M, trip):
    A = Y[trip[:, 0]] - Y[trip[:, 1]]
    B = Y[trip[:, 0]] - Y[trip[:, 2]]
    d_ij = np.einsum("nd,de,ne->n", A, M, A)
    d_ik = np.einsum("nd,de,ne->n", B, M, B)
    return A, B, d_ij, d_ik


def _np_hinge_loss(Y, M, trip):
    if len(trip) == 0:
        return 0.0
    _, _, d_ij, d_ik = _np_sq_dists(Y, M, trip)
    return float(np.maximum(1.0 + d_ij - d_ik, 0.0).sum())


def _np_hinge_grad_M(Y, M, trip):
    D = M.shape[0]
    if len(trip) == 0:
        return 0.0, np.zeros((D, D))
    A, B, d_ij, d_ik = _np_sq_dists(Y, M, trip)
    z = 1.0 + d_ij - d_ik
    act = z > 0.0
    Aa, Ba = A[act], B[act]
    G = Aa.T @ Aa - Ba.T @ Ba
    return float(z[act].sum()), G


def _np_hinge_grad_Y(Y, M, trip):
    G = np.zeros_like(Y)
    if len(trip) == 0:
        return 0.0, G
    A, B, d_ij, d_ik = _np_sq_dists(Y, M, trip)
    z = 1.0 + d_ij - d_ik
    act = z > 0.0
    MA = 2.0 * (A[act] @ M)
    MB = 2.0 * (B[act] @ M)
    t = trip[act]
    np.add.at(G, t[:, 0], MA - MB)
    np.add.at(G, t[:, 1], -MA)
    np.add.at(G, t[:, 2], MB)
    return float(z[act].sum()), G


def _np_triplet_gaps(Y, M, trip):
    _, _, d_ij, d_ik = _np_sq_dists(Y, M, trip)
    return d_ik - d_ij


# ---------------------------------------------------------------------------
# numba implementations

if HAVE_NUMBA:

    @njit(cache=True, nogil=True)
    def _quad(M, Y, a, b, buf):
        # (y_a - y_b)^T M (y_a - y_b); leaves the difference in buf
        D = Y.shape[1]
        for p in range(D):
            buf[p] = Y[a, p] - Y[b, p]
        s = 0.0
        for p in range(D):
            row = 0.0
            for q in range(D):
                row += M[p, q] * buf[q]
            s += buf[p] * row
        return s

    @njit(cache=True, nogil=True)
    def _nb_loss_range(Y, M, trip, lo, hi):
        D = Y.shape[1]
        a = np.empty(D)
        b = np.empty(D)
        total = 0.0
        for n in range(lo, hi):
            i, j, k = trip[n, 0], trip[n, 1], trip[n, 2]
            z = 1.0 + _quad(M, Y, i, j, a) - _quad(M, Y, i, k, b)
            if z > 0.0:
                total += z
        return total

    @njit(cache=True, nogil=True)
    def _nb_grad_M_range(Y, M, trip, lo, hi, G):
        D = Y.shape[1]
        a = np.empty(D)
        b = np.empty(D)
        total = 0.0
        for n in range(lo, hi):
            i, j, k = trip[n, 0], trip[n, 1], trip[n, 2]
            z = 1.0 + _quad(M, Y, i, j, a) - _quad(M, Y, i, k, b)
            if z > 0.0:
                total += z
                for p in range(D):
                    for q in range(D):
                        G[p, q] += a[p] * a[q] - b[p] * b[q]
        return total

    @njit(cache=True, nogil=True)
    def _nb_grad_Y_range(Y, M, trip, lo, hi, G):
        D = Y.shape[1]
        a = np.empty(D)
        b = np.empty(D)
        total = 0.0
        for n in range(lo, hi):
            i, j, k = trip[n, 0], trip[n, 1], trip[n, 2]
            z = 1.0 + _quad(M, Y, i, j, a) - _quad(M, Y, i, k, b)
            if z > 0.0:
                total += z
                for p in range(D):
                    ma = 0.0
                    mb = 0.0
                    for q in range(D):
                        ma += M[p, q] * a[q]
                        mb += M[p, q] * b[q]
                    ma *= 2.0
                    mb *= 2.0
                    G[i, p] += ma - mb
                    G[j, p] -= ma
                    G[k, p] += mb
        return total

    @njit(cache=True, nogil=True)
    def _nb_hinge_loss(Y, M, trip):
        return _nb_loss_range(Y, M, trip, 0, trip.shape[0])

    @njit(cache=True, nogil=True)
    def _nb_hinge_grad_M(Y, M, trip):
        D = M.shape[0]
        G = np.zeros((D, D))
        total = _nb_grad_M_range(Y, M, trip, 0, trip.shape[0], G)
        # exact symmetry regardless of summation rounding
        for p in range(D):
            for q in range(p + 1, D):
                G[q, p] = G[p, q]
        return total, G

    @njit(cache=True, nogil=True)
    def _nb_hinge_grad_Y(Y, M, trip):
        G = np.zeros_like(Y)
        total = _nb_grad_Y_range(Y, M, trip, 0, trip.shape[0], G)
        return total, G

    @njit(cache=True, parallel=True)
    def _nb_hinge_grad_M_par(Y, M, trip, nchunks):
        D = M.shape[0]
        n = trip.shape[0]
        bufs = np.zeros((nchunks, D, D))
        losses = np.zeros(nchunks)
        for c in prange(nchunks):
            losses[c] = _nb_grad_M_range(Y, M, trip, c * n // nchunks, (c + 1) * n // nchunks, bufs[c])
        G = bufs.sum(axis=0)
        for p in range(D):
            for q in range(p + 1, D):
                G[q, p] = G[p, q]
        return losses.sum(), G

    @njit(cache=True, parallel=True)
    def _nb_hinge_grad_Y_par(Y, M, trip, nchunks):
        n = trip.shape[0]
        bufs = np.zeros((nchunks, Y.shape[0], Y.shape[1]))
        losses = np.zeros(nchunks)
        for c in prange(nchunks):
            losses[c] = _nb_grad_Y_range(Y, M, trip, c * n // nchunks, (c + 1) * n // nchunks, bufs[c])
        return losses.sum(), bufs.sum(axis=0)

    @njit(cache=True, nogil=True)
    def _nb_triplet_gaps(Y, M, trip):
        D = Y.shape[1]
        a = np.empty(D)
        out = np.empty(trip.shape[0])
        for n in range(trip.shape[0]):
            i, j, k = trip[n, 0], trip[n, 1], trip[n, 2]
            out[n] = _quad(M, Y, i, k, a) - _quad(M, Y, i, j, a)
        return out


# ---------------------------------------------------------------------------
# dispatch


def _prep(Y, M, trip):
    return (
        np.ascontiguousarray(Y, dtype=np.float64),
        np.ascontiguousarray(M, dtype=np.float64),
        np.ascontiguousarray(trip, dtype=np.int64).reshape(-1, 3),
    )


def _use_parallel(trip, deterministic):
    return not deterministic and len(trip) >= PARALLEL_MIN_TRIPLETS and _n_chunks() > 1


def hinge_loss(Y, M, trip):
    """Sum of hinge losses ``max(1 + d_ij - d_ik, 0)`` over ``trip``."""
    Y, M, trip = _prep(Y, M, trip)
    if _backend == "numba":
        return float(_nb_hinge_loss(Y, M, trip))
    return _np_hinge_loss(Y, M, trip)


def hinge_grad_M(Y, M, trip, deterministic=True):
    """Hinge loss and its subgradient with respect to the view metric M.

    Returns ``(loss, G)`` with ``G = sum over active triplets of
    a a^T - b b^T`` where ``a = y_i - y_j`` and ``b = y_i - y_k``.
    """
    Y, M, trip = _prep(Y, M, trip)
    if _backend == "numba":
        if _use_parallel(trip, deterministic):
            loss, G = _nb_hinge_grad_M_par(Y, M, trip, _n_chunks())
        else:
            loss, G = _nb_hinge_grad_M(Y, M, trip)
        return float(loss), G
    loss, G = _np_hinge_grad_M(Y, M, trip)
    return loss, (G + G.T) / 2.0


def hinge_grad_Y(Y, M, trip, deterministic=True):
    """Hinge loss and its subgradient with respect to the coordinates Y.

    The gradient with respect to L is ``X^T @ G`` (or ``G`` itself when
    the objects are featureless).
    """
    Y, M, trip = _prep(Y, M, trip)
    if _backend == "numba":
        if _use_parallel(trip, deterministic):
            loss, G = _nb_hinge_grad_Y_par(Y, M, trip, _n_chunks())
        else:
            loss, G = _nb_hinge_grad_Y(Y, M, trip)
        return float(loss), G
    return _np_hinge_grad_Y(Y, M, trip)


def triplet_gaps(Y, M, trip):
    """``d_ik - d_ij`` per triplet; a triplet is satisfied iff its gap is > 0."""
    Y, M, trip = _prep(Y, M, trip)
    if len(trip) == 0:
        return np.zeros(0)
    if _backend == "numba":
        return _nb_triplet_gaps(Y, M, trip)
    return _np_triplet_gaps(Y, M, trip)


# Pull term of the supervised extension: sum over pairs of ||y_i - y_j||_M^2.
# Every pair is always active, so these stay vectorised on both backends.


def pull_loss_grad_M(Y, M, pairs):
    D = M.shape[0]
    if len(pairs) == 0:
        return 0.0, np.zeros((D, D))
    A = Y[pairs[:, 0]] - Y[pairs[:, 1]]
    S = A.T @ A
    S = (S + S.T) / 2.0
    return float(np.sum(M * S)), S


def pull_loss_grad_Y(Y, M, pairs):
    G = np.zeros_like(Y)
    if len(pairs) == 0:
        return 0.0, G
    A = Y[pairs[:, 0]] - Y[pairs[:, 1]]
    AM = A @ M
    loss = float(np.einsum("nd,nd->", AM, A))
    np.add.at(G, pairs[:, 0], 2.0 * AM)
    np.add.at(G, pairs[:, 1], -2.0 * AM)
    return loss, G


# Coordinate-vector objects (Y = I_N): d_ij = M_ii + M_jj - 2 M_ij, and
# each active triplet touches only the rows/columns i, j, k of M.


def _np_coord_d(M, trip):
    i, j, k = trip[:, 0], trip[:, 1], trip[:, 2]
    dg = np.diag(M)
    return dg[i] + dg[j] - 2.0 * M[i, j], dg[i] + dg[k] - 2.0 * M[i, k]


def _np_coord_grad_M(M, trip):
    G = np.zeros_like(M)
    if len(trip) == 0:
        return 0.0, G
    d_ij, d_ik = _np_coord_d(M, trip)
    z = 1.0 + d_ij - d_ik
    act = z > 0.0
    i, j, k = trip[act, 0], trip[act, 1], trip[act, 2]
    # (e_i - e_j)(e_i - e_j)^T - (e_i - e_k)(e_i - e_k)^T
    np.add.at(G, (j, j), 1.0)
    np.add.at(G, (k, k), -1.0)
    np.add.at(G, (i, j), -1.0)
    np.add.at(G, (j, i), -1.0)
    np.add.at(G, (i, k), 1.0)
    np.add.at(G, (k, i), 1.0)
    return float(z[act].sum()), G


if HAVE_NUMBA:

    @njit(cache=True, nogil=True)
    def _nb_coord_grad_M(M, trip):
        G = np.zeros_like(M)
        total = 0.0
        for n in range(trip.shape[0]):
            i, j, k = trip[n, 0], trip[n, 1], trip[n, 2]
            z = 1.0 + M[j, j] - 2.0 * M[i, j] - M[k, k] + 2.0 * M[i, k]
            if z > 0.0:
                total += z
                G[j, j] += 1.0
                G[k, k] -= 1.0
                G[i, j] -= 1.0
                G[j, i] -= 1.0
                G[i, k] += 1.0
                G[k, i] += 1.0
        return total, G


def coord_hinge_loss(M, trip):
    """:func:`hinge_loss` for coordinate-vector objects, without building ``I_N``."""
    M = np.ascontiguousarray(M, dtype=np.float64)
    trip = np.ascontiguousarray(trip, dtype=np.int64).reshape(-1, 3)
    if len(trip) == 0:
        return 0.0
    d_ij, d_ik = _np_coord_d(M, trip)
    return float(np.maximum(1.0 + d_ij - d_ik, 0.0).sum())


def coord_hinge_grad_M(M, trip):
    M = np.ascontiguousarray(M, dtype=np.float64)
    trip = np.ascontiguousarray(trip, dtype=np.int64).reshape(-1, 3)
    if _backend == "numba":
        loss, G = _nb_coord_grad_M(M, trip)
        return float(loss), G
    return _np_coord_grad_M(M, trip)
