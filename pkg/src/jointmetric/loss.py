"""Triplet hinge loss and its subgradients with respect to L and M_t.

Objects are either rows of a feature matrix ``X`` (``N x H``) or, when
``X is None``, implicit coordinate vectors; in that case ``X = I_N`` is
never built and rows of ``L`` are used directly as embeddings.

Only the hinge loss is implemented. Another margin loss would plug in by
supplying its value and derivative in :mod:`jointmetric.kernels`.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .exceptions import ShapeError


@dataclass(frozen=True)
class TripletTerm:
    """One constraint: in ``view``, object ``i`` is closer to ``j`` than to ``k``."""

    i: int
    j: int
    k: int
    view: int = 0

    def __post_init__(self):
        if len({self.i, self.j, self.k}) != 3:
            raise ValueError(f"triplet indices must be distinct: {(self.i, self.j, self.k)}")
        if min(self.i, self.j, self.k) < 0:
            raise ValueError("triplet indices must be non-negative")


def hinge(d_ij, d_ik):
    return max(1.0 + d_ij - d_ik, 0.0)


def embed(L, X=None):
    """Coordinates ``X @ L`` of every object in the shared space."""
    L = np.asarray(L, dtype=np.float64)
    if X is None:
        return L
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] != L.shape[0]:
        raise ShapeError(f"features have H={X.shape[1]} columns but L has {L.shape[0]} rows")
    return X @ L


def backproject(G_Y, X=None):
    """Chain rule from ``dY`` to ``dL`` for ``Y = X @ L``."""
    return G_Y if X is None else np.asarray(X, dtype=np.float64).T @ G_Y


def as_triplet_array(triplets, num_objects=None):
    """Convert triplets (TripletTerms or index rows) to an ``(n, 3)`` int64 array."""
    if isinstance(triplets, np.ndarray):
        arr = triplets.astype(np.int64, copy=False).reshape(-1, 3)
    else:
        rows = [(t.i, t.j, t.k) if isinstance(t, TripletTerm) else tuple(t) for t in triplets]
        arr = np.array(rows, dtype=np.int64).reshape(-1, 3)
    if num_objects is not None and arr.size and (arr.min() < 0 or arr.max() >= num_objects):
        raise IndexError(f"triplet index out of range for {num_objects} objects")
    return arr


def _views(Ms, triplets, X):
    if len(Ms) != len(triplets):
        raise ShapeError(f"{len(Ms)} metrics but {len(triplets)} triplet groups")
    Xs = X if isinstance(X, (list, tuple)) else [X] * len(Ms)
    if len(Xs) != len(Ms):
        raise ShapeError("need one feature matrix per view")
    return Xs


def triplet_loss(L, M, t, X=None):
    """Hinge loss of a single triplet under metric ``L M L^T``."""
    L = np.asarray(L, dtype=np.float64)
    n = L.shape[0] if X is None else np.asarray(X).shape[0]
    trip = as_triplet_array([t], num_objects=n)
    return kernels.hinge_loss(embed(L, X), M, trip)


def data_loss(L, Ms, triplets, X=None):
    """Sum of hinge losses over every view's triplets."""
    Xs = _views(Ms, triplets, X)
    return sum(
        kernels.hinge_loss(embed(L, Xt), M, as_triplet_array(S)) for M, S, Xt in zip(Ms, triplets, Xs)
    )


def grad_L(L, Ms, triplets, X=None, beta=0.0, deterministic=True):
    """Subgradient of the joint objective with respect to ``L``.

    ``triplets`` holds one group per view, aligned with ``Ms``; ``X`` is
    ``None``, one shared feature matrix, or a list with one per view. Each
    active triplet contributes ``2 (d_ij d_ij^T - d_ik d_ik^T) L M_t`` with
    ``d_ab = x_a - x_b``; the ridge adds ``2 beta L``.
    """
    L = np.asarray(L, dtype=np.float64)
    Xs = _views(Ms, triplets, X)
    G = 2.0 * beta * L
    for M, S, Xt in zip(Ms, triplets, Xs):
        _, GY = kernels.hinge_grad_Y(embed(L, Xt), M, as_triplet_array(S), deterministic)
        G = G + backproject(GY, Xt)
    return G


def grad_M(L, M, triplets, X=None, gamma=0.0, deterministic=True):
    """Subgradient of one view's objective with respect to its metric ``M``."""
    D = np.asarray(M).shape[0]
    _, G = kernels.hinge_grad_M(embed(L, X), M, as_triplet_array(triplets), deterministic)
    return G + gamma * np.eye(D)
