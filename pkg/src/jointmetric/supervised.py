"""Classification with view-specific metrics learned from class labels.

Each task contributes class-derived triplets ``(i, j, k)`` (``j`` a target
neighbour of ``i``, ``k`` any object of another class) and a pull term
``mu * sum ||y_i - y_j||^2_{M_t}`` over target-neighbour pairs. All tasks
share ``L`` through a common feature space and may have disjoint objects.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .evaluation import knn_vote
from .exceptions import DataError, ShapeError
from .solver import _train_views, _View

DEFAULT_KAPPA = 3


def build_target_neighbors(features, labels, kappa=DEFAULT_KAPPA):
    """The ``kappa`` nearest same-class objects of every object, in input space.

    Ranking is by Euclidean distance, ties broken by the smaller index.
    Returns an ``(N, kappa)`` int64 array.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if kappa < 1:
        raise ValueError("kappa must be >= 1")
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ShapeError("need an N x H feature matrix and N labels")
    out = np.empty((len(y), kappa), dtype=np.int64)
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        if len(idx) <= kappa:
            raise DataError(f"class {c!r} has {len(idx)} members, need more than kappa={kappa}")
        D = cdist(X[idx], X[idx], "sqeuclidean")
        np.fill_diagonal(D, np.inf)
        order = np.lexsort((np.broadcast_to(idx, D.shape), D), axis=1)[:, :kappa]
        out[idx] = idx[order]
    return out


def class_triplets(labels, target_neighbors, max_triplets=None, seed=0):
    """All ``(i, j, k)`` with ``j`` a target neighbour of ``i`` and ``label_k != label_i``.

    Ordered by ``i``, then neighbour rank, then ``k``. With ``max_triplets``
    a seeded uniform subset of that size is kept, in the same order.
    """
    y = np.asarray(labels)
    tn = np.asarray(target_neighbors, dtype=np.int64).reshape(len(y), -1)
    blocks = []
    for i in range(len(y)):
        others = np.flatnonzero(y != y[i])
        if len(others) == 0:
            continue
        for j in tn[i]:
            blocks.append(np.column_stack([np.full(len(others), i), np.full(len(others), j), others]))
    trip = np.concatenate(blocks).astype(np.int64) if blocks else np.zeros((0, 3), dtype=np.int64)
    if max_triplets is not None and len(trip) > max_triplets:
        keep = np.random.default_rng(seed).choice(len(trip), size=max_triplets, replace=False)
        trip = trip[np.sort(keep)]
    return trip


def target_pairs(target_neighbors):
    """``(i, j)`` rows for every object and each of its target neighbours."""
    tn = np.asarray(target_neighbors, dtype=np.int64)
    return np.column_stack([np.repeat(np.arange(len(tn)), tn.shape[1]), tn.ravel()])


@dataclass(frozen=True, eq=False)
class SupervisedTask:
    """Features and labels of one task plus its static target neighbours."""

    features: np.ndarray
    labels: np.ndarray
    target_neighbors: np.ndarray = None
    mu: float = 1.0
    kappa: int = DEFAULT_KAPPA
    max_triplets: int = None
    triplets: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise ShapeError("need an N x H feature matrix and N labels")
        if self.mu < 0:
            raise ValueError("mu must be non-negative")
        tn = self.target_neighbors
        if tn is None:
            tn = build_target_neighbors(X, y, self.kappa)
        tn = np.asarray(tn, dtype=np.int64)
        if tn.shape[0] != len(y) or np.any(y[tn] != y[:, None]):
            raise DataError("target neighbours must share their object's class")
        trip = self.triplets
        if trip is None:
            trip = class_triplets(y, tn, self.max_triplets)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "target_neighbors", tn)
        object.__setattr__(self, "triplets", np.asarray(trip, dtype=np.int64).reshape(-1, 3))


def train_supervised(tasks, cfg, mu=None):
    """Learn a shared ``L`` and one metric per task by the alternating scheme.

    ``mu``, when given, overrides every task's pull weight.
    """
    if not tasks:
        raise DataError("need at least one task")
    H = {t.features.shape[1] for t in tasks}
    if len(H) != 1:
        raise ShapeError(f"tasks disagree on the feature dimension: {sorted(H)}")
    if cfg.mode != "joint":
        raise ValueError("supervised training uses the joint model")
    views = []
    for t in tasks:
        w = t.mu if mu is None else float(mu)
        views.append(_View(t.triplets, t.features, target_pairs(t.target_neighbors), w))
    return _train_views(views, H.pop(), cfg)


@dataclass(frozen=True)
class KNNResult:
    predictions: np.ndarray
    error: float = None


def pool_for(tasks, t, pool="task"):
    """Training pool of task ``t``: its own objects, or every task's (``"all"``)."""
    if pool == "task":
        return tasks[t].features, tasks[t].labels
    if pool == "all":
        return np.vstack([s.features for s in tasks]), np.concatenate([s.labels for s in tasks])
    raise ValueError(f"pool must be 'task' or 'all', got {pool!r}")


def knn_classify(model, t, query, pool, k=3, query_labels=None):
    """k-NN vote for ``query`` features under task ``t``'s metric.

    ``pool`` is a ``(features, labels)`` pair, e.g. from :func:`pool_for`.
    The tie rule is that of :func:`jointmetric.evaluation.knn_vote`.
    """
    pool_X, pool_y = pool
    if len(pool_y) == 0:
        raise DataError("empty neighbour pool")
    Zq = model.coordinates(t, np.asarray(query, dtype=np.float64))
    Zp = model.coordinates(t, np.asarray(pool_X, dtype=np.float64))
    pred = knn_vote(cdist(Zq, Zp, "sqeuclidean"), np.asarray(pool_y), k)
    err = None if query_labels is None else float(np.mean(pred != np.asarray(query_labels)))
    return KNNResult(pred, err)


@dataclass(frozen=True, eq=False)
class PCA:
    """Principal components from the covariance eigendecomposition."""

    mean: np.ndarray
    components: np.ndarray  # H x n_components, columns ordered by variance
    explained: np.ndarray  # variance fraction of each kept component

    def transform(self, X):
        return (np.asarray(X, dtype=np.float64) - self.mean) @ self.components


def pca_fit(X, variance=0.99, n_components=None):
    """Keep the fewest components reaching ``variance``, or exactly ``n_components``.

    Component signs are fixed so the largest-magnitude loading is positive.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ShapeError("need at least two samples")
    mean = X.mean(axis=0)
    C = np.cov(X - mean, rowvar=False).reshape(X.shape[1], X.shape[1])
    w, V = np.linalg.eigh(C)
    w, V = np.maximum(w[::-1], 0.0), V[:, ::-1]
    total = w.sum()
    frac = w / total if total > 0 else np.zeros_like(w)
    if n_components is None:
        if not 0 < variance <= 1:
            raise ValueError("variance must lie in (0, 1]")
        n_components = min(int(np.searchsorted(np.cumsum(frac), variance - 1e-12) + 1), len(w))
    V = V[:, :n_components]
    flip = np.sign(V[np.argmax(np.abs(V), axis=0), np.arange(n_components)])
    return PCA(mean, V * flip, frac[:n_components])
