"""Triplet generalization error, k-NN error, view consistency and gain.

Models are anything with ``L`` and ``Ms`` attributes (a
:class:`~jointmetric.solver.TrainedModel`) or an ``(L, Ms)`` tuple.
"""

import csv
import json
from dataclasses import asdict, dataclass
from itertools import combinations

import numpy as np

from . import kernels
from .exceptions import DataError, ShapeError
from .loss import as_triplet_array, embed

EXHAUSTIVE_MAX_N = 50
NUM_PROBES = 100_000
TIE_TOL = 1e-12
_trapezoid = getattr(np, "trapezoid", None) or np.trapz


@dataclass(frozen=True)
class ViewErrors:
    per_view: tuple
    mean: float


@dataclass
class EvalReport:
    per_view_triplet_error: list
    mean_triplet_error: float
    per_view_knn_error: list = None
    mean_knn_error: float = None
    consistency_matrix: list = None
    gain: dict = None

    def __post_init__(self):
        fractions = list(self.per_view_triplet_error) + list(self.per_view_knn_error or [])
        if any(not 0.0 <= f <= 1.0 for f in fractions):
            raise ValueError("error fractions must lie in [0, 1]")

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def _params(model):
    if isinstance(model, tuple):
        L, Ms = model
    else:
        L, Ms = model.L, model.Ms
    if isinstance(Ms, np.ndarray) and Ms.ndim == 2:
        Ms = [Ms]
    return np.asarray(L, dtype=np.float64), [np.asarray(M, dtype=np.float64) for M in Ms]


def _feature_list(X, T):
    return list(X) if isinstance(X, (list, tuple)) else [X] * T


def triplet_error(model, test, X=None):
    """Fraction of test triplets the learned metric gets wrong, per view.

    A triplet counts as wrong when ``d_t(i, j) >= d_t(i, k)``; ties are
    errors. ``test`` holds one triplet group per evaluated view (a single
    metric is applied to every group).
    """
    L, Ms = _params(model)
    if len(Ms) == 1 and len(test) > 1:
        Ms = Ms * len(test)
    if len(Ms) != len(test):
        raise ShapeError(f"{len(Ms)} view metrics but {len(test)} test groups")
    errs = []
    for t, (M, S, Xt) in enumerate(zip(Ms, test, _feature_list(X, len(test)))):
        S = as_triplet_array(S)
        if len(S) == 0:
            raise DataError(f"view {t} has no test triplets")
        gaps = kernels.triplet_gaps(embed(L, Xt), M, S)
        errs.append(float(np.mean(gaps <= 0.0)))
    return ViewErrors(tuple(errs), float(np.mean(errs)))


def metric_distances(L, M, X=None):
    """Dense ``N x N`` squared distances under ``L M L^T``."""
    Y = embed(L, X)
    w, V = np.linalg.eigh((M + M.T) / 2.0)
    keep = w > 0
    Z = Y @ (V[:, keep] * np.sqrt(w[keep]))
    sq = np.einsum("nd,nd->n", Z, Z)
    D = sq[:, None] + sq[None, :] - 2.0 * (Z @ Z.T)
    np.fill_diagonal(D, 0.0)
    return np.maximum(D, 0.0)


def knn_vote(dists, pool_labels, k=3):
    """Majority vote over the ``k`` nearest pool entries, one row per query.

    ``dists`` is ``(n_query, n_pool)`` with excluded entries set to ``inf``.
    Neighbours are ranked by distance, then pool index. Vote ties go to the
    class whose tied neighbours have the smaller summed distance, then to
    the smaller label.
    """
    dists = np.asarray(dists, dtype=np.float64)
    pool_labels = np.asarray(pool_labels)
    n_pool = dists.shape[1]
    if n_pool == 0:
        raise DataError("empty neighbour pool")
    k = min(k, n_pool)
    order = np.lexsort((np.broadcast_to(np.arange(n_pool), dists.shape), dists), axis=1)[:, :k]
    preds = []
    for q in range(dists.shape[0]):
        nb = order[q]
        labs = pool_labels[nb]
        ds = dists[q, nb]
        best = None
        for lab in np.unique(labs):
            sel = labs == lab
            key = (-int(sel.sum()), float(ds[sel].sum()), lab)
            if best is None or key < best:
                best = key
        preds.append(best[2])
    return np.array(preds)


def loo_knn_error(model, labels, k=3, X=None):
    """Leave-one-out k-NN classification error in every view's metric."""
    if labels is None:
        raise DataError("leave-one-out k-NN needs labels")
    labels = np.asarray(labels)
    L, Ms = _params(model)
    if len(labels) <= k:
        raise DataError(f"need more than k={k} objects")
    errs = []
    for M, Xt in zip(Ms, _feature_list(X, len(Ms))):
        D = metric_distances(L, M, Xt)
        np.fill_diagonal(D, np.inf)
        errs.append(float(np.mean(knn_vote(D, labels, k) != labels)))
    return ViewErrors(tuple(errs), float(np.mean(errs)))


def _probe_signs(D, i, j, k):
    gap = D[i, k] - D[i, j]
    s = np.sign(gap)
    s[np.abs(gap) < TIE_TOL] = 0
    return s


def consistency_probes(n, seed=0, exhaustive=None, num_probes=NUM_PROBES):
    """Probe triples ``(i, j, k)`` with distinct entries, ``j < k``.

    Exhaustive enumeration for ``n <= 50`` unless ``exhaustive`` says
    otherwise; else ``num_probes`` seeded uniform draws.
    """
    if exhaustive is None:
        exhaustive = n <= EXHAUSTIVE_MAX_N
    if exhaustive:
        rows = [(i, j, k) for i in range(n) for j, k in combinations(range(n), 2) if i != j and i != k]
        return np.array(rows, dtype=np.int64).reshape(-1, 3)
    rng = np.random.default_rng(seed)
    i = rng.integers(0, n, num_probes)
    j = rng.integers(0, n - 1, num_probes)
    j += j >= i
    k = rng.integers(0, n - 2, num_probes)
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    k += k >= lo
    k += k >= hi
    return np.stack([i, np.minimum(j, k), np.maximum(j, k)], axis=1)


def triplet_consistency(dist_a, dist_b, probes=None, seed=0):
    """Fraction of probed triplets on which two views agree in orientation.

    Probes tied in either view are skipped. Inputs are ``N x N`` distance
    matrices (ground truth or :func:`metric_distances`).
    """
    A = np.asarray(dist_a, dtype=np.float64)
    B = np.asarray(dist_b, dtype=np.float64)
    if A.shape != B.shape:
        raise ShapeError("views must cover the same objects")
    if probes is None:
        probes = consistency_probes(A.shape[0], seed)
    i, j, k = probes[:, 0], probes[:, 1], probes[:, 2]
    sa = _probe_signs(A, i, j, k)
    sb = _probe_signs(B, i, j, k)
    valid = (sa != 0) & (sb != 0)
    if not np.any(valid):
        return float("nan")
    return float(np.mean(sa[valid] == sb[valid]))


def consistency_matrix(dists, probes=None, seed=0):
    """``T x T`` pairwise consistency (unit diagonal) over a shared probe set."""
    dists = [np.asarray(D, dtype=np.float64) for D in dists]
    if probes is None:
        probes = consistency_probes(dists[0].shape[0], seed)
    T = len(dists)
    C = np.eye(T)
    for a, b in combinations(range(T), 2):
        C[a, b] = C[b, a] = triplet_consistency(dists[a], dists[b], probes)
    return C


def average_consistency(dists, probes=None, seed=0):
    """Consistency averaged over all pairs of distinct views."""
    C = consistency_matrix(dists, probes, seed)
    iu = np.triu_indices(len(C), 1)
    return float(np.mean(C[iu]))


def performance_gain(budgets, errors_method, errors_independent):
    """``(AUC_indep - AUC_method) / AUC_indep`` with trapezoidal AUC over budgets."""
    b = np.asarray(budgets, dtype=np.float64)
    em = np.asarray(errors_method, dtype=np.float64)
    ei = np.asarray(errors_independent, dtype=np.float64)
    if em.shape != b.shape or ei.shape != b.shape:
        raise ShapeError("error curves must share the budget grid")
    if len(b) < 2:
        raise ShapeError("need at least two budgets for an area")
    auc_i = _trapezoid(ei, b)
    return float((auc_i - _trapezoid(em, b)) / auc_i)


def write_curve_csv(path, rows):
    """Write ``budget,view,error`` rows; ``view`` may be ``"mean"``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["budget", "view", "error"])
        for budget, view, error in rows:
            w.writerow([budget, view, repr(float(error))])


def read_curve_csv(path):
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        return [(int(row["budget"]), row["view"], float(row["error"])) for row in r]
