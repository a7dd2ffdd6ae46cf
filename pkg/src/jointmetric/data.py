"""Datasets, synthetic generators, ground-truth oracles and triplet sampling."""

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .exceptions import DataError, DegenerateShapeError
from .loss import as_triplet_array

TIE_TOL = 1e-12

# 1-based landmark ids of the airplane pose views (16 annotated landmarks).
AIRPLANE_VIEWS = {
    "all": list(range(1, 17)),
    "back": [1, 2, 3, 4, 16],
    "nose": [7, 8, 9],
    "back+wings": [1, 2, 3, 4, 5, 6, 10, 11, 12, 13, 14, 15, 16],
    "nose+wings": list(range(5, 16)),
}


@dataclass(frozen=True, eq=False)
class TripletDataset:
    """Per-view triplet sets over ``num_objects`` objects.

    ``triplets[t]`` is an ``(n_t, 3)`` int64 array; views may be empty.
    ``features`` is an optional ``N x H`` matrix; without it objects are
    coordinate vectors and ``H = N``.
    """

    num_objects: int
    triplets: tuple
    features: np.ndarray = None
    labels: np.ndarray = None

    def __post_init__(self):
        N = int(self.num_objects)
        if N < 3:
            raise DataError(f"need at least 3 objects, got {N}")
        object.__setattr__(self, "num_objects", N)
        trips = []
        for t, S in enumerate(self.triplets):
            try:
                arr = as_triplet_array(S, num_objects=N)
            except IndexError as exc:
                raise DataError(f"view {t}: {exc}") from None
            if arr.size and np.any(
                (arr[:, 0] == arr[:, 1]) | (arr[:, 0] == arr[:, 2]) | (arr[:, 1] == arr[:, 2])
            ):
                raise DataError(f"view {t}: triplet with repeated indices")
            arr.setflags(write=False)
            trips.append(arr)
        object.__setattr__(self, "triplets", tuple(trips))
        if self.features is not None:
            X = np.asarray(self.features, dtype=np.float64)
            if X.ndim != 2 or X.shape[0] != N:
                raise DataError(f"features must be {N} x H, got {X.shape}")
            object.__setattr__(self, "features", X)
        if self.labels is not None:
            y = np.asarray(self.labels)
            if y.shape != (N,):
                raise DataError(f"need {N} labels, got {y.shape}")
            object.__setattr__(self, "labels", y)

    @property
    def num_views(self):
        return len(self.triplets)

    @property
    def input_dim(self):
        return self.num_objects if self.features is None else self.features.shape[1]

    @property
    def num_triplets(self):
        return sum(len(S) for S in self.triplets)

    def with_triplets(self, triplets):
        return TripletDataset(self.num_objects, tuple(triplets), self.features, self.labels)

    def __eq__(self, other):
        if not isinstance(other, TripletDataset):
            return NotImplemented

        def same(a, b):
            return (a is None and b is None) or (
                a is not None and b is not None and np.array_equal(a, b)
            )

        return (
            self.num_objects == other.num_objects
            and self.num_views == other.num_views
            and all(np.array_equal(a, b) for a, b in zip(self.triplets, other.triplets))
            and same(self.features, other.features)
            and same(self.labels, other.labels)
        )


@dataclass(frozen=True, eq=False)
class GroundTruthViews:
    """One dense ``N x N`` distance matrix per view, used as a comparison oracle."""

    distances: tuple

    def __post_init__(self):
        mats = []
        for t, D in enumerate(self.distances):
            D = np.asarray(D, dtype=np.float64)
            if D.ndim != 2 or D.shape[0] != D.shape[1]:
                raise DataError(f"view {t}: distance matrix must be square")
            if not np.array_equal(D, D.T):
                raise DataError(f"view {t}: distance matrix is not symmetric")
            if np.any(np.diag(D) != 0) or np.any(D < 0):
                raise DataError(f"view {t}: need zero diagonal and non-negative entries")
            D.setflags(write=False)
            mats.append(D)
        if len({D.shape for D in mats}) > 1:
            raise DataError("all views must cover the same objects")
        object.__setattr__(self, "distances", tuple(mats))

    @property
    def num_views(self):
        return len(self.distances)

    @property
    def num_objects(self):
        return self.distances[0].shape[0]

    def __getitem__(self, t):
        return self.distances[t]


@dataclass(frozen=True, eq=False)
class SyntheticData:
    points: np.ndarray
    views: GroundTruthViews
    labels: np.ndarray = None
    bases: tuple = field(default=(), repr=False)


def random_subspace(dim, sub_dim, rng):
    """Orthonormal ``dim x sub_dim`` basis from the QR of a Gaussian matrix."""
    if not 1 <= sub_dim <= dim:
        raise ValueError(f"subspace dimension {sub_dim} must be in [1, {dim}]")
    Q, _ = np.linalg.qr(rng.standard_normal((dim, sub_dim)))
    return Q


def subspace_views(points, subspace_dims, rng):
    bases = tuple(random_subspace(points.shape[1], d, rng) for d in subspace_dims)
    dists = tuple(squareform(pdist(points @ Q)) for Q in bases)
    return GroundTruthViews(dists), bases


def gen_uniform(n=200, dim=10, subspace_dims=(2, 3, 4, 5, 6, 7), seed=0):
    """Points uniform in the unit hypercube, one view per random subspace."""
    rng = np.random.default_rng(seed)
    points = rng.random((n, dim))
    views, bases = subspace_views(points, subspace_dims, rng)
    return SyntheticData(points, views, None, bases)


def gen_clustered(
    n=200, clusters=4, variance=1.0, box_side=10.0, dim=10, subspace_dims=(2, 3, 4, 5, 6, 7), seed=0
):
    """Gaussian mixture with centres uniform in ``[0, box_side]^dim``.

    Cluster membership is round-robin (``i % clusters``) and is returned
    as ``labels``.
    """
    rng = np.random.default_rng(seed)
    centers = rng.random((clusters, dim)) * box_side
    labels = np.arange(n) % clusters
    points = centers[labels] + np.sqrt(variance) * rng.standard_normal((n, dim))
    views, bases = subspace_views(points, subspace_dims, rng)
    return SyntheticData(points, views, labels, bases)


# ---------------------------------------------------------------------------
# procrustes pose similarity


def procrustes_similarity(a, b):
    """Residual of aligning ``b`` onto ``a`` by a positive scale and a translation.

    Returns ``min_{s>0, v} sum_p ||s b_p + v - a_p||^2``. Rotation is not
    part of the alignment group. Smaller residual means more similar.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] < 2:
        raise ValueError(f"need two equal-length point lists of length >= 2, got {a.shape}, {b.shape}")
    ac = a - a.mean(axis=0)
    bc = b - b.mean(axis=0)
    bb = float(np.sum(bc * bc))
    if bb <= 0.0:
        raise DegenerateShapeError("all points of b coincide")
    # s -> 0+ is the infimum when the centred shapes are anti-correlated
    s = max(float(np.sum(ac * bc)) / bb, 0.0)
    return float(np.sum((ac - s * bc) ** 2))


@dataclass(frozen=True, eq=False)
class LandmarkSet:
    """2-D landmarks, ``points[n, p]`` for object ``n`` and landmark ``ids[p]``."""

    points: np.ndarray
    ids: tuple
    view_subsets: dict = field(default_factory=lambda: dict(AIRPLANE_VIEWS))

    def __post_init__(self):
        P = np.asarray(self.points, dtype=np.float64)
        if P.ndim != 3 or P.shape[2] != 2 or P.shape[1] != len(self.ids):
            raise DataError(f"landmarks must be N x P x 2 with P = len(ids), got {P.shape}")
        object.__setattr__(self, "points", P)
        for name, subset in self.view_subsets.items():
            if not subset:
                raise DataError(f"view {name!r} has no landmarks")
            missing = set(subset) - set(self.ids)
            if missing:
                raise DataError(f"view {name!r} uses unknown landmarks {sorted(missing)}")

    def subset(self, name):
        pos = {lid: p for p, lid in enumerate(self.ids)}
        return self.points[:, [pos[lid] for lid in self.view_subsets[name]], :]


def procrustes_view(shapes):
    """Symmetric distance matrix from one-sided procrustes residuals.

    The residual of aligning ``j`` onto anchor ``i`` is divided by the
    anchor's centred squared norm. That factor is shared by every
    comparison with the same anchor, so triplet orientations are those of
    the raw residual, while the normalised value ``1 - max(<a_i, a_j>, 0)^2
    / (|a_i|^2 |a_j|^2)`` is symmetric.
    """
    S = np.asarray(shapes, dtype=np.float64)
    C = (S - S.mean(axis=1, keepdims=True)).reshape(S.shape[0], -1)
    sq = np.einsum("np,np->n", C, C)
    if np.any(sq <= 0.0):
        raise DegenerateShapeError(f"objects {np.flatnonzero(sq <= 0).tolist()} have coincident landmarks")
    G = np.maximum(C @ C.T, 0.0)
    D = 1.0 - (G * G) / np.outer(sq, sq)
    D = np.maximum((D + D.T) / 2.0, 0.0)
    np.fill_diagonal(D, 0.0)
    return D


def landmark_views(landmarks, names=None):
    names = list(landmarks.view_subsets) if names is None else list(names)
    return GroundTruthViews(tuple(procrustes_view(landmarks.subset(n)) for n in names))


# ---------------------------------------------------------------------------
# triplet construction


def _orient_all(D):
    """Every non-tied oriented triplet of an ``N x N`` oracle, in canonical order."""
    N = D.shape[0]
    out = []
    for i in range(N):
        others = [x for x in range(N) if x != i]
        for j, k in combinations(others, 2):
            gap = D[i, k] - D[i, j]
            if abs(gap) < TIE_TOL:
                continue
            out.append((i, j, k) if gap > 0 else (i, k, j))
    return np.array(out, dtype=np.int64).reshape(-1, 3)


def enumerate_triplets(D):
    """All oriented triplets ``(i, j, k)`` with ``d(i, j) < d(i, k)`` (ties dropped)."""
    return _orient_all(np.asarray(D, dtype=np.float64))


def sample_triplets(gt, view, count, seed=0):
    """Draw ``count`` distinct triplets uniformly and orient them by the oracle.

    Index triples ``(i, {j, k})`` are sampled uniformly; each is oriented
    so that ``d(i, j) < d(i, k)`` in view ``view``. Ties are skipped and
    resampled, and no triplet is emitted twice.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    D = gt[view] if isinstance(gt, GroundTruthViews) else np.asarray(gt, dtype=np.float64)
    N = D.shape[0]
    total = N * (N - 1) * (N - 2) // 2
    if count > total:
        raise DataError(f"only {total} distinct triplets exist over {N} objects, asked for {count}")
    rng = np.random.default_rng(seed)
    if 4 * count >= total:
        valid = _orient_all(D)
        if len(valid) < count:
            raise DataError(f"oracle supplies only {len(valid)} untied triplets, asked for {count}")
        return valid[rng.permutation(len(valid))[:count]]

    seen = set()
    out = np.empty((count, 3), dtype=np.int64)
    filled = 0
    while filled < count:
        if len(seen) == total:
            raise DataError(f"oracle supplies only {filled} untied triplets, asked for {count}")
        batch = max(2 * (count - filled), 64)
        i = rng.integers(0, N, batch)
        j = rng.integers(0, N - 1, batch)
        j += j >= i
        k = rng.integers(0, N - 2, batch)
        lo, hi = np.minimum(i, j), np.maximum(i, j)
        k += k >= lo
        k += k >= hi
        for a, b, c in zip(i.tolist(), j.tolist(), k.tolist()):
            key = (a, min(b, c), max(b, c))
            if key in seen:
                continue
            seen.add(key)
            gap = D[a, c] - D[a, b]
            if abs(gap) < TIE_TOL:
                continue
            out[filled] = (a, b, c) if gap > 0 else (a, c, b)
            filled += 1
            if filled == count:
                break
    return out


def partition_to_triplets(target, similar, dissimilar):
    """Broadcast a similar/dissimilar partition into ``{(target, j, l)}``."""
    sim, dis = list(similar), list(dissimilar)
    if set(sim) & set(dis):
        raise DataError("similar and dissimilar sets overlap")
    if target in sim or target in dis:
        raise DataError("target must not appear in its own partition")
    if len(set(sim)) != len(sim) or len(set(dis)) != len(dis):
        raise DataError("partition sets contain duplicates")
    return np.array([(target, j, l) for j in sim for l in dis], dtype=np.int64).reshape(-1, 3)


def split_train_test(triplets, test_fraction=0.2, seed=0, equalize=False):
    """Random per-view train/test split.

    Each view keeps ``floor(test_fraction * n_t)`` triplets for testing.
    With ``equalize`` every view's training set is truncated to the
    smallest training count.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for S in triplets:
        S = as_triplet_array(S)
        perm = rng.permutation(len(S))
        n_test = int(np.floor(test_fraction * len(S)))
        test.append(S[perm[:n_test]])
        train.append(S[perm[n_test:]])
    if equalize:
        if any(len(S) == 0 for S in train):
            raise DataError("cannot equalize training counts with an empty view")
        n = min(len(S) for S in train)
        train = [S[:n] for S in train]
    return train, test
