from itertools import combinations

import numpy as np
import pytest
from scipy.spatial.distance import pdist, squareform

from jointmetric.data import (
    AIRPLANE_VIEWS,
    GroundTruthViews,
    LandmarkSet,
    TripletDataset,
    enumerate_triplets,
    gen_clustered,
    gen_uniform,
    landmark_views,
    partition_to_triplets,
    procrustes_similarity,
    procrustes_view,
    sample_triplets,
    split_train_test,
)
from jointmetric.exceptions import DataError, DegenerateShapeError


class TestDatasets:
    def test_rejects_repeated_and_out_of_range(self):
        with pytest.raises(DataError):
            TripletDataset(4, (np.array([[0, 0, 1]]),))
        with pytest.raises(DataError):
            TripletDataset(4, (np.array([[0, 1, 4]]),))

    def test_empty_views_allowed(self):
        d = TripletDataset(5, (np.zeros((0, 3)), np.array([[0, 1, 2]])))
        assert d.num_views == 2 and d.num_triplets == 1 and d.input_dim == 5

    def test_ground_truth_validation(self):
        with pytest.raises(DataError):
            GroundTruthViews((np.array([[0.0, 1.0], [2.0, 0.0]]),))
        with pytest.raises(DataError):
            GroundTruthViews((np.array([[1.0, 1.0], [1.0, 1.0]]),))


class TestGenerators:
    def test_uniform_defaults(self):
        syn = gen_uniform(seed=0)
        assert syn.points.shape == (200, 10)
        assert (syn.points >= 0).all() and (syn.points <= 1).all()
        assert syn.views.num_views == 6
        for D in syn.views.distances:
            assert D.shape == (200, 200)
            assert np.array_equal(D, D.T) and not np.diag(D).any()

    def test_full_dimensional_subspace_is_rotation(self):
        syn = gen_uniform(n=30, dim=4, subspace_dims=(4,), seed=2)
        np.testing.assert_allclose(syn.views[0], squareform(pdist(syn.points)), atol=1e-12)

    def test_subspace_coordinates_match_ambient_projection(self):
        syn = gen_uniform(n=25, dim=6, subspace_dims=(2, 4), seed=3)
        for D, Q in zip(syn.views.distances, syn.bases):
            P = syn.points @ Q @ Q.T
            np.testing.assert_allclose(D, squareform(pdist(P)), atol=1e-12)

    def test_determinism(self):
        a, b = gen_clustered(seed=5), gen_clustered(seed=5)
        assert np.array_equal(a.points, b.points)
        assert all(np.array_equal(x, y) for x, y in zip(a.views.distances, b.views.distances))

    def test_clusters_balanced(self):
        syn = gen_clustered(seed=0)
        assert np.bincount(syn.labels).tolist() == [50, 50, 50, 50]

    def test_zero_variance_collapses_clusters(self):
        syn = gen_clustered(n=40, variance=0.0, seed=1)
        for c in range(4):
            pts = syn.points[syn.labels == c]
            assert np.all(pts == pts[0])

    @pytest.mark.parametrize("seed", range(5))
    def test_inter_exceeds_intra(self, seed):
        syn = gen_clustered(seed=seed)
        D = squareform(pdist(syn.points))
        same = syn.labels[:, None] == syn.labels[None, :]
        off = ~np.eye(len(D), dtype=bool)
        assert D[~same].mean() > D[same & off].mean()


def grid_residual(a, b):
    """Coarse-to-fine grid search over scale s >= 0 and translation v."""
    best = (np.inf, 1.0, np.zeros(2))
    s_lo, s_hi, v_c, v_r = 0.0, 5.0, np.zeros(2), 5.0
    for _ in range(8):
        for s in np.linspace(s_lo, s_hi, 41):
            for vx in np.linspace(v_c[0] - v_r, v_c[0] + v_r, 41):
                for vy in np.linspace(v_c[1] - v_r, v_c[1] + v_r, 41):
                    r = np.sum((s * b + np.array([vx, vy]) - a) ** 2)
                    if r < best[0]:
                        best = (r, s, np.array([vx, vy]))
        step_s = (s_hi - s_lo) / 40
        s_lo, s_hi = max(best[1] - 2 * step_s, 0.0), best[1] + 2 * step_s
        v_c, v_r = best[2], v_r / 10
    return best[0]


class TestProcrustes:
    a = np.array([[0.0, 0.0], [1.0, 0.2], [0.4, 1.3], [-0.5, 0.7]])

    def test_identical(self):
        assert procrustes_similarity(self.a, self.a) == pytest.approx(0.0, abs=1e-15)

    def test_scale_and_translation_removed(self):
        assert procrustes_similarity(self.a, 2 * self.a + np.array([3.0, -1.0])) == pytest.approx(0.0, abs=1e-12)

    def test_rotation_matches_grid_oracle(self):
        R = np.array([[0.0, -1.0], [1.0, 0.0]])
        b = self.a @ R.T
        got = procrustes_similarity(self.a, b)
        assert got > 0
        assert got == pytest.approx(grid_residual(self.a, b), abs=1e-6)

    def test_generic_pair_matches_grid_oracle(self, rng):
        b = rng.standard_normal((4, 2))
        assert procrustes_similarity(self.a, b) == pytest.approx(grid_residual(self.a, b), abs=1e-6)

    def test_translation_invariance(self, rng):
        b = rng.standard_normal((4, 2))
        v = rng.standard_normal(2) * 10
        assert procrustes_similarity(self.a, b + v) == pytest.approx(procrustes_similarity(self.a, b), abs=1e-10)

    def test_degenerate(self):
        with pytest.raises(DegenerateShapeError):
            procrustes_similarity(self.a, np.ones((4, 2)))

    def test_view_orders_like_raw_residual(self, rng):
        shapes = rng.standard_normal((7, 5, 2))
        D = procrustes_view(shapes)
        for i in range(7):
            raw = [procrustes_similarity(shapes[i], shapes[j]) for j in range(7)]
            others = [j for j in range(7) if j != i]
            assert np.argsort([raw[j] for j in others]).tolist() == np.argsort(D[i, others]).tolist()

    def test_airplane_subsets(self):
        assert AIRPLANE_VIEWS["all"] == list(range(1, 17))
        assert AIRPLANE_VIEWS["back"] == [1, 2, 3, 4, 16]
        assert AIRPLANE_VIEWS["nose"] == [7, 8, 9]

    def test_landmark_views(self, rng):
        lm = LandmarkSet(rng.standard_normal((6, 16, 2)), tuple(range(1, 17)))
        gt = landmark_views(lm)
        assert gt.num_views == 5 and gt.num_objects == 6
        with pytest.raises(DataError):
            LandmarkSet(rng.standard_normal((6, 3, 2)), (1, 2, 3))


def brute_force_valid(D):
    N = len(D)
    out = set()
    for i in range(N):
        for j, k in combinations([x for x in range(N) if x != i], 2):
            if D[i, j] < D[i, k]:
                out.add((i, j, k))
            elif D[i, k] < D[i, j]:
                out.add((i, k, j))
    return out


class TestSampling:
    def test_count_zero_rejected(self):
        with pytest.raises(ValueError):
            sample_triplets(gen_uniform(n=5, seed=0).views, 0, 0)

    def test_every_sample_is_oriented(self):
        views = gen_clustered(n=60, seed=3).views
        S = sample_triplets(views, 2, 2000, seed=1)
        D = views[2]
        assert np.all(D[S[:, 0], S[:, 1]] < D[S[:, 0], S[:, 2]])
        assert len({tuple(r) for r in S.tolist()}) == len(S)

    def test_exhaustive_equals_enumeration(self):
        views = gen_uniform(n=5, seed=4).views
        valid = brute_force_valid(views[0])
        S = sample_triplets(views, 0, len(valid), seed=0)
        assert {tuple(r) for r in S.tolist()} == valid
        assert {tuple(r) for r in enumerate_triplets(views[0]).tolist()} == valid

    def test_too_many_requested(self):
        with pytest.raises(DataError):
            sample_triplets(gen_uniform(n=5, seed=4).views, 0, 31)

    def test_ties_skipped(self):
        D = np.ones((4, 4)) - np.eye(4)
        with pytest.raises(DataError):
            sample_triplets(D, 0, 1)


class TestPartitions:
    def test_nine_images(self):
        assert len(partition_to_triplets(0, [1, 2, 3], [4, 5, 6, 7, 8, 9])) == 18

    def test_empty_similar(self):
        assert len(partition_to_triplets(0, [], [1, 2])) == 0

    def test_single(self):
        assert partition_to_triplets(1, [2], [3]).tolist() == [[1, 2, 3]]

    def test_overlap_rejected(self):
        with pytest.raises(DataError):
            partition_to_triplets(0, [1], [1])
        with pytest.raises(DataError):
            partition_to_triplets(0, [0], [1])


class TestSplit:
    def test_floor_rounding(self, rng):
        S = [np.arange(27).reshape(9, 3), np.arange(12).reshape(4, 3)]
        tr, te = split_train_test(S, 0.3, seed=0)
        assert [len(t) for t in te] == [2, 1]
        assert [len(t) for t in tr] == [7, 3]

    def test_deterministic(self):
        S = [np.arange(60).reshape(20, 3)]
        a = split_train_test(S, 0.25, seed=9)
        b = split_train_test(S, 0.25, seed=9)
        assert all(np.array_equal(x, y) for x, y in zip(a[0] + a[1], b[0] + b[1]))

    def test_disjoint_and_complete(self):
        S = [np.array([[i, i + 1, i + 2] for i in range(50)])]
        tr, te = split_train_test(S, 0.2, seed=1)
        a = {tuple(r) for r in tr[0].tolist()}
        b = {tuple(r) for r in te[0].tolist()}
        assert not a & b and len(a | b) == 50

    def test_equalize(self):
        S = [np.array([[i, i + 1, i + 2] for i in range(n)]) for n in (20, 40)]
        tr, _ = split_train_test(S, 0.5, seed=0, equalize=True)
        assert len(tr[0]) == len(tr[1]) == 10
        with pytest.raises(DataError):
            split_train_test([np.zeros((0, 3)), S[0]], 0.5, equalize=True)

    def test_bad_fraction(self):
        with pytest.raises(ValueError):
            split_train_test([np.zeros((3, 3))], 1.0)
