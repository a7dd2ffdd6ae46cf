import io as stdio

import numpy as np
import pytest

from jointmetric.data import TripletDataset
from jointmetric.evaluation import triplet_error
from jointmetric.exceptions import DataError, DivergedError
from jointmetric.model import regularizer_value
from jointmetric.solver import (
    DEFAULT_GRID,
    SolverConfig,
    _init_L,
    cross_validate,
    objective,
    train,
)


def two_cluster_data(n=20, count=500, seed=0):
    rng = np.random.default_rng(seed)
    group = np.arange(n) % 2
    rows = []
    while len(rows) < count:
        i, j, k = rng.choice(n, 3, replace=False)
        if group[i] == group[j] != group[k]:
            rows.append((i, j, k))
    return TripletDataset(n, (np.array(rows),))


def random_data(n=15, T=2, count=40, seed=1):
    rng = np.random.default_rng(seed)
    return TripletDataset(n, tuple(np.array([rng.choice(n, 3, replace=False) for _ in range(count)]) for _ in range(T)))


class TestConfig:
    def test_defaults(self):
        cfg = SolverConfig()
        assert (cfg.m_max, cfg.eta0, cfg.outer_max, cfg.rel_tol) == (20, 1e-2, 500, 1e-5)

    @pytest.mark.parametrize("bad", [{"dim": 0}, {"m_max": 0}, {"rel_tol": -1}, {"mode": "x"}, {"beta": 0}])
    def test_invalid(self, bad):
        with pytest.raises(ValueError):
            SolverConfig(**bad)

    def test_dict_round_trip(self):
        cfg = SolverConfig(dim=3, gamma=0.2, mode="pooled")
        assert SolverConfig.from_dict(cfg.to_dict()) == cfg


class TestObjective:
    def test_no_triplets_is_regularizer(self, rng):
        L = rng.standard_normal((4, 2))
        data = TripletDataset(4, (np.zeros((0, 3)),))
        assert objective(data, L, [np.eye(2)], 0.5, 2.0) == regularizer_value(L, [np.eye(2)], 0.5, 2.0)

    def test_single_violated_triplet(self):
        # d_ij = 4, d_ik = 3 under L = M = I with unit-vector objects
        X = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, np.sqrt(3.0)]])
        data = TripletDataset(3, (np.array([[0, 1, 2]]),), features=X)
        reg = regularizer_value(np.eye(2), [np.eye(2)], 1.0, 1.0)
        assert objective(data, np.eye(2), [np.eye(2)], 1.0, 1.0) == pytest.approx(2.0 + reg)

    def test_views_decompose_at_identity(self):
        data = random_data()
        Ms = [np.eye(15) * 0.3, np.eye(15) * 0.7]
        total = objective(data, np.eye(15), Ms, 1.0, 1.0)
        parts = sum(
            objective(TripletDataset(15, (S,)), np.eye(15), [M], 1.0, 1.0) - 15.0 for S, M in zip(data.triplets, Ms)
        )
        assert total == pytest.approx(parts + 15.0, rel=1e-12)


class TestTraining:
    def test_satisfied_triplets_leave_only_regularizer(self):
        n, D, seed = 30, 3, 4
        L0 = _init_L(n, D, seed)
        d = ((L0[:, None, :] - L0[None, :, :]) ** 2).sum(-1)
        rows = [(i, j, k) for i in range(n) for j in range(n) for k in range(n)
                if len({i, j, k}) == 3 and d[i, k] - d[i, j] > 3.0][:50]
        assert len(rows) == 50
        data = TripletDataset(n, (np.array(rows),))
        model = train(data, SolverConfig(dim=D, seed=seed, outer_max=3, eta0=1e-3, rel_tol=0, deterministic=True))
        assert model.objective_trace[0] == pytest.approx(regularizer_value(L0, [np.eye(D)], 1.0, 1.0))
        assert all(b <= a for a, b in zip(model.objective_trace, model.objective_trace[1:]))
        assert np.linalg.norm(model.L @ model.Ms[0] @ model.L.T) < np.linalg.norm(L0 @ L0.T)

    def test_two_clusters_reach_zero_training_error(self):
        data = two_cluster_data()
        model = train(data, SolverConfig(dim=2, gamma=1e-3, beta=1e-3, outer_max=200, deterministic=True))
        assert triplet_error(model, data.triplets).mean == 0.0

    def test_frozen_joint_matches_pooled_trajectory(self):
        data = random_data(T=1)
        joint = train(data, SolverConfig(mode="joint", freeze_L=True, outer_max=20, rel_tol=0, deterministic=True))
        pooled = train(data, SolverConfig(mode="pooled", full_psd=True, outer_max=20, rel_tol=0, deterministic=True))
        np.testing.assert_allclose(joint.objective_trace, pooled.objective_trace, rtol=1e-10, atol=0)

    def test_independent_is_sum_of_single_views(self):
        data = random_data(T=3)
        cfg = SolverConfig(mode="independent", dim=3, outer_max=30, deterministic=True)
        model = train(data, cfg)
        singles = [train(TripletDataset(15, (S,)), cfg).objective_trace[-1] for S in data.triplets]
        assert model.objective_trace[-1] == pytest.approx(sum(singles), rel=1e-10)

    @pytest.mark.parametrize("mode", ["joint", "independent", "pooled"])
    def test_deterministic_runs_are_bit_identical(self, mode):
        data = random_data()
        cfg = SolverConfig(mode=mode, dim=3, outer_max=15, seed=9, deterministic=True)
        a, b = train(data, cfg), train(data, cfg)
        assert np.array_equal(a.L, b.L) and all(np.array_equal(x, y) for x, y in zip(a.Ms, b.Ms))
        assert a.objective_trace == b.objective_trace

    def test_metrics_stay_psd(self):
        model = train(random_data(), SolverConfig(dim=4, outer_max=20, eta0=0.05))
        for M in model.Ms:
            assert np.array_equal(M, M.T) and np.linalg.eigvalsh(M)[0] >= -1e-12

    def test_parameter_counts(self):
        data = random_data(T=3)
        H, D, T = 15, 4, 3
        sizes = {m: train(data, SolverConfig(mode=m, dim=D, outer_max=2)).num_parameters for m in
                 ("joint", "independent", "pooled")}
        assert sizes == {"joint": H * D + T * D * D, "independent": T * H * D, "pooled": H * D}

    def test_threads_match_sequential(self):
        data = random_data(T=4)
        base = SolverConfig(dim=3, outer_max=10, rel_tol=0)
        a = train(data, base.replace(deterministic=True))
        b = train(data, base.replace(threads=4))
        np.testing.assert_allclose(a.objective_trace, b.objective_trace, rtol=1e-9)

    def test_m_phase_monotone_for_small_step(self):
        data = random_data(T=1)
        eta = 0.1
        while eta > 1e-8:
            model = train(data, SolverConfig(freeze_L=True, eta0=eta, outer_max=15, rel_tol=0, deterministic=True))
            tr = model.objective_trace
            if all(b <= a + 1e-12 for a, b in zip(tr, tr[1:])):
                break
            eta /= 2
        assert eta > 1e-8
        assert model.objective_trace[-1] < model.objective_trace[0]

    def test_progress_records(self):
        out = stdio.StringIO()
        train(random_data(), SolverConfig(dim=2, outer_max=3, rel_tol=0), progress=out)
        lines = out.getvalue().splitlines()
        assert len(lines) == 3
        it, f, rel, ms = lines[0].split()
        assert int(it) == 1 and float(f) > 0 and int(ms) >= 0
        float(rel)

    def test_divergence_and_backoff(self):
        data = random_data()
        with pytest.raises(DivergedError) as exc:
            train(data, SolverConfig(dim=3, eta0=1e4, outer_max=5))
        assert exc.value.iteration >= 1
        model = train(data, SolverConfig(dim=3, eta0=1e4, eta_backoff=30, outer_max=5))
        assert np.isfinite(model.objective_trace[-1])

    def test_empty_and_oversized(self):
        with pytest.raises(DataError):
            train(TripletDataset(5, (np.zeros((0, 3)),)), SolverConfig(dim=2))
        with pytest.raises(DataError):
            train(random_data(), SolverConfig(dim=16))


class TestCrossValidation:
    def test_default_grid(self):
        assert DEFAULT_GRID == tuple(10.0**p for p in range(-5, 6))

    def test_single_candidate(self):
        res = cross_validate(random_data(count=30), SolverConfig(dim=2, outer_max=3), grid=[0.1])
        assert res.best == 0.1 and set(res.errors) == {0.1}

    def test_separable_instance_prefers_weak_regularization(self):
        data = two_cluster_data(count=200)
        res = cross_validate(data, SolverConfig(dim=2, outer_max=50, deterministic=True), grid=[1e-3, 1e5])
        assert res.best == 1e-3
        assert res.errors[1e-3] == 0.0 and res.errors[1e5] == 1.0

    def test_too_few_triplets(self):
        with pytest.raises(DataError):
            cross_validate(random_data(count=4), SolverConfig(dim=2), grid=[1.0])
