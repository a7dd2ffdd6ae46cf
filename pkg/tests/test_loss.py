import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_psd
from jointmetric.loss import (
    TripletTerm,
    as_triplet_array,
    data_loss,
    grad_L,
    grad_M,
    hinge,
    triplet_loss,
)
from jointmetric.model import regularizer_value


def full_objective(L, Ms, trips, X, beta, gamma):
    return data_loss(L, Ms, trips, X) + regularizer_value(L, Ms, beta, gamma)


def hinge_args(L, Ms, trips, X):
    out = []
    for M, S in zip(Ms, trips):
        Y = L if X is None else X @ L
        for i, j, k in S:
            dij = (Y[i] - Y[j]) @ M @ (Y[i] - Y[j])
            dik = (Y[i] - Y[k]) @ M @ (Y[i] - Y[k])
            out.append(1 + dij - dik)
    return np.array(out)


def fd_instance(seed, featured, N=20, D=3, T=2, n=30, tries=200):
    """Random instance with every hinge argument at least 1e-3 from zero."""
    rng = np.random.default_rng(seed)
    H = 8 if featured else N
    X = rng.standard_normal((N, H)) if featured else None
    for _ in range(tries):
        L = rng.standard_normal((H, D)) / np.sqrt(H if featured else D)
        Ms = [random_psd(rng, D) / D for _ in range(T)]
        trips = [np.array([rng.choice(N, 3, replace=False) for _ in range(n)]) for _ in range(T)]
        if np.min(np.abs(hinge_args(L, Ms, trips, X))) > 1e-3:
            return L, Ms, trips, X
    raise RuntimeError("no kink-free instance found")


def fd_grad(f, A, h=1e-6):
    G = np.zeros_like(A)
    for idx in np.ndindex(A.shape):
        E = np.zeros_like(A)
        E[idx] = h
        G[idx] = (f(A + E) - f(A - E)) / (2 * h)
    return G


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


class TestHinge:
    @pytest.mark.parametrize("dij,dik,expect", [(0.5, 2.0, 0.0), (1.0, 1.0, 1.0), (2.0, 0.5, 2.5)])
    def test_values(self, dij, dik, expect):
        assert hinge(dij, dik) == expect

    @given(st.floats(0, 10), st.floats(0, 10), st.floats(0, 5))
    def test_monotone_in_dik(self, dij, dik, delta):
        assert hinge(dij, dik + delta) <= hinge(dij, dik)


class TestTripletTerm:
    def test_repeated_index_rejected(self):
        with pytest.raises(ValueError):
            TripletTerm(1, 1, 2)

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            as_triplet_array([TripletTerm(0, 1, 5)], num_objects=5)


class TestTripletLoss:
    def test_equilateral(self):
        X = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3) / 2]])
        assert triplet_loss(np.eye(2), np.eye(2), TripletTerm(0, 1, 2), X) == pytest.approx(1.0, abs=1e-15)

    def test_duplicate_j(self):
        X = np.array([[0.0, 0.0], [0.0, 0.0], [0.6, 0.0]])
        assert triplet_loss(np.eye(2), np.eye(2), TripletTerm(0, 1, 2), X) == pytest.approx(1 - 0.36)

    def test_dense_kernel_oracle(self, rng):
        X = rng.standard_normal((5, 4))
        L = rng.standard_normal((4, 2))
        M = random_psd(rng, 2)
        K = L @ M @ L.T
        t = TripletTerm(3, 0, 4)
        dij = (X[3] - X[0]) @ K @ (X[3] - X[0])
        dik = (X[3] - X[4]) @ K @ (X[3] - X[4])
        assert triplet_loss(L, M, t, X) == pytest.approx(max(1 + dij - dik, 0), abs=1e-12)

    def test_coordinate_objects(self, rng):
        L = rng.standard_normal((5, 2))
        M = random_psd(rng, 2)
        t = TripletTerm(0, 1, 2)
        assert triplet_loss(L, M, t) == pytest.approx(triplet_loss(L, M, t, np.eye(5)), rel=1e-14)


class TestGradients:
    def test_no_triplets_leaves_ridge(self, rng):
        L = rng.standard_normal((6, 3))
        empty = [np.zeros((0, 3), dtype=np.int64)]
        np.testing.assert_array_equal(grad_L(L, [np.eye(3)], empty, beta=0.5), L)
        np.testing.assert_array_equal(grad_M(L, np.eye(3), empty[0], gamma=0.5), 0.5 * np.eye(3))

    def test_zero_L_is_stationary_without_ridge(self):
        L = np.zeros((4, 2))
        trips = [np.array([[0, 1, 2], [1, 2, 3]])]
        assert not np.any(grad_L(L, [np.eye(2)], trips, beta=1.0))

    def test_cancelling_triplet(self):
        # y_j and y_k mirror each other about y_i, so both difference terms cancel
        L = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0]])
        np.testing.assert_array_equal(grad_M(L, np.eye(2), np.array([[0, 1, 2]]), gamma=0.3), 0.3 * np.eye(2))

    @pytest.mark.parametrize("featured", [False, True])
    def test_finite_differences(self, featured):
        L, Ms, trips, X = fd_instance(7, featured)
        beta, gamma = 0.3, 0.7
        GL = grad_L(L, Ms, trips, X, beta)
        fd = fd_grad(lambda A: full_objective(A, Ms, trips, X, beta, gamma), L)
        assert rel_err(GL, fd) < 1e-5
        for t in range(len(Ms)):

            def f(A, t=t):
                Mt = list(Ms)
                Mt[t] = A
                return full_objective(L, Mt, trips, X, beta, gamma)

            GM = grad_M(L, Ms[t], trips[t], X, gamma)
            assert np.array_equal(GM, GM.T)
            assert rel_err(GM, fd_grad(f, Ms[t])) < 1e-5

    def test_rotation_invariance(self, rng):
        L, Ms, trips, X = fd_instance(3, False)
        Q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        a = data_loss(L, Ms, trips)
        b = data_loss(L @ Q, [Q.T @ M @ Q for M in Ms], trips)
        assert a == pytest.approx(b, rel=1e-10)
