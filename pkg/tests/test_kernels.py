"""The numba and numpy backends must agree on every kernel."""

import numpy as np
import pytest

from conftest import random_psd
from jointmetric import kernels

pytestmark = pytest.mark.skipif(not kernels.HAVE_NUMBA, reason="numba not installed")


def instance(rng, n=30, d=4, m=200):
    Y = rng.standard_normal((n, d))
    M = random_psd(rng, d) / d
    trip = np.array([rng.choice(n, 3, replace=False) for _ in range(m)], dtype=np.int64)
    return Y, M, trip


def both(fn, *args):
    with kernels.use_backend("numpy"):
        a = fn(*args)
    with kernels.use_backend("numba"):
        b = fn(*args)
    return a, b


def test_backend_flag_is_known():
    assert kernels.backend() in ("numba", "numpy")
    with pytest.raises(ValueError):
        kernels.set_backend("fortran")


@pytest.mark.parametrize("name", ["hinge_grad_M", "hinge_grad_Y"])
def test_gradients_agree(rng, name):
    Y, M, trip = instance(rng)
    (la, Ga), (lb, Gb) = both(getattr(kernels, name), Y, M, trip)
    assert la == pytest.approx(lb, rel=1e-12)
    np.testing.assert_allclose(Ga, Gb, rtol=1e-11, atol=1e-11)


def test_loss_and_gaps_agree(rng):
    Y, M, trip = instance(rng)
    a, b = both(kernels.hinge_loss, Y, M, trip)
    assert a == pytest.approx(b, rel=1e-12)
    ga, gb = both(kernels.triplet_gaps, Y, M, trip)
    np.testing.assert_allclose(ga, gb, rtol=1e-12, atol=1e-12)


def test_coordinate_kernels_match_dense(rng):
    n = 12
    A = rng.standard_normal((n, n))
    M = A @ A.T / n
    trip = np.array([rng.choice(n, 3, replace=False) for _ in range(80)], dtype=np.int64)
    for backend in ("numpy", "numba"):
        with kernels.use_backend(backend):
            l_c, G_c = kernels.coord_hinge_grad_M(M, trip)
            l_d, G_d = kernels.hinge_grad_M(np.eye(n), M, trip)
            assert kernels.coord_hinge_loss(M, trip) == pytest.approx(l_d, rel=1e-12)
        assert l_c == pytest.approx(l_d, rel=1e-12)
        np.testing.assert_allclose(G_c, G_d, atol=1e-12)


def test_grad_M_exactly_symmetric(rng):
    Y, M, trip = instance(rng)
    for backend in ("numpy", "numba"):
        with kernels.use_backend(backend):
            _, G = kernels.hinge_grad_M(Y, M, trip)
        assert np.array_equal(G, G.T)


def test_parallel_reduction_matches_sequential(rng):
    Y, M, trip = instance(rng, n=200, d=5, m=kernels.PARALLEL_MIN_TRIPLETS + 500)
    kernels.set_threads(4)
    try:
        with kernels.use_backend("numba"):
            l_seq, G_seq = kernels.hinge_grad_Y(Y, M, trip, deterministic=True)
            l_par, G_par = kernels.hinge_grad_Y(Y, M, trip, deterministic=False)
            _, H_seq = kernels.hinge_grad_M(Y, M, trip, deterministic=True)
            _, H_par = kernels.hinge_grad_M(Y, M, trip, deterministic=False)
    finally:
        kernels.set_threads(1)
    assert l_seq == pytest.approx(l_par, rel=1e-10)
    np.testing.assert_allclose(G_seq, G_par, rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(H_seq, H_par, rtol=1e-9, atol=1e-9)
    assert np.array_equal(H_par, H_par.T)


def test_empty_triplets(rng):
    Y, M, _ = instance(rng)
    empty = np.zeros((0, 3), dtype=np.int64)
    for backend in ("numpy", "numba"):
        with kernels.use_backend(backend):
            assert kernels.hinge_loss(Y, M, empty) == 0.0
            assert not np.any(kernels.hinge_grad_M(Y, M, empty)[1])
            assert not np.any(kernels.hinge_grad_Y(Y, M, empty)[1])
