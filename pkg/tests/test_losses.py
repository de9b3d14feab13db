import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from catpose.errors import InvalidInputError
from catpose.losses import (
    LossWeights,
    check_correspondence_matrix,
    loss_cd,
    loss_corr,
    loss_def,
    loss_entropy,
    nocs_coordinates,
    reconstruct_model,
    smooth_l1,
    total_loss,
)

from conftest import brute_chamfer


def random_stochastic(rng, nv, nc, sparsity=0.0):
    A = rng.random((nv, nc)) ** 3
    A[rng.random((nv, nc)) < sparsity] = 0.0
    A[np.arange(nv), rng.integers(0, nc, nv)] += 1e-3
    return A / A.sum(axis=1, keepdims=True)


def test_reconstruct_model(rng):
    Mc = rng.normal(size=(10, 3))
    np.testing.assert_array_equal(reconstruct_model(Mc, np.zeros_like(Mc)), Mc)
    np.testing.assert_array_equal(reconstruct_model([[0.0, 0, 0]], [[0.1, 0, 0]]), [[0.1, 0, 0]])
    D = rng.normal(size=(10, 3))
    M = reconstruct_model(Mc, D)
    np.testing.assert_allclose(M - Mc, D, atol=1e-15)
    with pytest.raises(InvalidInputError):
        reconstruct_model(Mc, D[:5])


def test_nocs_coordinates_examples(rng):
    M = rng.normal(size=(4, 3))
    perm = [2, 0, 3, 1]
    np.testing.assert_array_equal(nocs_coordinates(np.eye(4)[perm], M), M[perm])
    A = np.array([[0.5, 0.5, 0.0, 0.0]])
    np.testing.assert_allclose(nocs_coordinates(A, M), [(M[0] + M[1]) / 2], atol=1e-15)
    with pytest.raises(InvalidInputError):
        nocs_coordinates(np.eye(3), M)


def test_nocs_coordinates_in_bounding_box(rng):
    for _ in range(20):
        M = rng.normal(size=(30, 3))
        P = nocs_coordinates(random_stochastic(rng, 50, 30), M)
        assert np.all(P <= M.max(axis=0) + 1e-12)
        assert np.all(P >= M.min(axis=0) - 1e-12)


def test_correspondence_matrix_validation():
    with pytest.raises(InvalidInputError, match="row 1"):
        check_correspondence_matrix([[1.0, 0.0], [0.6, 0.6]])
    with pytest.raises(InvalidInputError, match="negative"):
        check_correspondence_matrix([[1.5, -0.5]])
    check_correspondence_matrix([[1.0 + 5e-7, 0.0]])


def test_loss_cd(rng):
    X = rng.normal(size=(20, 3))
    assert loss_cd(X, X) == 0.0
    assert loss_cd([[0, 0, 0]], [[0, 0.2, 0]]) == pytest.approx(2 * 0.04, abs=1e-15)
    Y = rng.normal(size=(33, 3))
    assert abs(loss_cd(X, Y) - brute_chamfer(X, Y)) <= 1e-12
    assert loss_cd(X[::-1], Y[rng.permutation(33)]) == pytest.approx(loss_cd(X, Y), abs=1e-12)


def test_loss_corr_examples():
    P = np.array([[0.1, 0.2, 0.3]])
    assert loss_corr(P, P) == 0.0
    assert loss_corr([[0.1, 0, 0]], [[0, 0, 0]]) == pytest.approx(0.05, abs=1e-15)
    assert loss_corr([[0.2, 0, 0]], [[0, 0, 0]]) == pytest.approx(0.15, abs=1e-15)
    # summed over coordinates, averaged over points
    assert loss_corr([[0.2, 0.2, 0], [0, 0, 0]], np.zeros((2, 3))) == pytest.approx(0.15, abs=1e-15)
    with pytest.raises(InvalidInputError):
        loss_corr(np.zeros((2, 3)), np.zeros((3, 3)))


def test_smooth_l1_knee_is_c1():
    h = 1e-7
    left, right = smooth_l1(0.1 - h), smooth_l1(0.1 + h)
    assert smooth_l1(0.1) == pytest.approx(0.05, abs=1e-15)
    assert left == pytest.approx(0.05, abs=1e-6) and right == pytest.approx(0.05, abs=1e-6)
    slope_left = (smooth_l1(0.1) - smooth_l1(0.1 - h)) / h
    slope_right = (smooth_l1(0.1 + h) - smooth_l1(0.1)) / h
    assert slope_left == pytest.approx(1.0, abs=1e-5)
    assert slope_right == pytest.approx(1.0, abs=1e-5)


def test_loss_entropy_examples():
    assert loss_entropy(np.eye(5)) == 0.0
    assert loss_entropy(np.full((3, 7), 1 / 7)) == pytest.approx(math.log(7), abs=1e-12)
    assert loss_entropy([[0.5, 0.5, 0.0, 0.0]]) == pytest.approx(math.log(2), abs=1e-15)
    with pytest.raises(InvalidInputError):
        loss_entropy([[1.5, -0.5]])


def test_loss_entropy_bounds(rng):
    for _ in range(200):
        nc = int(rng.integers(1, 40))
        A = random_stochastic(rng, int(rng.integers(1, 20)), nc, sparsity=rng.random())
        assert 0.0 <= loss_entropy(A) <= math.log(nc) + 1e-12


def test_loss_def():
    assert loss_def(np.zeros((4, 3))) == 0.0
    assert loss_def([[3.0, 4.0, 0.0], [0.0, 0.0, 0.0]]) == pytest.approx(2.5, abs=1e-15)


@settings(max_examples=50)
@given(st.floats(0, 100), st.integers(0, 2**32 - 1))
def test_loss_def_homogeneous(k, seed):
    D = np.random.default_rng(seed).normal(size=(12, 3))
    assert loss_def(k * D) == pytest.approx(k * loss_def(D), rel=1e-12, abs=1e-12)


def test_default_weights():
    w = LossWeights()
    assert (w.lambda1, w.lambda2, w.lambda3, w.lambda4) == (5.0, 1.0, 1e-4, 0.01)
    assert w.lambda1 + w.lambda2 + w.lambda3 + w.lambda4 == pytest.approx(6.0101, abs=1e-12)
    with pytest.raises(InvalidInputError):
        LossWeights(lambda3=-1.0)


def _random_inputs(rng, nv=40, nc=30):
    Mc = rng.uniform(-0.5, 0.5, (nc, 3))
    D = 0.05 * rng.normal(size=(nc, 3))
    M = Mc + D
    M_gt = rng.uniform(-0.5, 0.5, (nc + 5, 3))
    A = random_stochastic(rng, nv, nc)
    P = A @ M
    P_gt = P + 0.1 * rng.normal(size=P.shape)
    return M, M_gt, P, P_gt, A, D


def test_total_loss_perfect_prediction(rng):
    M = rng.uniform(-0.5, 0.5, (20, 3))
    A = np.eye(20)
    assert total_loss(M, M, A @ M, A @ M, A, np.zeros((20, 3))) == 0.0


def test_total_loss_composition(rng):
    for _ in range(20):
        M, M_gt, P, P_gt, A, D = _random_inputs(rng)
        w = LossWeights(*rng.uniform(0, 5, 4))
        expected = (w.lambda1 * loss_cd(M, M_gt) + w.lambda2 * loss_corr(P, P_gt)
                    + w.lambda3 * loss_entropy(A) + w.lambda4 * loss_def(D))
        assert total_loss(M, M_gt, P, P_gt, A, D, w) == pytest.approx(expected, abs=1e-12)


def test_total_loss_linear_in_weights(rng):
    M, M_gt, P, P_gt, A, D = _random_inputs(rng)
    base = LossWeights(1.0, 2.0, 3.0, 4.0)
    doubled = LossWeights(2.0, 2.0, 3.0, 4.0)
    delta = total_loss(M, M_gt, P, P_gt, A, D, doubled) - total_loss(M, M_gt, P, P_gt, A, D, base)
    assert delta == pytest.approx(loss_cd(M, M_gt), rel=1e-12)
