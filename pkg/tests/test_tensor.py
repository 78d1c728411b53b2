import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_orthonormal
from robust2dsvd.decomp2d import SolverConfig, gkrsl_svd2d_fit, residual, svd2d_fit
from robust2dsvd.loss import GkrslParams
from robust2dsvd.tensor import (
    as_tensor,
    fold,
    ho_gkrsl_fit,
    ho_residual,
    ho_svd_fit,
    multi_mode_product,
    n_mode_product,
    unfold,
)


def test_as_tensor():
    T = as_tensor(range(12), shape=(2, 3, 2))
    assert T[1, 2, 1] == 11.0
    with pytest.raises(ValueError):
        as_tensor(range(5), shape=(2, 3))
    with pytest.raises(ValueError):
        as_tensor([np.inf])


def test_unfold_examples():
    M = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(unfold(M, 0), M)
    assert np.array_equal(unfold(M, 1), M.T)
    T = np.arange(1.0, 13.0).reshape(2, 3, 2)
    oracle = np.zeros((2, 6))
    for i, j, k in itertools.product(range(2), range(3), range(2)):
        oracle[i, j * 2 + k] = T[i, j, k]
    assert np.array_equal(unfold(T, 0), oracle)
    oracle1 = np.zeros((3, 4))
    for i, j, k in itertools.product(range(2), range(3), range(2)):
        oracle1[j, i * 2 + k] = T[i, j, k]
    assert np.array_equal(unfold(T, 1), oracle1)
    with pytest.raises(ValueError):
        unfold(T, 3)


@given(shape=st.lists(st.integers(1, 4), min_size=1, max_size=4), data=st.data())
def test_fold_inverts_unfold(shape, data):
    T = np.random.default_rng(0).standard_normal(shape)
    mode = data.draw(st.integers(0, len(shape) - 1))
    assert np.array_equal(fold(unfold(T, mode), mode, T.shape), T)


def test_n_mode_product_examples(rng):
    T = rng.standard_normal((2, 3, 2))
    assert np.allclose(n_mode_product(T, np.eye(3), 1), T)
    X = rng.standard_normal((3, 4))
    A = rng.standard_normal((5, 3))
    assert np.allclose(n_mode_product(X, A, 0), A @ X)
    B = rng.standard_normal((4, 3))
    got = n_mode_product(T, B, 1)
    oracle = np.zeros((2, 4, 2))
    for i, a, k in itertools.product(range(2), range(4), range(2)):
        oracle[i, a, k] = sum(B[a, j] * T[i, j, k] for j in range(3))
    assert np.max(np.abs(got - oracle)) < 1e-12
    # unfolding identity Y_(n) = A X_(n)
    assert np.allclose(unfold(got, 1), B @ unfold(T, 1))
    with pytest.raises(ValueError):
        n_mode_product(T, np.eye(4), 0)


def test_mode_products_commute(rng):
    T = rng.standard_normal((3, 4, 5))
    A, B = rng.standard_normal((2, 3)), rng.standard_normal((6, 4))
    left = n_mode_product(n_mode_product(T, A, 0), B, 1)
    right = n_mode_product(n_mode_product(T, B, 1), A, 0)
    assert np.max(np.abs(left - right)) < 1e-12
    assert np.allclose(multi_mode_product(T, [A, B, None]), left)


def test_ho_residual_examples(rng):
    dims = (3, 4, 2)
    V = [random_orthonormal(rng, d, k) for d, k in zip(dims, (2, 2, 1))]
    mean = rng.standard_normal(dims)
    core = rng.standard_normal((2, 2, 1))
    sample = mean + multi_mode_product(core, V)
    assert ho_residual(sample, mean, V) == pytest.approx(0, abs=1e-12)
    full = [np.eye(d) for d in dims]
    assert ho_residual(rng.standard_normal(dims), mean, full) == pytest.approx(0, abs=1e-12)
    X, mu = rng.standard_normal((5, 4)), rng.standard_normal((5, 4))
    L, R = random_orthonormal(rng, 5, 2), random_orthonormal(rng, 4, 3)
    assert ho_residual(X, mu, [L, R]) == residual(X, mu, L, R)


def test_order2_svd_equivalence(rng):
    X = rng.standard_normal((12, 6, 5))
    a, b = svd2d_fit(X, (2, 3)), ho_svd_fit(X, (2, 3))
    assert np.linalg.norm(a.L @ a.L.T - b.factors[0] @ b.factors[0].T) < 1e-10
    assert np.linalg.norm(a.R @ a.R.T - b.factors[1] @ b.factors[1].T) < 1e-10


def test_order2_gkrsl_equivalence():
    rng = np.random.default_rng(11)
    for _ in range(10):
        m, n = rng.integers(3, 8, size=2)
        N = int(rng.integers(2 * max(m, n), 3 * max(m, n)))
        k1, k2 = int(rng.integers(1, m)), int(rng.integers(1, n))
        X = rng.standard_normal((N, m, n))
        params = GkrslParams(rng.uniform(0.5, 8), rng.uniform(0.5, 8), None)
        a = gkrsl_svd2d_fit(X, (k1, k2), params, record=True)
        b = ho_gkrsl_fit(X, (k1, k2), params, record=True)
        assert a.n_iter == b.n_iter and len(a.history) == len(b.history)
        for x, y in zip(a.history, b.history):
            assert np.linalg.norm(x.L @ x.L.T - y.factors[0] @ y.factors[0].T) < 1e-10
            assert np.linalg.norm(x.R @ x.R.T - y.factors[1] @ y.factors[1].T) < 1e-10
            assert np.max(np.abs(x.mean - y.mean)) < 1e-10
            assert x.objective == pytest.approx(y.objective, abs=1e-10)


def test_full_rank_converges_immediately(rng):
    X = rng.standard_normal((5, 3, 2, 2))
    model = ho_gkrsl_fit(X, (3, 2, 2), GkrslParams(2, 2, None))
    assert model.converged and model.n_iter <= 1
    assert np.allclose(model.reconstruct(X), X, atol=1e-10)


@given(seed=st.integers(0, 10_000))
def test_order3_descent_and_orthonormality(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((6, 3, 3, 3))
    params = GkrslParams(rng.uniform(0.5, 8), rng.uniform(0.5, 8), None)
    model = ho_gkrsl_fit(X, (2, 2, 2), params, record=True)
    t = np.array(model.objective_trace)
    assert np.all(np.diff(t) <= 1e-10)
    for it in model.history:
        for V in it.factors:
            assert np.linalg.norm(V.T @ V - np.eye(V.shape[1])) < 1e-8


def test_tensor_model_project_reconstruct(rng):
    X = rng.standard_normal((8, 4, 3, 3))
    model = ho_gkrsl_fit(X, (2, 2, 2), GkrslParams(2, 2, None), SolverConfig(max_iterations=5))
    cores = model.project(X)
    assert cores.shape == (8, 2, 2, 2)
    assert np.allclose(model.project(X[0]), cores[0])
    assert np.allclose(model.cores, cores)
    rec = model.reconstruct(X[1])
    assert ho_residual(X[1], model.mean, model.factors) == pytest.approx(np.linalg.norm(X[1] - rec), abs=1e-10)


def test_bad_ranks(rng):
    X = rng.standard_normal((4, 3, 3, 3))
    with pytest.raises(ValueError):
        ho_gkrsl_fit(X, (2, 2))
    with pytest.raises(ValueError):
        ho_svd_fit(X, (4, 2, 2))
