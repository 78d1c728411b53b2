import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import krsl_reference, low_rank_samples, random_orthonormal
from robust2dsvd.decomp2d import (
    Decomposition2D,
    IterationState,
    MeanUpdate,
    RankConfig,
    SampleSet,
    SolverConfig,
    gkrsl_objective_at,
    gkrsl_svd2d_fit,
    kkt_residual,
    left_covariance,
    project,
    r1_svd2d_fit,
    reconstruct,
    residual,
    residuals,
    right_covariance,
    svd2d_fit,
    update_mean,
)
from robust2dsvd.evaluation import principal_angles
from robust2dsvd.loss import GkrslParams, gkrsl_objective


def orth_err(V):
    return np.linalg.norm(V.T @ V - np.eye(V.shape[1]))


# ------------------------------------------------------------ containers


def test_sample_set_validation():
    with pytest.raises(ValueError):
        SampleSet(np.zeros((3, 4)))
    with pytest.raises(ValueError):
        SampleSet(np.array([[[np.nan]]]))
    with pytest.raises(ValueError):
        SampleSet(np.zeros((3, 2, 2)), labels=[0, 1])
    s = SampleSet(np.arange(12.0).reshape(3, 2, 2), labels=[0, 1, 2])
    assert len(s) == 3 and s.shape == (2, 2)
    assert s.subset([2]).labels.tolist() == [2]


def test_rank_and_solver_config():
    with pytest.raises(ValueError):
        RankConfig(5, 1).check(4, 4)
    with pytest.raises(ValueError):
        SolverConfig(tolerance=0)
    assert SolverConfig(mean_update="frozen").mean_update is MeanUpdate.FROZEN


# -------------------------------------------------------------- residual


def test_residual_examples(rng):
    m, n = 5, 4
    L, R = random_orthonormal(rng, m, 2), random_orthonormal(rng, n, 3)
    mean = rng.standard_normal((m, n))
    A = rng.standard_normal((2, 3))
    assert residual(mean + L @ A @ R.T, mean, L, R) == pytest.approx(0, abs=1e-12)
    X = rng.standard_normal((m, n))
    assert residual(X, mean, np.eye(m), np.eye(n)) == pytest.approx(0, abs=1e-12)
    e = np.array([[1.0], [0.0]])
    assert residual(np.eye(2), np.zeros((2, 2)), e, e) == pytest.approx(1.0, rel=1e-14)


def test_residual_matches_trace_form(rng):
    X = rng.standard_normal((6, 5, 4))
    mean = rng.standard_normal((5, 4))
    L, R = random_orthonormal(rng, 5, 2), random_orthonormal(rng, 4, 2)
    for Xi, Ei in zip(X, residuals(X, mean, L, R)):
        Xc = Xi - mean
        tr = np.trace(Xc.T @ Xc - Xc.T @ L @ L.T @ Xc @ R @ R.T)
        assert Ei == pytest.approx(np.sqrt(max(tr, 0)), rel=1e-10)


def test_project_and_reconstruct(rng):
    m, n = 4, 3
    L, R = random_orthonormal(rng, m, 2), random_orthonormal(rng, n, 2)
    mean = rng.standard_normal((m, n))
    model = Decomposition2D(L=L, R=R, mean=mean)
    assert np.allclose(project(model, mean), 0)
    A = rng.standard_normal((2, 2))
    assert np.allclose(project(model, mean + L @ A @ R.T), A, atol=1e-12)
    X = rng.standard_normal((m, n))
    oracle = np.array([[sum(L[a, i] * (X - mean)[a, b] * R[b, j] for a in range(m) for b in range(n))
                        for j in range(2)] for i in range(2)])
    assert np.allclose(project(model, X), oracle, atol=1e-12)
    assert np.allclose(reconstruct(model, mean), mean)
    assert residual(X, mean, L, R) == pytest.approx(np.linalg.norm(X - reconstruct(model, X)), abs=1e-10)
    full = Decomposition2D(L=np.eye(m), R=np.eye(n), mean=mean)
    assert np.allclose(reconstruct(full, X), X, atol=1e-12)
    with pytest.raises(ValueError):
        project(model, np.zeros((3, 3)))


def test_covariances_match_loops(rng):
    Xc = rng.standard_normal((5, 4, 3))
    R = random_orthonormal(rng, 3, 2)
    L = random_orthonormal(rng, 4, 2)
    w = rng.uniform(0, 2, 5)
    F = sum(wi * X @ R @ R.T @ X.T for wi, X in zip(w, Xc))
    G = sum(wi * X.T @ L @ L.T @ X for wi, X in zip(w, Xc))
    assert np.allclose(left_covariance(Xc, R, w), F, atol=1e-12)
    assert np.allclose(right_covariance(Xc, L, w), G, atol=1e-12)
    # order of accumulation does not matter
    perm = rng.permutation(5)
    assert np.allclose(left_covariance(Xc[perm], R, w[perm]), F, atol=1e-12)


# --------------------------------------------------------------- 2DSVD


def test_svd2d_realizable_and_full_rank(rng):
    X = 3.0 + low_rank_samples(rng, 12, 6, 5, 2)
    model = svd2d_fit(X, RankConfig(2, 2))
    assert np.max(residuals(X, model.mean, model.L, model.R)) < 1e-9
    Y = rng.standard_normal((7, 4, 3))
    full = svd2d_fit(Y, (4, 3))
    assert np.max(residuals(Y, full.mean, full.L, full.R)) < 1e-12
    assert orth_err(model.L) < 1e-12 and orth_err(model.R) < 1e-12
    assert np.allclose(model.cores, model.transform(X))


def test_svd2d_matches_restart_oracle():
    rng = np.random.default_rng(7)
    X = rng.standard_normal((3, 4, 3))
    Xc = X - X.mean(0)
    model = svd2d_fit(X, (2, 2), SolverConfig(tolerance=1e-12, max_iterations=1000))
    got = float(np.sum(residuals(X, model.mean, model.L, model.R) ** 2))

    def top(C, k):
        w, V = np.linalg.eigh(C)
        return V[:, ::-1][:, :k]

    best = np.inf
    for _ in range(50):
        R = random_orthonormal(rng, 3, 2)
        for _ in range(200):
            L = top(sum(x @ R @ R.T @ x.T for x in Xc), 2)
            R = top(sum(x.T @ L @ L.T @ x for x in Xc), 2)
        best = min(best, float(np.sum(residuals(X, X.mean(0), L, R) ** 2)))
    assert got == pytest.approx(best, abs=1e-6)


def test_svd2d_needs_two_samples():
    with pytest.raises(ValueError):
        svd2d_fit(np.zeros((1, 3, 3)), (1, 1))
    with pytest.raises(ValueError):
        svd2d_fit(np.zeros((4, 3, 3)), (4, 1))


# ------------------------------------------------------------------ R1


def test_r1_clean_equals_svd2d(rng):
    X = low_rank_samples(rng, 15, 6, 5, 2)
    a, b = svd2d_fit(X, (2, 2)), r1_svd2d_fit(X, (2, 2))
    assert np.max(principal_angles(a.L, b.L)) < 1e-6
    assert np.max(principal_angles(a.R, b.R)) < 1e-6


def test_r1_outlier_gets_smallest_weight(rng):
    X = low_rank_samples(rng, 21, 6, 5, 2, noise=0.05)
    X[4] *= 50
    model = r1_svd2d_fit(X, (2, 2))
    assert np.argmin(model.state.weights) == 4
    t = np.array(model.objective_trace)
    assert np.all(np.diff(t) <= 1e-10 * np.maximum(1, np.abs(t[1:])))


# --------------------------------------------------------------- mean


def _state(W, E):
    W, E = np.asarray(W, float), np.asarray(E, float)
    return IterationState(E, W, W / (2 * E))


def test_update_mean_examples(rng):
    X = rng.standard_normal((3, 2, 2))
    L, R = np.eye(2)[:, :1], np.eye(2)[:, :1]
    mu = update_mean(X, _state([1, 1, 1], [2, 2, 2]), L, R, "normalized_weighted_mean")
    assert np.allclose(mu, X.mean(0))
    mu = update_mean(X, _state([1e6, 1, 1], [1, 1, 1]), L, R, MeanUpdate.NORMALIZED)
    assert np.max(np.abs(mu - X[0])) < 1e-5
    W, E = np.array([1.0, 2.0, 3.0]), np.array([0.5, 1.0, 2.0])
    a = W / E
    expected = (a[0] * X[0] + a[1] * X[1] + a[2] * X[2]) / a.sum()
    assert np.allclose(update_mean(X, _state(W, E), L, R, "normalized_weighted_mean"), expected)
    lit = (0.5 * W / E)[:, None, None] * X
    assert np.allclose(update_mean(X, _state(W, E), L, R, "literal"), lit.sum(0) / W.sum())
    assert np.allclose(update_mean(X, _state(W, E), L, R, "frozen"), X.mean(0))
    st_ = _state([0.0, 0.0, 0.0], [1, 1, 1])
    assert np.allclose(update_mean(X, st_, L, R, "normalized_weighted_mean"), X.mean(0))
    assert st_.degenerate


# --------------------------------------------------------------- GKRSL


@given(seed=st.integers(0, 10_000), mode=st.sampled_from(["normalized_weighted_mean", "frozen"]))
def test_gkrsl_descent_and_orthonormality(seed, mode):
    rng = np.random.default_rng(seed)
    N, m, n = rng.integers(4, 12), rng.integers(2, 7), rng.integers(2, 6)
    X = rng.standard_normal((N, m, n))
    params = GkrslParams(rng.uniform(0.5, 8), rng.uniform(0.5, 8), None)
    k1, k2 = rng.integers(1, m + 1), rng.integers(1, n + 1)
    model = gkrsl_svd2d_fit(X, (k1, k2), params, SolverConfig(mean_update=mode), record=True)
    t = np.array(model.objective_trace)
    assert np.all(np.diff(t) <= 1e-10)
    for it in model.history:
        assert orth_err(it.L) < 1e-8 and orth_err(it.R) < 1e-8
        assert it.objective == pytest.approx(gkrsl_objective(residuals(X, it.mean, it.L, it.R), model.params),
                                             rel=1e-12)


def test_gkrsl_kkt_at_convergence(rng):
    X = low_rank_samples(rng, 15, 6, 5, 2, noise=0.3)
    model = gkrsl_svd2d_fit(X, (2, 2), GkrslParams(8, 8, None), SolverConfig(tolerance=1e-9, max_iterations=2000))
    assert model.converged
    assert kkt_residual(X, model, "left") < 1e-6
    assert kkt_residual(X, model, "right") < 1e-6
    assert model.objective_trace[-1] == pytest.approx(gkrsl_objective_at(X, model), rel=1e-12)


def test_gkrsl_large_sigma_recovers_svd2d(rng):
    X = low_rank_samples(rng, 20, 7, 6, 3, noise=0.1)
    base = svd2d_fit(X, (2, 2))
    sigma = 1e6 * residuals(X, base.mean, base.L, base.R).max()
    model = gkrsl_svd2d_fit(X, (2, 2), GkrslParams(2, 2, sigma))
    assert np.max(principal_angles(base.L, model.L)) < 1e-3
    assert np.max(principal_angles(base.R, model.R)) < 1e-3


def test_gkrsl_suppresses_scaled_outliers(rng):
    X = low_rank_samples(rng, 40, 8, 6, 2, noise=0.05)
    X /= np.linalg.norm(X, axis=(1, 2))[:, None, None]
    out = [3, 17]
    X[out] *= 50
    model = gkrsl_svd2d_fit(X, (2, 2), GkrslParams(8, 8, None))
    w = model.state.eigen_weights
    inl = np.setdiff1d(np.arange(40), out)
    assert w[out].mean() < w[inl].mean()


def test_gkrsl_zero_residual_converges_immediately(rng):
    X = 1.0 + low_rank_samples(rng, 10, 5, 4, 1)
    model = gkrsl_svd2d_fit(X, (1, 1), GkrslParams(2, 2, 1.0))
    assert model.converged and model.n_iter == 0
    full = gkrsl_svd2d_fit(rng.standard_normal((6, 3, 3)), (3, 3), GkrslParams(2, 2, None))
    assert full.converged and full.n_iter == 0


def test_gkrsl_literal_mode_runs(rng):
    X = rng.standard_normal((10, 5, 4))
    model = gkrsl_svd2d_fit(X, (2, 2), GkrslParams(3, 3, None), SolverConfig(mean_update="literal"))
    assert np.all(np.isfinite(model.mean))
    assert orth_err(model.L) < 1e-8


def test_gkrsl_sigma_priority(rng):
    X = rng.standard_normal((10, 5, 4))
    assert gkrsl_svd2d_fit(X, (2, 2), GkrslParams(2, 2, 0.7)).sigma == 0.7
    assert gkrsl_svd2d_fit(X, (2, 2), GkrslParams(2, 2, 0.7), SolverConfig(sigma=0.3)).sigma == 0.3


def test_p2_matches_krsl_reference():
    rng = np.random.default_rng(3)
    for _ in range(5):
        X = rng.standard_normal((12, 6, 5))
        base = svd2d_fit(X, (2, 3), SolverConfig(tolerance=1e-13, max_iterations=10000))
        scale = np.median(residuals(X, base.mean, base.L, base.R))
        # bandwidth on the residual scale; a tiny sigma underflows most weights
        # and leaves near-degenerate eigenproblems
        lam, sigma = rng.uniform(0.2, 1.0), scale * rng.uniform(0.5, 3.0)
        model = gkrsl_svd2d_fit(X, (2, 3), GkrslParams(lam, 2.0, sigma), SolverConfig(max_iterations=15),
                                init=base, record=True)
        ref = krsl_reference(X, 2, 3, lam, sigma, model.n_iter, init=(base.L, base.R))
        assert model.state.gradient_steps == 0
        for it, (L, R, mu) in zip(model.history, ref):
            assert np.linalg.norm(it.L @ it.L.T - L @ L.T) < 1e-10
            assert np.linalg.norm(it.R @ it.R.T - R @ R.T) < 1e-10
            assert np.max(np.abs(it.mean - mu)) < 1e-10


def test_rotational_invariance(rng):
    X = low_rank_samples(rng, 15, 6, 5, 2, noise=0.2)
    params = GkrslParams(8, 8, None)
    cfg = SolverConfig(tolerance=1e-10, max_iterations=2000)
    base = gkrsl_svd2d_fit(X, (2, 2), params, cfg)
    QL, QR = random_orthonormal(rng, 6, 6), random_orthonormal(rng, 5, 5)
    rot = gkrsl_svd2d_fit(QL @ X @ QR.T, (2, 2), params, cfg)
    assert rot.sigma == pytest.approx(base.sigma, rel=1e-10)
    assert rot.objective_trace[-1] == pytest.approx(base.objective_trace[-1], abs=1e-8)
    assert np.max(principal_angles(rot.L, QL @ base.L)) < 1e-6
    assert np.max(principal_angles(rot.R, QR @ base.R)) < 1e-6
