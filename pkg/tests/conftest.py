import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def low_rank_samples(rng, N, m, n, r, noise=0.0):
    A = rng.standard_normal((m, r))
    B = rng.standard_normal((n, r))
    X = np.stack([A @ rng.standard_normal((r, r)) @ B.T for _ in range(N)])
    return X + noise * rng.standard_normal(X.shape)


def random_orthonormal(rng, d, k):
    Q, _ = np.linalg.qr(rng.standard_normal((d, k)))
    return Q


def krsl_reference(X, k1, k2, lam, sigma, iters, init=None):
    """Independent plain KRSL MM loop (p=2), valid as a majorizer for lam <= 1."""

    def top(C, k):
        w, V = np.linalg.eigh(0.5 * (C + C.T))
        V = V[:, ::-1][:, :k]
        i = np.argmax(np.abs(V), axis=0)
        return V * np.sign(V[i, np.arange(k)])

    def res(mu, L, R):
        D = (X - mu) - L @ L.T @ (X - mu) @ R @ R.T
        return np.sqrt((D**2).sum(axis=(1, 2)))

    def omega(E):
        g = np.exp(-E**2 / (2 * sigma**2))
        return 0.5 * np.exp(lam * (1 - g)) * g

    mu = X.mean(0)
    Xc = X - mu
    if init is not None:
        L, R = init
    else:
        L = top(sum(x @ x.T for x in Xc), k1)
        R = top(sum(x.T @ L @ L.T @ x for x in Xc), k2)
        for _ in range(1000):
            Ln = top(sum(x @ R @ R.T @ x.T for x in Xc), k1)
            Rn = top(sum(x.T @ Ln @ Ln.T @ x for x in Xc), k2)
            done = max(np.linalg.norm(Ln @ Ln.T - L @ L.T), np.linalg.norm(Rn @ Rn.T - R @ R.T)) < 1e-5
            L, R = Ln, Rn
            if done:
                break
    out = [(L, R, mu)]
    for _ in range(iters):
        E = res(mu, L, R)
        a = 2 * omega(E)  # W / E
        mu = np.tensordot(a, X, axes=1) / a.sum()
        Xc = X - mu
        w = omega(res(mu, L, R))
        L = top(sum(wi * x @ R @ R.T @ x.T for wi, x in zip(w, Xc)), k1)
        w = omega(res(mu, L, R))
        R = top(sum(wi * x.T @ L @ L.T @ x for wi, x in zip(w, Xc)), k2)
        out.append((L, R, mu))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS.values():
            terminalreporter.write_line(line)
