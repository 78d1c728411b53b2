"""Two-sided matrix decompositions: 2DSVD, R1-2DSVD and GKRSL-2DSVD.

Every model approximates a centered sample ``X_i - mean`` by ``L M_i R^T``
with orthonormal ``L`` (m x k1) and ``R`` (n x k2).  Given ``L`` and ``R`` the
optimal core is ``M_i = L^T (X_i - mean) R``, so the solvers only ever
iterate on ``(mean, L, R)``.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
from . import _mm
from ._mm import ConvergenceError, fix_signs, subspace_change, top_eigenvectors
from .loss import (
    GkrslParams,
    adaptive_sigma,
    effective_eigen_weight,
    gkrsl_objective,
    gkrsl_weight,
)

log = logging.getLogger(__name__)

R1_FLOOR = 1e-8
MEAN_FLOOR = 1e-8
# residuals at or below this (relative to the data scale) count as exact fits
ZERO_RESIDUAL = 1e-13


# ---------------------------------------------------------------- data types


@dataclass(frozen=True)
class SampleSet:
    """``N`` equally sized ``m x n`` real matrices stored as an ``(N, m, n)`` array."""

    samples: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.samples, dtype=np.float64)
        if X.ndim != 3:
            raise ValueError(f"samples must have shape (N, m, n), got {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError("samples contain non-finite entries")
        object.__setattr__(self, "samples", X)
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (X.shape[0],):
                raise ValueError("labels must have one entry per sample")
            object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def shape(self):
        return self.samples.shape[1:]

    def subset(self, idx) -> "SampleSet":
        idx = np.asarray(idx)
        labels = None if self.labels is None else self.labels[idx]
        return SampleSet(self.samples[idx], labels)


def as_samples(data) -> np.ndarray:
    if isinstance(data, SampleSet):
        return data.samples
    return SampleSet(data).samples


@dataclass(frozen=True)
class RankConfig:
    k1: int
    k2: int

    def check(self, m, n):
        if not (1 <= self.k1 <= m and 1 <= self.k2 <= n):
            raise ValueError(f"ranks ({self.k1}, {self.k2}) out of range for {m}x{n} samples")


class MeanUpdate(str, enum.Enum):
    LITERAL = "literal"
    NORMALIZED = "normalized_weighted_mean"
    FROZEN = "frozen"


@dataclass(frozen=True)
class SolverConfig:
    """Solver knobs.

    ``sigma=None`` selects the adaptive bandwidth (computed from the initial
    residuals with ``sigma_rule`` and held fixed during the loop); a float
    fixes it.
    With ``safeguard`` on, an eigenvector update that would raise the
    objective is replaced by a Riemannian gradient step with backtracking,
    and the weighted-mean update is shortened until it does not raise it.
    """

    max_iterations: int = 100
    tolerance: float = 1e-5
    mean_update: MeanUpdate = MeanUpdate.NORMALIZED
    sigma: float | None = None
    sigma_rule: str = "peak"
    seed: int = 0
    safeguard: bool = True
    max_backtracks: int = 50

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        object.__setattr__(self, "mean_update", MeanUpdate(self.mean_update))


@dataclass
class IterationState:
    residuals: np.ndarray
    weights: np.ndarray
    eigen_weights: np.ndarray
    iteration: int = 0
    degenerate: bool = False
    backtracks: int = 0
    mm_steps: int = 0
    gradient_steps: int = 0
    rejected_steps: int = 0


@dataclass
class IterationRecord:
    """Snapshot of one solver iteration (kept only when ``record=True``)."""

    L: np.ndarray
    R: np.ndarray
    mean: np.ndarray
    objective: float


@dataclass(frozen=True)
class Decomposition2D:
    L: np.ndarray
    R: np.ndarray
    mean: np.ndarray
    cores: np.ndarray | None = None
    objective_trace: tuple = ()
    state: IterationState | None = None
    method: str = "svd2d"
    sigma: float | None = None
    params: GkrslParams | None = None
    n_iter: int = 0
    converged: bool = True
    history: list = field(default_factory=list, repr=False, compare=False)

    @property
    def ranks(self):
        return RankConfig(self.L.shape[1], self.R.shape[1])

    def transform(self, data) -> np.ndarray:
        return project(self, as_samples(data))

    def inverse_transform(self, cores) -> np.ndarray:
        return self.mean + self.L @ np.asarray(cores) @ self.R.T


# ------------------------------------------------------------ linear algebra


def left_covariance(Xc: np.ndarray, R: np.ndarray | None, w=None) -> np.ndarray:
    """``sum_i w_i Xc_i R R^T Xc_i^T`` (``R=None`` means identity)."""
    Y = Xc if R is None else Xc @ R
    if w is not None:
        Y = Y * np.sqrt(w)[:, None, None]
    return np.einsum("ijk,ilk->jl", Y, Y)


def right_covariance(Xc: np.ndarray, L: np.ndarray, w=None) -> np.ndarray:
    """``sum_i w_i Xc_i^T L L^T Xc_i``."""
    Y = np.swapaxes(L.T @ Xc, 1, 2)
    if w is not None:
        Y = Y * np.sqrt(w)[:, None, None]
    return np.einsum("ijk,ilk->jl", Y, Y)


# --------------------------------------------------------------- operations


def _check_projectors(shape, L, R):
    m, n = shape
    if L.shape[0] != m or R.shape[0] != n:
        raise ValueError(f"projector shapes {L.shape}, {R.shape} incompatible with {m}x{n} samples")


def residual(sample, mean, L, R) -> float:
    """Reconstruction residual norm ``sqrt(Tr(Xc^T Xc - Xc^T L L^T Xc R R^T))``."""
    sample = np.asarray(sample, dtype=float)
    mean = np.asarray(mean, dtype=float)
    if sample.shape != mean.shape:
        raise ValueError("sample and mean shapes differ")
    return float(residuals(sample[None], mean, L, R)[0])


def residuals(X: np.ndarray, mean, L, R) -> np.ndarray:
    """Vectorized :func:`residual` over an ``(N, m, n)`` stack."""
    X = np.asarray(X, dtype=float)
    _check_projectors(X.shape[1:], L, R)
    Xc = X - mean
    # ||Xc - L L^T Xc R R^T||_F; same value as the clamped trace form but
    # without its cancellation near zero
    D = Xc - L @ (L.T @ Xc @ R) @ R.T
    return np.sqrt(np.einsum("ijk,ijk->i", D, D))


def project(model: Decomposition2D, sample) -> np.ndarray:
    """Core ``L^T (sample - mean) R``; accepts a single matrix or a stack."""
    sample = np.asarray(sample, dtype=float)
    if sample.shape[-2:] != model.mean.shape:
        raise ValueError(f"sample shape {sample.shape[-2:]} does not match model {model.mean.shape}")
    return model.L.T @ (sample - model.mean) @ model.R


def reconstruct(model: Decomposition2D, sample) -> np.ndarray:
    return model.mean + model.L @ project(model, sample) @ model.R.T


# ------------------------------------------------------------------ solvers


def _prepare(data, ranks):
    X = as_samples(data)
    N, m, n = X.shape
    if N < 2:
        raise ValueError("at least two samples are required")
    if not isinstance(ranks, RankConfig):
        ranks = RankConfig(*ranks)
    ranks.check(m, n)
    return X, ranks


def _alternate_2dsvd(Xc, ranks, tol, max_iter):
    L = top_eigenvectors(left_covariance(Xc, None), ranks.k1)
    R = top_eigenvectors(right_covariance(Xc, L), ranks.k2)
    trace = [float(np.sum(residuals(Xc, 0.0, L, R) ** 2))]
    n_iter, converged = 0, False
    for n_iter in range(1, max_iter + 1):
        L_new = top_eigenvectors(left_covariance(Xc, R), ranks.k1)
        R_new = top_eigenvectors(right_covariance(Xc, L_new), ranks.k2)
        change = max(subspace_change(L, L_new), subspace_change(R, R_new))
        L, R = L_new, R_new
        trace.append(float(np.sum(residuals(Xc, 0.0, L, R) ** 2)))
        if change < tol:
            converged = True
            break
    return L, R, trace, n_iter, converged


def svd2d_fit(data, ranks, config: SolverConfig | None = None) -> Decomposition2D:
    """Plain 2DSVD: least-squares two-sided approximation around the arithmetic mean.

    The coupled covariance eigenproblems are solved by alternation, starting
    from ``L`` = top eigenvectors of ``sum Xc Xc^T``.
    """
    config = config or SolverConfig()
    X, ranks = _prepare(data, ranks)
    mean = X.mean(axis=0)
    Xc = X - mean
    L, R, trace, n_iter, converged = _alternate_2dsvd(Xc, ranks, config.tolerance, config.max_iterations)
    E = residuals(X, mean, L, R)
    ones = np.ones(len(X))
    return Decomposition2D(
        L=L, R=R, mean=mean, cores=L.T @ Xc @ R, objective_trace=tuple(trace),
        state=IterationState(E, ones, ones, n_iter), method="svd2d",
        n_iter=n_iter, converged=converged,
    )


def r1_objective(E) -> float:
    return float(np.sum(E))


def r1_svd2d_fit(data, ranks, config: SolverConfig | None = None) -> Decomposition2D:
    """R1-2DSVD by iteratively reweighted covariances, ``w_i = 1 / max(E_i, 1e-8)``."""
    config = config or SolverConfig()
    X, ranks = _prepare(data, ranks)
    init = svd2d_fit(X, ranks, config)
    mean, L, R = init.mean, init.L, init.R
    Xc = X - mean
    E = residuals(X, mean, L, R)
    trace = [r1_objective(E)]
    n_iter, converged = 0, False
    for n_iter in range(1, config.max_iterations + 1):
        w = 1.0 / np.maximum(E, R1_FLOOR)
        L_new = top_eigenvectors(left_covariance(Xc, R, w), ranks.k1)
        R_new = top_eigenvectors(right_covariance(Xc, L_new, w), ranks.k2)
        change = max(subspace_change(L, L_new), subspace_change(R, R_new))
        L, R = L_new, R_new
        E = residuals(X, mean, L, R)
        trace.append(r1_objective(E))
        if change < config.tolerance:
            converged = True
            break
    w = 1.0 / np.maximum(E, R1_FLOOR)
    return Decomposition2D(
        L=L, R=R, mean=mean, cores=L.T @ Xc @ R, objective_trace=tuple(trace),
        state=IterationState(E, w, w, n_iter), method="r1svd2d",
        n_iter=n_iter, converged=converged,
    )


def update_mean(data, state: IterationState, L, R, mode) -> np.ndarray:
    """Weighted mean update.

    ``literal``: ``sum(W_i X_i / (2 E_i)) / sum(W_i)``;
    ``normalized_weighted_mean``: convex combination with ``alpha_i = W_i / max(E_i, 1e-8)``;
    ``frozen``: arithmetic mean.  A zero weight sum falls back to the
    arithmetic mean and sets ``state.degenerate``.
    """
    X = as_samples(data)
    mode = MeanUpdate(mode)
    W = np.asarray(state.weights, dtype=float)
    E = np.asarray(state.residuals, dtype=float)
    if mode is MeanUpdate.FROZEN:
        return X.mean(axis=0)
    if mode is MeanUpdate.LITERAL:
        denom = W.sum()
        coef = 0.5 * W / np.maximum(E, MEAN_FLOOR)
    else:
        coef = W / np.maximum(E, MEAN_FLOOR)
        denom = coef.sum()
    if not denom > 0:
        state.degenerate = True
        return X.mean(axis=0)
    return np.tensordot(coef, X, axes=1) / denom


def resolve_sigma(params: GkrslParams, config: SolverConfig, E0) -> float:
    if config.sigma is not None:
        return float(config.sigma)
    if params.sigma is not None:
        return float(params.sigma)
    return adaptive_sigma(E0, config.sigma_rule, params)


def gkrsl_svd2d_fit(
    data,
    ranks,
    params: GkrslParams | None = None,
    config: SolverConfig | None = None,
    init: Decomposition2D | None = None,
    record: bool = False,
) -> Decomposition2D:
    """Robust 2DSVD under the GKRSL loss.

    Starts from the plain 2DSVD solution (or ``init``).  Every iteration
    updates the mean, then ``L`` from the leading eigenvectors of
    ``F = sum w_i Xc_i R R^T Xc_i^T`` and ``R`` from those of
    ``G = sum w_i Xc_i^T L L^T Xc_i``, with ``w_i`` the effective eigen-weights
    at the current residuals.  Stops when neither projector moves by more
    than ``config.tolerance``.

    The bandwidth is ``config.sigma``, else ``params.sigma``, else chosen
    from the initial residuals by :func:`adaptive_sigma`; it stays fixed
    for the whole run so the recorded objective is comparable across
    iterations.  ``record=True`` keeps every iterate in ``model.history``.
    """
    params = params or GkrslParams(sigma=None)
    config = config or SolverConfig()
    X, ranks = _prepare(data, ranks)
    N = len(X)
    if init is None:
        init = svd2d_fit(X, ranks, config)
    mean, L, R = init.mean.copy(), init.L.copy(), init.R.copy()

    E = residuals(X, mean, L, R)
    sigma = resolve_sigma(params, config, E)
    params = params.with_sigma(sigma)
    W, omega = gkrsl_weight(E, params), effective_eigen_weight(E, params)
    state = IterationState(E, W, omega, 0)
    objective = _mm.Objective(params, lambda mu, L_, R_: residuals(X, mu, L_, R_), state)
    # d f / d V = -slope * C V for the weighted covariance C of either side
    slope = 2.0 / (N * sigma**2)
    stats, memo = _mm.StepStats(), {}

    f = objective(mean, L, R)
    trace = [objective.full(f)]
    history = [IterationRecord(L, R, mean, trace[-1])] if record else []

    zero_tol = ZERO_RESIDUAL * max(1.0, float(np.abs(X).max()))
    converged = bool(np.all(E <= zero_tol))
    n_iter = 0
    while not converged and n_iter < config.max_iterations:
        n_iter += 1
        L_prev, R_prev = L, R

        target = update_mean(X, state, L, R, config.mean_update)
        mean, f = _mm.mean_step(
            target, mean, f, lambda mu: objective(mu, L, R),
            config.safeguard and config.mean_update is MeanUpdate.NORMALIZED,
            config.max_backtracks, stats,
        )
        Xc = X - mean

        omega = effective_eigen_weight(residuals(X, mean, L, R), params)
        L, f = _mm.subspace_step(
            L, left_covariance(Xc, R, omega), ranks.k1, f, lambda V: objective(mean, V, R),
            slope, config.safeguard, config.max_backtracks, stats, memo, "L",
        )
        omega = effective_eigen_weight(residuals(X, mean, L, R), params)
        R, f = _mm.subspace_step(
            R, right_covariance(Xc, L, omega), ranks.k2, f, lambda V: objective(mean, L, V),
            slope, config.safeguard, config.max_backtracks, stats, memo, "R",
        )

        trace.append(objective.full(f))
        if record:
            history.append(IterationRecord(L, R, mean, trace[-1]))
        E = residuals(X, mean, L, R)
        state = IterationState(
            E, gkrsl_weight(E, params), effective_eigen_weight(E, params), n_iter,
            state.degenerate, stats.backtracks, stats.mm, stats.gradient, stats.rejected,
        )
        objective.state = state
        change = max(subspace_change(L_prev, L), subspace_change(R_prev, R))
        if change < config.tolerance or np.all(E <= zero_tol):
            converged = True
    if not converged:
        log.info("gkrsl_svd2d_fit stopped at max_iterations=%d", config.max_iterations)

    return Decomposition2D(
        L=L, R=R, mean=mean, cores=L.T @ (X - mean) @ R, objective_trace=tuple(trace),
        state=state, method="gkrsl2dsvd", sigma=sigma, params=params,
        n_iter=n_iter, converged=converged, history=history,
    )


def kkt_residual(data, model: Decomposition2D, side: str = "left") -> float:
    """Relative stationarity residual ``||F L - L (L^T F L)|| / ||F||`` at the model's weights."""
    X = as_samples(data)
    Xc = X - model.mean
    E = residuals(X, model.mean, model.L, model.R)
    omega = effective_eigen_weight(E, model.params)
    if side == "left":
        C, V = left_covariance(Xc, model.R, omega), model.L
    else:
        C, V = right_covariance(Xc, model.L, omega), model.R
    C = 0.5 * (C + C.T)
    nrm = np.linalg.norm(C)
    if nrm == 0:
        return 0.0
    return float(np.linalg.norm(C @ V - V @ (V.T @ C @ V)) / nrm)


def gkrsl_objective_at(data, model: Decomposition2D, params: GkrslParams | None = None) -> float:
    params = params or model.params
    X = as_samples(data)
    return gkrsl_objective(residuals(X, model.mean, model.L, model.R), params)
