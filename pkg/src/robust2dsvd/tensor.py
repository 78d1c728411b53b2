"""Higher-order extension: robust Tucker-style compression of a set of tensors.

Every sample is an order-d array; all d modes are compressed with
orthonormal factors ``V_j`` while the sample index is left alone.  The
2D solvers are the ``d = 2`` special case (``V_0 = L``, ``V_1 = R``).

Unfoldings use row-major column order: ``unfold(T, n)`` moves axis ``n``
to the front and reshapes in C order.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from math import prod

import numpy as np

from . import _mm
from ._mm import subspace_change, top_eigenvectors
from .decomp2d import IterationState, MeanUpdate, SolverConfig, ZERO_RESIDUAL, resolve_sigma
from .loss import GkrslParams, effective_eigen_weight, gkrsl_weight

log = logging.getLogger(__name__)


def as_tensor(values, shape=None) -> np.ndarray:
    """Dense float64 tensor from nested data, or from a flat row-major payload plus ``shape``."""
    T = np.asarray(values, dtype=np.float64)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if T.size != prod(shape):
            raise ValueError(f"{T.size} values cannot fill shape {shape}")
        T = T.reshape(shape)
    if any(s < 1 for s in T.shape):
        raise ValueError("tensor dimensions must be positive")
    if not np.all(np.isfinite(T)):
        raise ValueError("tensor has non-finite entries")
    return T


def unfold(tensor, mode: int) -> np.ndarray:
    T = np.asarray(tensor)
    if not 0 <= mode < T.ndim:
        raise ValueError(f"mode {mode} out of range for an order-{T.ndim} tensor")
    return np.moveaxis(T, mode, 0).reshape(T.shape[mode], -1)


def fold(matrix, mode: int, shape) -> np.ndarray:
    shape = tuple(shape)
    if not 0 <= mode < len(shape):
        raise ValueError(f"mode {mode} out of range for shape {shape}")
    front = (shape[mode],) + shape[:mode] + shape[mode + 1:]
    return np.moveaxis(np.asarray(matrix).reshape(front), 0, mode)


def n_mode_product(tensor, matrix, mode: int) -> np.ndarray:
    """``tensor x_mode matrix``: contracts axis ``mode`` with the columns of ``matrix``."""
    T = np.asarray(tensor)
    A = np.asarray(matrix)
    if not 0 <= mode < T.ndim:
        raise ValueError(f"mode {mode} out of range for an order-{T.ndim} tensor")
    if A.ndim != 2 or A.shape[1] != T.shape[mode]:
        raise ValueError(f"matrix {A.shape} does not match tensor dimension {T.shape[mode]} on mode {mode}")
    return np.moveaxis(np.tensordot(A, T, axes=(1, mode)), 0, mode)


def multi_mode_product(tensor, matrices, skip=None, transpose=False) -> np.ndarray:
    out = np.asarray(tensor)
    for j, A in enumerate(matrices):
        if j == skip or A is None:
            continue
        out = n_mode_product(out, A.T if transpose else A, j)
    return out


# stacked helpers: axis 0 is the sample index, mode j lives on axis j + 1


def _stack_mode_product(stack, A, mode):
    return np.moveaxis(np.tensordot(A, stack, axes=(1, mode + 1)), 0, mode + 1)


def _stack_project(stack, factors, skip=None):
    out = stack
    for j, V in enumerate(factors):
        if j != skip and V is not None:
            out = _stack_mode_product(out, V.T, j)
    return out


def _stack_expand(cores, factors):
    out = cores
    for j, V in enumerate(factors):
        out = _stack_mode_product(out, V, j)
    return out


def _mode_covariance(Xc, factors, mode, w=None):
    """``sum_i w_i U_i U_i^T`` with ``U_i`` the mode unfolding of sample i projected on every other mode."""
    Y = _stack_project(Xc, factors, skip=mode)
    Y = np.moveaxis(Y, mode + 1, 1).reshape(Y.shape[0], Y.shape[mode + 1], -1)
    if w is not None:
        Y = Y * np.sqrt(w)[:, None, None]
    return np.einsum("ijk,ilk->jl", Y, Y)


def _stack_residuals(X, mean, factors):
    Xc = X - mean
    D = Xc - _stack_expand(_stack_project(Xc, factors), factors)
    D = D.reshape(len(D), -1)
    return np.sqrt(np.einsum("ij,ij->i", D, D))


def ho_residual(sample, mean, factors) -> float:
    """Residual norm of a centered sample after multilinear projection onto the factors."""
    sample = np.asarray(sample, dtype=float)
    mean = np.asarray(mean, dtype=float)
    if sample.shape != mean.shape or len(factors) != sample.ndim:
        raise ValueError("sample, mean and factors are inconsistent")
    for j, V in enumerate(factors):
        if V.shape[0] != sample.shape[j]:
            raise ValueError(f"factor {j} has {V.shape[0]} rows, sample has {sample.shape[j]}")
    return float(_stack_residuals(sample[None], mean, factors)[0])


@dataclass(frozen=True)
class TensorModel:
    factors: tuple
    mean: np.ndarray
    cores: np.ndarray | None = None
    objective_trace: tuple = ()
    state: IterationState | None = None
    method: str = "ho_gkrsl"
    sigma: float | None = None
    params: GkrslParams | None = None
    n_iter: int = 0
    converged: bool = True
    history: list = field(default_factory=list, repr=False, compare=False)

    @property
    def ranks(self):
        return tuple(V.shape[1] for V in self.factors)

    def project(self, sample) -> np.ndarray:
        sample = np.asarray(sample, dtype=float)
        single = sample.shape == self.mean.shape
        stack = sample[None] if single else sample
        if stack.shape[1:] != self.mean.shape:
            raise ValueError(f"sample shape {sample.shape} does not match model {self.mean.shape}")
        out = _stack_project(stack - self.mean, self.factors)
        return out[0] if single else out

    def reconstruct(self, sample) -> np.ndarray:
        cores = self.project(sample)
        single = cores.ndim == len(self.factors)
        out = self.mean + _stack_expand(cores[None] if single else cores, self.factors)
        return out[0] if single else out


@dataclass
class TensorIterate:
    factors: tuple
    mean: np.ndarray
    objective: float


def _prepare(samples, ranks):
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim < 2:
        raise ValueError("samples must be a stack of tensors")
    if len(X) < 2:
        raise ValueError("at least two samples are required")
    if not np.all(np.isfinite(X)):
        raise ValueError("samples contain non-finite entries")
    ranks = tuple(int(k) for k in ranks)
    if len(ranks) != X.ndim - 1:
        raise ValueError(f"need one rank per mode ({X.ndim - 1}), got {len(ranks)}")
    for k, d in zip(ranks, X.shape[1:]):
        if not 1 <= k <= d:
            raise ValueError(f"rank {k} out of range for dimension {d}")
    return X, ranks


def ho_svd_fit(samples, ranks, config: SolverConfig | None = None) -> TensorModel:
    """Least-squares multilinear fit around the arithmetic mean (order-d 2DSVD).

    The first sweep projects only onto modes already computed; later sweeps
    project onto all other modes.  For matrices this is exactly
    :func:`robust2dsvd.decomp2d.svd2d_fit`.
    """
    config = config or SolverConfig()
    X, ranks = _prepare(samples, ranks)
    mean = X.mean(axis=0)
    Xc = X - mean
    factors = [None] * len(ranks)
    for j, k in enumerate(ranks):
        factors[j] = top_eigenvectors(_mode_covariance(Xc, factors, j), k)
    trace = [float(np.sum(_stack_residuals(X, mean, factors) ** 2))]
    n_iter, converged = 0, False
    for n_iter in range(1, config.max_iterations + 1):
        change = 0.0
        for j, k in enumerate(ranks):
            V = top_eigenvectors(_mode_covariance(Xc, factors, j), k)
            change = max(change, subspace_change(factors[j], V))
            factors[j] = V
        trace.append(float(np.sum(_stack_residuals(X, mean, factors) ** 2)))
        if change < config.tolerance:
            converged = True
            break
    E = _stack_residuals(X, mean, factors)
    ones = np.ones(len(X))
    return TensorModel(
        factors=tuple(factors), mean=mean, cores=_stack_project(Xc, factors),
        objective_trace=tuple(trace), state=IterationState(E, ones, ones, n_iter),
        method="ho_svd", n_iter=n_iter, converged=converged,
    )


def _update_mean(X, W, E, mode):
    if mode is MeanUpdate.FROZEN:
        return X.mean(axis=0), False
    if mode is MeanUpdate.LITERAL:
        coef = 0.5 * W / np.maximum(E, 1e-8)
        denom = W.sum()
    else:
        coef = W / np.maximum(E, 1e-8)
        denom = coef.sum()
    if not denom > 0:
        return X.mean(axis=0), True
    return np.tensordot(coef, X, axes=1) / denom, False


def ho_gkrsl_fit(
    samples,
    ranks,
    params: GkrslParams | None = None,
    config: SolverConfig | None = None,
    init: TensorModel | None = None,
    record: bool = False,
) -> TensorModel:
    """GKRSL fit of a stack of order-d tensors (``samples`` has shape ``(N, *dims)``).

    Modes are updated cyclically in ascending order; each mode's factor comes
    from the weighted covariance of the samples projected on all other
    modes.  Mean handling, bandwidth selection, safeguards and stopping are
    the same as :func:`robust2dsvd.decomp2d.gkrsl_svd2d_fit`.
    """
    params = params or GkrslParams(sigma=None)
    config = config or SolverConfig()
    X, ranks = _prepare(samples, ranks)
    N = len(X)
    if init is None:
        init = ho_svd_fit(X, ranks, config)
    mean = init.mean.copy()
    factors = [V.copy() for V in init.factors]

    E = _stack_residuals(X, mean, factors)
    sigma = resolve_sigma(params, config, E)
    params = params.with_sigma(sigma)
    state = IterationState(E, gkrsl_weight(E, params), effective_eigen_weight(E, params), 0)
    objective = _mm.Objective(params, lambda mu, fs: _stack_residuals(X, mu, fs), state)
    slope = 2.0 / (N * sigma**2)
    stats, memo = _mm.StepStats(), {}

    f = objective(mean, factors)
    trace = [objective.full(f)]
    history = [TensorIterate(tuple(factors), mean, trace[-1])] if record else []

    zero_tol = ZERO_RESIDUAL * max(1.0, float(np.abs(X).max()))
    converged = bool(np.all(E <= zero_tol))
    degenerate = False
    n_iter = 0
    while not converged and n_iter < config.max_iterations:
        n_iter += 1
        previous = list(factors)

        target, flag = _update_mean(X, state.weights, state.residuals, config.mean_update)
        degenerate = degenerate or flag
        mean, f = _mm.mean_step(
            target, mean, f, lambda mu: objective(mu, factors),
            config.safeguard and config.mean_update is MeanUpdate.NORMALIZED,
            config.max_backtracks, stats,
        )
        Xc = X - mean
        for j, k in enumerate(ranks):
            omega = effective_eigen_weight(_stack_residuals(X, mean, factors), params)

            def evaluate(V, j=j):
                trial = list(factors)
                trial[j] = V
                return objective(mean, trial)

            factors[j], f = _mm.subspace_step(
                factors[j], _mode_covariance(Xc, factors, j, omega), k, f, evaluate,
                slope, config.safeguard, config.max_backtracks, stats, memo, j,
            )

        trace.append(objective.full(f))
        if record:
            history.append(TensorIterate(tuple(factors), mean, trace[-1]))
        E = _stack_residuals(X, mean, factors)
        state = IterationState(
            E, gkrsl_weight(E, params), effective_eigen_weight(E, params), n_iter,
            degenerate, stats.backtracks, stats.mm, stats.gradient, stats.rejected,
        )
        objective.state = state
        change = max(subspace_change(a, b) for a, b in zip(previous, factors))
        if change < config.tolerance or np.all(E <= zero_tol):
            converged = True
    if not converged:
        log.info("ho_gkrsl_fit stopped at max_iterations=%d", config.max_iterations)

    return TensorModel(
        factors=tuple(factors), mean=mean, cores=_stack_project(X - mean, factors),
        objective_trace=tuple(trace), state=state, sigma=sigma, params=params,
        n_iter=n_iter, converged=converged, history=history,
    )
