"""Block updates shared by the 2D and higher-order GKRSL solvers.

Objectives are compared through their excess over the loss floor
(``f - 1/lam``) so that the comparisons keep full relative precision even
when every residual is tiny against the kernel bandwidth.
"""
from __future__ import annotations

import numpy as np

from .loss import GkrslParams, gkrsl_excess

ARMIJO = 1e-4


class ConvergenceError(RuntimeError):
    """Raised when a solver hits a non-finite objective; ``state`` holds the last iterate."""

    def __init__(self, msg, state=None):
        super().__init__(msg)
        self.state = state


def polar(A):
    U, _, Vt = np.linalg.svd(A, full_matrices=False)
    return U @ Vt


def fix_signs(V):
    """Flip columns so each one's largest-magnitude entry is positive (lowest index on ties)."""
    V = np.array(V, dtype=np.float64, copy=True)
    idx = np.argmax(np.abs(V), axis=0)
    s = np.sign(V[idx, np.arange(V.shape[1])])
    s[s == 0] = 1.0
    return V * s


def top_eigenvectors(C, k):
    """Leading ``k`` eigenvectors of a symmetric matrix, largest eigenvalue first."""
    from scipy import linalg

    C = 0.5 * (C + C.T)
    d = C.shape[0]
    _, V = linalg.eigh(C, subset_by_index=[d - k, d - 1])
    return fix_signs(V[:, ::-1])


def subspace_change(A_old, A_new) -> float:
    return float(np.linalg.norm(A_new @ A_new.T - A_old @ A_old.T))


class Objective:
    """Excess GKRSL objective of a residual function, with a finiteness check."""

    def __init__(self, params: GkrslParams, residual_fn, state=None):
        self.params = params
        self.residual_fn = residual_fn
        self.state = state

    def __call__(self, *args) -> float:
        f = gkrsl_excess(self.residual_fn(*args), self.params)
        if not np.isfinite(f):
            raise ConvergenceError("GKRSL objective became non-finite", self.state)
        return f

    def full(self, excess: float) -> float:
        return 1.0 / self.params.lam + excess


class StepStats:
    def __init__(self):
        self.mm = 0
        self.gradient = 0
        self.rejected = 0
        self.backtracks = 0


def mean_step(target, current, f0, evaluate, safeguard, max_backtracks, stats):
    """Move the mean toward ``target``, halving the step until the objective does not increase."""
    f = evaluate(target)
    if not safeguard or f <= f0:
        return target, f
    tau = 1.0
    for _ in range(max_backtracks):
        tau *= 0.5
        trial = current + tau * (target - current)
        f = evaluate(trial)
        stats.backtracks += 1
        if f <= f0:
            return trial, f
    return current, f0


def subspace_step(V, C, k, f0, evaluate, slope_scale, safeguard, max_backtracks, stats, memo, key):
    """One block update of an orthonormal factor.

    Tries the top-``k`` eigenvectors of the weighted covariance ``C`` first.
    If that raises the objective (the linear majorizer is only valid where
    the loss is concave in the squared residual), falls back to a
    Riemannian gradient step with Armijo backtracking.  ``slope_scale``
    converts ``<C V, D>`` into the objective's directional derivative.
    """
    cand = top_eigenvectors(C, k)
    fc = evaluate(cand)
    if not safeguard or fc <= f0:
        stats.mm += 1
        return cand, fc
    nrm = np.linalg.norm(C)
    if nrm == 0:
        stats.rejected += 1
        return V, f0
    D = (C @ V - V @ (V.T @ C @ V)) / nrm
    g2 = float(np.sum(D * D))
    if g2 == 0:
        stats.rejected += 1
        return V, f0
    t = 2.0 * memo.get(key, 0.5)
    for _ in range(max_backtracks):
        trial = polar(V + t * D)
        ft = evaluate(trial)
        if ft <= f0 - ARMIJO * t * slope_scale * nrm * g2:
            memo[key] = t
            stats.gradient += 1
            return trial, ft
        stats.backtracks += 1
        t *= 0.5
    stats.rejected += 1
    return V, f0
