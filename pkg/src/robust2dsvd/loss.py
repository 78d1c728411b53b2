"""Generalized kernel risk sensitive loss (GKRSL) and its MM weights.

The per-sample loss of a residual norm ``E`` is

    (1/lam) * exp(lam * (1 - g(E)) ** (p/2)),    g(E) = exp(-E**2 / (2 sigma**2))

which is bounded in ``[1/lam, exp(lam)/lam]``.  ``p = 2`` recovers the
kernel risk sensitive loss (KRSL).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# (1 - g) is floored here before raising to a negative power (p < 2)
EPS_FLOOR = 1e-12


@dataclass(frozen=True)
class GkrslParams:
    """Loss hyperparameters.

    lam controls convexity, p is the error order and sigma the Gaussian
    kernel bandwidth.  ``sigma=None`` means "pick adaptively from the data";
    the pointwise functions below need a concrete bandwidth.
    """

    lam: float = 8.0
    p: float = 8.0
    sigma: float | None = 1.0
    eta: float = field(init=False)

    def __post_init__(self):
        for name in ("lam", "p"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise ValueError(f"{name} must be a positive finite number, got {v!r}")
        if self.sigma is not None and (not np.isfinite(self.sigma) or self.sigma <= 0):
            raise ValueError(f"sigma must be positive and finite, got {self.sigma!r}")
        object.__setattr__(self, "eta", 2.0 ** (-self.p / 2.0))

    def with_sigma(self, sigma: float) -> "GkrslParams":
        return GkrslParams(self.lam, self.p, float(sigma))


@dataclass(frozen=True)
class LossEvaluation:
    value: float
    weight: float
    eigen_weight: float


def _check_residual(E):
    E = np.asarray(E, dtype=float)
    if not np.all(np.isfinite(E)):
        raise ValueError("residuals must be finite")
    if np.any(E < 0):
        raise ValueError("residuals must be nonnegative")
    return E


def _sigma(params: GkrslParams) -> float:
    if params.sigma is None:
        raise ValueError("a concrete sigma is required; resolve the adaptive bandwidth first")
    return params.sigma


def correntropy_kernel(E, sigma: float):
    """Gaussian kernel ``exp(-E**2 / (2 sigma**2))``."""
    if not np.isfinite(sigma) or sigma <= 0:
        raise ValueError("sigma must be positive and finite")
    E = _check_residual(E)
    out = np.exp(-(E * E) / (2.0 * sigma * sigma))
    return float(out) if out.ndim == 0 else out


def _one_minus_kernel(E, sigma):
    # -expm1 keeps precision for E << sigma
    return -np.expm1(-(E * E) / (2.0 * sigma * sigma))


def gkrsl_value(E, params: GkrslParams):
    """Per-sample GKRSL value."""
    E = _check_residual(E)
    u = _one_minus_kernel(E, _sigma(params))
    out = np.exp(params.lam * u ** (params.p / 2.0)) / params.lam
    return float(out) if out.ndim == 0 else out


def gkrsl_objective(residuals, params: GkrslParams) -> float:
    """Empirical GKRSL: mean of :func:`gkrsl_value` over the residuals."""
    residuals = _check_residual(residuals)
    if residuals.size == 0:
        raise ValueError("residual list is empty")
    return float(np.mean(gkrsl_value(residuals.ravel(), params)))


def _p_factors(E, params, floor):
    sigma = _sigma(params)
    u = _one_minus_kernel(E, sigma)
    q = params.p / 2.0
    p1 = np.exp(params.lam * u**q)
    if q - 1.0 < 0.0:
        zero = u == 0.0
        if np.any(zero) and not floor:
            raise ZeroDivisionError("p < 2 with a zero residual is singular; enable the epsilon floor")
        p2 = np.maximum(u, EPS_FLOOR) ** (q - 1.0)
    else:
        # numpy gives 0.0 ** 0.0 == 1.0, the continuous limit at p == 2
        p2 = u ** (q - 1.0)
    p3 = np.exp(-(E * E) / (2.0 * sigma * sigma))
    return p1, p2, p3


def gkrsl_weight(E_t, params: GkrslParams, floor: bool = True):
    """MM weight ``W = (p/2) P1 P2 P3 E_t`` (derivative of the loss up to 1/sigma**2)."""
    E_t = _check_residual(E_t)
    p1, p2, p3 = _p_factors(E_t, params, floor)
    out = 0.5 * params.p * p1 * p2 * p3 * E_t
    return float(out) if out.ndim == 0 else out


def effective_eigen_weight(E_t, params: GkrslParams):
    """Per-sample multiplier ``W / (2 E_t)`` in closed form, ``(p/4) P1 P2 P3``.

    Finite at ``E_t = 0``; for ``p < 2`` the epsilon floor applies there.
    """
    E_t = _check_residual(E_t)
    p1, p2, p3 = _p_factors(E_t, params, True)
    out = 0.25 * params.p * p1 * p2 * p3
    return float(out) if out.ndim == 0 else out


def evaluate(E: float, params: GkrslParams) -> LossEvaluation:
    return LossEvaluation(
        value=gkrsl_value(E, params),
        weight=gkrsl_weight(E, params),
        eigen_weight=effective_eigen_weight(E, params),
    )


def weight_peak(lam: float, p: float) -> float:
    """Scaled squared residual ``s = E**2 / (2 sigma**2)`` at which the eigen-weight peaks.

    Returns 1.0 when the weight is decreasing in ``s`` (no interior peak),
    which is the case for ``p < 2`` and for small ``lam`` at ``p = 2``.
    """
    from scipy.optimize import minimize_scalar

    q = p / 2.0

    def logw(s):
        u = -np.expm1(-s)
        return lam * u**q + (q - 1.0) * np.log(u) - s

    grid = np.logspace(-4, 2, 2001)
    i = int(np.argmax(logw(grid)))
    if i == 0:
        return 1.0
    if i == len(grid) - 1:
        return float(grid[-1])
    res = minimize_scalar(lambda s: -logw(s), bounds=(grid[i - 1], grid[i + 1]), method="bounded",
                          options={"xatol": 1e-10})
    return float(res.x)


def adaptive_sigma(residuals, rule: str = "peak", params: GkrslParams | None = None) -> float:
    """Self-scaling bandwidth from a set of residual norms.

    ``rule="peak"`` (default) puts the median residual where the eigen-weight
    is largest, ``sigma**2 = median(E**2) / (2 s*)`` with ``s* =
    weight_peak(lam, p)``; residuals well above the median then fall on the
    decaying tail and are suppressed.  ``rule="median"`` is the same with
    ``s* = 1``.  ``rule="mean"`` uses ``mean(E**2) / 2``, which a few large
    outliers dominate.  The result is floored at ``sqrt(1e-12)``.
    """
    residuals = _check_residual(residuals)
    sq = residuals.ravel() ** 2
    if sq.size == 0:
        raise ValueError("residual list is empty")
    if rule == "peak":
        if params is None:
            raise ValueError("rule='peak' needs the loss parameters")
        stat = np.median(sq) / weight_peak(params.lam, params.p)
    elif rule == "median":
        stat = np.median(sq)
    elif rule == "mean":
        stat = np.mean(sq)
    else:
        raise ValueError(f"unknown sigma rule {rule!r}")
    return float(np.sqrt(max(stat / 2.0, 1e-12)))


def gkrsl_excess(residuals, params: GkrslParams) -> float:
    """``gkrsl_objective - 1/lam``, computed with ``expm1`` so tiny losses keep full precision."""
    E = _check_residual(residuals)
    u = _one_minus_kernel(E, _sigma(params))
    return float(np.mean(np.expm1(params.lam * u ** (params.p / 2.0)))) / params.lam
