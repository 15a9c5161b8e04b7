"""
Combining rules for nested and flat multiple imputation, plus rates of
missing information.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .core import DataError, GridError, NestedEstimateGrid, ParameterError, ScalarEstimate


@dataclass(frozen=True)
class PooledInference:
    """Pooled estimate with its variance components.

    ``w`` is zero and unused for flat pooling.  ``df`` may be ``inf``, in which
    case the normal reference is used.
    """

    q_bar: float
    u_bar: float
    w: float
    b: float
    t: float
    df: float
    ci: tuple[float, float]
    p_value: float
    gamma: float
    gamma_w: float
    gamma_b: float
    gamma_ratio: float
    level: float
    m: int
    n: int

    @property
    def se(self) -> float:
        return math.sqrt(self.t)

    @property
    def ci_width(self) -> float:
        return self.ci[1] - self.ci[0]

    def as_dict(self) -> dict:
        return {
            "q_bar": self.q_bar, "u_bar": self.u_bar, "w": self.w, "b": self.b, "t": self.t,
            "df": self.df, "ci_lower": self.ci[0], "ci_upper": self.ci[1], "p_value": self.p_value,
            "gamma": self.gamma, "gamma_w": self.gamma_w, "gamma_b": self.gamma_b,
            "gamma_ratio": self.gamma_ratio, "level": self.level, "m": self.m, "n": self.n,
        }


def _check_level(level):
    if not 0.0 < level < 1.0:
        raise ParameterError(f"confidence level must lie in (0, 1), got {level}")


def _reference(q_bar, t, df, level):
    """Confidence interval and two-sided p-value (against zero) on t_df."""
    se = math.sqrt(t)
    dist = stats.norm if math.isinf(df) else stats.t(df)
    crit = float(dist.ppf(0.5 + level / 2.0))
    if se == 0.0:
        p = 1.0 if q_bar == 0.0 else 0.0
    else:
        p = float(2.0 * dist.sf(abs(q_bar) / se))
    return (q_bar - crit * se, q_bar + crit * se), p


def missing_information(u_bar: float, w: float, b: float, n: int):
    """Overall, nonresponse and model-uncertainty rates of missing information.

    Returns ``(gamma, gamma_w, gamma_b, ratio)``.  ``gamma_b`` is the
    difference ``gamma - gamma_w``; when it is negative it is set to zero and
    so is the ratio.  ``gamma`` and ``gamma_w`` are returned as computed.
    """
    if not (math.isfinite(u_bar) and math.isfinite(w) and math.isfinite(b)):
        raise DataError("missing_information needs finite inputs")
    if u_bar <= 0:
        raise DataError(f"u_bar must be positive, got {u_bar}")
    if w < 0 or b < 0:
        raise DataError("variance components must be non-negative")
    if n < 1:
        raise ParameterError("n must be at least 1")
    extra = b + (1.0 - 1.0 / n) * w
    gamma = extra / (u_bar + extra)
    gamma_w = w / (u_bar + w)
    gamma_b = gamma - gamma_w
    if gamma_b <= 0.0:
        return gamma, gamma_w, 0.0, 0.0
    return gamma, gamma_w, gamma_b, gamma_b / gamma


def pool_nested(grid: NestedEstimateGrid, level: float = 0.95) -> PooledInference:
    """Pool an M x N grid of estimates from nested imputation.

    ``T = U_bar + (1 + 1/M) B + (1 - 1/N) W`` with ``W`` the within-model and
    ``B`` the between-model variance of the point estimates.  Degrees of
    freedom combine the two components Satterthwaite-style; a component with
    zero weight contributes nothing, and ``df = inf`` when neither varies.
    """
    _check_level(level)
    m, n = grid.m, grid.n
    if m < 2:
        raise GridError("m ≥ 2 required for nested pooling")
    q, u = grid.q_hat, grid.u

    q_bar = float(q.mean())
    q_m = q.mean(axis=1)
    u_bar = float(u.mean())
    w = float(((q - q_m[:, None]) ** 2).sum() / (m * (n - 1))) if n > 1 else 0.0
    b = float(((q_m - q_bar) ** 2).sum() / (m - 1))

    b_term = (1.0 + 1.0 / m) * b
    w_term = (1.0 - 1.0 / n) * w
    t = u_bar + b_term + w_term

    inv_df = 0.0
    if t > 0:
        inv_df += (b_term / t) ** 2 / (m - 1)
        if n > 1:
            inv_df += (w_term / t) ** 2 / (m * (n - 1))
    df = math.inf if inv_df == 0.0 else 1.0 / inv_df

    ci, p = _reference(q_bar, t, df, level)
    if u_bar > 0:
        gamma, gamma_w, gamma_b, ratio = missing_information(u_bar, w, b, n)
    else:
        gamma = gamma_w = gamma_b = ratio = 0.0
    return PooledInference(q_bar, u_bar, w, b, t, df, ci, p, gamma, gamma_w, gamma_b, ratio, level, m, n)


def pool_flat(estimates, level: float = 0.95) -> PooledInference:
    """Single-level combining rules over a flat list of estimates.

    Returned with ``m`` the number of estimates, ``n = 1``, ``w = 0``; the
    missing-information fields hold the flat fraction ``(1+1/m)B / T`` in
    ``gamma`` and zeros elsewhere.
    """
    _check_level(level)
    estimates = list(estimates)
    if len(estimates) < 2:
        raise GridError("flat pooling needs at least 2 estimates")
    for e in estimates:
        if not isinstance(e, ScalarEstimate):
            raise DataError("pool_flat expects ScalarEstimate items")
    m = len(estimates)
    q = np.array([e.q_hat for e in estimates])
    u = np.array([e.u for e in estimates])
    q_bar = float(q.mean())
    u_bar = float(u.mean())
    b = float(((q - q_bar) ** 2).sum() / (m - 1))
    b_term = (1.0 + 1.0 / m) * b
    t = u_bar + b_term
    if b_term == 0.0:
        df = math.inf
    elif u_bar == 0.0:
        df = float(m - 1)
    else:
        df = (m - 1) * (1.0 + u_bar / b_term) ** 2
    ci, p = _reference(q_bar, t, df, level)
    gamma = b_term / t if t > 0 else 0.0
    return PooledInference(q_bar, u_bar, 0.0, b, t, df, ci, p, gamma, 0.0, 0.0, 0.0, level, m, 1)
