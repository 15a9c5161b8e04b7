"""
Nonignorable layer: multiplier draws and the transform of ignorable imputations.

An ignorable imputed value ``y`` becomes ``(k - 1) * |y| + y``.  For ``y >= 0``
that is simply ``k * y``; for negative ``y`` it is ``(2 - k) * y``, so ``k > 1``
always pushes the value up and ``k < 1`` pushes it down.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .core import ConfigError, LongitudinalDataset, ParameterError

FAMILIES = ("normal", "uniform", "point")


@dataclass(frozen=True)
class MultiplierDistribution:
    """Distribution of the multiplier ``k``.

    ``param1``/``param2`` are mean/sd for "normal", lower/upper for "uniform"
    and value/unused for "point".
    """

    family: str
    param1: float
    param2: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ParameterError(f"unknown multiplier family {self.family!r}")
        if not (np.isfinite(self.param1) and np.isfinite(self.param2)):
            raise ParameterError("multiplier parameters must be finite")
        if self.family == "normal" and self.param2 < 0:
            raise ParameterError(f"normal sd must be >= 0, got {self.param2}")
        if self.family == "uniform" and self.param1 > self.param2:
            raise ParameterError(f"uniform bounds out of order: {self.param1} > {self.param2}")

    @classmethod
    def normal(cls, mean, sd):
        return cls("normal", float(mean), float(sd))

    @classmethod
    def uniform(cls, lower, upper):
        return cls("uniform", float(lower), float(upper))

    @classmethod
    def point(cls, value):
        return cls("point", float(value), 0.0)

    @property
    def is_degenerate(self) -> bool:
        return self.family == "point" or self.param1 == self.param2 or (
            self.family == "normal" and self.param2 == 0
        )

    def describe(self) -> str:
        if self.family == "normal":
            return f"normal mean={self.param1:g} sd={self.param2:g}"
        if self.family == "uniform":
            return f"uniform lower={self.param1:g} upper={self.param2:g}"
        return f"point value={self.param1:g}"


@dataclass(frozen=True)
class MechanismSpec:
    dist: MultiplierDistribution
    round_to_observed: bool = False
    clamp_range: tuple[float, float] | None = None

    def __post_init__(self):
        if self.clamp_range is not None:
            lo, hi = self.clamp_range
            if lo > hi:
                raise ParameterError(f"clamp range out of order: {lo} > {hi}")
            object.__setattr__(self, "clamp_range", (float(lo), float(hi)))


def apply_multiplier(y, k):
    """Return ``(k - 1) * |y| + y``, elementwise for arrays.

    Evaluated as ``k * y`` for ``y >= 0`` and ``(2 - k) * y`` otherwise; both
    branches are exact rewrites and keep ``k = 1`` an exact identity.
    """
    y = np.asarray(y, dtype=float)
    out = np.where(y >= 0, k * y, (2.0 - k) * y)
    return float(out) if out.ndim == 0 else out


def count_sign_flips(y, k) -> int:
    """Imputed values whose sign the transform reverses (negative y, k > 2)."""
    y = np.asarray(y, dtype=float)
    return int(np.count_nonzero((y < 0) & (apply_multiplier(y, k) > 0)))


def draw_multiplier(dist: MultiplierDistribution, rng: np.random.Generator, size=None):
    """Draw ``k``.  Degenerate distributions return ``param1`` exactly."""
    if dist.is_degenerate:
        return dist.param1 if size is None else np.full(size, dist.param1)
    if dist.family == "normal":
        return dist.param1 + dist.param2 * rng.standard_normal(size)
    return dist.param1 + (dist.param2 - dist.param1) * rng.random(size)


def elicit_multiplier(lower: float, upper: float, family: str = "normal") -> MultiplierDistribution:
    """Turn expert bounds on ``k`` into a distribution.

    Normal: mean at the midpoint, sd a quarter of the range (the bounds read
    as a 95% interval).  Uniform: the bounds are the support.
    """
    if lower > upper:
        raise ParameterError(f"lower bound {lower:g} exceeds upper bound {upper:g}")
    if family == "normal":
        return MultiplierDistribution.normal((lower + upper) / 2.0, (upper - lower) / 4.0)
    if family == "uniform":
        return MultiplierDistribution.uniform(lower, upper)
    raise ParameterError(f"elicitation supports 'normal' or 'uniform', not {family!r}")


class ObservedPool:
    """Sorted observed values per column, optionally split by group level."""

    def __init__(self, pools: Mapping, group_by: str | None = None):
        self.group_by = group_by
        self._pools = {key: np.sort(np.asarray(v, dtype=float)) for key, v in pools.items()}

    @classmethod
    def from_dataset(cls, d: LongitudinalDataset, columns, group_by: str | None = None):
        pools = {}
        for name in columns:
            x, miss = d.get(name), d.missing(name)
            if group_by is None:
                pools[name] = x[~miss]
            else:
                g = d.get(group_by)
                for level in np.unique(g):
                    pools[(name, float(level))] = x[~miss & (g == level)]
        return cls(pools, group_by)

    def lookup(self, column: str, level: float | None = None) -> np.ndarray:
        key = column if self.group_by is None else (column, float(level))
        pool = self._pools.get(key)
        if pool is None or pool.size == 0:
            where = column if self.group_by is None else f"{column} (group {level:g})"
            raise ConfigError(f"no observed values to round to for {where}")
        return pool


def round_to_pool(x, pool):
    """Nearest value in the sorted ``pool``; ties go to the smaller value."""
    x = np.asarray(x, dtype=float)
    pos = np.clip(np.searchsorted(pool, x), 1, len(pool) - 1) if len(pool) > 1 else np.zeros(x.shape, int)
    if len(pool) == 1:
        return np.full(x.shape, pool[0])
    lo, hi = pool[pos - 1], pool[pos]
    return np.where(hi - x < x - lo, hi, lo)


def transform_imputations(
    completed: LongitudinalDataset,
    original_mask,
    k: float,
    spec: MechanismSpec,
    observed_pool: ObservedPool | None = None,
    columns=None,
) -> LongitudinalDataset:
    """Apply the multiplier to the originally missing cells of ``columns``.

    Cells observed in ``original_mask`` are copied unchanged.  Transformed
    cells are then clamped to ``spec.clamp_range`` and, if requested, snapped
    to the nearest observed value of their column (within their group when the
    pool is grouped).
    """
    original_mask = np.asarray(original_mask, dtype=bool)
    if original_mask.shape != completed.values.shape:
        raise ConfigError("original mask does not conform to the completed dataset")
    if columns is None:
        columns = [c.name for c in completed.outcome_columns]
    if spec.round_to_observed and observed_pool is None:
        raise ConfigError("round_to_observed needs an observed-value pool")

    values = completed.values.copy()
    for name in columns:
        j = completed.index(name)
        cells = np.flatnonzero(original_mask[:, j])
        if cells.size == 0:
            continue
        x = apply_multiplier(values[cells, j], k)
        x = np.atleast_1d(x)
        if spec.clamp_range is not None:
            x = np.clip(x, *spec.clamp_range)
        if spec.round_to_observed:
            if observed_pool.group_by is None:
                x = round_to_pool(x, observed_pool.lookup(name))
            else:
                g = completed.get(observed_pool.group_by)[cells]
                for level in np.unique(g):
                    sel = g == level
                    x[sel] = round_to_pool(x[sel], observed_pool.lookup(name, level))
        values[cells, j] = x
    return completed.replace(values=values)
