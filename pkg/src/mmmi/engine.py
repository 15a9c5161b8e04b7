"""
Two-stage nested imputation: M multiplier draws, each applied to its own block
of N ignorable imputations.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ConfigError, DataError, LongitudinalDataset, StreamPath, derive_stream, validate_dataset
from .imputer import ImputerConfig, generate_ignorable_set
from .mechanism import (
    MechanismSpec,
    ObservedPool,
    draw_multiplier,
    transform_imputations,
)


@dataclass(frozen=True)
class NestedImputationPlan:
    """How to build an M x N grid of completed datasets.

    Dataset ``(m, n)`` (0-based) is ignorable imputation ``N*m + n`` with the
    multiplier ``k_m`` applied to ``transform_columns``.
    """

    mechanism: MechanismSpec
    imputer_cfg: ImputerConfig
    m_models: int = 100
    n_per_model: int = 2
    transform_columns: tuple[str, ...] | None = None
    master_seed: int = 0

    def __post_init__(self):
        if self.m_models < 2:
            raise ConfigError(f"m_models must be at least 2 for nested pooling, got {self.m_models}")
        if self.n_per_model < 1:
            raise ConfigError(f"n_per_model must be at least 1, got {self.n_per_model}")
        cols = self.imputer_cfg.column_order if self.transform_columns is None else tuple(self.transform_columns)
        extra = set(cols) - set(self.imputer_cfg.column_order)
        if extra:
            raise ConfigError("transform_columns must be imputed columns; not imputed: " + ", ".join(sorted(extra)))
        object.__setattr__(self, "transform_columns", cols)
        StreamPath(self.master_seed)

    @property
    def size(self) -> int:
        return self.m_models * self.n_per_model

    def describe(self) -> dict:
        mech = self.mechanism
        return {
            "m_models": self.m_models,
            "n_per_model": self.n_per_model,
            "master_seed": self.master_seed,
            "multiplier": {"family": mech.dist.family, "param1": mech.dist.param1, "param2": mech.dist.param2},
            "round_to_observed": mech.round_to_observed,
            "clamp_range": list(mech.clamp_range) if mech.clamp_range is not None else None,
            "transform_columns": list(self.transform_columns),
            "imputer": {
                "column_order": list(self.imputer_cfg.column_order),
                "group_by": self.imputer_cfg.group_by,
                "predictors": list(self.imputer_cfg.predictors),
                "sweeps": self.imputer_cfg.sweeps,
                "ridge_epsilon": self.imputer_cfg.ridge_epsilon,
                "method": self.imputer_cfg.method,
            },
        }


@dataclass(frozen=True, eq=False)
class NestedImputation:
    datasets: tuple[tuple[LongitudinalDataset, ...], ...]
    multipliers: np.ndarray
    manifest: dict = field(default_factory=dict)

    def cell(self, m: int, n: int) -> LongitudinalDataset:
        return self.datasets[m][n]

    def flat(self) -> list[LongitudinalDataset]:
        return [d for row in self.datasets for d in row]


# stage functions, shared with the simulation harness


def ignorable_stage(d: LongitudinalDataset, plan: NestedImputationPlan, base: StreamPath):
    """The M*N ignorable imputations, from ``base.child("ignorable")``."""
    return generate_ignorable_set(d, plan.size, plan.imputer_cfg, base.child("ignorable", 0))


def draw_multipliers(plan: NestedImputationPlan, base: StreamPath) -> np.ndarray:
    """One multiplier per model, model ``m`` from ``base.child("model", m)``."""
    return np.array(
        [float(draw_multiplier(plan.mechanism.dist, derive_stream(base.child("model", m))))
         for m in range(plan.m_models)]
    )


def transform_stage(original: LongitudinalDataset, ignorable, ks, plan: NestedImputationPlan):
    """Apply ``k_m`` to each of model ``m``'s N ignorable imputations."""
    pool = None
    if plan.mechanism.round_to_observed:
        pool = ObservedPool.from_dataset(original, plan.transform_columns, plan.imputer_cfg.group_by)
    N = plan.n_per_model
    return tuple(
        tuple(
            transform_imputations(ignorable[N * m + n], original.mask, ks[m], plan.mechanism, pool,
                                  plan.transform_columns)
            for n in range(N)
        )
        for m in range(plan.m_models)
    )


def nested_impute(d: LongitudinalDataset, plan: NestedImputationPlan, base: StreamPath | None = None) -> NestedImputation:
    """Build the M x N grid of completed datasets and its manifest."""
    problems = validate_dataset(d)
    if problems:
        raise DataError("invalid dataset: " + "; ".join(problems))
    base = base if base is not None else StreamPath(plan.master_seed)
    ignorable = ignorable_stage(d, plan, base)
    ks = draw_multipliers(plan, base)
    grid = transform_stage(d, ignorable, ks, plan)
    manifest = {
        "master_seed": plan.master_seed,
        "plan": plan.describe(),
        "multipliers": [float(k) for k in ks],
    }
    return NestedImputation(grid, ks, manifest)
