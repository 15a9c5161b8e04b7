"""Pattern-mixture longitudinal trial generator with monotone dropout."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Column, LongitudinalDataset, ParameterError


@dataclass(frozen=True)
class TrialGenParams:
    """Parameters of the two-arm random intercept and slope trial.

    ``beta`` holds (intercept, time, tx, tx*time, drop*time).  ``drop_hazard``
    gives, for timepoints 1..T-1, the probability that a not-yet-dropped member
    of the dropout group leaves at that visit.
    """

    beta: tuple[float, float, float, float, float] = (25.0, -3.0, 0.0, -1.0, 1.5)
    re_cov: tuple[tuple[float, float], tuple[float, float]] = ((4.0, -0.1), (-0.1, 1.0))
    resid_var_nondrop: float = 9.0
    resid_var_drop: float = 16.0
    n_per_arm: int = 150
    n_dropouts_per_arm: int = 100
    timepoints: int = 5
    drop_hazard: tuple[float, ...] = (0.25, 0.50, 0.75, 1.0)

    def __post_init__(self):
        if len(self.beta) != 5:
            raise ParameterError(f"beta needs 5 coefficients, got {len(self.beta)}")
        g = np.asarray(self.re_cov, dtype=float)
        if g.shape != (2, 2) or not np.allclose(g, g.T):
            raise ParameterError("re_cov must be a symmetric 2x2 matrix")
        if np.linalg.eigvalsh(g).min() < -1e-12 * max(1.0, np.abs(g).max()):
            raise ParameterError("re_cov must be positive semidefinite")
        if self.resid_var_nondrop < 0 or self.resid_var_drop < 0:
            raise ParameterError("residual variances must be non-negative")
        if self.n_per_arm < 1:
            raise ParameterError("n_per_arm must be at least 1")
        if not 0 <= self.n_dropouts_per_arm <= self.n_per_arm:
            raise ParameterError("n_dropouts_per_arm must lie in [0, n_per_arm]")
        if self.timepoints < 2:
            raise ParameterError("timepoints must be at least 2")
        if len(self.drop_hazard) != self.timepoints - 1:
            raise ParameterError(
                f"drop_hazard needs {self.timepoints - 1} entries (one per post-baseline visit), "
                f"got {len(self.drop_hazard)}"
            )
        if any(not 0.0 <= h <= 1.0 for h in self.drop_hazard):
            raise ParameterError("drop_hazard entries must lie in [0, 1]")
        if self.drop_hazard[-1] != 1.0:
            raise ParameterError("the final drop_hazard entry must be 1")

    @property
    def n_subjects(self) -> int:
        return 2 * self.n_per_arm


def trial_columns(timepoints: int) -> tuple[Column, ...]:
    cols = [Column("id", "id"), Column("tx", "group", "binary")]
    cols += [Column(f"y_t{j}", "outcome", "continuous", time=float(j)) for j in range(timepoints)]
    return tuple(cols)


def _psd_factor(cov):
    w, v = np.linalg.eigh(np.asarray(cov, dtype=float))
    return v * np.sqrt(np.clip(w, 0.0, None))


def generate_complete(params: TrialGenParams, rng: np.random.Generator):
    """Draw a complete trial dataset.

    Subjects 0..n_per_arm-1 form the control arm, the rest the treated arm.
    Within each arm the first ``n_dropouts_per_arm`` subjects are the dropout
    group.

    Returns
    -------
    dataset : LongitudinalDataset
        Columns ``id``, ``tx``, ``y_t0`` ... with no missing cells.
    drop : ndarray of bool
        Dropout-group flag per subject.
    """
    n_arm, n = params.n_per_arm, params.n_subjects
    t = np.arange(params.timepoints, dtype=float)
    tx = np.repeat([0.0, 1.0], n_arm)
    drop = np.tile(np.arange(n_arm) < params.n_dropouts_per_arm, 2)

    b0, b1, b2, b3, b4 = params.beta
    mean = (
        b0
        + b1 * t[None, :]
        + b2 * tx[:, None]
        + b3 * (tx[:, None] * t[None, :])
        + b4 * (drop[:, None] * t[None, :])
    )
    v = rng.standard_normal((n, 2)) @ _psd_factor(params.re_cov).T
    sd = np.where(drop, np.sqrt(params.resid_var_drop), np.sqrt(params.resid_var_nondrop))
    eps = rng.standard_normal((n, params.timepoints)) * sd[:, None]
    y = mean + v[:, :1] + v[:, 1:] * t[None, :] + eps

    values = np.column_stack([np.arange(1, n + 1, dtype=float), tx, y])
    d = LongitudinalDataset(trial_columns(params.timepoints), values, np.zeros_like(values, dtype=bool))
    return d, drop


def apply_dropout(d: LongitudinalDataset, drop, drop_hazard, rng: np.random.Generator):
    """Mask outcomes of dropout-group members with a sequential hazard.

    At each post-baseline visit, every dropout-group member still in the study
    leaves with the visit's hazard probability; once gone, all later outcomes
    are masked.  Baseline is never masked and nondropouts are never masked.
    """
    outcomes = d.outcome_columns
    drop = np.asarray(drop, dtype=bool)
    if drop.shape != (d.n_subjects,):
        raise ParameterError("dropout flags do not align with the dataset")
    if len(drop_hazard) != len(outcomes) - 1:
        raise ParameterError(
            f"drop_hazard has {len(drop_hazard)} entries for {len(outcomes) - 1} post-baseline visits"
        )
    hazard = np.asarray(drop_hazard, dtype=float)
    u = rng.random((d.n_subjects, len(hazard)))
    gone = np.zeros(d.n_subjects, dtype=bool)
    mask = d.mask.copy()
    for j, h in enumerate(hazard, start=1):
        gone |= drop & (u[:, j - 1] < h)
        mask[:, d.index(outcomes[j].name)] |= gone
    return d.replace(mask=mask)


def true_target(params: TrialGenParams) -> float:
    """Marginal treated-arm slope implied by the generator."""
    b = params.beta
    return b[1] + b[3] + (params.n_dropouts_per_arm / params.n_per_arm) * b[4]

