"""
Monte Carlo harness: generate, mask, nested-impute, fit, pool and score.

Every replication draws from streams under ``StreamPath(seed).child("rep", r)``,
so results do not depend on how replications are spread over workers.
Scenarios that share a trial design, seed and imputation settings also share
their generated data and ignorable imputations; only the multiplier draws and
the transform differ.  The multiplier streams do not depend on the scenario,
which gives common random numbers across the mechanism grid.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .core import ConfigError, MmmiError, NestedEstimateGrid, StreamPath, derive_stream
from .engine import NestedImputationPlan, draw_multipliers, ignorable_stage, transform_stage
from .imputer import ImputerConfig
from .lmm import LmmSpec, estimand_weights, fit_lmm_ml_many, scalar_estimand
from .mechanism import MechanismSpec, MultiplierDistribution
from .pooling import PooledInference, pool_nested
from .simgen import TrialGenParams, apply_dropout, generate_complete, true_target

FAILURE_LIMIT = 0.05


@dataclass(frozen=True)
class ScenarioConfig:
    """One cell of a simulation grid.

    ``weights`` is a named estimand (see :func:`mmmi.lmm.estimand_weights`) or
    an explicit weight vector over the analysis model's fixed effects.
    """

    name: str
    trial: TrialGenParams
    plan: NestedImputationPlan
    replications: int
    truth: float
    weights: str | tuple[float, ...] = "treatment-slope"
    level: float = 0.95
    lmm: LmmSpec = field(default_factory=LmmSpec)

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigError(f"{self.name}: replications must be at least 1")
        if not math.isfinite(self.truth):
            raise ConfigError(f"{self.name}: truth must be finite")
        if not 0 < self.level < 1:
            raise ConfigError(f"{self.name}: level must lie in (0, 1)")
        if not isinstance(self.weights, str):
            object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))

    def stage_one_key(self):
        p = self.plan
        return (self.trial, p.master_seed, p.m_models, p.n_per_model, p.imputer_cfg)


@dataclass(frozen=True)
class ScenarioMetrics:
    name: str
    percent_bias: float
    rmse: float
    coverage: float
    ci_width: float
    mean_gamma: float
    mean_gamma_w: float
    mean_gamma_b: float
    mean_ratio: float
    mean_estimate: float
    replications_completed: int
    replications_failed: int = 0
    error: str | None = None

    def as_row(self) -> dict:
        return {
            "scenario": self.name,
            "percent_bias": self.percent_bias,
            "rmse": self.rmse,
            "coverage": self.coverage,
            "ci_width": self.ci_width,
            "gamma": self.mean_gamma,
            "gamma_w": self.mean_gamma_w,
            "gamma_b": self.mean_gamma_b,
            "gamma_ratio": self.mean_ratio,
            "mean_estimate": self.mean_estimate,
            "completed": self.replications_completed,
            "failed": self.replications_failed,
            "error": self.error or "",
        }


def percent_bias(estimate: float, truth: float) -> float:
    """``100 (estimate - truth) / truth``: bias relative to the signed truth,
    so an estimate further from zero than the truth scores positive."""
    if truth == 0:
        raise ConfigError("percent bias is undefined for a zero truth")
    return 100.0 * (estimate - truth) / truth


def simulation_imputer(params: TrialGenParams) -> ImputerConfig:
    """Per-arm monotone regression imputation of the trial outcomes."""
    return ImputerConfig(
        column_order=tuple(f"y_t{j}" for j in range(params.timepoints)),
        group_by="tx",
        method="monotone",
    )


# ---------------------------------------------------------------------------
# one replication


def _simulate_data(trial: TrialGenParams, base: StreamPath):
    full, drop = generate_complete(trial, derive_stream(base.child("data", 0)))
    return apply_dropout(full, drop, trial.drop_hazard, derive_stream(base.child("dropout", 0)))


def _analyse(cfg: ScenarioConfig, observed, ignorable, base: StreamPath):
    ks = draw_multipliers(cfg.plan, base)
    grid = transform_stage(observed, ignorable, ks, cfg.plan)
    fits = fit_lmm_ml_many([d for row in grid for d in row], cfg.lmm)
    w = estimand_weights(fits[0].fixed_names, cfg.weights)
    est = [scalar_estimand(f, w) for f in fits]
    N = cfg.plan.n_per_model
    rows = [est[m * N:(m + 1) * N] for m in range(cfg.plan.m_models)]
    pooled = pool_nested(NestedEstimateGrid.from_estimates(rows), cfg.level)
    return pooled, bool(pooled.ci[0] <= cfg.truth <= pooled.ci[1])


def run_replication(cfg: ScenarioConfig, rep_index: int) -> tuple[PooledInference, bool]:
    """Full pipeline for replication ``rep_index``; returns the pooled
    inference and whether its interval covers ``cfg.truth``."""
    base = StreamPath(cfg.plan.master_seed).child("rep", rep_index)
    observed = _simulate_data(cfg.trial, base)
    ignorable = ignorable_stage(observed, cfg.plan, base)
    return _analyse(cfg, observed, ignorable, base)


def _replication_for_group(configs, rep_index):
    """Run every config of a stage-one group on one replication.

    Returns a list aligned with ``configs`` of ``(pooled, covered)`` or an
    error message.
    """
    lead = configs[0]
    base = StreamPath(lead.plan.master_seed).child("rep", rep_index)
    try:
        observed = _simulate_data(lead.trial, base)
        ignorable = ignorable_stage(observed, lead.plan, base)
    except MmmiError as exc:
        return [f"{type(exc).__name__}: {exc}"] * len(configs)
    out = []
    for cfg in configs:
        try:
            out.append(_analyse(cfg, observed, ignorable, base))
        except MmmiError as exc:
            out.append(f"{type(exc).__name__}: {exc}")
    return out


# ---------------------------------------------------------------------------
# aggregation


def summarize(name: str, results, truth: float) -> ScenarioMetrics:
    """Metrics over replication results, in replication order.

    ``results`` holds ``(PooledInference, covered)`` pairs or error strings;
    errors are excluded from every average and counted.
    """
    ok = [r for r in results if not isinstance(r, str)]
    failed = len(results) - len(ok)
    error = None
    if results and failed / len(results) > FAILURE_LIMIT:
        msgs = sorted({r for r in results if isinstance(r, str)})
        error = f"{failed} of {len(results)} replications failed; first error: {msgs[0]}"
    if not ok:
        nan = float("nan")
        return ScenarioMetrics(name, nan, nan, nan, nan, nan, nan, nan, nan, nan, 0, failed,
                               error or "no replication completed")
    n = len(ok)

    def mean(values):
        return math.fsum(values) / n

    q = [p.q_bar for p, _ in ok]
    est = mean(q)
    return ScenarioMetrics(
        name=name,
        percent_bias=percent_bias(est, truth),
        rmse=math.sqrt(mean([(x - truth) ** 2 for x in q])),
        coverage=sum(1 for _, c in ok if c) / n,
        ci_width=mean([p.ci[1] - p.ci[0] for p, _ in ok]),
        mean_gamma=mean([p.gamma for p, _ in ok]),
        mean_gamma_w=mean([p.gamma_w for p, _ in ok]),
        mean_gamma_b=mean([p.gamma_b for p, _ in ok]),
        mean_ratio=mean([p.gamma_ratio for p, _ in ok]),
        mean_estimate=est,
        replications_completed=n,
        replications_failed=failed,
        error=error,
    )


def _group_configs(configs):
    groups: dict = {}
    for i, cfg in enumerate(configs):
        groups.setdefault(cfg.stage_one_key(), []).append(i)
    return list(groups.values())


def _group_task(args):
    configs, rep_index = args
    return _replication_for_group(configs, rep_index)


def run_grid(configs, workers: int = 1) -> list[ScenarioMetrics]:
    """Run every scenario; one metrics row per config, in input order.

    Replications run in ``workers`` processes.  Each replication's result
    depends only on its stream path, and aggregation is in replication order,
    so the output is the same for any worker count.
    """
    configs = list(configs)
    if not configs:
        return []
    names = [c.name for c in configs]
    if len(set(names)) != len(names):
        raise ConfigError("scenario names must be unique")
    results: list[list] = [[] for _ in configs]
    tasks, owners = [], []
    for idx in _group_configs(configs):
        group = [configs[i] for i in idx]
        reps = max(c.replications for c in group)
        for r in range(reps):
            members = [i for i in idx if configs[i].replications > r]
            tasks.append(([configs[i] for i in members], r))
            owners.append(members)

    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(_group_task, tasks, chunksize=1))
    else:
        outputs = [_group_task(t) for t in tasks]

    # tasks are created in replication order within each group
    for members, out in zip(owners, outputs):
        for i, res in zip(members, out):
            results[i].append(res)
    return [summarize(c.name, res, c.truth) for c, res in zip(configs, results)]


def run_scenario(cfg: ScenarioConfig, workers: int = 1) -> ScenarioMetrics:
    return run_grid([cfg], workers)[0]


# ---------------------------------------------------------------------------
# the standard sixteen-cell design

IGNORABILITY = (("mar", 1.0), ("weak", 1.3), ("strong", 1.7), ("misspec", 0.8))
UNCERTAINTY = (("none", 0.0), ("mild", 0.1), ("moderate", 0.3), ("ample", 0.5))
GRID_NAMES = tuple(f"{a}-{b}" for a, _ in IGNORABILITY for b, _ in UNCERTAINTY)


def standard_grid(replications: int = 200, seed: int = 1, m_models: int = 100, n_per_model: int = 2,
                trial: TrialGenParams | None = None, names=None) -> list[ScenarioConfig]:
    """Configs for the ignorability x uncertainty grid (normal multipliers).

    ``names`` restricts the grid to the listed cells, kept in grid order.
    """
    trial = trial or TrialGenParams()
    imputer = simulation_imputer(trial)
    truth = true_target(trial)
    wanted = None if names is None else set(names)
    if wanted is not None:
        unknown = wanted - set(GRID_NAMES)
        if unknown:
            raise ConfigError("unknown scenario names: " + ", ".join(sorted(unknown)))
    out = []
    for a, mean in IGNORABILITY:
        for b, sd in UNCERTAINTY:
            name = f"{a}-{b}"
            if wanted is not None and name not in wanted:
                continue
            plan = NestedImputationPlan(
                mechanism=MechanismSpec(MultiplierDistribution.normal(mean, sd)),
                imputer_cfg=imputer,
                m_models=m_models,
                n_per_model=n_per_model,
                master_seed=seed,
            )
            out.append(ScenarioConfig(name, trial, plan, replications, truth))
    return out


def with_mechanism(cfg: ScenarioConfig, dist: MultiplierDistribution, name: str | None = None) -> ScenarioConfig:
    """Copy of ``cfg`` with a different multiplier distribution."""
    plan = replace(cfg.plan, mechanism=replace(cfg.plan.mechanism, dist=dist))
    return replace(cfg, plan=plan, name=name or cfg.name)
