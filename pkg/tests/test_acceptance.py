"""Acceptance criteria, each reported as one PASS/FAIL line in the summary."""
import math
import os
from fractions import Fraction

import numpy as np
import pytest

from mmmi.cli import main
from mmmi.core import NestedEstimateGrid, StreamPath, derive_stream
from mmmi.engine import NestedImputationPlan, nested_impute
from mmmi.harness import IGNORABILITY, UNCERTAINTY, run_grid, standard_grid
from mmmi.imputer import ImputerConfig
from mmmi.lmm import fit_lmm_ml, gls_known_variance
from mmmi.mechanism import MechanismSpec, MultiplierDistribution, apply_multiplier, draw_multiplier
from mmmi.pooling import missing_information, pool_nested
from mmmi.simgen import TrialGenParams, apply_dropout, generate_complete

GRID_SEED = 20240601


# ---------------------------------------------------------------------------
# C1: simulation grid at R = 200, M = 100, N = 2


@pytest.fixture(scope="module")
def grid_metrics():
    cfgs = standard_grid(replications=200, seed=GRID_SEED, m_models=100, n_per_model=2)
    rows = run_grid(cfgs, workers=min(8, os.cpu_count() or 1))
    return {m.name: m for m in rows}


def _within(x, target, tol):
    return abs(x - target) <= tol


C1_CHECKS = [
    ("C1.a", "mar-none percent bias 33.04 +- 5", lambda g: g["mar-none"].percent_bias,
     lambda v: _within(v, 33.04, 5)),
    ("C1.b", "mar-none coverage <= 0.05", lambda g: g["mar-none"].coverage, lambda v: v <= 0.05),
    ("C1.c", "mar-none CI width 0.75 +- 0.15", lambda g: g["mar-none"].ci_width,
     lambda v: _within(v, 0.75, 0.15)),
    ("C1.d", "mar-none gamma 0.63 +- 0.07", lambda g: g["mar-none"].mean_gamma, lambda v: _within(v, 0.63, 0.07)),
    ("C1.e", "mar-none gamma_b/gamma <= 0.05", lambda g: g["mar-none"].mean_ratio, lambda v: v <= 0.05),
    ("C1.f", "mar-ample coverage >= 0.95", lambda g: g["mar-ample"].coverage, lambda v: v >= 0.95),
    ("C1.g", "mar-ample CI width 3.28 +- 0.6", lambda g: g["mar-ample"].ci_width,
     lambda v: _within(v, 3.28, 0.6)),
    ("C1.h", "mar-ample gamma_b/gamma 0.49 +- 0.08", lambda g: g["mar-ample"].mean_ratio,
     lambda v: _within(v, 0.49, 0.08)),
    ("C1.i", "strong-none percent bias -1.53 +- 5", lambda g: g["strong-none"].percent_bias,
     lambda v: _within(v, -1.53, 5)),
    ("C1.j", "strong-none coverage >= 0.90", lambda g: g["strong-none"].coverage, lambda v: v >= 0.90),
    ("C1.k", "misspec-ample coverage >= 0.75 and > misspec-none",
     lambda g: (g["misspec-ample"].coverage, g["misspec-none"].coverage),
     lambda v: v[0] >= 0.75 and v[0] > v[1]),
]


@pytest.mark.parametrize("cid, title, get, check", C1_CHECKS, ids=[c[0] for c in C1_CHECKS])
def test_c1_grid_targets(grid_metrics, criterion, cid, title, get, check):
    value = get(grid_metrics)
    ok = check(value)
    shown = tuple(round(x, 4) for x in value) if isinstance(value, tuple) else round(value, 4)
    criterion(cid, title, ok, f"observed {shown}")
    assert ok, f"{title}: observed {shown}"


@pytest.mark.parametrize("cid, field", [("C1.l", "ci_width"), ("C1.m", "mean_ratio")])
def test_c1_monotone_in_uncertainty(grid_metrics, criterion, cid, field):
    bad = []
    for a, _ in IGNORABILITY:
        values = [getattr(grid_metrics[f"{a}-{b}"], field) for b, _ in UNCERTAINTY]
        if not all(x < y for x, y in zip(values, values[1:])):
            bad.append(f"{a}: {[round(v, 4) for v in values]}")
    ok = not bad
    criterion(cid, f"{field} strictly increasing in multiplier sd within every block", ok, "; ".join(bad))
    assert ok, bad


def test_c1_no_failed_replications(grid_metrics):
    assert all(m.replications_failed == 0 for m in grid_metrics.values())


# ---------------------------------------------------------------------------
# C2: pooling oracle


def test_c2_pooling_hand_grid(criterion):
    p = pool_nested(NestedEstimateGrid(np.array([[1.0, 2.0], [3.0, 4.0]]), np.ones((2, 2))))
    # rational evaluation: B' = (1 + 1/2) 2 = 3, W' = (1 - 1/2) 0.5 = 1/4, T = 1 + 3 + 1/4
    T = Fraction(17, 4)
    inv_df = (Fraction(3) / T) ** 2 / 1 + (Fraction(1, 4) / T) ** 2 / 2
    df = 1 / inv_df
    errs = [abs(p.q_bar - 2.5), abs(p.w - 0.5), abs(p.b - 2.0), abs(p.t - 4.25), abs(p.df - float(df))]
    ok = max(errs) <= 1e-12
    criterion("C2", "nested pooling hand grid exact to 1e-12", ok, f"df={p.df!r} oracle={float(df)!r}")
    assert ok


# ---------------------------------------------------------------------------
# C3: missing-information identities


def test_c3_missing_information(criterion):
    first = missing_information(1.0, 1.0, 0.0, 2)
    second = missing_information(1.0, 0.0, 1.0, 2)
    exact = (abs(first[0] - 1 / 3) <= 1e-15 and first[1:] == (0.5, 0.0, 0.0)
             and second == (0.5, 0.0, 0.5, 1.0))
    rng = np.random.default_rng(2024)
    monotone = True
    for _ in range(1000):
        u = rng.uniform(1e-3, 10)
        w = rng.uniform(0, 10)
        b1, b2 = np.sort(rng.uniform(0, 10, 2))
        n = int(rng.integers(1, 20))
        monotone &= missing_information(u, w, b1, n)[0] <= missing_information(u, w, b2, n)[0]
    ok = exact and monotone
    criterion("C3", "missing-information triples and monotonicity in B (1000 draws)", ok,
              f"triples exact={exact} monotone={monotone}")
    assert ok


# ---------------------------------------------------------------------------
# C4: variance decomposition against a conjugate posterior


def test_c4_conjugate_normal_mean(criterion):
    """Known-variance normal mean, 50% MCAR, point-mass multiplier.

    Imputations are posterior predictive draws under a flat prior, so the
    posterior variance of the mean is sigma^2 / n_obs.
    """
    n, sigma2, mu, M, N = 200, 4.0, 10.0, 200, 200
    sigma = math.sqrt(sigma2)
    dist = MultiplierDistribution.point(1.0)
    ratios = []
    for trial in range(50):
        base = StreamPath(77).child("trial", trial)
        rng = derive_stream(base.child("data", 0))
        y = rng.normal(mu, sigma, n)
        observed = rng.random(n) < 0.5
        n_obs, n_mis = int(observed.sum()), int((~observed).sum())
        ybar = y[observed].mean()
        irng = derive_stream(base.child("ignorable", 0))
        mu_star = ybar + sigma / math.sqrt(n_obs) * irng.standard_normal((M, N))
        y_mis = mu_star[..., None] + sigma * irng.standard_normal((M, N, n_mis))
        ks = [draw_multiplier(dist, derive_stream(base.child("model", m))) for m in range(M)]
        y_mis = np.stack([apply_multiplier(y_mis[m], ks[m]) for m in range(M)])
        q = (y[observed].sum() + y_mis.sum(axis=2)) / n
        pooled = pool_nested(NestedEstimateGrid(q, np.full((M, N), sigma2 / n)))
        ratios.append(pooled.t / (sigma2 / n_obs))
    mean_ratio = float(np.mean(ratios))
    ok = abs(mean_ratio - 1) <= 0.05
    criterion("C4", "T matches conjugate posterior variance within 5% (50 trials)", ok,
              f"mean T / posterior var = {mean_ratio:.4f}")
    assert ok


# ---------------------------------------------------------------------------
# C5: mixed-model fit


def test_c5_lmm_recovery(criterion):
    p = TrialGenParams(beta=(25.0, -3.0, 0.0, -1.0, 0.0), resid_var_drop=9.0, resid_var_nondrop=9.0,
                       n_per_arm=2500, n_dropouts_per_arm=1666)
    rng = derive_stream(StreamPath(5000).child("data", 0))
    full, drop = generate_complete(p, rng)
    d = apply_dropout(full, drop, p.drop_hazard, derive_stream(StreamPath(5000).child("dropout", 0)))
    fit = fit_lmm_ml(d)
    se = np.sqrt(np.diag(fit.fixed_cov))
    z_truth = np.abs(fit.fixed_estimates - np.array([25.0, -3.0, 0.0, -1.0])) / se
    beta_gls, _ = gls_known_variance(d, None, np.array(p.re_cov), 9.0)
    z_gls = np.abs(fit.fixed_estimates - beta_gls) / se

    zero = TrialGenParams(beta=(25.0, -3.0, 0.0, -1.0, 0.0), re_cov=((0.0, 0.0), (0.0, 0.0)),
                          resid_var_drop=0.0, resid_var_nondrop=0.0)
    zrng = derive_stream(StreamPath(5001))
    zfull, zdrop = generate_complete(zero, zrng)
    zfit = fit_lmm_ml(apply_dropout(zfull, zdrop, zero.drop_hazard, zrng))
    zero_err = float(np.max(np.abs(zfit.fixed_estimates - np.array([25.0, -3.0, 0.0, -1.0]))))

    ok = fit.converged and z_truth.max() <= 3 and z_gls.max() <= 3 and zero_err <= 1e-8
    criterion("C5", "LMM recovers truth and GLS within 3 se; zero noise to 1e-8", ok,
              f"max z truth={z_truth.max():.2f} gls={z_gls.max():.2f} zero-noise err={zero_err:.1e}")
    assert ok


# ---------------------------------------------------------------------------
# C6: mechanism layer


def test_c6_mechanism(criterion, trial_data):
    rng = np.random.default_rng(6)
    y = rng.normal(0, 50, 100_000)
    k1, k2 = np.sort(rng.uniform(-3, 3, (2, 100_000)), axis=0)
    identity = np.array_equal(apply_multiplier(y, 1.0), y)
    mono_k = bool(np.all(apply_multiplier(y, k1) <= apply_multiplier(y, k2)))
    kb = rng.uniform(0, 2, 100_000)
    y_lo, y_hi = np.sort(rng.normal(0, 50, (2, 100_000)), axis=0)
    mono_y = bool(np.all(apply_multiplier(y_lo, kb) <= apply_multiplier(y_hi, kb)))

    _, _, masked, _ = trial_data
    cfg = ImputerConfig(tuple(f"y_t{j}" for j in range(5)), group_by="tx")
    spread = nested_impute(masked, NestedImputationPlan(
        MechanismSpec(MultiplierDistribution.normal(1.5, 0.5)), cfg, 3, 2, master_seed=4))
    keep = ~masked.mask
    untouched = all(d.values[keep].tobytes() == masked.values[keep].tobytes() for d in spread.flat())

    degenerate = nested_impute(masked, NestedImputationPlan(
        MechanismSpec(MultiplierDistribution.normal(1.7, 0.0)), cfg, 2, 2, master_seed=4))
    point = nested_impute(masked, NestedImputationPlan(
        MechanismSpec(MultiplierDistribution.point(1.7)), cfg, 2, 2, master_seed=4))
    bit_exact = all(a.values.tobytes() == b.values.tobytes() for a, b in zip(degenerate.flat(), point.flat()))

    ok = identity and mono_k and mono_y and untouched and bit_exact
    criterion("C6", "multiplier properties (1e5 pairs), masked-only transform, degenerate = point", ok,
              f"identity={identity} mono_k={mono_k} mono_y={mono_y} untouched={untouched} bit_exact={bit_exact}")
    assert ok


# ---------------------------------------------------------------------------
# C7: determinism of the simulate command


def test_c7_simulate_determinism(criterion, tmp_path, capsys):
    args = ["simulate", "--seed", "99", "--scenarios", "mar-none,strong-ample,misspec-mild",
            "--reps", "6", "--models", "10"]
    runs = {"a": ["--threads", "1"], "b": ["--threads", "1"], "c": ["--threads", "8"]}
    codes = [main(args + extra + ["--out", str(tmp_path / key)]) for key, extra in runs.items()]
    capsys.readouterr()
    same = all(
        (tmp_path / "a" / f).read_bytes() == (tmp_path / key / f).read_bytes()
        for key in ("b", "c") for f in ("metrics.csv", "run_log.json")
    )
    ok = codes == [0, 0, 0] and same
    criterion("C7", "simulate byte-identical across runs and --threads 1 vs 8", ok, f"exit codes {codes}")
    assert ok
