import numpy as np
import pytest

from mmmi.core import ConfigError, PatternError, SingularDesignError, StreamPath, derive_stream
from mmmi.imputer import (
    ImputerConfig,
    generate_ignorable_set,
    impute_chained,
    impute_monotone,
    impute_once,
    posterior_draw_linear,
)

from conftest import make_dataset

OUTCOMES = tuple(f"y_t{j}" for j in range(5))


def test_exact_linear_data_gives_zero_sigma_and_exact_beta():
    x = np.arange(10.0)
    X = np.column_stack([np.ones(10), x])
    beta, sigma = posterior_draw_linear(X, 3 + 2 * x, derive_stream(StreamPath(0)))
    assert sigma == 0.0
    assert np.allclose(beta, [3, 2], atol=1e-12)


def test_posterior_draws_center_on_least_squares():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(10_000)
    y = 2 * x + rng.standard_normal(10_000)
    X = x[:, None]
    draws = [posterior_draw_linear(X, y, derive_stream(StreamPath(1).child("d", i)))[0][0] for i in range(1000)]
    beta_ls = np.linalg.lstsq(X, y, rcond=None)[0][0]
    # posterior sd of the slope is about 1/sqrt(n) = 0.01
    assert np.std(draws) == pytest.approx(0.01, rel=0.1)
    assert np.mean(draws) == pytest.approx(beta_ls, abs=4 * 0.01 / np.sqrt(1000))
    assert np.mean(draws) == pytest.approx(2.0, abs=0.04)


def test_duplicated_column_without_ridge_names_the_column():
    x = np.arange(20.0)
    X = np.column_stack([np.ones(20), x, x])
    with pytest.raises(SingularDesignError) as exc:
        posterior_draw_linear(X, x + 1, derive_stream(StreamPath(0)), ridge_epsilon=0, names=["1", "a", "b"])
    assert set(exc.value.columns) & {"a", "b"}


def test_duplicated_column_with_ridge_is_rescued():
    rng = np.random.default_rng(1)
    x = rng.standard_normal(50)
    X = np.column_stack([np.ones(50), x, x])
    beta, sigma = posterior_draw_linear(X, x + rng.standard_normal(50), derive_stream(StreamPath(0)))
    assert np.all(np.isfinite(beta)) and sigma > 0


def test_too_few_rows():
    with pytest.raises(SingularDesignError):
        posterior_draw_linear(np.ones((2, 2)), np.ones(2), derive_stream(StreamPath(0)))


def test_complete_dataset_is_returned_unchanged():
    d = make_dataset([[1, 0, 1.0, 2.0], [2, 1, 3.0, 4.0]])
    out = impute_monotone(d, ImputerConfig(("y_t0", "y_t1")), StreamPath(0))
    assert out.same_content(d)
    assert impute_chained(d, ImputerConfig(("y_t0", "y_t1")), StreamPath(0)).same_content(d)


def test_zero_residual_propagates_exactly():
    y1 = np.arange(1.0, 13.0)
    y2 = y1.copy()
    y2[[3, 7]] = np.nan
    d = make_dataset(np.column_stack([np.arange(12), np.zeros(12), y1, y2]))
    out = impute_monotone(d, ImputerConfig(("y_t0", "y_t1")), StreamPath(2))
    assert np.allclose(out.get("y_t1"), y1, atol=1e-10)
    assert not out.mask.any()


def test_mar_imputation_under_imputes_elevated_dropouts(trial_data):
    p, full, masked, drop = trial_data
    cfg = ImputerConfig(OUTCOMES, group_by="tx")
    sets = generate_ignorable_set(masked, 200, cfg, StreamPath(5))
    treated = masked.get("tx") == 1
    means = np.array([s.get("y_t4")[treated].mean() for s in sets])
    # mixture mean of treated y_t4: 25 - 16 + (2/3) 1.5 * 4 = 13
    b = p.beta
    true_mean = b[0] + 4 * (b[1] + b[3]) + (2 / 3) * b[4] * 4
    assert true_mean == pytest.approx(13.0)
    assert means.mean() < true_mean - 1.0
    assert means.var(ddof=1) > 0


def test_observed_cells_never_change(trial_data):
    _, _, masked, _ = trial_data
    cfg = ImputerConfig(OUTCOMES, group_by="tx")
    for imp in (impute_monotone, impute_chained):
        out = imp(masked, cfg, StreamPath(3))
        keep = ~masked.mask
        assert out.values[keep].tobytes() == masked.values[keep].tobytes()
        assert not out.mask.any()


def test_chained_agrees_with_monotone_on_monotone_data(trial_data):
    _, _, masked, _ = trial_data
    mono = generate_ignorable_set(masked, 200, ImputerConfig(OUTCOMES, group_by="tx", method="monotone"),
                                  StreamPath(8))
    chain = generate_ignorable_set(masked, 200, ImputerConfig(OUTCOMES, group_by="tx", method="chained", sweeps=3),
                                   StreamPath(9))
    a = np.array([s.get("y_t4").mean() for s in mono])
    b = np.array([s.get("y_t4").mean() for s in chain])
    se = np.sqrt(a.var(ddof=1) / a.size + b.var(ddof=1) / b.size)
    assert abs(a.mean() - b.mean()) < 3 * se


def test_chained_single_missing_cell_is_one_regression_draw():
    rng = np.random.default_rng(4)
    n = 30
    y0 = rng.standard_normal(n)
    y1 = 1 + 2 * y0 + 0.5 * rng.standard_normal(n)
    y1_masked = y1.copy()
    y1_masked[5] = np.nan
    d = make_dataset(np.column_stack([np.arange(n), np.zeros(n), y0, y1_masked]))
    cfg = ImputerConfig(("y_t0", "y_t1"), sweeps=1, method="chained")
    out = impute_chained(d, cfg, StreamPath(6))
    # replay: one posterior draw on the 29 complete rows, then one normal
    rng2 = derive_stream(StreamPath(6))
    keep = np.arange(n) != 5
    X = np.column_stack([np.ones(n), y0])
    beta, sigma = posterior_draw_linear(X[keep], y1[keep], rng2)
    expect = X[5] @ beta + sigma * rng2.standard_normal(1)[0]
    assert out.get("y_t1")[5] == pytest.approx(expect, abs=1e-12)


def test_groups_are_imputed_from_their_own_rows(trial_data):
    _, _, masked, _ = trial_data
    cfg = ImputerConfig(OUTCOMES, group_by="tx")
    a = impute_monotone(masked, cfg, StreamPath(1))
    # scramble control-arm outcomes, permuting rows within the control arm
    perm = np.arange(masked.n_subjects)
    control = np.flatnonzero(masked.get("tx") == 0)
    perm[control] = control[::-1]
    shuffled = masked.replace(values=masked.values[perm], mask=masked.mask[perm])
    b = impute_monotone(shuffled, cfg, StreamPath(1))
    treated = masked.get("tx") == 1
    assert np.array_equal(a.values[treated], b.values[treated])


def test_non_monotone_pattern_is_rejected_by_monotone_driver():
    d = make_dataset([[1, 0, 1.0, np.nan, 2.0], [2, 0, 1.0, 2.0, 3.0]])
    with pytest.raises(PatternError):
        impute_monotone(d, ImputerConfig(("y_t0", "y_t1", "y_t2")), StreamPath(0))


def test_auto_uses_chained_for_intermittent_missingness():
    rng = np.random.default_rng(2)
    v = rng.standard_normal((40, 3)) + 10
    v[3, 1] = np.nan
    v[7, 0] = np.nan
    d = make_dataset(np.column_stack([np.arange(40), np.zeros(40), v]))
    out = impute_once(d, ImputerConfig(("y_t0", "y_t1", "y_t2")), StreamPath(0))
    assert not out.mask.any()


def test_same_path_same_set(trial_data):
    _, _, masked, _ = trial_data
    cfg = ImputerConfig(OUTCOMES, group_by="tx")
    a = generate_ignorable_set(masked, 3, cfg, StreamPath(4))
    b = generate_ignorable_set(masked, 3, cfg, StreamPath(4))
    assert all(x.same_content(y) for x, y in zip(a, b))
    assert not a[0].same_content(a[1])


def test_config_validation():
    with pytest.raises(ConfigError):
        ImputerConfig(())
    with pytest.raises(ConfigError):
        ImputerConfig(("a",), sweeps=0)
    with pytest.raises(ConfigError):
        ImputerConfig(("a",), predictors=("a",))
    d = make_dataset([[1, 0, 1.0], [2, 0, np.nan]])
    with pytest.raises(ConfigError):
        impute_monotone(d, ImputerConfig(("g",)), StreamPath(0))
