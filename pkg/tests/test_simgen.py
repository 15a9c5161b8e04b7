import numpy as np
import pytest

from mmmi.core import ParameterError, StreamPath, derive_stream
from mmmi.imputer import is_monotone
from mmmi.simgen import TrialGenParams, apply_dropout, generate_complete, true_target


def _analytic_moments(p: TrialGenParams, arm: int):
    """Mean and variance of y_t per timepoint for one arm, mixing dropout groups."""
    t = np.arange(p.timepoints, dtype=float)
    b0, b1, b2, b3, b4 = p.beta
    share = p.n_dropouts_per_arm / p.n_per_arm
    base = b0 + b1 * t + arm * (b2 + b3 * t)
    mean_d, mean_n = base + b4 * t, base
    G = np.asarray(p.re_cov)
    re_var = G[0, 0] + 2 * G[0, 1] * t + G[1, 1] * t**2
    var = re_var + share * p.resid_var_drop + (1 - share) * p.resid_var_nondrop
    var = var + share * (1 - share) * (mean_d - mean_n) ** 2
    return share * mean_d + (1 - share) * mean_n, var


def test_moments_match_the_generator_analytically():
    p = TrialGenParams(n_per_arm=60000, n_dropouts_per_arm=40000)
    d, drop = generate_complete(p, derive_stream(StreamPath(3)))
    y = d.values[:, 2:]
    tx = d.get("tx")
    for arm in (0, 1):
        mean, var = _analytic_moments(p, arm)
        sample = y[tx == arm]
        se_mean = np.sqrt(var / sample.shape[0])
        assert np.all(np.abs(sample.mean(0) - mean) < 4 * se_mean)
        assert np.allclose(sample.var(0), var, rtol=0.03)
    # pooled baseline variance: 4 + (2/3) 16 + (1/3) 9
    assert _analytic_moments(p, 0)[1][0] == pytest.approx(17.0 + 2 / 3)


def test_dropout_pattern_and_marginal_missingness():
    p = TrialGenParams(n_per_arm=30000, n_dropouts_per_arm=20000)
    rng = derive_stream(StreamPath(4))
    full, drop = generate_complete(p, rng)
    d = apply_dropout(full, drop, p.drop_hazard, rng)
    mask = d.mask[:, 2:]
    assert not mask[:, 0].any()
    assert not mask[~drop].any()
    assert mask[drop, -1].all()
    assert is_monotone(mask)
    # hazards (.25, .5, .75, 1) give missing shares .167, .417, .604, .667
    expected = (2 / 3) * (1 - np.cumprod(1 - np.array(p.drop_hazard)))
    assert np.allclose(mask[:, 1:].mean(0), expected, atol=0.01)
    assert np.allclose(expected, [0.17, 0.42, 0.60, 0.67], atol=0.005)


def test_observed_cells_unchanged_by_dropout(trial_data):
    _, full, masked, _ = trial_data
    keep = ~masked.mask
    assert np.array_equal(full.values[keep], masked.values[keep])


def test_true_target_is_minus_three():
    assert true_target(TrialGenParams()) == pytest.approx(-3.0)


def test_same_stream_same_data():
    p = TrialGenParams()
    a, _ = generate_complete(p, derive_stream(StreamPath(9)))
    b, _ = generate_complete(p, derive_stream(StreamPath(9)))
    assert a.same_content(b)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"beta": (1.0, 2.0)},
        {"re_cov": ((1.0, 2.0), (2.0, 1.0))},
        {"resid_var_drop": -1.0},
        {"n_dropouts_per_arm": 200},
        {"drop_hazard": (0.5, 0.5, 0.5, 0.5)},
        {"drop_hazard": (0.5, 1.0)},
    ],
)
def test_invalid_parameters(kwargs):
    with pytest.raises(ParameterError):
        TrialGenParams(**kwargs)


def test_zero_variance_generator_is_exact():
    p = TrialGenParams(re_cov=((0.0, 0.0), (0.0, 0.0)), resid_var_drop=0.0, resid_var_nondrop=0.0)
    d, drop = generate_complete(p, derive_stream(StreamPath(1)))
    t = np.arange(5.0)
    tx = d.get("tx")
    expect = 25 - 3 * t[None] - 1 * tx[:, None] * t[None] + 1.5 * drop[:, None] * t[None]
    assert np.allclose(d.values[:, 2:], expect, rtol=0, atol=1e-12)
