"""
Ignorable (MAR) multiple imputation of continuous columns.

Each incomplete column is imputed from a normal linear regression whose
coefficients and residual scale are drawn from their posterior before the
missing cells are drawn, so repeated imputations carry estimation
uncertainty (Rubin's "proper" imputation).  Two drivers are provided:

* ``impute_monotone`` -- one left-to-right pass, valid when the missingness
  pattern is monotone in ``column_order``;
* ``impute_chained`` -- chained equations (fully conditional specification)
  for arbitrary patterns.

When ``group_by`` is set each stratum is imputed on its own rows only, from
its own random stream.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .core import (
    ConfigError,
    LongitudinalDataset,
    PatternError,
    SingularDesignError,
    StreamPath,
    derive_stream,
)

_COND_LIMIT = 1e12


@dataclass(frozen=True)
class ImputerConfig:
    """Settings for the ignorable imputation stage.

    Parameters
    ----------
    column_order : tuple of str
        Continuous columns to impute, in visiting order.
    group_by : str, optional
        Impute each level of this column separately.
    predictors : tuple of str
        Fully observed columns added to every regression.  Nominal columns are
        dummy coded.
    sweeps : int
        Chained-equation cycles; ignored by the monotone driver.
    ridge_epsilon : float
        Ridge added (scaled by mean diagonal of X'X) only when X'X is
        numerically singular.  Zero disables the rescue.
    method : {"auto", "monotone", "chained"}
        "auto" picks monotone when the pattern allows it.
    """

    column_order: tuple[str, ...]
    group_by: str | None = None
    predictors: tuple[str, ...] = ()
    sweeps: int = 10
    ridge_epsilon: float = 1e-8
    method: str = "auto"

    def __post_init__(self):
        object.__setattr__(self, "column_order", tuple(self.column_order))
        object.__setattr__(self, "predictors", tuple(self.predictors))
        if not self.column_order:
            raise ConfigError("column_order must name at least one column")
        if self.sweeps < 1:
            raise ConfigError("sweeps must be at least 1")
        if self.ridge_epsilon < 0:
            raise ConfigError("ridge_epsilon must be non-negative")
        if self.method not in ("auto", "monotone", "chained"):
            raise ConfigError(f"unknown imputation method {self.method!r}")
        overlap = set(self.column_order) & set(self.predictors)
        if overlap:
            raise ConfigError("columns listed both as imputed and as predictors: " + ", ".join(sorted(overlap)))


def _rank_deficient_columns(X, names):
    _, r, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag.max() * max(X.shape) * np.finfo(float).eps if diag.size else 0.0
    rank = int((diag > tol).sum())
    cols = piv[rank:]
    return [names[j] if names is not None else f"x{j}" for j in sorted(cols)]


def posterior_draw_linear(X, y, rng: np.random.Generator, ridge_epsilon: float = 1e-8, names=None):
    """Draw (beta*, sigma*) from the posterior of a normal linear regression.

    ``sigma*^2 = RSS / c`` with ``c ~ chi^2(n - p)``, then
    ``beta* ~ N(beta_hat, sigma*^2 (X'X)^-1)``.  The chi-square draw is taken
    first, then ``p`` standard normals.

    Raises
    ------
    SingularDesignError
        If ``n <= p`` or X'X stays singular after the ridge rescue.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if n <= p:
        raise SingularDesignError(f"regression has {n} rows for {p} coefficients (need n > p)", names or ())

    xtx = X.T @ X
    chol = None
    try:
        chol = np.linalg.cholesky(xtx)
        d = np.diag(chol)
        if d.min() ** 2 * _COND_LIMIT < d.max() ** 2:
            chol = None
    except np.linalg.LinAlgError:
        pass
    if chol is None:
        bad = _rank_deficient_columns(X, names)
        if ridge_epsilon == 0:
            raise SingularDesignError("singular design; offending columns: " + ", ".join(bad), bad)
        xtx = xtx + ridge_epsilon * (np.trace(xtx) / p) * np.eye(p)
        try:
            chol = np.linalg.cholesky(xtx)
        except np.linalg.LinAlgError:
            raise SingularDesignError(
                "design remains singular after ridge; offending columns: " + ", ".join(bad), bad
            ) from None

    beta_hat = scipy.linalg.cho_solve((chol, True), X.T @ y)
    resid = y - X @ beta_hat
    rss = float(resid @ resid)
    if rss <= (64 * np.finfo(float).eps) ** 2 * float(y @ y):
        rss = 0.0

    c = rng.chisquare(n - p)
    sigma = np.sqrt(rss / c)
    z = rng.standard_normal(p)
    # chol(X'X)^-T z has covariance (X'X)^-1
    beta = beta_hat + sigma * scipy.linalg.solve_triangular(chol, z, lower=True, trans="T")
    return beta, float(sigma)


# ---------------------------------------------------------------------------
# helpers shared by the drivers


def _check_columns(d: LongitudinalDataset, cfg: ImputerConfig):
    for name in cfg.column_order:
        col = d.column(name)
        if col.kind != "continuous" or col.role in ("id", "group"):
            raise ConfigError(f"column {name!r} is not a continuous variable and cannot be imputed")
    for name in cfg.predictors:
        if d.missing(name).any():
            raise ConfigError(f"predictor {name!r} has missing values; list it in column_order instead")
    if cfg.group_by is not None and d.missing(cfg.group_by).any():
        raise ConfigError(f"group column {cfg.group_by!r} has missing values")


def _predictor_block(d: LongitudinalDataset, rows, names):
    """Intercept plus fully observed predictors (nominal ones dummy coded)."""
    blocks = [np.ones((len(rows), 1))]
    labels = ["(intercept)"]
    for name in names:
        x = d.get(name)[rows]
        if d.column(name).kind == "nominal":
            levels = np.unique(d.get(name))
            for lvl in levels[1:]:
                blocks.append((x == lvl).astype(float)[:, None])
                labels.append(f"{name}[{lvl:g}]")
        else:
            blocks.append(x[:, None])
            labels.append(name)
    return np.hstack(blocks), labels


def _strata(d: LongitudinalDataset, cfg: ImputerConfig, path: StreamPath):
    if cfg.group_by is None:
        yield np.arange(d.n_subjects), path
        return
    g = d.get(cfg.group_by)
    for i, level in enumerate(np.unique(g)):
        yield np.flatnonzero(g == level), path.child("group", i)


def is_monotone(mask) -> bool:
    """True when, row by row, a missing cell is never followed by an observed one."""
    mask = np.asarray(mask, dtype=bool)
    return bool(np.all(mask[:, 1:] >= mask[:, :-1])) if mask.shape[1] > 1 else True


def _finish(d: LongitudinalDataset, values, cfg):
    mask = d.mask.copy()
    for name in cfg.column_order:
        mask[:, d.index(name)] = False
    return d.replace(values=values, mask=mask)


# ---------------------------------------------------------------------------
# drivers


def impute_monotone(d: LongitudinalDataset, cfg: ImputerConfig, path: StreamPath) -> LongitudinalDataset:
    """One pass over ``column_order``; each column is regressed on the
    predictors and every earlier column within the stratum."""
    _check_columns(d, cfg)
    cols = [d.index(c) for c in cfg.column_order]
    if not d.mask[:, cols].any():
        return d
    if not is_monotone(d.mask[:, cols]):
        raise PatternError(
            "missingness is not monotone in column_order; use impute_chained (method='chained')"
        )

    values = d.values.copy()
    for rows, sub in _strata(d, cfg, path):
        rng = derive_stream(sub)
        base, base_names = _predictor_block(d, rows, cfg.predictors)
        for j, col in enumerate(cols):
            miss = d.mask[rows, col]
            if not miss.any():
                continue
            X = np.hstack([base, values[np.ix_(rows, cols[:j])]])
            names = base_names + list(cfg.column_order[:j])
            beta, sigma = posterior_draw_linear(
                X[~miss], values[rows[~miss], col], rng, cfg.ridge_epsilon, names
            )
            z = rng.standard_normal(int(miss.sum()))
            values[rows[miss], col] = X[miss] @ beta + sigma * z
    return _finish(d, values, cfg)


def impute_chained(d: LongitudinalDataset, cfg: ImputerConfig, path: StreamPath) -> LongitudinalDataset:
    """Chained-equations imputation.

    Missing cells start at their stratum mean.  Each sweep visits the columns
    in order and redraws a column's missing cells from a posterior-draw
    regression on the predictors and all other listed columns (current
    values), fitted to the rows where that column was observed.
    """
    _check_columns(d, cfg)
    cols = [d.index(c) for c in cfg.column_order]
    if not d.mask[:, cols].any():
        return d

    values = d.values.copy()
    for rows, sub in _strata(d, cfg, path):
        rng = derive_stream(sub)
        base, base_names = _predictor_block(d, rows, cfg.predictors)
        p = base.shape[1] + len(cols) - 1
        for col, name in zip(cols, cfg.column_order):
            miss = d.mask[rows, col]
            if miss.all():
                raise SingularDesignError(f"column {name!r} has no observed values in a stratum", [name])
            if miss.any() and (~miss).sum() <= p:
                raise SingularDesignError(
                    f"column {name!r} has {(~miss).sum()} observed rows in a stratum; need more than {p}",
                    [name],
                )
            values[rows[miss], col] = values[rows[~miss], col].mean()

        for _ in range(cfg.sweeps):
            for j, col in enumerate(cols):
                miss = d.mask[rows, col]
                if not miss.any():
                    continue
                others = cols[:j] + cols[j + 1:]
                X = np.hstack([base, values[np.ix_(rows, others)]])
                names = base_names + [c for c in cfg.column_order if c != cfg.column_order[j]]
                beta, sigma = posterior_draw_linear(
                    X[~miss], values[rows[~miss], col], rng, cfg.ridge_epsilon, names
                )
                z = rng.standard_normal(int(miss.sum()))
                values[rows[miss], col] = X[miss] @ beta + sigma * z
    return _finish(d, values, cfg)


def impute_once(d: LongitudinalDataset, cfg: ImputerConfig, path: StreamPath) -> LongitudinalDataset:
    method = cfg.method
    if method == "auto":
        cols = [d.index(c) for c in cfg.column_order]
        method = "monotone" if is_monotone(d.mask[:, cols]) else "chained"
    if method == "monotone":
        return impute_monotone(d, cfg, path)
    return impute_chained(d, cfg, path)


def generate_ignorable_set(d: LongitudinalDataset, count: int, cfg: ImputerConfig, path: StreamPath):
    """``count`` completed datasets, imputation ``i`` drawn from ``path.child("imputation", i)``."""
    if count < 1:
        raise ConfigError("count must be at least 1")
    return [impute_once(d, cfg, path.child("imputation", i)) for i in range(count)]
