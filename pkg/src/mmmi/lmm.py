"""
Linear mixed model with a per-subject random intercept and slope on time.

The model for subject ``i`` is ``y_i = X_i beta + Z_i b_i + e_i`` with
``b_i ~ N(0, G)``, ``e_i ~ N(0, sigma^2 I)`` and ``Z_i = [1, t]`` on the
subject's observed visits.  Writing ``G = sigma^2 L L'`` the fixed effects and
``sigma^2`` are profiled out in closed form, leaving a three-parameter
objective in the lower-triangular ``L``.  Any real ``L`` gives a valid PSD
``G``, so boundary fits (zero variance, perfect correlation) are reachable.

Subjects sharing an observed-visit pattern share ``Z``.  For each pattern the
fit only needs the cross-product moments ``sum_i X_i[s]' X_i[t]``,
``sum_i X_i[s]' y_i[t]`` and ``sum_i y_i[s] y_i[t]``, so one likelihood
evaluation costs a handful of tiny matrix operations regardless of the number
of subjects.  Datasets with a common design (e.g. every completed copy in an
imputation grid) are fitted together in one batched Newton iteration.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .core import (
    ConfigError,
    DataError,
    FitError,
    LongitudinalDataset,
    ParameterError,
    ScalarEstimate,
    SingularDesignError,
)

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class LmmSpec:
    """Analysis model specification.

    Parameters
    ----------
    outcomes : tuple of str
        Outcome columns (wide format, one per visit).  Empty means every
        outcome column of the dataset, ordered by time code.
    group : str, optional
        Arm column; contributes a main effect and an interaction with time per
        non-reference level.  ``None`` uses the dataset's group column.
    reference : float, optional
        Reference level of ``group``; defaults to the smallest level.
    covariates : tuple of str
        Additional subject-level fixed effects (nominal ones dummy coded).
    reml : bool
        Restricted instead of full maximum likelihood.
    """

    outcomes: tuple[str, ...] = ()
    group: str | None = None
    reference: float | None = None
    covariates: tuple[str, ...] = ()
    reml: bool = False
    max_iter: int = 500
    tol_loglik: float = 1e-8
    tol_param: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "outcomes", tuple(self.outcomes))
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if self.max_iter < 1:
            raise ConfigError("max_iter must be at least 1")


@dataclass(frozen=True, eq=False)
class LmmFit:
    fixed_names: tuple[str, ...]
    fixed_estimates: np.ndarray
    fixed_cov: np.ndarray
    re_cov_hat: np.ndarray
    resid_var_hat: float
    loglik: float
    converged: bool
    iterations: int
    n_subjects: int
    n_obs: int
    reml: bool = False
    trace: tuple[float, ...] = ()

    def coef(self, name: str) -> float:
        return float(self.fixed_estimates[self.fixed_names.index(name)])


# ---------------------------------------------------------------------------
# design


@dataclass(frozen=True, eq=False)
class _Design:
    names: tuple[str, ...]
    times: np.ndarray            # (S,)
    outcome_idx: np.ndarray      # dataset column index per visit
    rows: np.ndarray             # dataset rows kept (subjects with >= 1 observation)
    X: np.ndarray                # (n, S, p) fixed-effect rows per subject and visit
    observed: np.ndarray         # (n, S) bool
    blocks: tuple                # (visit indices, subject positions) per pattern
    n_obs: int


def build_design(d: LongitudinalDataset, spec: LmmSpec) -> _Design:
    outcome_cols = [d.column(n) for n in spec.outcomes] if spec.outcomes else d.outcome_columns
    if not outcome_cols:
        raise ConfigError("the analysis model needs at least one outcome column")
    for c in outcome_cols:
        if c.time is None:
            raise ConfigError(f"outcome column {c.name!r} has no time code")
    times = np.array([c.time for c in outcome_cols], dtype=float)
    if np.any(np.diff(times) <= 0):
        raise ConfigError("outcome time codes must be strictly increasing")
    oidx = np.array([d.index(c.name) for c in outcome_cols])

    observed_all = ~d.mask[:, oidx]
    rows = np.flatnonzero(observed_all.any(axis=1))
    if rows.size == 0:
        raise DataError("no subject has an observed outcome")
    observed = observed_all[rows]
    n, S = observed.shape

    group = spec.group
    if group is None:
        gc = d.group_column
        group = gc.name if gc is not None else None

    subj_cols = [np.ones(n)]
    names = ["intercept"]
    names_t = ["time"]
    if group is not None:
        if d.missing(group)[rows].any():
            raise DataError(f"group column {group!r} has missing values")
        g = d.get(group)[rows]
        levels = np.unique(g)
        ref = levels[0] if spec.reference is None else float(spec.reference)
        if ref not in levels:
            raise ConfigError(f"reference level {ref:g} does not occur in {group!r}")
        for lvl in levels:
            if lvl == ref:
                continue
            subj_cols.append((g == lvl).astype(float))
            names.append(f"{group}[{lvl:g}]")
            names_t.append(f"{group}[{lvl:g}]:time")
    cov_cols, cov_names = [], []
    for name in spec.covariates:
        if d.missing(name)[rows].any():
            raise DataError(f"covariate {name!r} has missing values")
        x = d.get(name)[rows]
        if d.column(name).kind == "nominal":
            for lvl in np.unique(x)[1:]:
                cov_cols.append((x == lvl).astype(float))
                cov_names.append(f"{name}[{lvl:g}]")
        else:
            cov_cols.append(x)
            cov_names.append(name)

    # columns: subject-level terms, their time interactions, then covariates
    base = np.column_stack(subj_cols)                        # (n, k)
    X = np.concatenate(
        [
            np.broadcast_to(base[:, None, :], (n, S, base.shape[1])),
            base[:, None, :] * times[None, :, None],
            np.broadcast_to(np.column_stack(cov_cols)[:, None, :], (n, S, len(cov_cols)))
            if cov_cols else np.zeros((n, S, 0)),
        ],
        axis=2,
    )
    names = names[:1] + names_t[:1] + names[1:] + names_t[1:] + cov_names
    # reorder to intercept, time, group terms, group:time terms, covariates
    k = base.shape[1]
    order = [0, k] + list(range(1, k)) + list(range(k + 1, 2 * k)) + list(range(2 * k, X.shape[2]))
    X = np.ascontiguousarray(X[:, :, order])

    patterns, inverse = np.unique(observed, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    blocks = tuple(
        (np.flatnonzero(pat), np.flatnonzero(inverse == i)) for i, pat in enumerate(patterns)
    )
    design = _Design(tuple(names), times, oidx, rows, X, observed, blocks, int(observed.sum()))
    _check_rank(design)
    return design


def _check_rank(design: _Design):
    stacked = design.X[design.observed]
    p = stacked.shape[1]
    if stacked.shape[0] <= p:
        raise SingularDesignError(
            f"{stacked.shape[0]} observations for {p} fixed effects", design.names
        )
    _, r, piv = scipy.linalg.qr(stacked, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag.max() * max(stacked.shape) * np.finfo(float).eps
    rank = int((diag > tol).sum())
    if rank < p:
        bad = [design.names[j] for j in sorted(piv[rank:])]
        raise SingularDesignError("rank-deficient fixed-effect design; offending columns: " + ", ".join(bad), bad)


def _design_key(d: LongitudinalDataset, spec: LmmSpec):
    """Everything the design depends on: columns, outcome mask, arm and covariates."""
    outcomes = [d.column(n) for n in spec.outcomes] if spec.outcomes else d.outcome_columns
    group = spec.group
    if group is None and d.group_column is not None:
        group = d.group_column.name
    subject_cols = [d.index(n) for n in ([group] if group else []) + list(spec.covariates)]
    oidx = [d.index(c.name) for c in outcomes]
    return (
        d.columns,
        d.mask[:, oidx].tobytes(),
        d.values[:, subject_cols].tobytes(),
        d.mask[:, subject_cols].tobytes(),
    )


def _same_design(a: _Design, b: _Design) -> bool:
    return (
        a.names == b.names
        and np.array_equal(a.times, b.times)
        and np.array_equal(a.rows, b.rows)
        and np.array_equal(a.observed, b.observed)
        and np.array_equal(a.X, b.X)
    )


# ---------------------------------------------------------------------------
# moments and the profiled objective


@dataclass(eq=False)
class _Block:
    Z: np.ndarray        # (s, 2)
    count: int
    XX: np.ndarray       # (s, s, p, p), shared by the batch
    XY: np.ndarray       # (D, s, s, p)
    YY: np.ndarray       # (D, s, s)

    def take(self, sel):
        return _Block(self.Z, self.count, self.XX, self.XY[sel], self.YY[sel])


def _moments(design: _Design, Y: np.ndarray):
    """Per-pattern moments; ``Y`` is (D, n, S) outcomes for the kept subjects."""
    out = []
    for vis, subj in design.blocks:
        Xb = design.X[subj][:, vis, :]               # (c, s, p)
        Yb = Y[:, subj][:, :, vis]                   # (D, c, s)
        XX = np.einsum("isp,itq->stpq", Xb, Xb)
        XY = np.einsum("isp,dit->dstp", Xb, Yb)
        YY = np.einsum("dis,dit->dst", Yb, Yb)
        Z = np.column_stack([np.ones(len(vis)), design.times[vis]])
        out.append(_Block(Z, len(subj), XX, XY, YY))
    return out


def _residual_products(blk: _Block, beta):
    """``sum_i e_i e_i'`` for residuals ``e_i = y_i - X_i beta``, per dataset."""
    D, s = blk.YY.shape[:2]
    p = beta.shape[1]
    u = (blk.XY.reshape(D, s * s, p) @ beta[:, :, None]).reshape(D, s, s)
    xxb = np.tensordot(blk.XX.reshape(s * s, p, p), beta, axes=([2], [1]))   # (s*s, p, D)
    q = (xxb * beta.T[None]).sum(axis=1).T.reshape(D, s, s)
    return blk.YY - u - np.swapaxes(u, 1, 2) + q


def _lower(theta):
    L = np.zeros(theta.shape[:-1] + (2, 2))
    L[..., 0, 0] = theta[..., 0]
    L[..., 1, 0] = theta[..., 1]
    L[..., 1, 1] = theta[..., 2]
    return L


class _Objective:
    """-2 log-likelihood (profiled) for a batch of datasets sharing a design."""

    def __init__(self, blocks, n_obs: int, p: int, reml: bool):
        self.blocks = blocks
        self.n_obs = n_obs
        self.p = p
        self.reml = reml
        self.df = n_obs - p if reml else n_obs

    def take(self, sel) -> "_Objective":
        return _Objective([b.take(sel) for b in self.blocks], self.n_obs, self.p, self.reml)

    def __call__(self, theta, grad=True, full=False):
        D, p = theta.shape[0], self.p
        L = _lower(theta)
        lam = L @ np.swapaxes(L, 1, 2)
        A = np.zeros((D, p, p))
        bvec = np.zeros((D, p))
        c = np.zeros(D)
        logdet = np.zeros(D)
        Ks = []
        for blk in self.blocks:
            s = blk.Z.shape[0]
            H = blk.Z @ lam @ blk.Z.T + np.eye(s)
            cH = np.linalg.cholesky(H)
            logdet += blk.count * 2.0 * np.log(np.diagonal(cH, axis1=1, axis2=2)).sum(axis=1)
            K = np.linalg.inv(H)
            K = 0.5 * (K + np.swapaxes(K, 1, 2))
            Ks.append(K)
            A += (K.reshape(D, s * s) @ blk.XX.reshape(s * s, p * p)).reshape(D, p, p)
            bvec += (K.reshape(D, 1, s * s) @ blk.XY.reshape(D, s * s, p))[:, 0]
            c += (K * blk.YY).sum(axis=(1, 2))

        cA = np.linalg.cholesky(A)
        beta = np.linalg.solve(A, bvec[:, :, None])[:, :, 0]
        r = c - np.einsum("dp,dp->d", bvec, beta)
        df = self.df
        f = df * (_LOG_2PI + 1.0 - math.log(df)) + logdet + df * np.log(r)
        if self.reml:
            f = f + 2.0 * np.log(np.diagonal(cA, axis1=1, axis2=2)).sum(axis=1)
        if not grad and not full:
            return f

        Ainv = np.linalg.inv(A) if (self.reml or full) else None
        G_lam = np.zeros((D, 2, 2))
        for blk, K in zip(self.blocks, Ks):
            R = _residual_products(blk, beta)
            gam = blk.count * K - (df / r)[:, None, None] * (K @ R @ K)
            if self.reml:
                P = np.einsum("dpq,stpq->dst", Ainv, blk.XX)
                gam = gam - K @ P @ K
            G_lam += blk.Z.T @ gam @ blk.Z
        G_lam = 0.5 * (G_lam + np.swapaxes(G_lam, 1, 2))
        gL = 2.0 * G_lam @ L
        g = np.stack([gL[:, 0, 0], gL[:, 1, 0], gL[:, 1, 1]], axis=1)
        if not full:
            return f, g
        return f, g, beta, r, Ainv, lam


# ---------------------------------------------------------------------------
# start values and the optimizer


def _start(blocks, D):
    """Moment estimates of (G, sigma^2) from OLS residual cross-products."""
    rows, rhs = [], []
    p = blocks[0].XX.shape[-1]
    XtX = sum(np.einsum("sspq->pq", b.XX) for b in blocks)
    Xty = sum(np.einsum("dssp->dp", b.XY) for b in blocks)
    beta = np.linalg.solve(XtX, Xty.T).T                      # (D, p)
    for blk in blocks:
        R = _residual_products(blk, beta) / blk.count
        Z = blk.Z
        s = Z.shape[0]
        w = math.sqrt(blk.count)
        for i in range(s):
            for j in range(i, s):
                rows.append(w * np.array([
                    Z[i, 0] * Z[j, 0], Z[i, 0] * Z[j, 1] + Z[i, 1] * Z[j, 0], Z[i, 1] * Z[j, 1], float(i == j)
                ]))
                rhs.append(w * R[:, i, j])
    M = np.array(rows)
    sol, *_ = np.linalg.lstsq(M, np.array(rhs), rcond=None)  # (4, D)
    theta = np.empty((D, 3))
    for k in range(D):
        g00, g01, g11, s2 = sol[:, k]
        if not s2 > 0:
            s2 = max(abs(g00), 1.0)
        lam = np.array([[g00, g01], [g01, g11]]) / s2
        w_, v = np.linalg.eigh(lam)
        lam = (v * np.clip(w_, 1e-3, None)) @ v.T
        Lk = np.linalg.cholesky(lam)
        theta[k] = (Lk[0, 0], Lk[1, 0], Lk[1, 1])
    return theta


def _hessian(obj, theta, g0):
    D, k = theta.shape
    Hs = np.empty((D, k, k))
    for j in range(k):
        h = 1e-5 * np.maximum(1.0, np.abs(theta[:, j]))
        tp, tm = theta.copy(), theta.copy()
        tp[:, j] += h
        tm[:, j] -= h
        _, gp = obj(tp)
        _, gm = obj(tm)
        Hs[:, :, j] = (gp - gm) / (2.0 * h[:, None])
    return 0.5 * (Hs + np.swapaxes(Hs, 1, 2))


def _newton_direction(Hs, g):
    w, V = np.linalg.eigh(Hs)
    floor = 1e-8 * np.maximum(1.0, np.abs(w).max(axis=1, keepdims=True))
    w = np.maximum(np.abs(w), floor)
    return -np.einsum("dij,dj,dkj,dk->di", V, 1.0 / w, V, g)


def _optimize(obj: _Objective, theta, spec: LmmSpec):
    D = theta.shape[0]
    f, g = obj(theta)
    traces = [[float(x)] for x in f]
    iters = np.zeros(D, dtype=int)
    done = np.zeros(D, dtype=bool)
    for _ in range(spec.max_iter):
        act = np.flatnonzero(~done)
        if act.size == 0:
            break
        sub = obj.take(act)
        th, fa, ga = theta[act], f[act], g[act]
        step = _newton_direction(_hessian(sub, th, ga), ga)
        slope = np.einsum("di,di->d", ga, step)
        bad = slope >= 0
        step[bad] = -ga[bad]
        slope[bad] = -np.einsum("di,di->d", ga[bad], ga[bad])

        alpha = np.ones(act.size)
        accepted = np.zeros(act.size, dtype=bool)
        f_new = fa.copy()
        for _ls in range(50):
            pend = np.flatnonzero(~accepted)
            if pend.size == 0:
                break
            trial = th[pend] + alpha[pend, None] * step[pend]
            ft = sub.take(pend)(trial, grad=False)
            ok = np.isfinite(ft) & (ft <= fa[pend] + 1e-4 * alpha[pend] * slope[pend])
            accepted[pend[ok]] = True
            f_new[pend[ok]] = ft[ok]
            alpha[pend[~ok]] *= 0.5

        delta = alpha[:, None] * step
        new_theta = th + np.where(accepted[:, None], delta, 0.0)
        iters[act] += 1
        rel = np.abs(f_new - fa) / np.maximum(1.0, np.abs(fa))
        small = (rel < spec.tol_loglik) & (np.abs(np.where(accepted[:, None], delta, 0.0)).max(axis=1) < spec.tol_param)
        # a failed line search means no representable improvement remains
        conv = small | ~accepted
        theta[act] = new_theta
        f[act] = f_new
        moved = act[accepted]
        if moved.size:
            _, g_m = obj.take(moved)(theta[moved])
            g[moved] = g_m
        for i, a in enumerate(act):
            if accepted[i]:
                traces[a].append(float(f_new[i]))
        done[act[conv]] = True
    return theta, f, iters, done, traces


# ---------------------------------------------------------------------------
# public fitting API


def _outcomes(design: _Design, d: LongitudinalDataset):
    Y = d.values[np.ix_(design.rows, design.outcome_idx)]
    return np.where(design.observed, Y, 0.0)


def _fit_batch(design: _Design, Ys: np.ndarray, spec: LmmSpec) -> list[LmmFit]:
    D = Ys.shape[0]
    p = len(design.names)
    n_subj = design.rows.size
    if spec.reml and design.n_obs <= p:
        raise SingularDesignError("REML needs more observations than fixed effects", design.names)
    blocks = _moments(design, Ys)
    obj = _Objective(blocks, design.n_obs, p, spec.reml)
    df = obj.df

    # exact fits: OLS residual sum of squares is zero up to rounding
    XtX = sum(np.einsum("sspq->pq", b.XX) for b in blocks)
    Xty = sum(np.einsum("dssp->dp", b.XY) for b in blocks)
    yty = sum(np.einsum("dss->d", b.YY) for b in blocks)
    beta_ols = np.linalg.solve(XtX, Xty.T).T
    rss = yty - np.einsum("dp,dp->d", Xty, beta_ols)
    exact = rss <= (64 * np.finfo(float).eps) ** 2 * np.maximum(yty, np.finfo(float).tiny) * design.n_obs

    fits: list[LmmFit | None] = [None] * D
    for k in np.flatnonzero(exact):
        resid = _residuals(design, Ys[k], beta_ols[k])
        s2 = float(resid @ resid) / df
        fits[k] = LmmFit(
            design.names, beta_ols[k], s2 * np.linalg.inv(XtX), np.zeros((2, 2)), s2,
            math.inf if s2 == 0 else -0.5 * design.n_obs * (_LOG_2PI + 1.0 + math.log(s2)),
            True, 0, n_subj, design.n_obs, spec.reml,
        )

    rest = np.flatnonzero(~exact)
    if rest.size:
        sub = obj.take(rest)
        theta0 = _start(sub.blocks, rest.size)
        theta, f, iters, done, traces = _optimize(sub, theta0.copy(), spec)
        if not done.all():
            i = int(np.flatnonzero(~done)[0])
            trace = [-0.5 * v for v in traces[i]]
            raise FitError(
                f"mixed model did not converge in {spec.max_iter} iterations "
                f"(best loglik {max(trace):.6g})",
                trace,
            )
        f, _, beta, r, Ainv, lam = sub(theta, full=True)
        for j, k in enumerate(rest):
            s2 = float(r[j] / df)
            cov = s2 * Ainv[j]
            fits[k] = LmmFit(
                design.names, beta[j], 0.5 * (cov + cov.T), s2 * lam[j], s2, float(-0.5 * f[j]),
                True, int(iters[j]), n_subj, design.n_obs, spec.reml,
                tuple(-0.5 * v for v in traces[j]),
            )
    return fits


def _residuals(design: _Design, Y, beta):
    fitted = design.X @ beta
    return (Y - fitted)[design.observed]


def fit_lmm_ml(d: LongitudinalDataset, spec: LmmSpec | None = None) -> LmmFit:
    """Maximum-likelihood (or REML, per ``spec.reml``) fit of the random
    intercept and slope model to one dataset.

    Subjects with no observed outcome are dropped.  ``fixed_cov`` is the
    model-based ``(sum_i X_i' V_i^-1 X_i)^-1`` at the optimum.

    Raises
    ------
    SingularDesignError
        Rank-deficient fixed-effect design.
    FitError
        No convergence within ``spec.max_iter`` iterations.
    """
    spec = spec or LmmSpec()
    design = build_design(d, spec)
    return _fit_batch(design, _outcomes(design, d)[None], spec)[0]


def fit_lmm_ml_many(datasets, spec: LmmSpec | None = None) -> list[LmmFit]:
    """Fit each dataset; runs of datasets sharing a design are batched.

    Results are identical to fitting each dataset alone up to the rounding of
    the shared moment sums.
    """
    spec = spec or LmmSpec()
    datasets = list(datasets)
    if not datasets:
        return []
    designs, groups, last_key = [], [], None
    for i, d in enumerate(datasets):
        key = _design_key(d, spec)
        if key != last_key:
            des = build_design(d, spec)
            if not (designs and _same_design(des, designs[-1])):
                designs.append(des)
                groups.append([])
            last_key = key
        groups[-1].append(i)
    out: list[LmmFit] = []
    for des, idx in zip(designs, groups):
        Ys = np.stack([_outcomes(des, datasets[i]) for i in idx])
        out.extend(_fit_batch(des, Ys, spec))
    return out


def gls_known_variance(d: LongitudinalDataset, spec: LmmSpec | None, G, sigma2: float):
    """Generalized least squares with known ``G`` and ``sigma^2``.

    A direct per-subject computation, independent of the moment machinery
    used by the fitter.  Returns ``(fixed_estimates, fixed_cov)``.
    """
    spec = spec or LmmSpec()
    G = np.asarray(G, dtype=float)
    if G.shape != (2, 2) or not np.allclose(G, G.T) or np.linalg.eigvalsh(G).min() < -1e-12:
        raise ParameterError("G must be a symmetric PSD 2x2 matrix")
    if not sigma2 > 0:
        raise ParameterError("sigma2 must be positive")
    design = build_design(d, spec)
    Y = _outcomes(design, d)
    p = len(design.names)
    XtVX = np.zeros((p, p))
    XtVy = np.zeros(p)
    for i in range(design.rows.size):
        obs = design.observed[i]
        Xi = design.X[i][obs]
        Zi = np.column_stack([np.ones(obs.sum()), design.times[obs]])
        Vi = Zi @ G @ Zi.T + sigma2 * np.eye(obs.sum())
        Vinv_X = np.linalg.solve(Vi, Xi)
        XtVX += Xi.T @ Vinv_X
        XtVy += Vinv_X.T @ Y[i][obs]
    try:
        chol = scipy.linalg.cho_factor(XtVX)
    except np.linalg.LinAlgError:
        raise SingularDesignError("singular GLS design", design.names) from None
    beta = scipy.linalg.cho_solve(chol, XtVy)
    cov = scipy.linalg.cho_solve(chol, np.eye(p))
    return beta, 0.5 * (cov + cov.T)


# ---------------------------------------------------------------------------
# estimands


def estimand_weights(names, estimand) -> np.ndarray:
    """Weight vector for a named estimand or an explicit sequence.

    Names: ``"treatment-slope"`` (time plus the first arm-by-time term) and
    ``"treatment-effect"`` (the arm-by-time term alone).
    """
    names = list(names)
    if isinstance(estimand, str):
        inter = [n for n in names if n.endswith(":time")]
        if not inter:
            raise ConfigError(f"estimand {estimand!r} needs an arm-by-time term in the model")
        w = np.zeros(len(names))
        if estimand == "treatment-slope":
            w[names.index("time")] = 1.0
            w[names.index(inter[0])] = 1.0
        elif estimand == "treatment-effect":
            w[names.index(inter[0])] = 1.0
        else:
            raise ConfigError(f"unknown estimand {estimand!r}; use treatment-slope or treatment-effect")
        return w
    w = np.asarray(estimand, dtype=float)
    if w.shape != (len(names),):
        raise ParameterError(f"weights have length {w.size}, model has {len(names)} fixed effects")
    return w


def scalar_estimand(fit: LmmFit, weights) -> ScalarEstimate:
    """``q = w' beta``, ``u = w' cov w``."""
    w = np.asarray(weights, dtype=float)
    if w.shape != fit.fixed_estimates.shape:
        raise ParameterError(
            f"weights have length {w.size}, model has {fit.fixed_estimates.size} fixed effects"
        )
    q = float(w @ fit.fixed_estimates)
    u = float(w @ fit.fixed_cov @ w)
    return ScalarEstimate(q, max(u, 0.0))
