"""Design matrices and fitting for the DID regression forms.

Factors are encoded as explicit dummy columns with the first level dropped,
so parameter counts (and hence residual degrees of freedom) match a
``lm(y ~ A + factor(year) + factor(state) + x)`` style fit.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg, optimize, special

from .effects import AdjustedPanel, unadjusted
from .panel import PanelDataset
from .scenario import PolicyScenario

FORMS = ("two_way_fe", "detrended", "autoregressive", "gee")
LINKS = ("linear", "log_linear", "poisson", "negbin")
WEIGHTINGS = ("unweighted", "population_weighted", "offset_log_population")
SE_METHODS = ("none", "huber", "cluster")
OPTIONAL_SE_METHODS = ("arellano",)
COUNT_LINKS = ("poisson", "negbin")

RANK_TOL = 1e-10
LOG_RATE_FLOOR = 1e-3
THETA_BOUNDS = (1e-3, 1e6)


class RankDeficientError(np.linalg.LinAlgError):
    pass


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    """One cell of the model grid.

    ``form="gee"`` is the linear GEE with AR1 working correlation; its only
    standard error is the GEE sandwich, labelled ``"gee"``.
    """

    form: str
    link: str = "linear"
    weighting: str = "unweighted"
    covariates: tuple = ("unemployment_rate",)
    se_methods: tuple = SE_METHODS
    log_rate_floor: bool = False

    def __post_init__(self):
        if self.form not in FORMS:
            raise ValueError(f"form must be one of {FORMS}")
        if self.link not in LINKS:
            raise ValueError(f"link must be one of {LINKS}")
        if self.weighting not in WEIGHTINGS:
            raise ValueError(f"weighting must be one of {WEIGHTINGS}")
        if self.weighting == "population_weighted" and self.link in COUNT_LINKS:
            raise ValueError("population weighting applies only to linear and log-linear links")
        if self.weighting == "offset_log_population" and self.link not in COUNT_LINKS:
            raise ValueError("the log-population offset applies only to count links")
        if self.link in COUNT_LINKS and self.weighting != "offset_log_population":
            object.__setattr__(self, "weighting", "offset_log_population")
        if self.form == "gee":
            if self.link != "linear":
                raise ValueError("GEE is implemented for the identity link only")
            object.__setattr__(self, "se_methods", ("gee",))
        else:
            bad = set(self.se_methods) - set(SE_METHODS) - set(OPTIONAL_SE_METHODS)
            if bad:
                raise ValueError(f"unknown se methods {sorted(bad)}")
        object.__setattr__(self, "covariates", tuple(self.covariates))
        object.__setattr__(self, "se_methods", tuple(self.se_methods))

    @property
    def uses_change_coding(self) -> bool:
        return self.form == "autoregressive"

    @property
    def name(self) -> str:
        wt = {"unweighted": "unwt", "population_weighted": "wt", "offset_log_population": "offset"}
        return f"{self.link}_{self.form}_{wt[self.weighting]}"


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    X: np.ndarray
    y: np.ndarray
    cluster_ids: np.ndarray
    time_ids: np.ndarray
    target_column: int
    columns: tuple
    weights: np.ndarray | None = None
    offset: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def k(self) -> int:
        return self.X.shape[1]


@dataclass(eq=False)
class FitResult:
    """Fitted coefficients plus what the variance estimators need.

    Observation ``i`` contributes the score ``score_resid[i] * X[i]`` and
    ``bread`` is the inverse of the (weighted) information ``X' W X``.
    """

    beta: np.ndarray
    target_column: int
    residuals: np.ndarray
    X: np.ndarray
    bread: np.ndarray
    score_resid: np.ndarray
    cluster_ids: np.ndarray
    df_residual: int
    family: str = "gaussian"
    sigma2: float | None = None
    theta: float | None = None
    weights: np.ndarray | None = None
    n_iter: int = 1
    info: dict = field(default_factory=dict)

    @property
    def alpha_hat(self) -> float:
        return float(self.beta[self.target_column])

    @property
    def nobs(self) -> int:
        return self.X.shape[0]

    @property
    def rank(self) -> int:
        return self.X.shape[1]


def _dummies(codes: np.ndarray, n_levels: int) -> np.ndarray:
    """Indicator columns for levels 1..n_levels-1 (level 0 is the reference)."""
    out = np.zeros((codes.size, n_levels - 1))
    rows = np.nonzero(codes > 0)[0]
    out[rows, codes[rows] - 1] = 1.0
    return out


def _first_year_index(spec: ModelSpec) -> int:
    # the lagged outcome is missing in the first year
    return 1 if spec.form == "autoregressive" else 0


def response(adj: AdjustedPanel, spec: ModelSpec) -> np.ndarray:
    """Outcome on the model's scale, as a (state, year) array."""
    if spec.link == "linear":
        return adj.rate
    if spec.link == "log_linear":
        rate = adj.rate
        if np.any(rate <= 0):
            if not spec.log_rate_floor:
                raise ValueError("log-linear model needs positive rates; enable log_rate_floor to floor them")
            warnings.warn(f"flooring non-positive rates at {LOG_RATE_FLOOR} per 100,000", RuntimeWarning)
            rate = np.maximum(rate, LOG_RATE_FLOOR)
        return np.log(rate)
    return adj.deaths


def static_columns(panel: PanelDataset, spec: ModelSpec) -> tuple[np.ndarray, list[str]]:
    """Columns that do not depend on the scenario or the injected effect.

    Intercept, covariates, year dummies, then state dummies and state trends
    where the form calls for them.
    """
    S, T = panel.shape
    t0 = _first_year_index(spec)
    Tn = T - t0
    state_codes = np.repeat(np.arange(S), Tn)
    year_codes = np.tile(np.arange(Tn), S)
    blocks = [np.ones((S * Tn, 1))]
    columns = ["intercept"]
    for name in spec.covariates:
        if name not in panel.covariates:
            raise KeyError(f"panel has no covariate {name!r}")
        blocks.append(panel.covariates[name][:, t0:].reshape(-1, 1))
        columns.append(name)
    blocks.append(_dummies(year_codes, Tn))
    columns += [f"year_{y}" for y in panel.years[t0 + 1:]]
    if spec.form in ("two_way_fe", "detrended"):
        blocks.append(_dummies(state_codes, S))
        columns += [f"state_{s}" for s in panel.states[1:]]
    if spec.form == "detrended":
        # the sum of all state trends equals t, which the year dummies already span
        trend = (panel.years[year_codes + t0] - panel.years[0]).astype(float)
        blocks.append(_dummies(state_codes, S) * trend[:, None])
        columns += [f"trend_{s}" for s in panel.states[1:]]
    return np.hstack(blocks), columns


def varying_columns(adj: AdjustedPanel, scenario: PolicyScenario, spec: ModelSpec) -> tuple[np.ndarray, list[str]]:
    """Exposure (level or change coded) and, for the AR form, the lagged adjusted rate."""
    t0 = _first_year_index(spec)
    if spec.uses_change_coding:
        cols, names = [scenario.exposure_change[:, t0:].ravel()], ["exposure_change"]
    else:
        cols, names = [scenario.exposure[:, t0:].ravel()], ["exposure"]
    if spec.form == "autoregressive":
        cols.append(adj.lagged_rate(1)[:, t0:].ravel())
        names.append("lag_rate")
    return np.column_stack(cols), names


def build_design(panel: PanelDataset | AdjustedPanel, scenario: PolicyScenario, spec: ModelSpec) -> DesignMatrix:
    """Assemble ``X``, ``y``, weights and offset for ``spec``.

    Column order: intercept, exposure, covariates, year dummies, then state
    dummies (two_way_fe, detrended), state-specific trends (detrended) or the
    lagged outcome (autoregressive).
    """
    adj = panel if isinstance(panel, AdjustedPanel) else unadjusted(panel)
    base = adj.panel
    S, T = base.shape
    if scenario.exposure.shape != (S, T):
        raise ValueError("scenario does not match panel shape")
    t0 = _first_year_index(spec)
    y = response(adj, spec)[:, t0:].ravel().astype(float)
    Z, znames = static_columns(base, spec)
    V, vnames = varying_columns(adj, scenario, spec)
    X = np.hstack([Z[:, :1], V[:, :1], Z[:, 1:], V[:, 1:]])
    columns = [znames[0], vnames[0], *znames[1:], *vnames[1:]]
    n, k = X.shape
    if n < k:
        raise RankDeficientError(f"n={n} observations for k={k} columns")
    Tn = T - t0
    weights = base.population[:, t0:].ravel().astype(float) if spec.weighting == "population_weighted" else None
    offset = np.log(base.population[:, t0:].ravel()) if spec.link in COUNT_LINKS else None
    return DesignMatrix(
        X=X,
        y=y,
        cluster_ids=np.repeat(np.arange(S), Tn),
        time_ids=np.tile(base.years[t0:], S),
        target_column=1,
        columns=tuple(columns),
        weights=weights,
        offset=offset,
    )


def _qr_solve(X: np.ndarray, y: np.ndarray, sw: np.ndarray | None):
    """Least squares through a QR factorization of ``sqrt(w) * X``.

    Returns the coefficients and ``(X'WX)^-1``.
    """
    Xw = X if sw is None else X * sw[:, None]
    yw = y if sw is None else y * sw
    Q, R = np.linalg.qr(Xw)
    d = np.abs(np.diag(R))
    if d.min() <= RANK_TOL * d.max():
        bad = int(np.argmin(d))
        raise RankDeficientError(f"design is rank deficient (column {bad})")
    beta = linalg.solve_triangular(R, Q.T @ yw)
    Rinv = linalg.solve_triangular(R, np.eye(R.shape[0]))
    return beta, Rinv @ Rinv.T


def fit_wls(design: DesignMatrix) -> FitResult:
    """Weighted least squares; ``s^2`` is the weighted RSS over ``n - K`` (NaN when ``n == K``)."""
    X, y, w = design.X, design.y, design.weights
    n, k = X.shape
    if n < k:
        raise RankDeficientError(f"n={n} is below k={k}")
    if w is not None and np.any(w <= 0):
        raise ValueError("analytic weights must be positive")
    sw = None if w is None else np.sqrt(w)
    beta, bread = _qr_solve(X, y, sw)
    resid = y - X @ beta
    wr = resid if w is None else w * resid
    df = n - k
    return FitResult(
        beta=beta,
        target_column=design.target_column,
        residuals=resid,
        X=X,
        bread=bread,
        score_resid=wr,
        cluster_ids=design.cluster_ids,
        df_residual=df,
        family="gaussian",
        sigma2=float(resid @ wr) / df if df > 0 else float("nan"),
        weights=w,
    )


def _nb_deviance(y, mu, theta):
    with np.errstate(divide="ignore", invalid="ignore"):
        ylogy = np.where(y > 0, y * np.log(y / mu), 0.0)
    if theta is None:
        return 2.0 * np.sum(ylogy - (y - mu))
    return 2.0 * np.sum(ylogy - (y + theta) * np.log((y + theta) / (mu + theta)))


def fit_glm_irls(design: DesignMatrix, family: str = "poisson", theta: float | None = None,
                 beta0: np.ndarray | None = None, max_iter: int = 50, tol: float = 1e-10) -> FitResult:
    """Log-link count GLM by iteratively reweighted least squares.

    ``family`` is ``"poisson"`` or ``"negbin"`` (with dispersion ``theta``, where
    ``Var(y) = mu + mu^2 / theta``).
    """
    if family not in COUNT_LINKS:
        raise ValueError(f"family must be one of {COUNT_LINKS}")
    if family == "negbin" and (theta is None or theta <= 0):
        raise ValueError("negbin needs a positive theta")
    if family == "poisson":
        theta = None
    X, y = design.X, design.y
    if np.any(y < 0) or np.any(y != np.round(y)):
        raise ValueError("count models need non-negative integer outcomes")
    offset = np.zeros_like(y) if design.offset is None else design.offset
    prior = np.ones_like(y) if design.weights is None else design.weights
    n, k = X.shape
    if n < k:
        raise RankDeficientError(f"n={n} is below k={k}")

    if beta0 is None:
        eta = np.log(y + 0.1)
    else:
        eta = X @ beta0 + offset
    mu = np.exp(eta)
    beta = beta0
    dev = _nb_deviance(y, mu, theta)
    converged = False
    for it in range(1, max_iter + 1):
        var_ratio = 1.0 if theta is None else 1.0 + mu / theta
        W = prior * mu / var_ratio
        z = eta - offset + (y - mu) / mu
        new_beta, _ = _qr_solve(X, z, np.sqrt(W))
        eta = X @ new_beta + offset
        if np.any(eta > 700):
            raise ConvergenceError("linear predictor overflow (separation or degenerate design)")
        mu = np.exp(eta)
        new_dev = _nb_deviance(y, mu, theta)
        step = np.inf if beta is None else np.max(np.abs(new_beta - beta))
        rel = abs(new_dev - dev) / (abs(new_dev) + 0.1)
        beta, dev = new_beta, new_dev
        if step < tol or rel < tol:
            converged = True
            break
    if not converged or not np.all(np.isfinite(beta)):
        raise ConvergenceError(f"IRLS did not converge in {max_iter} iterations")
    if np.any(mu < 1e-10 * max(1.0, y.mean())):
        raise ConvergenceError("fitted means collapse to zero (separation)")

    var_ratio = 1.0 if theta is None else 1.0 + mu / theta
    W = prior * mu / var_ratio
    _, bread = _qr_solve(X, np.zeros_like(y), np.sqrt(W))
    return FitResult(
        beta=beta,
        target_column=design.target_column,
        residuals=y - mu,
        X=X,
        bread=bread,
        score_resid=prior * (y - mu) / var_ratio,
        cluster_ids=design.cluster_ids,
        df_residual=n - k,
        family=family,
        theta=theta,
        n_iter=it,
        info={"deviance": float(dev), "mu": mu},
    )


def _lgamma_ratio(y: np.ndarray, theta: float) -> np.ndarray:
    """``lgamma(y + theta) - lgamma(theta)`` for integer ``y``, accurate for large theta.

    Written as ``y log(theta) + sum_{j<y} log1p(j / theta)``, which avoids the
    cancellation between two huge log-gamma values.
    """
    ymax = int(y.max()) if y.size else 0
    if ymax > 10_000_000:
        return special.gammaln(y + theta) - special.gammaln(theta)
    c = np.concatenate(([0.0], np.cumsum(np.log1p(np.arange(ymax) / theta))))
    return y * np.log(theta) + c[y.astype(np.int64)]


def nb_loglik(y: np.ndarray, mu: np.ndarray, theta: float) -> float:
    y = np.asarray(y, dtype=float)
    return float(np.sum(
        _lgamma_ratio(y, theta) - special.gammaln(y + 1)
        + theta * np.log(theta / (theta + mu)) + y * np.log(mu / (theta + mu))
    ))


def _theta_ml(y, mu, bounds=THETA_BOUNDS) -> float:
    lo, hi = np.log(bounds[0]), np.log(bounds[1])
    res = optimize.minimize_scalar(
        lambda lt: -nb_loglik(y, mu, np.exp(lt)), bounds=(lo, hi), method="bounded",
        options={"xatol": 1e-12, "maxiter": 500},
    )
    # Brent stops just inside the bracket; snap to the clamp when the edge is at least as good
    if -nb_loglik(y, mu, bounds[1]) <= res.fun + 1e-9:
        return float(bounds[1])
    return float(np.exp(res.x))


def estimate_negbin_theta(design: DesignMatrix, max_outer: int = 100, tol: float = 1e-8):
    """Alternate IRLS for the coefficients and a profile-likelihood update of theta.

    Returns ``(fit, theta)``.  When the likelihood keeps increasing towards the
    Poisson limit, theta is clamped at the upper bound, a warning is issued and
    ``fit.info["theta_at_bound"]`` is set.
    """
    pois = fit_glm_irls(design, "poisson")
    y, mu = design.y, pois.info["mu"]
    excess = np.sum(((y - mu) ** 2 - mu) / mu**2)
    theta = len(y) / excess if excess > 0 else THETA_BOUNDS[1]
    theta = float(np.clip(theta, *THETA_BOUNDS))

    beta = pois.beta
    ll = -np.inf
    for _ in range(max_outer):
        fit = fit_glm_irls(design, "negbin", theta=theta, beta0=beta)
        beta = fit.beta
        new_theta = _theta_ml(y, fit.info["mu"])
        new_ll = nb_loglik(y, fit.info["mu"], new_theta)
        # the profile likelihood is flat in theta near the optimum, so judge convergence on it
        done = abs(new_theta - theta) / theta < tol or abs(new_ll - ll) < tol * (1.0 + abs(new_ll))
        theta, ll = new_theta, new_ll
        if done:
            break
    else:
        raise ConvergenceError("theta iteration did not converge")
    fit = fit_glm_irls(design, "negbin", theta=theta, beta0=beta)
    at_bound = theta >= THETA_BOUNDS[1]
    fit.info["theta_at_bound"] = at_bound
    if at_bound:
        warnings.warn("negative binomial theta reached the Poisson boundary; clamped", RuntimeWarning)
    return fit, theta


def fit_model(design: DesignMatrix, spec: ModelSpec):
    """Fit ``design`` with the estimator implied by ``spec``.

    Returns a :class:`FitResult`, or a ``GeeFit`` for ``form="gee"``.
    """
    if spec.form == "gee":
        from .gee import fit_gee_ar1

        return fit_gee_ar1(design)
    if spec.link in ("linear", "log_linear"):
        return fit_wls(design)
    if spec.link == "poisson":
        return fit_glm_irls(design, "poisson")
    return estimate_negbin_theta(design)[0]


def model_grid(forms: Sequence[str] = ("two_way_fe", "detrended", "autoregressive"),
               links: Sequence[str] = LINKS, include_gee: bool = True) -> list[ModelSpec]:
    """Cross product of forms, links and the weighting options each link admits."""
    specs = []
    for form in forms:
        for link in links:
            if link in COUNT_LINKS:
                specs.append(ModelSpec(form, link, "offset_log_population"))
            else:
                specs.append(ModelSpec(form, link, "unweighted"))
                specs.append(ModelSpec(form, link, "population_weighted"))
    if include_gee:
        specs.append(ModelSpec("gee", "linear", "unweighted"))
        specs.append(ModelSpec("gee", "linear", "population_weighted"))
    return specs


@dataclass(eq=False)
class PartialFit:
    """Target-coefficient summary from :class:`PartialledWLS`.

    ``influence[i]`` is observation ``i``'s contribution to the HC0 score of
    the target coefficient, so ``sum(influence**2)`` is its HC0 variance.
    """

    alpha_hat: float
    coef: np.ndarray
    sigma2: float
    bread_target: float
    influence: np.ndarray
    cluster_ids: np.ndarray
    nobs: int
    rank: int

    @property
    def df_residual(self) -> int:
        return self.nobs - self.rank

    family = "gaussian"


class PartialledWLS:
    """WLS with a fixed block of columns factored once.

    The static columns ``Z`` (fixed effects, covariates, trends) are QR
    factored at construction; each :meth:`fit` projects the few varying
    columns and the outcome off ``Z`` and solves the small remaining system.
    Coefficients on the varying block, residuals and the target row of
    ``(X'WX)^-1`` are identical to a full fit of ``[Z, V]``.
    """

    def __init__(self, Z: np.ndarray, weights: np.ndarray | None, cluster_ids: np.ndarray):
        self.sw = None if weights is None else np.sqrt(np.asarray(weights, dtype=float))
        Zw = Z if self.sw is None else Z * self.sw[:, None]
        Q, R = np.linalg.qr(Zw)
        d = np.abs(np.diag(R))
        if d.min() <= RANK_TOL * d.max():
            raise RankDeficientError("static design block is rank deficient")
        self.Q = Q
        self.kz = Z.shape[1]
        self.cluster_ids = cluster_ids

    def fit(self, V: np.ndarray, y: np.ndarray, target: int = 0) -> PartialFit:
        if V.ndim == 1:
            V = V[:, None]
        if self.sw is not None:
            V = V * self.sw[:, None]
            y = y * self.sw
        Q = self.Q
        Vt = V - Q @ (Q.T @ V)
        yt = y - Q @ (Q.T @ y)
        G = Vt.T @ Vt
        if np.any(np.sqrt(np.diag(G)) <= RANK_TOL * np.linalg.norm(V, axis=0)) or not np.any(V):
            raise RankDeficientError("varying column is collinear with the static block")
        Ginv = linalg.inv(G)
        coef = Ginv @ (Vt.T @ yt)
        ew = yt - Vt @ coef
        n = V.shape[0]
        k = self.kz + V.shape[1]
        if n <= k:
            raise RankDeficientError(f"n={n} must exceed k={k}")
        return PartialFit(
            alpha_hat=float(coef[target]),
            coef=coef,
            sigma2=float(ew @ ew) / (n - k),
            bread_target=float(Ginv[target, target]),
            influence=ew * (Vt @ Ginv[target]),
            cluster_ids=self.cluster_ids,
            nobs=n,
            rank=k,
        )
