"""Classical, HC0 and cluster-robust covariances and Wald tests."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special

from .estimators import FitResult, PartialFit
from .gee import GeeFit


@dataclass(frozen=True)
class InferenceResult:
    se_method: str
    alpha_hat: float
    var_alpha: float
    t_stat: float
    p_value: float

    @property
    def se(self) -> float:
        return float(np.sqrt(self.var_alpha))


def _sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def v_ols(fit: FitResult) -> np.ndarray:
    """Model-based covariance: ``s^2 (X'WX)^-1`` for linear fits, ``(X'WX)^-1`` for count GLMs."""
    if fit.family == "gaussian":
        return fit.sigma2 * fit.bread
    return fit.bread.copy()


def _scores(fit: FitResult) -> np.ndarray:
    return fit.X * fit.score_resid[:, None]


def v_huber(fit: FitResult) -> np.ndarray:
    """HC0 sandwich, with no ``s^2`` prefactor and no degrees-of-freedom scaling."""
    sc = _scores(fit)
    return _sym(fit.bread @ (sc.T @ sc) @ fit.bread)


def _cluster_sums(values: np.ndarray, cluster_ids: np.ndarray):
    _, inv = np.unique(cluster_ids, return_inverse=True)
    m = inv.max() + 1
    if values.ndim == 1:
        return np.bincount(inv, weights=values, minlength=m)
    out = np.zeros((m, values.shape[1]))
    np.add.at(out, inv, values)
    return out


def cluster_dfc(n_clusters: int, nobs: int, k: int) -> float:
    """Small-sample factor ``M/(M-1) * (N-1)/(N-K)``."""
    return (n_clusters / (n_clusters - 1)) * ((nobs - 1) / (nobs - k))


def v_cluster(fit: FitResult, small_sample: bool = True) -> np.ndarray:
    """Cluster sandwich; ``small_sample=False`` drops ``dfc`` (the Arellano form)."""
    m = len(np.unique(fit.cluster_ids))
    if m < 2:
        raise ValueError("cluster-robust covariance needs at least 2 clusters")
    u = _cluster_sums(_scores(fit), fit.cluster_ids)
    dfc = cluster_dfc(m, fit.nobs, fit.rank) if small_sample else 1.0
    return dfc * _sym(fit.bread @ (u.T @ u) @ fit.bread)


def var_alpha(fit: FitResult | PartialFit, method: str) -> float:
    """Variance of the target coefficient alone, without forming the full matrix."""
    if isinstance(fit, PartialFit):
        if method == "none":
            return fit.sigma2 * fit.bread_target
        return _robust_var(fit.influence, fit.cluster_ids, fit.nobs, fit.rank, method)
    b = fit.bread[fit.target_column]
    if method == "none":
        scale = fit.sigma2 if fit.family == "gaussian" else 1.0
        return float(scale * b[fit.target_column])
    s = fit.score_resid * (fit.X @ b)
    return _robust_var(s, fit.cluster_ids, fit.nobs, fit.rank, method)


def _robust_var(s: np.ndarray, cluster_ids: np.ndarray, nobs: int, rank: int, method: str) -> float:
    if method == "huber":
        return float(s @ s)
    if method in ("cluster", "arellano"):
        sums = _cluster_sums(s, cluster_ids)
        m = len(sums)
        if m < 2:
            raise ValueError("cluster-robust covariance needs at least 2 clusters")
        dfc = cluster_dfc(m, nobs, rank) if method == "cluster" else 1.0
        return float(dfc * (sums @ sums))
    raise ValueError(f"unknown se method {method!r}")


def wald(alpha_hat: float, var: float, df: float | None = None) -> tuple[float, float]:
    """Two-sided Wald test of ``alpha = 0``.

    ``df=None`` uses the normal reference; otherwise Student t with ``df``.
    """
    if var < 0:
        raise ValueError("variance must be non-negative")
    if var == 0:
        if alpha_hat == 0:
            return 0.0, 1.0
        warnings.warn("degenerate zero variance; p-value set to 0", RuntimeWarning)
        return float(np.copysign(np.inf, alpha_hat)), 0.0
    t = alpha_hat / np.sqrt(var)
    if df is None:
        p = 2.0 * special.ndtr(-abs(t))
    else:
        p = 2.0 * special.stdtr(df, -abs(t))
    return float(t), float(min(p, 1.0))


def infer(fit, method: str) -> InferenceResult:
    """Variance, t statistic and p-value of the target coefficient.

    Unadjusted linear fits are tested against Student t with the residual
    degrees of freedom; every robust variant (and the count GLMs) against the
    normal.
    """
    if isinstance(fit, GeeFit):
        if method != "gee":
            raise ValueError("GEE fits only support the 'gee' se method")
        v = float(fit.robust_cov[fit.target_column, fit.target_column])
        df = None
    else:
        v = var_alpha(fit, method)
        df = fit.df_residual if (method == "none" and fit.family == "gaussian") else None
    t, p = wald(fit.alpha_hat, v, df)
    return InferenceResult(method, fit.alpha_hat, v, t, p)
