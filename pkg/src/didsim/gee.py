"""Linear GEE with an AR1 working correlation inside state clusters."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .estimators import ConvergenceError, DesignMatrix, fit_wls

RHO_CLAMP = 0.99


@dataclass(eq=False)
class GeeFit:
    beta: np.ndarray
    target_column: int
    rho: float
    robust_cov: np.ndarray
    residuals: np.ndarray
    scale: float
    n_iter: int

    @property
    def alpha_hat(self) -> float:
        return float(self.beta[self.target_column])


def ar1_corr(times: np.ndarray, rho: float) -> np.ndarray:
    """``R[t, m] = rho ** |time_t - time_m|``."""
    times = np.asarray(times, dtype=float)
    return rho ** np.abs(times[:, None] - times[None, :])


class _Groups:
    """Clusters bucketed by their sorted time pattern, so each bucket is a dense block."""

    def __init__(self, cluster_ids, time_ids):
        order = np.lexsort((time_ids, cluster_ids))
        cl = cluster_ids[order]
        starts = np.flatnonzero(np.r_[True, cl[1:] != cl[:-1]])
        bounds = np.r_[starts, len(cl)]
        buckets: dict[tuple, list[np.ndarray]] = {}
        for a, b in zip(bounds[:-1], bounds[1:]):
            idx = order[a:b]
            key = tuple(time_ids[idx].tolist())
            if len(set(key)) != len(key):
                raise ValueError("duplicate time points within a cluster")
            buckets.setdefault(key, []).append(idx)
        self.buckets = [(np.array(k, dtype=float), np.vstack(v)) for k, v in buckets.items()]

    def lag1_pairs(self):
        """(index matrix, mask of consecutive-time pairs) per bucket."""
        for times, idx in self.buckets:
            yield idx, np.diff(times) == 1


def _moment_rho(r: np.ndarray, groups: _Groups, k: int) -> float:
    num = 0.0
    npairs = 0
    for idx, consecutive in groups.lag1_pairs():
        rr = r[idx]
        num += float(np.sum((rr[:, 1:] * rr[:, :-1])[:, consecutive]))
        npairs += int(consecutive.sum()) * idx.shape[0]
    denom = npairs - k
    if denom <= 0:
        return 0.0
    return num / denom


def _blocks(X, y, sw, groups):
    """Per-bucket weighted design and response, shaped (clusters, times, ...)."""
    return [(times, idx, X[idx] * sw[idx][..., None], y[idx] * sw[idx]) for times, idx in groups.buckets]


def _gls_pieces(blocks, rho, k):
    """Bread ``sum X' V^-1 X`` and ``sum X' V^-1 y`` with ``V^-1 = W^1/2 R^-1 W^1/2``."""
    A = np.zeros((k, k))
    b = np.zeros(k)
    cache = []
    for times, idx, Xs, ys in blocks:
        Rinv = linalg.inv(ar1_corr(times, rho))
        RX = (Rinv @ Xs).reshape(-1, k)
        A += Xs.reshape(-1, k).T @ RX
        b += RX.T @ ys.ravel()
        cache.append((idx, RX))
    return A, b, cache


def fit_gee_ar1(design: DesignMatrix, rho: float | None = None, max_iter: int = 100,
                tol: float = 1e-10) -> GeeFit:
    """Fit ``E[y] = X beta`` by GEE with AR1 working correlation within clusters.

    Alternates a GLS step for beta given rho with a lag-1 moment estimate of
    rho from scaled residuals.  Pass ``rho`` to hold the correlation fixed;
    ``rho=0`` reproduces the WLS fit.  The robust covariance is the usual
    cluster sandwich with no small-sample scaling.
    """
    X, y = design.X, design.y
    n, k = X.shape
    w = np.ones(n) if design.weights is None else np.asarray(design.weights, dtype=float)
    sw = np.sqrt(w)
    groups = _Groups(np.asarray(design.cluster_ids), np.asarray(design.time_ids))

    blocks = _blocks(X, y, sw, groups)
    beta = fit_wls(design).beta
    fixed = rho is not None
    cur_rho = float(rho) if fixed else 0.0
    for it in range(1, max_iter + 1):
        if not fixed:
            e = y - X @ beta
            scale = float(np.sum(w * e**2) / (n - k))
            r = sw * e / np.sqrt(scale) if scale > 0 else np.zeros_like(e)
            cur_rho = _moment_rho(r, groups, k)
            if abs(cur_rho) >= 1:
                warnings.warn(f"AR1 moment estimate {cur_rho:.4f} outside (-1, 1); clamped", RuntimeWarning)
                cur_rho = float(np.clip(cur_rho, -RHO_CLAMP, RHO_CLAMP))
        A, b, _ = _gls_pieces(blocks, cur_rho, k)
        new_beta = linalg.solve(A, b, assume_a="pos")
        step = np.max(np.abs(new_beta - beta))
        beta = new_beta
        if fixed or step < tol:
            break
    else:
        raise ConvergenceError(f"GEE did not converge in {max_iter} iterations")

    e = y - X @ beta
    A, _, cache = _gls_pieces(blocks, cur_rho, k)
    meat = np.zeros((k, k))
    for idx, RX in cache:
        c, nt = idx.shape
        u = np.einsum("cik,ci->ck", RX.reshape(c, nt, k), sw[idx] * e[idx])
        meat += u.T @ u
    Ainv = linalg.inv(A)
    cov = Ainv @ meat @ Ainv
    cov = 0.5 * (cov + cov.T)
    return GeeFit(
        beta=beta,
        target_column=design.target_column,
        rho=cur_rho,
        robust_cov=cov,
        residuals=e,
        scale=float(np.sum(w * e**2) / (n - k)),
        n_iter=it,
    )
