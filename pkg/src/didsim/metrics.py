"""Performance metrics over simulated estimates, plus residual diagnostics.

Bias metrics work in national annual deaths so linear and log-link models can
be compared; percent forms divide by the expected death change.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np
from scipy import stats

from .panel import RATE_SCALE, PanelDataset

ALPHA_LEVEL = 0.05
Z_CRIT = 1.96
F_CRIT_95 = float(stats.chi2.ppf(0.95, 1))  # 95th percentile of F(1, inf)
MIN_CF_ITERS = 100


class IterationRecord(NamedTuple):
    n_trt: int
    coding_speed: str
    effect: str
    model: str
    se_method: str
    iteration: int
    alpha_hat: float
    var_alpha: float
    t_stat: float
    p_value: float


@dataclass(frozen=True)
class ConditionSummary:
    directional_bias_deaths: float
    magnitude_bias_deaths: float
    pct_directional_bias: float
    pct_magnitude_bias: float
    rmse: float
    type_i: float
    correction_factor: float
    correct_rejection_rate: float
    type_s: float

    def to_dict(self) -> dict:
        return asdict(self)


def _nonempty(x, name="estimates") -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ValueError(f"{name} must be non-empty")
    return x


def standardize_to_deaths(alpha_hat, link: str, panel: PanelDataset | None = None, *,
                          mean_annual_population: float | None = None,
                          mean_annual_deaths: float | None = None):
    """Convert effect estimates to national annual deaths.

    Linear estimates are rate changes per 100,000, scaled by the mean annual
    population; log-scale estimates are converted through ``exp(a) - 1``
    times mean annual deaths.
    """
    a = np.asarray(alpha_hat, dtype=float)
    if link == "linear":
        pop = mean_annual_population if mean_annual_population is not None else panel.mean_annual_population()
        out = a * (pop / RATE_SCALE)
    else:
        deaths = mean_annual_deaths if mean_annual_deaths is not None else panel.mean_annual_deaths()
        out = np.expm1(a) * deaths
    return float(out) if out.ndim == 0 else out


def arm_bias(estimates, signed_target: float) -> float:
    """Mean signed error of one effect arm."""
    return float(np.mean(_nonempty(estimates) - signed_target))


def directional_bias(pos_estimates, neg_estimates, target_deaths: float) -> float:
    """Average of the positive-arm and negative-arm biases."""
    return 0.5 * (arm_bias(pos_estimates, target_deaths) + arm_bias(neg_estimates, -target_deaths))


def magnitude_bias(pos_estimates, neg_estimates, target_deaths: float) -> float:
    """Average bias after sign-flipping the negative arm; positive means exaggeration."""
    return 0.5 * (arm_bias(pos_estimates, target_deaths) - arm_bias(neg_estimates, -target_deaths))


def percent_of_target(value: float, target_deaths: float) -> float:
    return 100.0 * value / target_deaths


def rmse(estimates, alpha_true) -> float:
    est = _nonempty(estimates)
    return float(np.sqrt(np.mean((est - alpha_true) ** 2)))


def type_i_rate(p_values, level: float = ALPHA_LEVEL) -> float:
    p = _nonempty(p_values, "p_values")
    return float(np.mean(p < level))


def correction_factor(null_t_stats, iters: int | None = None) -> float:
    """SE multiplier that puts the empirical 95th percentile of null t^2 at the F(1, inf) critical value.

    The empirical percentile is the sorted t^2 at 1-based position
    ``floor(0.95 * iters)``, without interpolation.
    """
    t2 = np.sort(np.asarray(null_t_stats, dtype=float) ** 2)
    iters = len(t2) if iters is None else iters
    if iters < MIN_CF_ITERS or len(t2) < iters:
        raise ValueError(f"correction factor needs at least {MIN_CF_ITERS} null iterations")
    femp95 = t2[math.floor(0.95 * iters) - 1]
    return float(np.sqrt(femp95 / F_CRIT_95))


def adjusted_significance(alpha_hats, var_alphas, cf: float) -> np.ndarray:
    """True where the 95% interval with SE inflated by ``cf`` excludes zero."""
    if cf <= 0 or not np.isfinite(cf):
        raise ValueError("correction factor must be positive")
    a = np.asarray(alpha_hats, dtype=float)
    se = np.sqrt(np.asarray(var_alphas, dtype=float)) * cf
    lo, hi = a - Z_CRIT * se, a + Z_CRIT * se
    return ~((lo < 0) & (hi > 0))


def corrected_rejection_rate(alpha_hats, var_alphas, cf: float, direction: str) -> float:
    """Share of iterations significant after SE correction and signed like the true effect.

    ``direction="null"`` counts every rejection, which is the corrected Type I
    error.
    """
    a = _nonempty(alpha_hats, "alpha_hats")
    sig = adjusted_significance(a, var_alphas, cf)
    if direction == "positive":
        sig &= ~(a < 0)
    elif direction == "negative":
        sig &= ~(a > 0)
    elif direction != "null":
        raise ValueError(f"unknown direction {direction!r}")
    return float(np.mean(sig))


def type_s(alpha_hats, significant, direction: str) -> float:
    """Among significant estimates, the share with the wrong sign (0 if none are significant)."""
    a = np.asarray(alpha_hats, dtype=float)
    sig = np.asarray(significant, dtype=bool)
    n_sig = int(sig.sum())
    if n_sig == 0:
        return 0.0
    if direction == "negative":
        wrong = sig & (a > 0)
    elif direction == "positive":
        wrong = sig & (a < 0)
    else:
        raise ValueError("type S needs a positive or negative direction")
    return int(wrong.sum()) / n_sig


def acf(series, max_lag: int) -> np.ndarray:
    """Sample autocorrelations at lags ``0..max_lag``."""
    x = np.asarray(series, dtype=float)
    if x.ndim != 1 or len(x) <= max_lag + 1:
        raise ValueError("series must be 1-d and longer than max_lag + 1")
    d = x - x.mean()
    denom = d @ d
    if denom == 0:
        raise ValueError("zero-variance series")
    return np.array([1.0] + [float(d[k:] @ d[:-k]) / denom for k in range(1, max_lag + 1)])


def durbin_watson(residuals) -> float:
    """Durbin-Watson statistic; rows of a 2-d input are separate series pooled together."""
    e = np.atleast_2d(np.asarray(residuals, dtype=float))
    denom = np.sum(e**2)
    if denom == 0:
        raise ValueError("all residuals are zero")
    return float(np.sum(np.diff(e, axis=1) ** 2) / denom)


def pooled_lag1_autocorr(values) -> float:
    """Lag-1 autocorrelation pooled over rows after removing each row's mean.

    With rows as states this is the within-state persistence of a panel series.
    """
    v = np.asarray(values, dtype=float)
    d = v - v.mean(axis=1, keepdims=True)
    denom = np.sum(d**2)
    if denom == 0:
        raise ValueError("zero within-row variance")
    return float(np.sum(d[:, 1:] * d[:, :-1]) / denom)
