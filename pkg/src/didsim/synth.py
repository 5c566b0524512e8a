"""Synthetic state-year mortality panels.

Log crude rates follow a stationary AR(1) process around
``base_log_rate + state intercept + national_trend * t``, which keeps rates
positive and right-skewed.  Populations are lognormal and constant over time.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .panel import RATE_SCALE, PanelDataset


@dataclass(frozen=True)
class SynthConfig:
    n_states: int = 50
    n_years: int = 18
    seed: int = 20190101
    rho: float = 0.9
    sigma_state: float = 0.6
    sigma_noise: float = 0.15
    national_trend: float = 0.08
    base_log_rate: float = float(np.log(5.0))
    pop_log_mean: float = float(np.log(4e6))
    pop_log_sd: float = 1.0
    first_year: int = 1999
    unemployment_mean: float = 6.0
    unemployment_rho: float = 0.8
    unemployment_sd: float = 1.0

    def validate(self) -> None:
        if self.n_states < 2:
            raise ValueError("n_states must be >= 2")
        if self.n_years < 4:
            raise ValueError("n_years must be >= 4")
        if not 0 <= self.rho < 1:
            raise ValueError("rho must lie in [0, 1)")
        if not 0 <= self.unemployment_rho < 1:
            raise ValueError("unemployment_rho must lie in [0, 1)")
        for name in ("sigma_state", "sigma_noise", "pop_log_sd", "unemployment_sd"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def _ar1(rng: np.random.Generator, n: int, T: int, rho: float, sd: float) -> np.ndarray:
    """Stationary AR(1) paths with marginal standard deviation ``sd``."""
    z = np.empty((n, T))
    innov_sd = sd * np.sqrt(1.0 - rho**2)
    z[:, 0] = rng.normal(0.0, sd, n)
    eps = rng.normal(0.0, innov_sd, (n, T - 1))
    for t in range(1, T):
        z[:, t] = rho * z[:, t - 1] + eps[:, t - 1]
    return z


def generate_panel(cfg: SynthConfig | None = None) -> PanelDataset:
    """Draw a synthetic panel; deterministic given ``cfg.seed``."""
    cfg = cfg or SynthConfig()
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    S, T = cfg.n_states, cfg.n_years
    t = np.arange(T)

    pop = np.rint(np.exp(rng.normal(cfg.pop_log_mean, cfg.pop_log_sd, S)))
    pop = np.maximum(pop, 1000.0)
    intercept = rng.normal(0.0, cfg.sigma_state, S)

    # innovation sd is sigma_noise, so the stationary sd is sigma_noise / sqrt(1 - rho^2)
    z = np.empty((S, T))
    z[:, 0] = rng.normal(0.0, cfg.sigma_noise / np.sqrt(1.0 - cfg.rho**2), S)
    eps = rng.normal(0.0, cfg.sigma_noise, (S, T - 1))
    for k in range(1, T):
        z[:, k] = cfg.rho * z[:, k - 1] + eps[:, k - 1]

    log_rate = cfg.base_log_rate + intercept[:, None] + cfg.national_trend * t[None, :] + z
    population = np.repeat(pop[:, None], T, axis=1)
    deaths = np.rint(np.exp(log_rate) * population / RATE_SCALE)

    unemp_level = rng.normal(0.0, cfg.unemployment_sd, S)
    unemp = cfg.unemployment_mean + unemp_level[:, None] + _ar1(
        rng, S, T, cfg.unemployment_rho, cfg.unemployment_sd
    )
    unemp = np.round(np.maximum(unemp, 0.5), 2)

    width = len(str(S))
    states = tuple(f"S{i + 1:0{width}d}" for i in range(S))
    return PanelDataset(
        states=states,
        years=cfg.first_year + t,
        deaths=deaths,
        population=population,
        covariates={"unemployment_rate": unemp},
    )
