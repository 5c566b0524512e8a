"""Effect-size calibration and injection of true policy effects.

Injection follows the executable simulation code rather than a literal reading
of the effect formulas: multiplicative effects scale the base outcome by
``1 + (te - 1) * exposure``, and count outcomes are re-rounded afterwards.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .panel import RATE_SCALE, PanelDataset, lag_array
from .scenario import PolicyScenario

DIRECTIONS = ("null", "positive", "negative")
SIZE_FRACTIONS = {"small": 0.05, "medium": 0.15, "large": 0.25}


def calibrate_linear_alpha(panel: PanelDataset, target_deaths: float) -> float:
    """Rate change (per 100,000) that adds ``target_deaths`` deaths per year nationally."""
    if len(panel) == 0:
        raise ValueError("empty panel")
    if target_deaths < 0:
        raise ValueError("target_deaths must be non-negative")
    return target_deaths / (panel.mean_annual_population() / RATE_SCALE)


def calibrate_multiplicative(panel: PanelDataset, target_deaths: float, direction: str) -> float:
    """Risk ratio that changes national annual deaths by ``target_deaths``."""
    mean_deaths = panel.mean_annual_deaths()
    if mean_deaths <= 0:
        raise ValueError("panel has zero total deaths")
    pct = target_deaths / mean_deaths
    if direction == "negative":
        return 1.0 - pct
    if direction == "positive":
        return 1.0 + pct
    if direction == "null":
        return 1.0
    raise ValueError(f"unknown direction {direction!r}")


@dataclass(frozen=True)
class EffectSpec:
    direction: str
    size_class: str | None
    target_deaths: float
    alpha_linear: float
    te_multiplicative: float

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}")
        if self.direction == "null":
            if self.alpha_linear != 0 or self.te_multiplicative != 1:
                raise ValueError("null effect must have alpha_linear=0 and te=1")
        else:
            sign = 1 if self.direction == "positive" else -1
            if np.sign(self.alpha_linear) != sign or np.sign(self.te_multiplicative - 1) != sign:
                raise ValueError("effect signs do not match direction")

    @property
    def is_null(self) -> bool:
        return self.direction == "null"

    @property
    def signed_target(self) -> float:
        """Expected national change in annual deaths (negative for the negative arm)."""
        if self.is_null:
            return 0.0
        return self.target_deaths if self.direction == "positive" else -self.target_deaths

    @property
    def log_te(self) -> float:
        return float(np.log(self.te_multiplicative))

    @property
    def label(self) -> str:
        return "null" if self.is_null else f"{self.direction}_{self.size_class}"


NULL_EFFECT = EffectSpec("null", None, 0.0, 0.0, 1.0)


def make_effect(panel: PanelDataset, direction: str, size_class: str | None = None,
                target_deaths: float | None = None) -> EffectSpec:
    """Calibrate an effect on ``panel``.

    ``target_deaths`` defaults to the size class's fraction (5/15/25%) of the
    panel's mean annual deaths.
    """
    if direction == "null":
        return NULL_EFFECT
    if target_deaths is None:
        if size_class not in SIZE_FRACTIONS:
            raise ValueError(f"size_class must be one of {tuple(SIZE_FRACTIONS)}")
        target_deaths = SIZE_FRACTIONS[size_class] * panel.mean_annual_deaths()
    sign = 1.0 if direction == "positive" else -1.0
    alpha = sign * calibrate_linear_alpha(panel, target_deaths)
    te = calibrate_multiplicative(panel, target_deaths, direction)
    return EffectSpec(direction, size_class, float(target_deaths), float(alpha), float(te))


@dataclass(frozen=True, eq=False)
class AdjustedPanel:
    """Outcome arrays after effect injection, on top of an unchanged base panel."""

    panel: PanelDataset
    rate: np.ndarray
    deaths: np.ndarray

    @property
    def log_rate(self) -> np.ndarray:
        if np.any(self.rate <= 0):
            raise ValueError("log of non-positive rate")
        return np.log(self.rate)

    def lagged_rate(self, k: int = 1) -> np.ndarray:
        """Lag of the adjusted rate; lags are recomputed after injection."""
        return lag_array(self.rate, k)


def unadjusted(panel: PanelDataset) -> AdjustedPanel:
    return AdjustedPanel(panel, panel.crude_rate, panel.deaths.astype(float))


def inject_linear(panel: PanelDataset, scenario: PolicyScenario, alpha_linear: float) -> AdjustedPanel:
    if alpha_linear == 0:
        return unadjusted(panel)
    rate = panel.crude_rate + alpha_linear * scenario.exposure
    return AdjustedPanel(panel, rate, panel.deaths.astype(float))


def inject_multiplicative_rate(panel: PanelDataset, scenario: PolicyScenario, te: float) -> AdjustedPanel:
    if te == 1:
        return unadjusted(panel)
    base = panel.crude_rate
    affected = scenario.exposure > 0
    if np.any(base[affected] <= 0):
        raise ValueError("zero or negative rate in a treated state-year; log outcome undefined")
    rate = base + base * (te - 1) * scenario.exposure
    return AdjustedPanel(panel, rate, panel.deaths.astype(float))


def inject_count(panel: PanelDataset, scenario: PolicyScenario, te: float) -> AdjustedPanel:
    if te == 1:
        return unadjusted(panel)
    deaths = panel.deaths + panel.deaths * (te - 1) * scenario.exposure
    deaths = np.rint(deaths)
    return AdjustedPanel(panel, deaths * RATE_SCALE / panel.population, deaths)


def inject(panel: PanelDataset, scenario: PolicyScenario, effect: EffectSpec, link: str) -> AdjustedPanel:
    """Dispatch to the injector matching a model's link function."""
    if effect.is_null:
        return unadjusted(panel)
    if link == "linear":
        return inject_linear(panel, scenario, effect.alpha_linear)
    if link == "log_linear":
        return inject_multiplicative_rate(panel, scenario, effect.te_multiplicative)
    if link in ("poisson", "negbin"):
        return inject_count(panel, scenario, effect.te_multiplicative)
    raise ValueError(f"unknown link {link!r}")
