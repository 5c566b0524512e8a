"""Randomized policy scenarios and exposure coding."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

CODING_SPEEDS = ("instant", "slow")
PHASE_YEARS = 3
WINDOW_MARGIN = 3


def substream(master_seed: int, *keys: int) -> np.random.Generator:
    """Counter-based generator for the stream addressed by ``keys``.

    The same ``(master_seed, keys)`` always yields the same draws, regardless of
    which process asks or in what order.
    """
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def enactment_window(years: Sequence[int], margin: int = WINDOW_MARGIN) -> tuple[int, int]:
    """First and last admissible enactment years (inclusive).

    Leaves ``margin`` years of data on both sides; 1999-2016 gives 2002-2013.
    """
    first, last = int(years[0]) + margin, int(years[-1]) - margin
    if first > last:
        raise ValueError(
            f"panel {years[0]}-{years[-1]} is too short for a {margin}-year margin on each side"
        )
    return first, last


def sample_policy_states(rng: np.random.Generator, n_trt: int, states: Sequence) -> list:
    """Uniform sample of ``n_trt`` distinct states, in draw order."""
    if not 1 <= n_trt <= len(states):
        raise ValueError(f"n_trt={n_trt} must be between 1 and {len(states)}")
    idx = rng.choice(len(states), size=n_trt, replace=False)
    return [states[i] for i in idx]


def sample_enactment(rng: np.random.Generator, years: Sequence[int], size: int | None = None):
    """Draw enactment (year, month); year uniform on the window, month on 1..12.

    With ``size`` given, returns two integer arrays of that length.
    """
    lo, hi = enactment_window(years)
    n = 1 if size is None else size
    yr = rng.integers(lo, hi + 1, size=n)
    mo = rng.integers(1, 13, size=n)
    if size is None:
        return int(yr[0]), int(mo[0])
    return yr, mo


def instant_exposure(enact: tuple[int, int], years: Sequence[int]) -> np.ndarray:
    year, month = enact
    years = np.asarray(years)
    if not years[0] <= year <= years[-1]:
        raise ValueError(f"enactment year {year} outside panel")
    out = np.zeros(len(years))
    out[years == year] = (13 - month) / 12
    out[years > year] = 1.0
    return out


def _triangular(m: int) -> int:
    return m * (m + 1) // 2


def phase_in_values(month: int, phase_years: int = PHASE_YEARS) -> np.ndarray:
    """Exposure in years 0..phase_years after enactment under a linear phase-in.

    Year 0 averages the ramp over the enacted fraction of the year and then
    scales by that fraction again, so it equals ``F**2 / (2 L)``.  The final
    ramp year stays below 1 for months after January; exposure is 1 afterwards.
    """
    if not 1 <= month <= 12:
        raise ValueError("month must be in 1..12")
    L = phase_years
    frac = (13 - month) / 12
    first = frac * (0.5 * frac / L)
    mid = first + np.arange(1, L) / L
    monthly = (1 / L) / 12
    last = ((13 - month) + (month - 1) - _triangular(month - 1) * monthly) / 12
    return np.concatenate([[first], mid, [last]])


def gradual_exposure(enact: tuple[int, int], years: Sequence[int], phase_years: int = PHASE_YEARS) -> np.ndarray:
    year, month = enact
    years = np.asarray(years)
    if not years[0] <= year <= years[-1]:
        raise ValueError(f"enactment year {year} outside panel")
    out = np.zeros(len(years))
    start = int(np.searchsorted(years, year))
    ramp = phase_in_values(month, phase_years)
    stop = min(start + len(ramp), len(years))
    out[start:stop] = ramp[: stop - start]
    out[stop:] = 1.0
    return out


def change_code(levels) -> np.ndarray:
    """First differences along the last axis, with the level before the panel taken as 0."""
    levels = np.asarray(levels, dtype=float)
    return np.diff(levels, axis=-1, prepend=0.0)


@dataclass(frozen=True, eq=False)
class PolicyScenario:
    """Treated states, enactment dates and the resulting exposure matrices.

    ``exposure`` and ``exposure_change`` have shape ``(n_states, n_years)`` and
    follow the state order of the panel they were built for.
    """

    treated: tuple
    enactment: dict
    exposure: np.ndarray
    exposure_change: np.ndarray
    coding_speed: str

    @property
    def n_trt(self) -> int:
        return len(self.treated)

    def to_rows(self, states: Sequence, years: Sequence[int]) -> list[tuple]:
        """(state, year, level, change) rows for debugging dumps."""
        return [
            (s, int(y), float(self.exposure[i, t]), float(self.exposure_change[i, t]))
            for i, s in enumerate(states)
            for t, y in enumerate(years)
        ]


def build_scenario(states: Sequence, years: Sequence[int], treated: Sequence, years_enacted,
                   months_enacted, coding_speed: str, phase_years: int = PHASE_YEARS) -> PolicyScenario:
    if coding_speed not in CODING_SPEEDS:
        raise ValueError(f"coding_speed must be one of {CODING_SPEEDS}")
    index = {s: i for i, s in enumerate(states)}
    exposure = np.zeros((len(states), len(years)))
    enactment = {}
    for s, yr, mo in zip(treated, years_enacted, months_enacted):
        enact = (int(yr), int(mo))
        enactment[s] = enact
        if coding_speed == "instant":
            exposure[index[s]] = instant_exposure(enact, years)
        else:
            exposure[index[s]] = gradual_exposure(enact, years, phase_years)
    exposure.setflags(write=False)
    change = change_code(exposure)
    change.setflags(write=False)
    return PolicyScenario(tuple(treated), enactment, exposure, change, coding_speed)


def sample_scenario(rng: np.random.Generator, states: Sequence, years: Sequence[int], n_trt: int,
                    coding_speeds: Sequence[str] = CODING_SPEEDS) -> dict[str, PolicyScenario]:
    """One draw of treated states and enactment dates, coded at each requested speed.

    Draw order is states, then years, then months.
    """
    treated = sample_policy_states(rng, n_trt, states)
    yrs, mos = sample_enactment(rng, years, size=n_trt)
    return {speed: build_scenario(states, years, treated, yrs, mos, speed) for speed in coding_speeds}
