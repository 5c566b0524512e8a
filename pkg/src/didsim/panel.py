"""Balanced state-year panels: CSV ingestion, validation, crude rates and lags.

A :class:`PanelDataset` stores every per-row quantity as a ``(n_states, n_years)``
array so that the simulation loop can work on whole blocks at once.  Flattening
uses C order, which gives the canonical (state, year) row order.
"""
from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field, replace
from typing import IO, Iterator, Mapping, NamedTuple

import numpy as np

REQUIRED_COLUMNS = ("state", "year", "deaths", "population")
RATE_SCALE = 100_000.0
RATE_COLUMN_RTOL = 1e-6


class PanelError(ValueError):
    """Raised when a panel violates one of the dataset invariants."""


def crude_rate(deaths, population):
    """Deaths per 100,000 persons.

    Works elementwise on arrays as well as on scalars.

    >>> crude_rate(300, 6_000_000)
    5.0
    """
    deaths = np.asarray(deaths, dtype=float)
    population = np.asarray(population, dtype=float)
    if np.any(population <= 0):
        raise PanelError("population must be positive")
    if np.any(deaths < 0):
        raise PanelError("deaths must be non-negative")
    out = deaths * RATE_SCALE / population
    return float(out) if out.ndim == 0 else out


class PanelRow(NamedTuple):
    state: str
    year: int
    deaths: int
    population: float
    crude_rate: float
    covariates: dict
    lagged_rate: float | None


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Balanced state-by-year panel.

    Parameters
    ----------
    states : tuple of str
        State identifiers, in row-block order.
    years : ndarray of int
        Contiguous, increasing calendar years.
    deaths : ndarray, shape (n_states, n_years)
        Non-negative integer death counts.
    population : ndarray, shape (n_states, n_years)
        Strictly positive population counts.
    covariates : mapping of str to ndarray
        Each value has the same shape as ``deaths``.
    lagged_rate : ndarray or None
        Crude rate ``lag`` years earlier, NaN where absent.  Set by
        :func:`attach_lag`.
    """

    states: tuple
    years: np.ndarray
    deaths: np.ndarray
    population: np.ndarray
    covariates: Mapping[str, np.ndarray] = field(default_factory=dict)
    lagged_rate: np.ndarray | None = None
    lag: int = 0

    def __post_init__(self):
        years = np.asarray(self.years, dtype=np.int64)
        deaths = np.asarray(self.deaths)
        population = np.asarray(self.population, dtype=float)
        shape = (len(self.states), len(years))
        if len(set(self.states)) != len(self.states):
            raise PanelError("duplicate state identifiers")
        if deaths.shape != shape or population.shape != shape:
            raise PanelError(f"deaths/population must have shape {shape}")
        if len(years) and np.any(np.diff(years) != 1):
            raise PanelError("years must be contiguous and increasing")
        if np.any(~np.isfinite(population)) or np.any(population <= 0):
            raise PanelError("non-positive population")
        if np.any(deaths < 0):
            raise PanelError("negative deaths")
        if np.any(deaths != np.round(deaths)):
            raise PanelError("deaths must be integer counts")
        covs = {}
        for name, values in self.covariates.items():
            values = np.asarray(values, dtype=float)
            if values.shape != shape:
                raise PanelError(f"covariate {name!r} must have shape {shape}")
            if np.any(~np.isfinite(values)):
                raise PanelError(f"missing values in covariate {name!r}")
            values.setflags(write=False)
            covs[name] = values
        deaths = deaths.astype(np.int64)
        for arr in (years, deaths, population):
            arr.setflags(write=False)
        object.__setattr__(self, "states", tuple(str(s) for s in self.states))
        object.__setattr__(self, "years", years)
        object.__setattr__(self, "deaths", deaths)
        object.__setattr__(self, "population", population)
        object.__setattr__(self, "covariates", covs)
        if self.lagged_rate is not None:
            lagged = np.asarray(self.lagged_rate, dtype=float)
            lagged.setflags(write=False)
            object.__setattr__(self, "lagged_rate", lagged)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.states), len(self.years)

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_years(self) -> int:
        return len(self.years)

    @property
    def crude_rate(self) -> np.ndarray:
        return self.deaths * RATE_SCALE / self.population

    def mean_annual_population(self) -> float:
        return float(self.population.sum() / self.n_years)

    def mean_annual_deaths(self) -> float:
        return float(self.deaths.sum() / self.n_years)

    def rows(self) -> Iterator[PanelRow]:
        rate = self.crude_rate
        for i, state in enumerate(self.states):
            for t, year in enumerate(self.years):
                lag = None
                if self.lagged_rate is not None and not np.isnan(self.lagged_rate[i, t]):
                    lag = float(self.lagged_rate[i, t])
                yield PanelRow(
                    state,
                    int(year),
                    int(self.deaths[i, t]),
                    float(self.population[i, t]),
                    float(rate[i, t]),
                    {k: float(v[i, t]) for k, v in self.covariates.items()},
                    lag,
                )

    def __len__(self) -> int:
        return self.n_states * self.n_years


def lag_array(values: np.ndarray, k: int = 1) -> np.ndarray:
    """Shift each row of a (state, year) array right by ``k`` years, NaN-filled."""
    values = np.asarray(values, dtype=float)
    if k < 1 or k >= values.shape[1]:
        raise PanelError(f"lag k={k} must satisfy 1 <= k < n_years={values.shape[1]}")
    out = np.full(values.shape, np.nan)
    out[:, k:] = values[:, :-k]
    return out


def attach_lag(panel: PanelDataset, k: int = 1) -> PanelDataset:
    """Return a copy of ``panel`` carrying the ``k``-year lagged crude rate."""
    return replace(panel, lagged_rate=lag_array(panel.crude_rate, k), lag=k)


def _read_source(source) -> str:
    if isinstance(source, (str, os.PathLike)):
        with open(source, encoding="utf-8", newline="") as fh:
            return fh.read()
    data = source.read()
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return data


def load_panel(source: str | os.PathLike | IO) -> PanelDataset:
    """Read and validate a panel CSV.

    ``source`` may be a path or a text/binary stream.  Required columns are
    ``state, year, deaths, population``; every other column is a covariate,
    except ``crude_rate`` which, when present, is checked against the rate
    recomputed from deaths and population.
    """
    text = _read_source(source)
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise PanelError("empty CSV") from None
    missing = [c for c in REQUIRED_COLUMNS if c not in header]
    if missing:
        raise PanelError(f"missing required column(s): {', '.join(missing)}")
    if len(set(header)) != len(header):
        raise PanelError("duplicate column names")
    col = {name: j for j, name in enumerate(header)}
    cov_names = [h for h in header if h not in REQUIRED_COLUMNS and h != "crude_rate"]

    records: dict[tuple[str, int], list[str]] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise PanelError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        state = row[col["state"]].strip()
        try:
            year = int(row[col["year"]])
        except ValueError:
            raise PanelError(f"line {lineno}: bad year {row[col['year']]!r}") from None
        if (state, year) in records:
            raise PanelError(f"duplicate (state, year) = ({state}, {year})")
        records[(state, year)] = row
    if not records:
        raise PanelError("CSV has no data rows")

    states = sorted({s for s, _ in records})
    all_years = sorted({y for _, y in records})
    years = np.arange(all_years[0], all_years[-1] + 1)
    if len(records) != len(states) * len(years):
        raise PanelError(
            f"unbalanced panel: {len(records)} rows for {len(states)} states x {len(years)} years"
        )

    def parse(name, s, y):
        raw = records[(s, y)][col[name]].strip()
        if raw == "":
            raise PanelError(f"missing value for {name!r} at ({s}, {y})")
        try:
            return float(raw)
        except ValueError:
            raise PanelError(f"non-numeric {name!r} at ({s}, {y}): {raw!r}") from None

    def block(name):
        return np.array([[parse(name, s, int(y)) for y in years] for s in states])

    deaths = block("deaths")
    population = block("population")
    if np.any(population <= 0):
        raise PanelError("non-positive population")
    if np.any(deaths < 0):
        raise PanelError("negative deaths")
    panel = PanelDataset(
        states=tuple(states),
        years=years,
        deaths=deaths,
        population=population,
        covariates={name: block(name) for name in cov_names},
    )
    if "crude_rate" in col:
        given = block("crude_rate")
        rel = np.abs(given - panel.crude_rate) / np.maximum(np.abs(panel.crude_rate), 1e-300)
        bad = (rel > RATE_COLUMN_RTOL) & (np.abs(given - panel.crude_rate) > 0)
        if np.any(bad):
            i, t = np.argwhere(bad)[0]
            raise PanelError(
                f"crude_rate column disagrees with deaths/population at ({states[i]}, {years[t]})"
            )
    return panel


def write_panel(panel: PanelDataset, dest: str | os.PathLike | IO, include_rate: bool = True) -> None:
    """Write ``panel`` in the CSV layout accepted by :func:`load_panel`.

    Floats are written with ``repr`` so a load/write round trip is exact.
    """
    header = list(REQUIRED_COLUMNS) + (["crude_rate"] if include_rate else []) + list(panel.covariates)

    def emit(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in panel.rows():
            out = [row.state, row.year, row.deaths, _fmt(row.population)]
            if include_rate:
                out.append(_fmt(row.crude_rate))
            out.extend(_fmt(row.covariates[k]) for k in panel.covariates)
            w.writerow(out)

    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            emit(fh)
    else:
        emit(dest)


def _fmt(x: float) -> str:
    if float(x).is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(float(x))
