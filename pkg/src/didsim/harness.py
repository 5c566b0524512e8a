"""Monte Carlo driver: null and effect suites over the model grid, and report files.

Work is split into units keyed by ``(n_trt, iteration)``.  Each unit draws one
scenario from the substream ``(master_seed, n_trt, iteration)``, codes it at
every requested speed, injects every requested effect and fits every model, so
all models see the same simulated datasets.  Units are independent, which
makes the output identical for any number of workers.
"""
from __future__ import annotations

import configparser
import hashlib
import io
import json
import logging
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import pandas as pd

from . import metrics
from .effects import NULL_EFFECT, EffectSpec, inject, make_effect
from .estimators import (
    COUNT_LINKS,
    SE_METHODS,
    ModelSpec,
    PartialledWLS,
    build_design,
    fit_model,
    model_grid,
    response,
    static_columns,
    varying_columns,
)
from .inference import InferenceResult, infer
from .panel import PanelDataset, load_panel
from .scenario import CODING_SPEEDS, sample_scenario, substream
from .synth import SynthConfig, generate_panel

log = logging.getLogger(__name__)

DESK_ITERS = 500
FULL_ITERS = 5000
SEED_SCHEME = (
    "scenario draws for iteration k at n_trt treated states use "
    "numpy Philox(SeedSequence(master_seed, spawn_key=(n_trt, k))); "
    "draw order: treated states, enactment years, enactment months"
)
OUTPUT_ENV = "DIDSIM_OUT"

DESK_MODELS = tuple(
    ModelSpec(form, "linear", wt)
    for form in ("two_way_fe", "detrended", "autoregressive", "gee")
    for wt in ("unweighted", "population_weighted")
)


def with_arellano(models: Sequence[ModelSpec]) -> tuple[ModelSpec, ...]:
    """Add the cluster sandwich without small-sample factor to every regression model."""
    return tuple(
        m if m.form == "gee" else replace(m, se_methods=SE_METHODS + ("arellano",))
        for m in models
    )


def models_by_name(names: Sequence[str]) -> tuple[ModelSpec, ...]:
    """Resolve model names such as ``linear_two_way_fe_wt``; ``desk`` and ``all`` expand to groups."""
    catalog = {m.name: m for m in model_grid()}
    out = []
    for name in names:
        if name == "desk":
            out.extend(DESK_MODELS)
        elif name == "all":
            out.extend(catalog.values())
        elif name in catalog:
            out.append(catalog[name])
        else:
            raise ValueError(f"unknown model {name!r}; known: {', '.join(sorted(catalog))}")
    seen = {}
    for m in out:
        seen.setdefault(m.name, m)
    return tuple(seen.values())


@dataclass(frozen=True)
class ExperimentConfig:
    panel_csv: str | None = None
    synth: SynthConfig = field(default_factory=SynthConfig)
    iters: int = DESK_ITERS
    n_trt_grid: tuple = (1, 5, 15, 30)
    coding_speeds: tuple = CODING_SPEEDS
    effect_sizes: tuple = ("small", "medium", "large")
    models: tuple = DESK_MODELS
    master_seed: int = 1234567
    workers: int = 1

    def validate(self, panel: PanelDataset | None = None, min_iters: int = metrics.MIN_CF_ITERS) -> None:
        if self.iters < min_iters:
            raise ValueError(f"iters={self.iters} is below the minimum of {min_iters}")
        if not self.n_trt_grid:
            raise ValueError("n_trt_grid is empty")
        bad = set(self.coding_speeds) - set(CODING_SPEEDS)
        if bad or not self.coding_speeds:
            raise ValueError(f"coding_speeds must be a non-empty subset of {CODING_SPEEDS}")
        if not self.models:
            raise ValueError("no models configured")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        n_states = panel.n_states if panel is not None else self.synth.n_states
        for n in self.n_trt_grid:
            if not 1 <= n <= n_states:
                raise ValueError(f"n_trt={n} outside 1..{n_states}")

    def load_panel(self) -> PanelDataset:
        if self.panel_csv:
            return load_panel(self.panel_csv)
        return generate_panel(self.synth)

    def to_text(self) -> str:
        """Canonical sectioned key-value text; parsing it back gives an equal config."""
        cp = configparser.ConfigParser()
        cp["panel"] = {"source": self.panel_csv or "synthetic"}
        cp["synth"] = {k: repr(v) if isinstance(v, float) else str(v) for k, v in self.synth.to_dict().items()}
        cp["simulation"] = {
            "iters": str(self.iters),
            "n_trt": ", ".join(map(str, self.n_trt_grid)),
            "coding_speeds": ", ".join(self.coding_speeds),
            "effect_sizes": ", ".join(self.effect_sizes),
            "models": ", ".join(m.name for m in self.models),
            "arellano": str(any("arellano" in m.se_methods for m in self.models)).lower(),
            "master_seed": str(self.master_seed),
            "workers": str(self.workers),
        }
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def config_hash(self) -> str:
        """Hash of everything that affects results (worker count excluded)."""
        text = replace(self, workers=1).to_text()
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    @classmethod
    def from_text(cls, text: str, base_dir: str | os.PathLike | None = None) -> "ExperimentConfig":
        cp = configparser.ConfigParser()
        cp.read_string(text)
        kw = {}
        if cp.has_section("panel"):
            src = cp["panel"].get("source", "synthetic").strip()
            if src and src != "synthetic":
                path = Path(src)
                if base_dir is not None and not path.is_absolute():
                    path = Path(base_dir) / path
                kw["panel_csv"] = str(path)
        if cp.has_section("synth"):
            types = {f.name: f.type for f in fields(SynthConfig)}
            synth_kw = {}
            for key, raw in cp["synth"].items():
                if key not in types:
                    raise ValueError(f"unknown synth key {key!r}")
                synth_kw[key] = int(raw) if types[key] in (int, "int") else float(raw)
            kw["synth"] = SynthConfig(**synth_kw)
        if cp.has_section("simulation"):
            sec = cp["simulation"]
            known = {"iters", "n_trt", "coding_speeds", "effect_sizes", "models", "arellano", "master_seed", "workers"}
            unknown = set(sec) - known
            if unknown:
                raise ValueError(f"unknown simulation keys: {sorted(unknown)}")
            split = lambda s: tuple(x.strip() for x in s.split(",") if x.strip())  # noqa: E731
            if "iters" in sec:
                kw["iters"] = sec.getint("iters")
            if "n_trt" in sec:
                kw["n_trt_grid"] = tuple(int(x) for x in split(sec["n_trt"]))
            if "coding_speeds" in sec:
                kw["coding_speeds"] = split(sec["coding_speeds"])
            if "effect_sizes" in sec:
                kw["effect_sizes"] = split(sec["effect_sizes"])
            if "models" in sec:
                kw["models"] = models_by_name(split(sec["models"]))
            if sec.getboolean("arellano", fallback=False):
                kw["models"] = with_arellano(kw.get("models", DESK_MODELS))
            if "master_seed" in sec:
                kw["master_seed"] = sec.getint("master_seed")
            if "workers" in sec:
                kw["workers"] = sec.getint("workers")
        return cls(**kw)

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "ExperimentConfig":
        path = Path(path)
        return cls.from_text(path.read_text(encoding="utf-8"), base_dir=path.parent)


class ModelFitter:
    """Fits one model spec on many simulated datasets from the same base panel.

    Linear and log-linear regressions reuse a factorization of their static
    columns; GEE and count models go through the full design.
    """

    def __init__(self, panel: PanelDataset, spec: ModelSpec):
        self.spec = spec
        self.panel = panel
        self._t0 = 1 if spec.form == "autoregressive" else 0
        self._fast = None
        if spec.form != "gee" and spec.link not in COUNT_LINKS:
            Z, _ = static_columns(panel, spec)
            S, T = panel.shape
            w = panel.population[:, self._t0:].ravel().astype(float) if spec.weighting == "population_weighted" else None
            self._fast = PartialledWLS(Z, w, np.repeat(np.arange(S), T - self._t0))

    def fit(self, adj, scenario, effect: EffectSpec | None = None) -> list[InferenceResult]:
        spec = self.spec
        if self._fast is not None:
            V, _ = varying_columns(adj, scenario, spec)
            y = response(adj, spec)[:, self._t0:].ravel()
            res = self._fast.fit(V, y, target=0)
        else:
            res = fit_model(build_design(adj, scenario, spec), spec)
        return [infer(res, m) for m in spec.se_methods]


FitterFactory = Callable[[PanelDataset, ModelSpec], object]


def effect_grid(panel: PanelDataset, sizes: Sequence[str], directions: Sequence[str]) -> list[EffectSpec]:
    out = []
    for size in sizes:
        for d in directions:
            out.append(make_effect(panel, d, size))
    return out


@dataclass(eq=False)
class SimulationResult:
    """Raw estimates from one suite.

    ``values`` has shape ``(n_trt, iter, coding, effect, model, se_slot, 4)``
    with the last axis holding (alpha_hat, var_alpha, t_stat, p_value); failed
    fits are NaN.
    """

    config: ExperimentConfig
    panel: PanelDataset
    effects: list
    values: np.ndarray
    failures: np.ndarray  # (n_trt, iter, coding, effect, model) bool
    elapsed: float = 0.0

    @property
    def models(self):
        return self.config.models

    def estimates(self, j, c, e, m, s):
        """(alpha, var, t, p) arrays over the successful iterations of one cell."""
        block = self.values[j, :, c, e, m, s]
        ok = ~self.failures[j, :, c, e, m]
        return block[ok].T

    def n_failed(self, j, c, e, m) -> int:
        return int(self.failures[j, :, c, e, m].sum())


# worker-process state, set by _init_worker
_STATE: dict = {}


def _init_worker(config: ExperimentConfig, panel: PanelDataset, effects: list, fitter_factory) -> None:
    warnings.simplefilter("ignore", RuntimeWarning)
    factory = fitter_factory or ModelFitter
    _STATE.update(
        config=config,
        panel=panel,
        effects=effects,
        fitters=[factory(panel, spec) for spec in config.models],
        links=[spec.link for spec in config.models],
    )


def _run_unit(unit: tuple[int, int]):
    j, k = unit
    cfg: ExperimentConfig = _STATE["config"]
    panel: PanelDataset = _STATE["panel"]
    effects = _STATE["effects"]
    fitters = _STATE["fitters"]
    links = _STATE["links"]
    n_trt = cfg.n_trt_grid[j]
    n_se = max(len(s.se_methods) for s in cfg.models)
    C, E, M = len(cfg.coding_speeds), len(effects), len(cfg.models)
    out = np.full((C, E, M, n_se, 4), np.nan)
    failed = np.zeros((C, E, M), dtype=bool)
    rng = substream(cfg.master_seed, n_trt, k)
    scenarios = sample_scenario(rng, panel.states, panel.years, n_trt, cfg.coding_speeds)
    for c, speed in enumerate(cfg.coding_speeds):
        sc = scenarios[speed]
        for e, eff in enumerate(effects):
            adjusted = {}
            for m, fitter in enumerate(fitters):
                try:
                    link = links[m]
                    if link not in adjusted:
                        adjusted[link] = inject(panel, sc, eff, link)
                    results = fitter.fit(adjusted[link], sc, eff)
                except (ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
                    failed[c, e, m] = True
                    log.debug("fit failed: n_trt=%s iter=%s model=%s: %s", n_trt, k, m, exc)
                    continue
                for s, r in enumerate(results):
                    out[c, e, m, s] = (r.alpha_hat, r.var_alpha, r.t_stat, r.p_value)
    return out, failed


def simulate(config: ExperimentConfig, effects: list[EffectSpec], panel: PanelDataset | None = None,
             fitter_factory: FitterFactory | None = None, min_iters: int = 1) -> SimulationResult:
    """Run every (n_trt, iteration) unit for ``effects`` and gather results in unit order."""
    panel = panel if panel is not None else config.load_panel()
    config.validate(panel, min_iters=min_iters)
    J, K = len(config.n_trt_grid), config.iters
    C, E, M = len(config.coding_speeds), len(effects), len(config.models)
    n_se = max(len(s.se_methods) for s in config.models)
    values = np.full((J, K, C, E, M, n_se, 4), np.nan)
    failures = np.zeros((J, K, C, E, M), dtype=bool)
    units = [(j, k) for j in range(J) for k in range(K)]
    start = time.perf_counter()
    if config.workers == 1:
        saved = dict(_STATE)
        try:
            with warnings.catch_warnings():
                _init_worker(config, panel, effects, fitter_factory)
                results = map(_run_unit, units)
                for (j, k), (out, failed) in zip(units, results):
                    values[j, k], failures[j, k] = out, failed
        finally:
            _STATE.clear()
            _STATE.update(saved)
    else:
        chunk = max(1, len(units) // (config.workers * 8))
        with ProcessPoolExecutor(config.workers, initializer=_init_worker,
                                 initargs=(config, panel, effects, fitter_factory)) as pool:
            for (j, k), (out, failed) in zip(units, pool.map(_run_unit, units, chunksize=chunk)):
                values[j, k], failures[j, k] = out, failed
    return SimulationResult(config, panel, list(effects), values, failures, time.perf_counter() - start)


def records_frame(sim: SimulationResult) -> pd.DataFrame:
    """Long table with one :class:`~didsim.metrics.IterationRecord` per successful fit and SE method."""
    rows = []
    cfg = sim.config
    for j, n_trt in enumerate(cfg.n_trt_grid):
        for c, speed in enumerate(cfg.coding_speeds):
            for e, eff in enumerate(sim.effects):
                for m, spec in enumerate(cfg.models):
                    for s, method in enumerate(spec.se_methods):
                        for k in range(cfg.iters):
                            if sim.failures[j, k, c, e, m]:
                                continue
                            a, v, t, p = sim.values[j, k, c, e, m, s]
                            rows.append(metrics.IterationRecord(n_trt, speed, eff.label, spec.name, method, k, a, v, t, p))
    return pd.DataFrame(rows, columns=metrics.IterationRecord._fields)


def _cf_or_nan(t_stats) -> float:
    if len(t_stats) < metrics.MIN_CF_ITERS:
        return float("nan")
    return metrics.correction_factor(t_stats)


def summarize_null(sim: SimulationResult) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Null-condition summaries and correction factors, one row per (coding, model, n_trt, se method)."""
    cfg = sim.config
    rows, cf_rows = [], []
    for c, speed in enumerate(cfg.coding_speeds):
        for m, spec in enumerate(cfg.models):
            for j, n_trt in enumerate(cfg.n_trt_grid):
                n_failed = sim.n_failed(j, c, 0, m)
                for s, method in enumerate(spec.se_methods):
                    a, v, t, p = sim.estimates(j, c, 0, m, s)
                    ok = len(a) > 0
                    rows.append({
                        "coding": speed,
                        "model": spec.name,
                        "n_trt": n_trt,
                        "se_adj": method,
                        "regn_coeff": float(np.mean(a)) if ok else np.nan,
                        "ave_model_se": float(np.mean(np.sqrt(v))) if ok else np.nan,
                        "mse": float(np.mean(a**2)) if ok else np.nan,
                        "type_i": metrics.type_i_rate(p) if ok else np.nan,
                        "t_stat": float(np.mean(t)) if ok else np.nan,
                        "n_ok": len(a),
                        "n_failed": n_failed,
                    })
                    cf_rows.append({
                        "coding": speed,
                        "model": spec.name,
                        "n_trt": n_trt,
                        "se_adj": method,
                        "correction_factor": _cf_or_nan(t),
                    })
    return pd.DataFrame(rows), pd.DataFrame(cf_rows)


def run_null_suite(config: ExperimentConfig, panel: PanelDataset | None = None,
                   fitter_factory: FitterFactory | None = None, min_iters: int = 1):
    """Simulate the no-effect condition.

    Returns ``(summaries, correction_factors, sim)``.  Correction factors are NaN
    for conditions with fewer than 100 successful iterations.
    """
    sim = simulate(config, [NULL_EFFECT], panel, fitter_factory, min_iters=min_iters)
    summaries, cfs = summarize_null(sim)
    return summaries, cfs, sim


def _link_kind(link: str) -> str:
    return "linear" if link == "linear" else "log"


def run_effect_suite(config: ExperimentConfig, direction: str, correction_factors: pd.DataFrame,
                     panel: PanelDataset | None = None, fitter_factory: FitterFactory | None = None,
                     min_iters: int = 1):
    """Simulate one effect direction at every configured size.

    Needs the correction factors of the matching null conditions.  Returns
    ``(arm_summaries, sim)`` with one row per (coding, model, n_trt, se method,
    effect size).
    """
    if direction not in ("positive", "negative"):
        raise ValueError("run_effect_suite needs direction 'positive' or 'negative'; use run_null_suite for the null")
    panel = panel if panel is not None else config.load_panel()
    cf_lookup = _cf_lookup(correction_factors)
    for speed in config.coding_speeds:
        for spec in config.models:
            for n_trt in config.n_trt_grid:
                for method in spec.se_methods:
                    key = (speed, spec.name, int(n_trt), method)
                    cf = cf_lookup.get(key)
                    if cf is None or not np.isfinite(cf):
                        raise KeyError(f"missing correction factor for coding={speed} model={spec.name} "
                                       f"n_trt={n_trt} se={method}")
    effects = effect_grid(panel, config.effect_sizes, [direction])
    sim = simulate(config, effects, panel, fitter_factory, min_iters=min_iters)
    mean_pop, mean_deaths = panel.mean_annual_population(), panel.mean_annual_deaths()
    rows = []
    for c, speed in enumerate(config.coding_speeds):
        for m, spec in enumerate(config.models):
            kind = _link_kind(spec.link)
            for j, n_trt in enumerate(config.n_trt_grid):
                for e, eff in enumerate(effects):
                    n_failed = sim.n_failed(j, c, e, m)
                    truth = eff.alpha_linear if kind == "linear" else eff.log_te
                    for s, method in enumerate(spec.se_methods):
                        a, v, t, p = sim.estimates(j, c, e, m, s)
                        cf = cf_lookup[(speed, spec.name, int(n_trt), method)]
                        row = {
                            "coding": speed, "model": spec.name, "n_trt": n_trt, "se_adj": method,
                            "effect_size": eff.size_class, "direction": direction,
                            "target_deaths": eff.target_deaths, "alpha_true": truth,
                            "n_ok": len(a), "n_failed": n_failed,
                        }
                        if len(a):
                            deaths = metrics.standardize_to_deaths(
                                a, kind, mean_annual_population=mean_pop, mean_annual_deaths=mean_deaths)
                            sig = metrics.adjusted_significance(a, v, cf)
                            row.update(
                                mean_coef=float(np.mean(a)),
                                bias_deaths=metrics.arm_bias(deaths, eff.signed_target),
                                sq_err=float(np.mean((a - truth) ** 2)),
                                power=metrics.corrected_rejection_rate(a, v, cf, direction),
                                type_s=metrics.type_s(a, sig, direction),
                            )
                        else:
                            row.update(mean_coef=np.nan, bias_deaths=np.nan, sq_err=np.nan, power=np.nan, type_s=np.nan)
                        rows.append(row)
    return pd.DataFrame(rows), sim


def _cf_lookup(cfs: pd.DataFrame) -> dict:
    return {
        (r.coding, r.model, int(r.n_trt), r.se_adj): float(r.correction_factor)
        for r in cfs.itertuples(index=False)
    }


def pair_arms(pos: pd.DataFrame, neg: pd.DataFrame) -> pd.DataFrame:
    """Combine the positive and negative arms into directional and magnitude summaries."""
    keys = ["coding", "model", "n_trt", "se_adj", "effect_size"]
    merged = pos.merge(neg, on=keys, suffixes=("_pos", "_neg"), validate="one_to_one")
    if len(merged) != len(pos) or len(merged) != len(neg):
        raise ValueError("positive and negative arms do not cover the same conditions")
    T = merged["target_deaths_pos"]
    out = merged[keys].copy()
    out["target_deaths"] = T
    out["bias"] = 0.5 * (merged["bias_deaths_pos"] + merged["bias_deaths_neg"])
    out["magbias"] = 0.5 * (merged["bias_deaths_pos"] - merged["bias_deaths_neg"])
    out["pct_bias"] = 100.0 * out["bias"] / T
    out["pct_magbias"] = 100.0 * out["magbias"] / T
    out["rmse"] = np.sqrt(0.5 * (merged["sq_err_pos"] + merged["sq_err_neg"]))
    out["type_s"] = 0.5 * (merged["type_s_pos"] + merged["type_s_neg"])
    out["power"] = 0.5 * (merged["power_pos"] + merged["power_neg"])
    out["n_failed"] = merged["n_failed_pos"] + merged["n_failed_neg"]
    return out


def condition_summaries(paired: pd.DataFrame, null_summary: pd.DataFrame, cfs: pd.DataFrame) -> dict:
    """:class:`~didsim.metrics.ConditionSummary` per (coding, model, n_trt, se method, effect size)."""
    null_idx = null_summary.set_index(["coding", "model", "n_trt", "se_adj"])
    cf = _cf_lookup(cfs)
    out = {}
    for r in paired.itertuples(index=False):
        nk = (r.coding, r.model, int(r.n_trt), r.se_adj)
        nrow = null_idx.loc[nk]
        out[nk + (r.effect_size,)] = metrics.ConditionSummary(
            directional_bias_deaths=float(r.bias),
            magnitude_bias_deaths=float(r.magbias),
            pct_directional_bias=float(r.pct_bias),
            pct_magnitude_bias=float(r.pct_magbias),
            rmse=float(np.sqrt(nrow["mse"])),
            type_i=float(nrow["type_i"]),
            correction_factor=cf[nk],
            correct_rejection_rate=float(r.power),
            type_s=float(r.type_s),
        )
    return out


@dataclass
class RunManifest:
    config_hash: str
    config_text: str
    files: list
    timing: dict
    seed_scheme: str = SEED_SCHEME
    failures: dict = field(default_factory=dict)

    def write(self, out_dir: Path) -> Path:
        path = Path(out_dir) / "manifest.json"
        path.write_text(json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


@dataclass
class ExperimentResults:
    config: ExperimentConfig
    null_summary: pd.DataFrame
    correction_factors: pd.DataFrame
    arms: pd.DataFrame
    paired: pd.DataFrame
    timing: dict


def run_experiment(config: ExperimentConfig, panel: PanelDataset | None = None,
                   fitter_factory: FitterFactory | None = None) -> ExperimentResults:
    """Null suite, then both effect directions, then arm pairing."""
    panel = panel if panel is not None else config.load_panel()
    config.validate(panel)
    t0 = time.perf_counter()
    null_summary, cfs, _ = run_null_suite(config, panel, fitter_factory)
    t1 = time.perf_counter()
    pos, _ = run_effect_suite(config, "positive", cfs, panel, fitter_factory)
    neg, _ = run_effect_suite(config, "negative", cfs, panel, fitter_factory)
    t2 = time.perf_counter()
    arms = pd.concat([pos, neg], ignore_index=True)
    return ExperimentResults(config, null_summary, cfs, arms, pair_arms(pos, neg),
                             {"null_seconds": round(t1 - t0, 3), "effect_seconds": round(t2 - t1, 3)})


def _write_csv(df: pd.DataFrame, path: Path) -> None:
    df.to_csv(path, index=False, lineterminator="\n", encoding="utf-8")


def nonzero_table(paired: pd.DataFrame, model: str, codings: Sequence[str]) -> pd.DataFrame:
    """Wide per-model table: one row per (n_trt, se method, effect size), one column per metric and coding."""
    sub = paired[paired["model"] == model]
    keys = ["n_trt", "se_adj", "effect_size"]
    wide = None
    for speed in codings:
        part = sub[sub["coding"] == speed].set_index(keys)[
            ["target_deaths", "bias", "magbias", "pct_bias", "pct_magbias", "type_s", "power", "rmse"]]
        part = part.rename(columns=lambda c: c if c == "target_deaths" else f"{c}_{speed}")
        wide = part if wide is None else wide.join(part.drop(columns="target_deaths"))
    for metric in ("bias", "magbias", "pct_bias", "pct_magbias", "type_s", "power", "rmse"):
        wide[f"{metric}_avg"] = wide[[f"{metric}_{s}" for s in codings]].mean(axis=1)
    ordered = ["target_deaths"] + [f"{m}_{s}" for m in ("bias", "magbias", "pct_bias", "pct_magbias", "type_s", "power", "rmse")
                                   for s in (*codings, "avg")]
    return wide[ordered].reset_index()


def emit_reports(results: ExperimentResults, out_dir: str | os.PathLike, plots: bool = True) -> RunManifest:
    """Write summary CSVs, correction factors, plots and ``manifest.json`` into ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc}") from exc
    cfg = results.config
    files = []
    null_cols = ["n_trt", "se_adj", "regn_coeff", "ave_model_se", "mse", "type_i", "t_stat", "n_ok", "n_failed"]
    for speed in cfg.coding_speeds:
        for spec in cfg.models:
            sel = (results.null_summary["coding"] == speed) & (results.null_summary["model"] == spec.name)
            path = out / f"summaries_null_{speed}_{spec.name}.csv"
            _write_csv(results.null_summary.loc[sel, null_cols], path)
            files.append(path.name)
            sel = (results.correction_factors["coding"] == speed) & (results.correction_factors["model"] == spec.name)
            path = out / f"correction_factors_{speed}_{spec.name}.csv"
            _write_csv(results.correction_factors.loc[sel, ["n_trt", "se_adj", "correction_factor"]], path)
            files.append(path.name)
    for spec in cfg.models:
        path = out / f"all_results_nonzero_{spec.name}.csv"
        _write_csv(nonzero_table(results.paired, spec.name, cfg.coding_speeds), path)
        files.append(path.name)
    if plots:
        from .plots import write_plots

        files.extend(write_plots(results, out))
    failures = {
        "null": int(results.null_summary["n_failed"].sum()),
        "effects": int(results.arms["n_failed"].sum()),
    }
    manifest = RunManifest(cfg.config_hash(), cfg.to_text(), sorted(files), results.timing, failures=failures)
    manifest.write(out)
    return manifest


def output_dir(cli_value: str | None, default: str = "results") -> Path:
    return Path(cli_value or os.environ.get(OUTPUT_ENV) or default)


__all__ = [
    "DESK_MODELS", "ExperimentConfig", "ExperimentResults", "ModelFitter", "RunManifest",
    "SimulationResult", "emit_reports", "effect_grid", "models_by_name", "nonzero_table",
    "pair_arms", "records_frame", "run_effect_suite", "run_experiment", "run_null_suite", "simulate",
    "summarize_null", "condition_summaries", "output_dir",
]
