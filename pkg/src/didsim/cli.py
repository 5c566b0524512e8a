"""Command-line entry point: ``didsim synth|validate|simulate|report``.

Errors end the process with exit status 1 and a single JSON line on stderr,
for example ``{"error": "PanelError", "message": "negative deaths"}``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

import pandas as pd

from . import harness
from .panel import load_panel, write_panel
from .synth import SynthConfig, generate_panel


def _cmd_synth(args) -> int:
    cfg = SynthConfig()
    overrides = {k: getattr(args, k) for k in ("n_states", "n_years", "seed", "rho") if getattr(args, k) is not None}
    cfg = replace(cfg, **overrides)
    panel = generate_panel(cfg)
    if args.out == "-":
        write_panel(panel, sys.stdout)
    else:
        write_panel(panel, args.out)
        print(f"wrote {len(panel)} rows to {args.out}")
    return 0


def _cmd_validate(args) -> int:
    if args.panel is None and args.config is None:
        raise ValueError("give a panel CSV and/or --config")
    if args.config is not None:
        cfg = harness.ExperimentConfig.from_file(args.config)
        panel = cfg.load_panel()
        cfg.validate(panel)
        print(f"config ok: {len(cfg.models)} models, iters={cfg.iters}, hash={cfg.config_hash()[:12]}")
    if args.panel is not None:
        panel = load_panel(args.panel)
        print(f"panel ok: {panel.n_states} states x {panel.n_years} years ({panel.years[0]}-{panel.years[-1]}), "
              f"mean annual deaths {panel.mean_annual_deaths():.1f}, "
              f"covariates: {', '.join(panel.covariates) or 'none'}")
    return 0


def _cmd_simulate(args) -> int:
    cfg = harness.ExperimentConfig.from_file(args.config) if args.config else harness.ExperimentConfig()
    changes = {}
    if args.full:
        changes["iters"] = harness.FULL_ITERS
    if args.iters is not None:
        changes["iters"] = args.iters
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.workers is not None:
        changes["workers"] = args.workers
    cfg = replace(cfg, **changes)
    out = harness.output_dir(args.out)
    results = harness.run_experiment(cfg)
    manifest = harness.emit_reports(results, out, plots=not args.no_plots)
    print(f"wrote {len(manifest.files)} files to {out} "
          f"(null {results.timing['null_seconds']}s, effects {results.timing['effect_seconds']}s)")
    return 0


def _cmd_report(args) -> int:
    """Print a compact Type I / correction-factor table from an output directory and redraw plots."""
    out = harness.output_dir(args.out)
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    cfg = harness.ExperimentConfig.from_text(manifest["config_text"])
    null_rows, cf_rows, paired = [], [], []
    for speed in cfg.coding_speeds:
        for spec in cfg.models:
            df = pd.read_csv(out / f"summaries_null_{speed}_{spec.name}.csv", float_precision="round_trip")
            null_rows.append(df.assign(coding=speed, model=spec.name))
            cf = pd.read_csv(out / f"correction_factors_{speed}_{spec.name}.csv", float_precision="round_trip")
            cf_rows.append(cf.assign(coding=speed, model=spec.name))
    for spec in cfg.models:
        wide = pd.read_csv(out / f"all_results_nonzero_{spec.name}.csv", float_precision="round_trip")
        for speed in cfg.coding_speeds:
            part = wide[["n_trt", "se_adj", "effect_size", "target_deaths"]].copy()
            for metric in ("bias", "magbias", "pct_bias", "pct_magbias", "type_s", "power", "rmse"):
                part[metric] = wide[f"{metric}_{speed}"]
            paired.append(part.assign(coding=speed, model=spec.name))
    null = pd.concat(null_rows, ignore_index=True)
    cfs = pd.concat(cf_rows, ignore_index=True)
    table = null.merge(cfs, on=["coding", "model", "n_trt", "se_adj"])
    with pd.option_context("display.width", 160, "display.max_rows", None):
        print(table[["coding", "model", "n_trt", "se_adj", "type_i", "correction_factor"]].to_string(index=False))
    if not args.no_plots:
        from .plots import write_plots

        results = harness.ExperimentResults(cfg, null, cfs, pd.DataFrame(), pd.concat(paired, ignore_index=True), {})
        files = write_plots(results, out)
        print(f"redrew {', '.join(files)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="didsim", description="Monte Carlo comparison of DID estimators on state-year panels")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic panel CSV")
    s.add_argument("--out", required=True, help="output CSV path, or - for stdout")
    s.add_argument("--n-states", type=int)
    s.add_argument("--n-years", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--rho", type=float)
    s.set_defaults(func=_cmd_synth)

    v = sub.add_parser("validate", help="check a panel CSV and/or an experiment config")
    v.add_argument("panel", nargs="?")
    v.add_argument("--config")
    v.set_defaults(func=_cmd_validate)

    r = sub.add_parser("simulate", help="run the null and effect suites and write reports")
    r.add_argument("--config", help="experiment config file (defaults: synthetic panel, desk profile)")
    r.add_argument("--iters", type=int)
    r.add_argument("--seed", type=int, help="master seed")
    r.add_argument("--out", help=f"output directory (or ${harness.OUTPUT_ENV}; default ./results)")
    r.add_argument("--workers", type=int)
    r.add_argument("--full", action="store_true", help=f"{harness.FULL_ITERS} iterations instead of the desk profile")
    r.add_argument("--no-plots", action="store_true")
    r.set_defaults(func=_cmd_simulate)

    rep = sub.add_parser("report", help="summarize an output directory and redraw its plots")
    rep.add_argument("--out", help=f"output directory (or ${harness.OUTPUT_ENV})")
    rep.add_argument("--no-plots", action="store_true")
    rep.set_defaults(func=_cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - top-level reporter
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
