import json
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from didsim import cli, harness
from didsim.estimators import ModelSpec
from didsim.inference import InferenceResult, wald
from didsim.synth import SynthConfig

SMALL_SYNTH = SynthConfig(n_states=10, n_years=12, seed=4)
TWFE = ModelSpec("two_way_fe")


class TruthFitter:
    """Returns the injected effect exactly, with a tiny SE; null fits get small seeded noise."""

    def __init__(self, panel, spec):
        self.spec = spec

    def fit(self, adj, scenario, effect):
        var = 1e-6
        if effect.is_null:
            seed = int(np.abs(scenario.exposure).sum() * 1e6) % (2**32)
            alpha = 1e-3 * np.random.default_rng(seed).standard_normal()
        else:
            alpha = effect.alpha_linear if self.spec.link == "linear" else effect.log_te
        t, p = wald(alpha, var)
        return [InferenceResult(m, alpha, var, t, p) for m in self.spec.se_methods]


class FlakyFitter(harness.ModelFitter):
    """Fails whenever the first treated state is the first state of the panel."""

    def fit(self, adj, scenario, effect):
        if scenario.treated[0] == adj.panel.states[0]:
            raise ValueError("simulated fit failure")
        return super().fit(adj, scenario, effect)


def small_config(**kw):
    base = dict(synth=SMALL_SYNTH, iters=100, n_trt_grid=(2,), coding_speeds=("instant",),
                effect_sizes=("large",), models=(TWFE,), master_seed=11)
    base.update(kw)
    return harness.ExperimentConfig(**base)


class TestConfig:
    def test_text_roundtrip(self):
        cfg = small_config(models=harness.with_arellano((TWFE, ModelSpec("gee"))), workers=3)
        back = harness.ExperimentConfig.from_text(cfg.to_text())
        assert back == cfg
        assert back.to_text() == cfg.to_text()

    def test_hash_ignores_workers(self):
        assert small_config(workers=1).config_hash() == small_config(workers=4).config_hash()
        assert small_config(master_seed=1).config_hash() != small_config(master_seed=2).config_hash()

    def test_panel_path_relative_to_file(self, tmp_path):
        (tmp_path / "exp.ini").write_text("[panel]\nsource = data/panel.csv\n")
        cfg = harness.ExperimentConfig.from_file(tmp_path / "exp.ini")
        assert cfg.panel_csv == str(tmp_path / "data" / "panel.csv")

    @pytest.mark.parametrize(
        "text",
        ["[simulation]\nbogus = 1\n", "[synth]\nwidth = 3\n", "[simulation]\nmodels = linear_magic\n"],
    )
    def test_unknown_keys(self, text):
        with pytest.raises(ValueError):
            harness.ExperimentConfig.from_text(text)

    def test_defaults(self):
        cfg = harness.ExperimentConfig()
        assert cfg.iters == 500 and cfg.n_trt_grid == (1, 5, 15, 30)
        assert len(cfg.models) == 8

    @pytest.mark.parametrize(
        "kw", [{"iters": 99}, {"n_trt_grid": (11,)}, {"n_trt_grid": ()}, {"coding_speeds": ("fast",)}, {"workers": 0}]
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            small_config(**kw).validate()


class TestNullSuite:
    def test_two_iterations_give_two_records(self):
        cfg = small_config(iters=2, n_trt_grid=(1,))
        _, cfs, sim = harness.run_null_suite(cfg)
        rec = harness.records_frame(sim)
        assert rec.groupby("se_method").size().to_dict() == {"cluster": 2, "huber": 2, "none": 2}
        assert cfs["correction_factor"].isna().all()

    def test_summary_layout(self):
        cfg = small_config(n_trt_grid=(1, 2, 3, 4), iters=100)
        summary, cfs, _ = harness.run_null_suite(cfg)
        assert len(summary) == 12 and len(cfs) == 12
        assert (summary["n_ok"] == 100).all()
        assert cfs["correction_factor"].gt(0).all()

    def test_failures_counted_and_excluded(self):
        cfg = small_config(iters=100)
        summary, _, sim = harness.run_null_suite(cfg, fitter_factory=FlakyFitter)
        n_failed = int(summary["n_failed"].iloc[0])
        assert 0 < n_failed < 100
        assert (summary["n_ok"] + summary["n_failed"] == cfg.iters).all()
        assert np.isnan(sim.values[0, sim.failures[0, :, 0, 0, 0], 0, 0, 0]).all()
        assert np.isfinite(summary["regn_coeff"]).all()

    def test_same_scenarios_for_every_model(self):
        cfg = small_config(iters=3, models=(TWFE, ModelSpec("two_way_fe", weighting="population_weighted")))
        unit = harness.simulate(cfg, [harness.NULL_EFFECT])
        one = harness.simulate(replace(cfg, models=(TWFE,)), [harness.NULL_EFFECT])
        np.testing.assert_array_equal(unit.values[..., 0, :, :], one.values[..., 0, :, :])

    def test_worker_count_does_not_change_results(self, tmp_path):
        cfg = small_config(iters=100, n_trt_grid=(1, 3))
        a = harness.run_experiment(cfg)
        b = harness.run_experiment(replace(cfg, workers=2))
        harness.emit_reports(a, tmp_path / "a", plots=False)
        harness.emit_reports(b, tmp_path / "b", plots=False)
        for f in sorted((tmp_path / "a").glob("*.csv")):
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


class TestEffectSuite:
    def test_null_direction_rejected(self):
        with pytest.raises(ValueError, match="run_null_suite"):
            harness.run_effect_suite(small_config(), "null", pd.DataFrame())

    def test_missing_correction_factor_named(self):
        cfg = small_config(iters=2)
        _, cfs, _ = harness.run_null_suite(cfg)
        with pytest.raises(KeyError, match="linear_two_way_fe_unwt"):
            harness.run_effect_suite(cfg, "positive", cfs)

    @pytest.mark.parametrize("direction", ["positive", "negative"])
    def test_truth_stub(self, direction):
        cfg = small_config(effect_sizes=("small",), models=(TWFE, ModelSpec("two_way_fe", "log_linear")))
        _, cfs, _ = harness.run_null_suite(cfg, fitter_factory=TruthFitter)
        arms, _ = harness.run_effect_suite(cfg, direction, cfs, fitter_factory=TruthFitter)
        assert np.allclose(arms["bias_deaths"], 0.0, atol=1e-8)
        assert (arms["power"] == 1.0).all()
        assert (arms["type_s"] == 0.0).all()

    def test_pairing(self):
        cfg = small_config()
        res = harness.run_experiment(cfg, fitter_factory=TruthFitter)
        assert len(res.paired) == 3  # one model, one n_trt, one size, three SE methods
        assert np.allclose(res.paired[["bias", "magbias", "pct_bias"]], 0.0, atol=1e-8)
        summaries = harness.condition_summaries(res.paired, res.null_summary, res.correction_factors)
        key = ("instant", "linear_two_way_fe_unwt", 2, "cluster", "large")
        assert summaries[key].correct_rejection_rate == 1.0

    def test_pair_arms_mismatch(self):
        cfg = small_config()
        res = harness.run_experiment(cfg, fitter_factory=TruthFitter)
        pos = res.arms[res.arms["direction"] == "positive"]
        neg = res.arms[res.arms["direction"] == "negative"].iloc[:1]
        with pytest.raises(Exception):
            harness.pair_arms(pos, neg)


@pytest.fixture(scope="module")
def results():
    return harness.run_experiment(small_config(n_trt_grid=(1, 2, 3, 4), coding_speeds=("instant", "slow")))


class TestReports:
    def test_files_and_rows(self, results, tmp_path):
        m = harness.emit_reports(results, tmp_path)
        null = pd.read_csv(tmp_path / "summaries_null_slow_linear_two_way_fe_unwt.csv")
        assert list(null.columns[:7]) == ["n_trt", "se_adj", "regn_coeff", "ave_model_se", "mse", "type_i", "t_stat"]
        assert len(null) == 12
        wide = pd.read_csv(tmp_path / "all_results_nonzero_linear_two_way_fe_unwt.csv")
        for col in ("bias_instant", "bias_slow", "magbias_avg", "type_s_slow", "power_instant"):
            assert col in wide.columns
        assert {"type_i.svg", "bias_large.svg", "power_instant.svg", "manifest.json"} <= {p.name for p in tmp_path.iterdir()}
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["config_hash"] == m.config_hash and "Philox" in manifest["seed_scheme"]
        assert sorted(manifest["files"]) == manifest["files"]

    def test_reemit_identical(self, results, tmp_path):
        harness.emit_reports(results, tmp_path / "a")
        harness.emit_reports(results, tmp_path / "b")
        for f in (tmp_path / "a").iterdir():
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes(), f.name

    def test_csv_parse_back(self, results, tmp_path):
        harness.emit_reports(results, tmp_path, plots=False)
        back = pd.read_csv(tmp_path / "summaries_null_instant_linear_two_way_fe_unwt.csv", float_precision="round_trip")
        orig = results.null_summary.query("coding == 'instant'").reset_index(drop=True)[back.columns]
        pd.testing.assert_frame_equal(back, orig, check_exact=True)

    def test_unwritable(self, results, tmp_path):
        target = tmp_path / "file"
        target.write_text("")
        with pytest.raises(OSError):
            harness.emit_reports(results, target / "sub")


class TestCli:
    def test_synth_and_validate(self, tmp_path, capsys):
        out = tmp_path / "p.csv"
        assert cli.main(["synth", "--out", str(out), "--n-states", "6", "--n-years", "8"]) == 0
        assert cli.main(["validate", str(out)]) == 0
        assert "6 states x 8 years" in capsys.readouterr().out

    def test_error_line(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("state,year,deaths,population\nA,2000,1,0\n")
        assert cli.main(["validate", str(bad)]) == 1
        err = json.loads(capsys.readouterr().err.strip())
        assert err["error"] == "PanelError"

    def test_simulate_and_report(self, tmp_path, monkeypatch, capsys):
        cfg = tmp_path / "exp.ini"
        cfg.write_text(
            "[synth]\nn_states = 10\nn_years = 12\n"
            "[simulation]\nn_trt = 2\ncoding_speeds = instant\neffect_sizes = large\n"
            "models = linear_autoregressive_unwt\n"
        )
        monkeypatch.setenv(harness.OUTPUT_ENV, str(tmp_path / "res"))
        assert cli.main(["simulate", "--config", str(cfg), "--iters", "100", "--seed", "5"]) == 0
        manifest = json.loads((tmp_path / "res" / "manifest.json").read_text())
        assert "iters = 100" in manifest["config_text"] and "master_seed = 5" in manifest["config_text"]
        assert cli.main(["report"]) == 0
        assert "linear_autoregressive_unwt" in capsys.readouterr().out

    def test_simulate_rejects_few_iterations(self, capsys):
        assert cli.main(["simulate", "--iters", "50", "--out", "/nonexistent/never"]) == 1
        assert "below the minimum" in capsys.readouterr().err
