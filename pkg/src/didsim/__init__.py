"""Monte Carlo comparison of difference-in-differences estimators on state-year panels."""
from .effects import NULL_EFFECT, EffectSpec, inject, make_effect
from .estimators import ModelSpec, build_design, fit_model, fit_wls
from .gee import fit_gee_ar1
from .harness import ExperimentConfig, emit_reports, run_effect_suite, run_experiment, run_null_suite
from .inference import InferenceResult, infer
from .panel import PanelDataset, PanelError, load_panel, write_panel
from .scenario import PolicyScenario, build_scenario, sample_scenario
from .synth import SynthConfig, generate_panel

__version__ = "0.1.0"

__all__ = [
    "EffectSpec", "ExperimentConfig", "InferenceResult", "ModelSpec", "NULL_EFFECT", "PanelDataset",
    "PanelError", "PolicyScenario", "SynthConfig", "build_design", "build_scenario", "emit_reports",
    "fit_gee_ar1", "fit_model", "fit_wls", "generate_panel", "infer", "inject", "load_panel",
    "make_effect", "run_effect_suite", "run_experiment", "run_null_suite", "sample_scenario", "write_panel",
]
