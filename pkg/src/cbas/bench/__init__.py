"""Benchmark harness: configs, named scenarios, CSV records and reports."""
from __future__ import annotations

from .config import ExperimentConfig, config_from_dict, derive_seed, load_config
from .scenarios import (
    scenario_illustrative_1d,
    scenario_q_sweep,
    scenario_sequence_design,
    scenario_specification_1d,
    run_scenario,
)

__all__ = ["ExperimentConfig", "config_from_dict", "derive_seed", "load_config", "run_scenario",
           "scenario_illustrative_1d", "scenario_q_sweep", "scenario_sequence_design", "scenario_specification_1d"]
