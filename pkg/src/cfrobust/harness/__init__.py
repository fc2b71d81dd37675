"""Configuration, sweep and report emission of robustness experiments."""
from __future__ import annotations

from cfrobust.harness.config import (
    DatasetConfig,
    ExperimentConfig,
    MethodConfig,
    ModelConfig,
    NoiseConfig,
    StatsConfig,
    load_config,
    preset_names,
)
from cfrobust.harness.runner import (
    AccuracyRecord,
    Attempt,
    ExperimentResults,
    RunManifest,
    run_experiment,
)
from cfrobust.harness.tables import emit_tables, load_results

__all__ = [
    "AccuracyRecord",
    "Attempt",
    "DatasetConfig",
    "ExperimentConfig",
    "ExperimentResults",
    "MethodConfig",
    "ModelConfig",
    "NoiseConfig",
    "RunManifest",
    "StatsConfig",
    "emit_tables",
    "load_config",
    "load_results",
    "preset_names",
    "run_experiment",
]
