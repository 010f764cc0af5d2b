"""Command-line experiments: data generation, trial runs and reports."""

from .datagen import DataSource, generate_data, generate_points, generate_values, parse_source
from .experiment import ExperimentConfig, ExperimentReport, TrialRecord, run_experiment
from .report import SCHEMA_VERSION, emit_report, read_report

__all__ = [
    "DataSource",
    "ExperimentConfig",
    "ExperimentReport",
    "SCHEMA_VERSION",
    "TrialRecord",
    "emit_report",
    "generate_data",
    "generate_points",
    "generate_values",
    "parse_source",
    "read_report",
    "run_experiment",
]
