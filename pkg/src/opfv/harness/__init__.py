"""Experiment harness: configs, replicated runs, reports and the command line."""
from .config import load_config
from .report import ExperimentReport, aggregate, emit_report
from .runner import run_fope, run_fopl, run_sweep, run_tune

__all__ = ["load_config", "ExperimentReport", "aggregate", "emit_report", "run_fope", "run_fopl", "run_sweep",
           "run_tune"]
