"""Experiment harness: configs, runners, CSV/SVG output and the CLI."""

from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .csvio import write_rows
from .experiments import Report, run_experiment
from .svg import render_line_plot

__all__ = ["ConfigError", "ExperimentConfig", "Report", "load_config", "parse_config",
           "render_line_plot", "run_experiment", "write_rows"]
