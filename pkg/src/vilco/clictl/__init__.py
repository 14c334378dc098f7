from .config import ConfigError, ExperimentConfig, load_experiment_config
from .report import curve_rows, emit_report, render_csv, render_markdown
from .runner import RESULT_SCHEMA_VERSION, ExperimentResult, load_result, run_experiment
from .verify import gradcheck_battery

__all__ = [
    "RESULT_SCHEMA_VERSION",
    "ConfigError",
    "ExperimentConfig",
    "ExperimentResult",
    "curve_rows",
    "emit_report",
    "gradcheck_battery",
    "load_experiment_config",
    "load_result",
    "render_csv",
    "render_markdown",
    "run_experiment",
]
