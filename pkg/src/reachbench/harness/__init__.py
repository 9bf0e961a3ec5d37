from .config import ConfigError, RunConfig, parse_config, render_config, scale_preset
from .runner import build_run, compare, load_networks, run_experiment, save_networks

__all__ = [
    "ConfigError", "RunConfig", "parse_config", "render_config", "scale_preset", "build_run",
    "compare", "load_networks", "run_experiment", "save_networks",
]
