"""Configuration, persistence, sweeps and the command-line interface."""
from .config import ConfigError, ExperimentConfig, parse_config, serialize_config
from .runners import compute_metrics, emit_etf, run_encoder, run_sweep, run_ufm
