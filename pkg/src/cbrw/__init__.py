"""Catalytic branching random walk: simulation and numerical limit theory."""
from .errors import CbrwError, ConfigError, NumericError, StatisticalError
from .model import ModelConfig, load_model, loads, pinned_model, validate

__version__ = "0.1.0"

__all__ = ["CbrwError", "ConfigError", "NumericError", "StatisticalError",
           "ModelConfig", "load_model", "loads", "pinned_model", "validate"]
