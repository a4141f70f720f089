"""Promptable segmenter service speaking the stsam NDJSON protocol."""

from .config import AdapterConfig, ConfigError
from .protocol import Predictor, handle_line, serve

__all__ = ["AdapterConfig", "ConfigError", "Predictor", "handle_line", "serve"]
