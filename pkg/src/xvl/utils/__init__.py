"""Utility modules for xvl."""

from xvl.utils.config import XVLConfig, load_config
from xvl.utils.errors import (
    CheckpointError,
    ConfigError,
    DataError,
    InapplicableError,
    NumericAbortError,
    XVLError,
)
from xvl.utils.hashing import compute_corpus_hash, compute_record_hash
from xvl.utils.logging import get_logger, log_error, stage_context

__all__ = [
    "XVLConfig",
    "load_config",
    "XVLError",
    "DataError",
    "ConfigError",
    "CheckpointError",
    "InapplicableError",
    "NumericAbortError",
    "compute_record_hash",
    "compute_corpus_hash",
    "get_logger",
    "log_error",
    "stage_context",
]
