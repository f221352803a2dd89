"""Environment-driven configuration for the gullyfire command line.

Nothing physical is configured here: every physics-bearing value lives in
the scenario file. The environment only decides where runs land when no
``--out`` is given, how many worker threads an epsilon sweep may use, and
how loud the logs are. None of these variables is required.
"""

import os
import pathlib


class ConfigurationError(ValueError):
    """A scenario, grid or request that cannot describe a valid run."""


def output_root() -> pathlib.Path:
    """Parent directory for run outputs when ``--out`` is omitted."""
    return pathlib.Path(os.environ.get("GULLYFIRE_OUTPUT_ROOT", "runs"))


def worker_threads() -> int:
    """Default number of worker threads for the epsilon sweep."""
    raw = os.environ.get("GULLYFIRE_THREADS", "1").strip()
    try:
        threads = int(raw)
    except ValueError:
        raise ConfigurationError(f"GULLYFIRE_THREADS must be an integer, got '{raw}'")
    return max(1, threads)


def log_level() -> str:
    """Root log level used by the CLI."""
    return os.environ.get("GULLYFIRE_LOG_LEVEL", "INFO").strip().upper() or "INFO"
