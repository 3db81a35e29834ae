"""Python front end to the ultraparabolic verification harness."""

import json

from ._core import (
    EXIT_CONFIG,
    EXIT_FAIL,
    EXIT_OUT_OF_REGIME,
    EXIT_PASS,
    ConfigError,
    Error,
    c2_estimate,
    drift_preset,
    kalman_rank,
    normalize_config,
)
from ._core import run as _run

__all__ = [
    "EXIT_CONFIG",
    "EXIT_FAIL",
    "EXIT_OUT_OF_REGIME",
    "EXIT_PASS",
    "ConfigError",
    "Error",
    "c2_estimate",
    "drift_preset",
    "kalman_rank",
    "normalize_config",
    "run",
]


def run(config_text, out=None, threads=1, seed_base=None, strict=False, only=()):
    """Run a config and return (exit_code, reports) with reports parsed from JSON."""
    res = _run(config_text, out, threads, seed_base, strict, list(only))
    return res["exit_code"], json.loads(res["reports_json"])
