"""Central limit theorems for spatial averages of stochastic heat equations.

Config arguments accept a dict, a JSON string, or a path to a JSON file.
"""

from __future__ import annotations

import json
import os
from typing import Any

from . import _core
from ._core import (
    ConfigError,
    NumericalError,
    additive_point_variance,
    gaussian_gap_bound,
    gaussian_w2,
    heat_kernel,
    kernel_window,
    limit_covariance_constant,
    mardia,
    min_eigen_check,
    pam_second_moment,
    prelimit_covariance_constant,
    rate_fit,
    sliced_w1,
    window_factor,
)

__all__ = [
    "ConfigError",
    "NumericalError",
    "Report",
    "additive_point_variance",
    "canonical_config",
    "check_h1",
    "gaussian_gap_bound",
    "gaussian_w2",
    "heat_kernel",
    "kernel_window",
    "limit_covariance_constant",
    "mardia",
    "merge_reports",
    "min_eigen_check",
    "pairing_bruteforce",
    "pairing_tangent",
    "pam_second_moment",
    "prelimit_covariance_constant",
    "rate_fit",
    "run_experiment",
    "sigma",
    "sliced_w1",
    "spatial_averages",
    "validate_config",
    "window_factor",
]


def _text(config: Any) -> str:
    if isinstance(config, dict):
        return json.dumps(config)
    if isinstance(config, (str, os.PathLike)) and os.path.isfile(config):
        with open(config, encoding="utf-8") as fh:
            return fh.read()
    if isinstance(config, str):
        return config
    raise TypeError("config must be a dict, a JSON string or a path")


class Report:
    """An experiment report: the JSON document plus named tables."""

    def __init__(self, raw: dict):
        self.name: str = raw["name"]
        self.document: dict = json.loads(raw["document"])
        self._raw_document: str = raw["document"]
        self.tables: dict[str, dict] = raw["tables"]

    def table(self, name: str) -> list[dict[str, str]]:
        t = self.tables[name]
        return [dict(zip(t["columns"], row)) for row in t["rows"]]

    def __repr__(self) -> str:
        return f"Report({self.name!r}, tables={sorted(self.tables)})"


def validate_config(config) -> str:
    return _core.validate_config(_text(config))


def canonical_config(config) -> dict:
    return json.loads(_core.canonical_config(_text(config)))


def check_h1(config):
    return _core.check_h1(_text(config))


def sigma(config, u):
    return _core.sigma(_text(config), u)


def run_experiment(config) -> Report:
    return Report(_core.run_experiment(_text(config)))


def merge_reports(reports) -> Report:
    docs = [r._raw_document if isinstance(r, Report) else (r if isinstance(r, str) else json.dumps(r)) for r in reports]
    return Report(_core.merge_reports(docs))


def spatial_averages(config, t: float, R: float, seed: int, count: int, first: int = 0):
    return _core.spatial_averages(_text(config), t, R, seed, count, first)


def pairing_tangent(config, t: float, R: float, seed: int, replica: int):
    return _core.pairing_tangent(_text(config), t, R, seed, replica)


def pairing_bruteforce(config, t: float, R: float, seed: int, replica: int):
    return _core.pairing_bruteforce(_text(config), t, R, seed, replica)
