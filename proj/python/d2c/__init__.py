"""Python bindings for the curriculum RL engine."""

import json

from ._d2c import (
    ConfigError,
    SchemaError,
    desired_outcomes,
    maze_text,
    mean_probability,
    mi_loss,
    preset_names,
    profile_names,
    read_metrics,
    solve_assignment,
    verify,
)
from . import _d2c


def profile(name):
    """Profile configuration as a nested dict."""
    return json.loads(_d2c.profile_json(name))


def train(profile="desk-scale", **sections):
    """Train with optional config overrides given per section, e.g. train(train={"iterations": 5})."""
    overrides = json.dumps(sections) if sections else ""
    return _d2c.train(profile, overrides)


__all__ = [
    "ConfigError",
    "SchemaError",
    "desired_outcomes",
    "maze_text",
    "mean_probability",
    "mi_loss",
    "preset_names",
    "profile",
    "profile_names",
    "read_metrics",
    "solve_assignment",
    "train",
    "verify",
]
