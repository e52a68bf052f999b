"""Python access to the densemtl C++ core."""

import json as _json

from ._core import (
    ConfigError,
    ShapeError,
    ablation_labels,
    berhu,
    canonical_config,
    config_hash,
    delta_metric,
    mean_angular_error,
    miou,
    normals_from_depth,
    parameter_count,
    synthetic_scene,
    weighted_self_information,
)
from ._core import train as _train


def train(config, out_dir=""):
    """Train from a config (dict or JSON text); returns the run report as a dict."""
    text = config if isinstance(config, str) else _json.dumps(config)
    return _json.loads(_train(text, str(out_dir)))


__all__ = [
    "ConfigError",
    "ShapeError",
    "ablation_labels",
    "berhu",
    "canonical_config",
    "config_hash",
    "delta_metric",
    "mean_angular_error",
    "miou",
    "normals_from_depth",
    "parameter_count",
    "synthetic_scene",
    "train",
    "weighted_self_information",
]
