"""Aneurysm detection on TOF-MRA-like volumes.

Volumes are numpy arrays indexed [z, y, x]. Configurations are JSON strings
in the same layout the command line tool reads and `default_config()` prints.
"""

import json

from ._tofdetect import (
    Error,
    Model,
    binarize_likelihood,
    boxes_from_mask,
    crossval,
    default_config,
    evaluate,
    extract_voi,
    format_percent,
    generate_dataset,
    is_hit,
    load_volume,
    region_grow,
    sensitivity,
    spherical_dilate,
    train,
)


def config(**overrides):
    """Default configuration with nested overrides, e.g. config(train={"max_epochs": 2})."""
    c = json.loads(default_config())
    for section, values in overrides.items():
        if isinstance(values, dict):
            c[section].update(values)
        else:
            c[section] = values
    return json.dumps(c)


__all__ = [
    "Error",
    "Model",
    "binarize_likelihood",
    "boxes_from_mask",
    "config",
    "crossval",
    "default_config",
    "evaluate",
    "extract_voi",
    "format_percent",
    "generate_dataset",
    "is_hit",
    "load_volume",
    "region_grow",
    "sensitivity",
    "spherical_dilate",
    "train",
]
