"""Volumetric nodule segmentation with a from-scratch reverse-mode autodiff engine."""

import json

from . import _core
from ._core import (
    FormatError,
    Network,
    NonFiniteError,
    ShapeError,
    build_manifest,
    ce_loss,
    conv3d,
    dice_loss,
    generate_phantom,
    gradcheck_battery,
    kfold_split,
    metrics,
    read_volume,
    set_thread_count,
    write_volume,
)

__all__ = [
    "FormatError",
    "Network",
    "NonFiniteError",
    "ShapeError",
    "build_manifest",
    "ce_loss",
    "conv3d",
    "cross_validate",
    "dice_loss",
    "generate_phantom",
    "gradcheck_battery",
    "kfold_split",
    "load",
    "metrics",
    "read_volume",
    "set_thread_count",
    "write_volume",
]


def load(path):
    """Rebuild a network from a checkpoint."""
    return Network.load(str(path))


def cross_validate(run_config, manifest):
    """k-fold cross-validation; returns the report as a dict."""
    return json.loads(_core.cross_validate(json.dumps(run_config), str(manifest)))
