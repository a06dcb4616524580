"""Python access to the singrav core: volumes, rendering, editing and generation."""

import json as _json

try:
    # libtorch's shared objects are located through the torch wheel when present
    import torch as _torch  # noqa: F401
except ImportError:
    pass

from ._core import (  # noqa: F401
    Bounds,
    Box,
    Camera,
    GeneratorStack as _GeneratorStack,
    SingravError,
    Volume,
    compose,
    csg_grid,
    default_empty_sample,
    edit_duplicate,
    edit_move,
    edit_remove,
    export_mesh,
    render,
    sha256,
    sifid,
    synthetic_scene,
    voxel_range,
)
from . import _core

__all__ = [
    "Bounds", "Box", "Camera", "GeneratorStack", "SingravError", "Volume", "compose", "csg_grid",
    "default_empty_sample", "default_pyramid_config", "edit_duplicate", "edit_move", "edit_remove",
    "export_mesh", "load_checkpoint", "render", "scale_schedule", "sha256", "sifid", "synthetic_scene",
    "voxel_range",
]


def default_pyramid_config():
    return _json.loads(_core.default_pyramid_config())


def _config_text(config):
    if config is None:
        return ""
    merged = default_pyramid_config()
    merged.update(config)
    return _json.dumps(merged)


def scale_schedule(config=None):
    """Per-scale volume/image resolutions and ray samples for a pyramid config dict."""
    return _core.scale_schedule(_config_text(config))


class GeneratorStack(_GeneratorStack):
    def __init__(self, config=None, seed=0):
        super().__init__(_config_text(config), seed)


def load_checkpoint(path):
    return _GeneratorStack.load(str(path))
