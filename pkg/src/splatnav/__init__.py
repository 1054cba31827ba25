"""splatnav: Gaussian-splat scene reconstruction with geometry regularization,
collision-mesh extraction, and a hybrid splat+mesh navigation simulator."""

from .cameras import Camera, look_at_world_to_camera
from .culling import CullConfig, cull_mask
from .errors import (DatasetError, DegenerateSplatError, EmptySupportError,
                     InvalidParameterError, ProtocolError, SpawnError, SplatNavError,
                     TrainingError)
from .rasterizer import (RasterSettings, RenderOutput, depth_sort_and_tile,
                         gaussian_weight, project_covariance, rasterize)
from .splats import Splat, SplatSet, build_covariance, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "Camera", "look_at_world_to_camera",
    "CullConfig", "cull_mask",
    "RasterSettings", "RenderOutput", "depth_sort_and_tile", "gaussian_weight",
    "project_covariance", "rasterize",
    "Splat", "SplatSet", "build_covariance", "load_checkpoint", "save_checkpoint",
    "SplatNavError", "InvalidParameterError", "DegenerateSplatError",
    "EmptySupportError", "DatasetError", "SpawnError", "ProtocolError", "TrainingError",
    "__version__",
]
