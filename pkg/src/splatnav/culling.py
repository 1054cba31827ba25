"""Screen-space covariance culling of oversized splats.

A splat is dropped from rendering when the max-norm (largest absolute entry)
of its dilated 2D covariance exceeds ``alpha * H * W``. This removes the
floater artifacts that blow up to image scale at viewpoints far from the
training trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .cameras import Camera
from .errors import InvalidParameterError
from .rasterizer import DEFAULT_SETTINGS, RasterSettings, _project_torch, _splatset_tensors
from .splats import SplatSet


@dataclass
class CullConfig:
    alpha: float = 0.0005
    enabled: bool = True

    def __post_init__(self):
        if self.alpha <= 0:
            raise InvalidParameterError("cull alpha must be positive")


def covariance_max_norm(cov2d: np.ndarray) -> np.ndarray:
    """Largest absolute matrix entry per (..., 2, 2) covariance."""
    return np.abs(cov2d).max(axis=(-1, -2))


def cull_mask(splats: SplatSet, camera: Camera, cfg: CullConfig,
              settings: RasterSettings = DEFAULT_SETTINGS) -> np.ndarray:
    """Boolean keep-mask; False for splats whose footprint exceeds the threshold.

    Splats behind the near plane keep True here: visibility handles them and
    the size rule is not defined for an unprojectable splat.
    """
    keep = np.ones(len(splats), dtype=bool)
    if not cfg.enabled:
        return keep
    with torch.no_grad():
        means, rots, scales, _, _ = _splatset_tensors(splats)
        _, _, _, cov2d, _, visible = _project_torch(means, rots, scales, camera, settings)
    vis = visible.numpy()
    norms = covariance_max_norm(cov2d.numpy())
    keep[vis & (norms > cfg.alpha * camera.height * camera.width)] = False
    return keep
