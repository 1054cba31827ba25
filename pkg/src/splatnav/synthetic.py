"""Synthetic scenes for tests, demos, and the scaled-down experiments:
random splat clouds, a textured ground plane, and a navigable corridor.
"""

from __future__ import annotations

import numpy as np

from .cameras import Camera, look_at_world_to_camera
from .optim import TrainFrame
from .rasterizer import rasterize
from .splats import SplatSet


def random_splats(n: int, rng: np.random.Generator, *, box=2.0, depth_range=(2.0, 6.0),
                  opacity_range=(0.3, 0.8), scale_range=(0.08, 0.35)) -> SplatSet:
    """Random cloud in front of a +z-looking camera at the origin."""
    quats = rng.normal(size=(n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    means = np.column_stack([
        rng.uniform(-box, box, size=n),
        rng.uniform(-box, box, size=n),
        rng.uniform(*depth_range, size=n),
    ])
    return SplatSet(
        means, quats,
        rng.uniform(*scale_range, size=(n, 3)),
        rng.uniform(*opacity_range, size=n),
        rng.uniform(0.05, 0.95, size=(n, 3)),
    )


def frontal_camera(width: int = 32, height: int = 32, f: float | None = None) -> Camera:
    f = f if f is not None else 0.9 * width
    return Camera(fx=f, fy=f, cx=(width - 1) / 2, cy=(height - 1) / 2,
                  width=width, height=height, world_to_camera=np.eye(4))


def orbit_cameras(n_views: int, center, radius: float, height: float,
                  width: int = 48, height_px: int = 48, f: float | None = None):
    """Cameras on a circle around ``center`` looking inward."""
    center = np.asarray(center, dtype=np.float64)
    f = f if f is not None else 0.9 * width
    cams = []
    for i in range(n_views):
        ang = 2 * np.pi * i / n_views
        eye = center + np.array([radius * np.cos(ang), radius * np.sin(ang), height])
        w2c = look_at_world_to_camera(eye, center)
        cams.append(Camera(fx=f, fy=f, cx=(width - 1) / 2, cy=(height_px - 1) / 2,
                           width=width, height=height_px, world_to_camera=w2c))
    return cams


def render_frames(splats: SplatSet, cameras) -> list[TrainFrame]:
    """Ground-truth frames rendered from a known scene; rendered depth doubles
    as the monocular depth prior."""
    frames = []
    for cam in cameras:
        out = rasterize(splats, cam)
        frames.append(TrainFrame(camera=cam, image=out.color,
                                 predicted_depth=out.depth))
    return frames


def perturbed(splats: SplatSet, rng: np.random.Generator, *, mean_sigma=0.08,
              color_sigma=0.15, logscale_sigma=0.2, quat_sigma=0.05) -> SplatSet:
    """Noisy copy of a splat set (training init for self-reconstruction)."""
    quats = splats.rotations + rng.normal(scale=quat_sigma, size=splats.rotations.shape)
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    return SplatSet(
        splats.means + rng.normal(scale=mean_sigma, size=splats.means.shape),
        quats,
        splats.scales * np.exp(rng.normal(scale=logscale_sigma, size=splats.scales.shape)),
        np.clip(splats.opacities + rng.normal(scale=0.05, size=len(splats)), 0.05, 0.95),
        np.clip(splats.colors + rng.normal(scale=color_sigma, size=splats.colors.shape),
                0.02, 0.98),
    )


def textured_plane_scene(rng: np.random.Generator, *, n_side: int = 8, z: float = 3.0,
                         extent: float = 2.0) -> SplatSet:
    """Flat disk splats tiling the plane z = const with varied colors: a scene
    whose true normals are all (0, 0, -1) toward a +z-looking camera."""
    xs = np.linspace(-extent, extent, n_side)
    ys = np.linspace(-extent, extent, n_side)
    gx, gy = np.meshgrid(xs, ys)
    n = n_side * n_side
    means = np.column_stack([gx.ravel(), gy.ravel(), np.full(n, z)])
    quats = np.zeros((n, 4))
    quats[:, 0] = 1.0
    spacing = 2 * extent / (n_side - 1)
    scales = np.column_stack([np.full(n, spacing * 0.8), np.full(n, spacing * 0.8),
                              np.full(n, 0.01)])
    return SplatSet(means, quats, scales,
                    np.full(n, 0.95), rng.uniform(0.1, 0.9, size=(n, 3)))
