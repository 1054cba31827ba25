"""Tile-sorted alpha-blending rasterizer for Gaussian splats.

The engine is written in torch (float64) so that the training loop can obtain
exact analytic gradients via autograd; inference callers get plain numpy maps
through :func:`rasterize`. Per pixel, splats composite front to back in
camera-depth order:

    c(x) = sum_i T_i * c_i * alpha_i,   T_i = prod_{j<i} (1 - alpha_j),
    alpha_i = opacity_i * G_i(x)

and depth / normal maps blend the per-splat camera depth and oriented
shortest-axis direction with the same weights. A splat's screen-space
footprint is limited to Mahalanobis radius 3 of its (dilated) 2D covariance;
outside it contributes exactly zero, which is what makes tile binning lossless
against a per-pixel global sort.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .cameras import Camera
from .errors import DegenerateSplatError, InvalidParameterError
from .splats import Splat, SplatSet

DTYPE = torch.float64


@dataclass
class RasterSettings:
    z_near: float = 0.01
    dilation: float = 0.3            # low-pass floor added to the 2D covariance
    tile_size: int = 16
    stop_transmittance: float = 1e-4
    support_radius: float = 3.0      # Mahalanobis cutoff of the splat footprint


DEFAULT_SETTINGS = RasterSettings()


@dataclass
class RenderOutput:
    color: np.ndarray    # (H, W, 3) in [0, 1]
    depth: np.ndarray    # (H, W) alpha-blended camera depth, meters
    normal: np.ndarray   # (H, W, 3) blended camera-frame normals
    alpha: np.ndarray    # (H, W) accumulated opacity in [0, 1]


@dataclass
class TileBins:
    """Per-tile splat index lists, each sorted by camera depth ascending."""

    tiles_x: int
    tiles_y: int
    tile_size: int
    indices: list = field(default_factory=list)  # tiles_y * tiles_x arrays of splat ids

    def tile(self, ty: int, tx: int) -> np.ndarray:
        return self.indices[ty * self.tiles_x + tx]


def _quat_to_rotmat_torch(q: torch.Tensor) -> torch.Tensor:
    q = q / torch.linalg.norm(q, dim=-1, keepdim=True)
    w, x, y, z = q.unbind(-1)
    rows = [
        torch.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
        torch.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
        torch.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
    ]
    return torch.stack(rows, -2)


def _project_torch(means, rotations, scales, camera: Camera, settings: RasterSettings):
    """Project all splats; returns camera-space depth, pixel means, dilated 2D covs, visibility."""
    Rw2c = torch.as_tensor(camera.rotation, dtype=DTYPE)
    t = torch.as_tensor(camera.translation, dtype=DTYPE)
    p_cam = means @ Rw2c.T + t
    x, y, z = p_cam.unbind(-1)
    visible = z > settings.z_near

    zs = torch.where(visible, z, torch.ones_like(z))  # placeholder depth avoids div-by-zero
    inv_z = 1.0 / zs
    u = camera.fx * x * inv_z + camera.cx
    v = camera.fy * y * inv_z + camera.cy
    means2d = torch.stack([u, v], -1)

    R = _quat_to_rotmat_torch(rotations)
    M3 = R * scales[:, None, :]
    cov3d = M3 @ M3.transpose(1, 2)

    zero = torch.zeros_like(z)
    J = torch.stack([
        torch.stack([camera.fx * inv_z, zero, -camera.fx * x * inv_z * inv_z], -1),
        torch.stack([zero, camera.fy * inv_z, -camera.fy * y * inv_z * inv_z], -1),
    ], -2)  # (N, 2, 3)
    Mp = J @ Rw2c
    cov2d = Mp @ cov3d @ Mp.transpose(1, 2)
    cov2d = cov2d + settings.dilation * torch.eye(2, dtype=DTYPE)

    # camera-frame normal: rotated shortest-axis direction, flipped toward the camera
    axis = torch.argmin(scales, dim=1)
    n_world = R[torch.arange(len(means)), :, axis]
    n_cam = n_world @ Rw2c.T
    facing = (n_cam * p_cam).sum(-1)
    n_cam = torch.where(facing[:, None] > 0, -n_cam, n_cam)

    return p_cam, z, means2d, cov2d, n_cam, visible


def _max_eigenvalue_2x2(cov2d: torch.Tensor) -> torch.Tensor:
    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    mid = 0.5 * (a + c)
    disc = torch.sqrt(torch.clamp((0.5 * (a - c)) ** 2 + b * b, min=0.0))
    return mid + disc


def _bin_tiles(means2d_np, radii_np, depths_np, active_np, width, height, tile_size):
    tiles_x = (width + tile_size - 1) // tile_size
    tiles_y = (height + tile_size - 1) // tile_size
    buckets = [[] for _ in range(tiles_x * tiles_y)]
    order = np.argsort(depths_np, kind="stable")
    for i in order:
        if not active_np[i]:
            continue
        u, v = means2d_np[i]
        r = radii_np[i]
        x0 = max(int(np.floor((u - r) / tile_size)), 0)
        x1 = min(int(np.floor((u + r) / tile_size)), tiles_x - 1)
        y0 = max(int(np.floor((v - r) / tile_size)), 0)
        y1 = min(int(np.floor((v + r) / tile_size)), tiles_y - 1)
        if x1 < x0 or y1 < y0:
            continue
        for ty in range(y0, y1 + 1):
            for tx in range(x0, x1 + 1):
                buckets[ty * tiles_x + tx].append(i)
    indices = [np.asarray(b, dtype=np.int64) for b in buckets]
    return TileBins(tiles_x=tiles_x, tiles_y=tiles_y, tile_size=tile_size, indices=indices)


def render_torch(means, rotations, scales, opacities, colors, camera: Camera,
                 cull_cfg=None, settings: RasterSettings = DEFAULT_SETTINGS,
                 want_aux: bool = False):
    """Differentiable forward render. Inputs are torch tensors of activated values.

    Returns a dict with color/depth/normal/alpha maps; with ``want_aux`` also the
    screen-space means tensor and visible-splat indices (for densification
    statistics) and the tile binning.
    """
    if len(means) < 1:
        raise InvalidParameterError("render requires at least one splat")
    H, W = camera.height, camera.width
    p_cam, depth_z, means2d, cov2d, n_cam, visible = _project_torch(
        means, rotations, scales, camera, settings)

    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    if torch.any((det <= 1e-12) & visible):
        raise DegenerateSplatError("singular 2D covariance after dilation floor")

    active = visible
    if cull_cfg is not None and getattr(cull_cfg, "enabled", True):
        max_norm = cov2d.abs().amax(dim=(1, 2))
        active = active & ~(max_norm > cull_cfg.alpha * H * W)

    radius = settings.support_radius * torch.sqrt(_max_eigenvalue_2x2(cov2d))
    with torch.no_grad():
        bins = _bin_tiles(means2d.detach().numpy(), radius.detach().numpy(),
                          depth_z.detach().numpy(), active.numpy(), W, H,
                          settings.tile_size)

    inv_det = 1.0 / det
    ia, ib, ic = c * inv_det, -b * inv_det, a * inv_det

    color = torch.zeros(H, W, 3, dtype=DTYPE)
    depth = torch.zeros(H, W, dtype=DTYPE)
    normal = torch.zeros(H, W, 3, dtype=DTYPE)
    alpha = torch.zeros(H, W, dtype=DTYPE)
    r2 = settings.support_radius ** 2
    ts = settings.tile_size

    for ty in range(bins.tiles_y):
        y0, y1 = ty * ts, min((ty + 1) * ts, H)
        for tx in range(bins.tiles_x):
            idx_np = bins.tile(ty, tx)
            if len(idx_np) == 0:
                continue
            x0, x1 = tx * ts, min((tx + 1) * ts, W)
            idx = torch.from_numpy(idx_np)
            vv, uu = torch.meshgrid(
                torch.arange(y0, y1, dtype=DTYPE),
                torch.arange(x0, x1, dtype=DTYPE), indexing="ij")
            pu = uu.reshape(-1)
            pv = vv.reshape(-1)
            du = pu[None, :] - means2d[idx, 0][:, None]
            dv = pv[None, :] - means2d[idx, 1][:, None]
            q = (ia[idx][:, None] * du * du
                 + 2.0 * ib[idx][:, None] * du * dv
                 + ic[idx][:, None] * dv * dv)
            w = torch.where(q <= r2, torch.exp(-0.5 * q), torch.zeros_like(q))
            alph = opacities[idx][:, None] * w
            trans = torch.cumprod(1.0 - alph, dim=0)
            t_before = torch.cat([torch.ones_like(trans[:1]), trans[:-1]], dim=0)
            live = t_before >= settings.stop_transmittance
            wgt = torch.where(live, t_before * alph, torch.zeros_like(alph))

            th, tw = y1 - y0, x1 - x0
            color[y0:y1, x0:x1] = (wgt[:, :, None] * colors[idx][:, None, :]).sum(0).reshape(th, tw, 3)
            depth[y0:y1, x0:x1] = (wgt * depth_z[idx][:, None]).sum(0).reshape(th, tw)
            normal[y0:y1, x0:x1] = (wgt[:, :, None] * n_cam[idx][:, None, :]).sum(0).reshape(th, tw, 3)
            alpha[y0:y1, x0:x1] = wgt.sum(0).reshape(th, tw)

    out = {"color": color, "depth": depth, "normal": normal, "alpha": alpha}
    if want_aux:
        out["means2d"] = means2d
        out["visible"] = visible
        out["active"] = active
        out["bins"] = bins
        out["cov2d"] = cov2d
    return out


def _splatset_tensors(splats: SplatSet):
    return (torch.from_numpy(splats.means), torch.from_numpy(splats.rotations),
            torch.from_numpy(splats.scales), torch.from_numpy(splats.opacities),
            torch.from_numpy(splats.colors))


def rasterize(splats: SplatSet, camera: Camera, cull_cfg=None,
              settings: RasterSettings = DEFAULT_SETTINGS) -> RenderOutput:
    """Render color, alpha-blended depth, normal, and accumulated alpha maps."""
    splats.validate()
    with torch.no_grad():
        maps = render_torch(*_splatset_tensors(splats), camera,
                            cull_cfg=cull_cfg, settings=settings)
    return RenderOutput(color=maps["color"].numpy(), depth=maps["depth"].numpy(),
                        normal=maps["normal"].numpy(), alpha=maps["alpha"].numpy())


def project_covariance(splat: Splat, camera: Camera,
                       settings: RasterSettings = DEFAULT_SETTINGS):
    """Screen-space 2x2 covariance of one splat (before the dilation floor).

    Returns None (skip marker) for splats at or behind the near plane.
    """
    p_cam = camera.world_to_cam_points(splat.mean[None])[0]
    if p_cam[2] <= settings.z_near:
        return None
    with torch.no_grad():
        means = torch.from_numpy(splat.mean[None])
        rots = torch.from_numpy(splat.rotation[None])
        scales = torch.from_numpy(splat.scales[None])
        _, _, _, cov2d, _, _ = _project_torch(means, rots, scales, camera, settings)
    cov = cov2d[0].numpy() - settings.dilation * np.eye(2)
    return 0.5 * (cov + cov.T)


def gaussian_weight(splat_2d_mean, cov2d, pixel) -> float:
    """Gaussian falloff exp(-0.5 * d^T cov^-1 d) of a 2D splat at a pixel.

    ``cov2d`` is expected to already carry the dilation floor; a matrix that is
    still (near-)singular raises DegenerateSplatError.
    """
    mean = np.asarray(splat_2d_mean, dtype=np.float64)
    cov = np.asarray(cov2d, dtype=np.float64)
    px = np.asarray(pixel, dtype=np.float64)
    det = cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[1, 0]
    if not np.isfinite(det) or det <= 1e-12:
        raise DegenerateSplatError(f"2D covariance is singular (det={det})")
    d = px - mean
    q = (cov[1, 1] * d[0] * d[0] - 2.0 * cov[0, 1] * d[0] * d[1]
         + cov[0, 0] * d[1] * d[1]) / det
    return float(np.exp(-0.5 * q))


def depth_sort_and_tile(splats: SplatSet, camera: Camera,
                        settings: RasterSettings = DEFAULT_SETTINGS) -> TileBins:
    """Bin splats into 16x16 screen tiles by their footprint circle (3 sigma of the
    dilated covariance), each tile list sorted by camera depth ascending."""
    with torch.no_grad():
        means, rots, scales, _, _ = _splatset_tensors(splats)
        _, depth_z, means2d, cov2d, _, visible = _project_torch(
            means, rots, scales, camera, settings)
        radius = settings.support_radius * torch.sqrt(_max_eigenvalue_2x2(cov2d))
        return _bin_tiles(means2d.numpy(), radius.numpy(), depth_z.numpy(),
                          visible.numpy(), camera.width, camera.height,
                          settings.tile_size)
