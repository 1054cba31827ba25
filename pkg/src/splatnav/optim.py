"""Gradient-based splat optimization: autograd backward through the rasterizer,
per-parameter Adam, adaptive densification (absolute screen-gradient rule),
and opacity pruning.

Raw optimizable parameterization (3DGS-style): means are free, rotations are
unnormalized quaternions (normalized inside the renderer), scales are stored
as logs, opacities and colors as logits. Gradients reported by
:func:`backward` are with respect to these raw parameters; the
finite-difference oracle in the tests perturbs the same quantities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .cameras import Camera
from .errors import InvalidParameterError, TrainingError
from .losses import (LossWeights, PatchGrid, PseudoNormals, geo_consistency_loss,
                     ncc_depth_loss, normal_loss, pseudo_normals_from_depth,
                     rgb_loss, scale_loss, ssim_map, total_loss)
from .rasterizer import DEFAULT_SETTINGS, RasterSettings, render_torch
from .splats import SplatSet

PARAM_NAMES = ("means", "rotations", "log_scales", "opacity_logits", "color_logits")
_LOGIT_CLIP = 1e-6


def _logit(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, _LOGIT_CLIP, 1.0 - _LOGIT_CLIP)
    return np.log(x / (1.0 - x))


class SplatParams:
    """Leaf torch tensors for the raw splat parameterization."""

    def __init__(self, means, rotations, log_scales, opacity_logits, color_logits):
        self.means = means
        self.rotations = rotations
        self.log_scales = log_scales
        self.opacity_logits = opacity_logits
        self.color_logits = color_logits
        for t in self.tensors().values():
            t.requires_grad_(True)

    @classmethod
    def from_splats(cls, splats: SplatSet) -> "SplatParams":
        return cls(
            torch.tensor(splats.means, dtype=torch.float64),
            torch.tensor(splats.rotations, dtype=torch.float64),
            torch.tensor(np.log(splats.scales), dtype=torch.float64),
            torch.tensor(_logit(splats.opacities), dtype=torch.float64),
            torch.tensor(_logit(splats.colors), dtype=torch.float64),
        )

    def tensors(self) -> dict:
        return {"means": self.means, "rotations": self.rotations,
                "log_scales": self.log_scales, "opacity_logits": self.opacity_logits,
                "color_logits": self.color_logits}

    def activated(self):
        """(means, rotations, scales, opacities, colors) ready for the renderer."""
        return (self.means, self.rotations, torch.exp(self.log_scales),
                torch.sigmoid(self.opacity_logits), torch.sigmoid(self.color_logits))

    def to_splats(self) -> SplatSet:
        with torch.no_grad():
            rot = self.rotations / torch.linalg.norm(self.rotations, dim=1, keepdim=True)
            return SplatSet(
                self.means.numpy().copy(),
                rot.numpy().copy(),
                torch.exp(self.log_scales).numpy(),
                torch.sigmoid(self.opacity_logits).numpy(),
                torch.sigmoid(self.color_logits).numpy(),
            )

    def __len__(self) -> int:
        return len(self.means)


@dataclass
class LearningRates:
    means: float = 1.6e-4
    means_final: float = 1.6e-6   # exponential decay target over the run
    rotations: float = 1e-3
    log_scales: float = 5e-3
    opacity_logits: float = 5e-2
    color_logits: float = 2.5e-3


@dataclass
class TrainConfig:
    iterations: int = 30000
    geometry_start_iter: int = 500
    lrs: LearningRates = field(default_factory=LearningRates)
    weights: LossWeights = field(default_factory=LossWeights)
    patch_k: int = 11
    patch_stride: int = 8
    pseudo_normal_radius: int = 2
    densify_interval: int = 100
    densify_start: int = 500
    densify_until: int = 15000
    densify_grad_threshold: float = 4e-4
    split_scale_threshold: float = 0.05
    split_scale_shrink: float = 1.6
    prune_opacity: float = 0.005
    seed: int = 0
    raster: RasterSettings = field(default_factory=RasterSettings)

    def __post_init__(self):
        if self.iterations and self.geometry_start_iter >= self.iterations > 0:
            # permitted: geometry losses simply never activate on very short runs
            pass


@dataclass
class TrainFrame:
    """One training view: pose + image + monocular depth prior (+ optional mask)."""

    camera: Camera
    image: np.ndarray                 # (H, W, 3) in [0, 1]
    predicted_depth: np.ndarray       # (H, W) meters (relative scale is fine)
    dyn_mask: np.ndarray | None = None


@dataclass
class TrainReport:
    loss_history: list = field(default_factory=list)   # per-iteration dict of floats
    splat_counts: list = field(default_factory=list)   # per-iteration splat count
    test_psnr: float | None = None
    test_ssim: float | None = None


class Adam:
    """Per-parameter-group Adam with row surgery support for densify/prune."""

    def __init__(self, params: SplatParams, betas=(0.9, 0.999), eps=1e-15):
        self.betas = betas
        self.eps = eps
        self.step_count = 0
        self.m = {k: torch.zeros_like(v) for k, v in params.tensors().items()}
        self.v = {k: torch.zeros_like(v) for k, v in params.tensors().items()}

    def step(self, params: SplatParams, lrs: dict):
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        with torch.no_grad():
            for name, t in params.tensors().items():
                if t.grad is None:
                    continue
                g = t.grad
                self.m[name].mul_(b1).add_(g, alpha=1.0 - b1)
                self.v[name].mul_(b2).addcmul_(g, g, value=1.0 - b2)
                mhat = self.m[name] / c1
                vhat = self.v[name] / c2
                t.add_(mhat / (vhat.sqrt() + self.eps), alpha=-lrs[name])

    def rebuild_rows(self, keep: np.ndarray, n_new: int):
        """Drop rows not in ``keep`` and append zero-state rows for new splats."""
        idx = torch.from_numpy(np.asarray(keep, dtype=np.int64))
        for name in list(self.m):
            old_m, old_v = self.m[name][idx], self.v[name][idx]
            pad = (n_new,) + tuple(old_m.shape[1:])
            self.m[name] = torch.cat([old_m, torch.zeros(pad, dtype=old_m.dtype)])
            self.v[name] = torch.cat([old_v, torch.zeros(pad, dtype=old_v.dtype)])


def _frame_losses(params: SplatParams, frame: TrainFrame, pseudo: PseudoNormals | None,
                  cfg: TrainConfig, include_geometry: bool, want_aux: bool = False):
    maps = render_torch(*params.activated(), frame.camera,
                        settings=cfg.raster, want_aux=want_aux)
    l_rgb = rgb_loss(maps["color"], frame.image, frame.dyn_mask)
    l_depth = l_normal = l_geo = l_scale = None
    if include_geometry:
        grid = PatchGrid.for_image(frame.camera.height, frame.camera.width,
                                   cfg.patch_k, cfg.patch_stride)
        l_depth = ncc_depth_loss(maps["depth"], frame.predicted_depth, grid, frame.dyn_mask)
        if pseudo is not None:
            l_normal = normal_loss(maps["normal"], pseudo)
        l_geo = geo_consistency_loss(maps["normal"], frame.predicted_depth)
        l_scale = scale_loss(torch.exp(params.log_scales))
    total, breakdown = total_loss(rgb=l_rgb, depth=l_depth, normal=l_normal,
                                  geo=l_geo, scale=l_scale, weights=cfg.weights)
    return total, breakdown, maps


def backward(splats: SplatSet, camera: Camera, targets: TrainFrame,
             cfg: TrainConfig | None = None, include_geometry: bool = True) -> dict:
    """Analytic gradients of the total loss w.r.t. every raw splat parameter.

    Splats with no pixel contribution receive exactly zero gradient.
    """
    cfg = cfg or TrainConfig()
    params = SplatParams.from_splats(splats)
    pseudo = None
    if include_geometry:
        pseudo = pseudo_normals_from_depth(targets.predicted_depth, camera,
                                           cfg.pseudo_normal_radius)
    total, _, _ = _frame_losses(params, replace(targets, camera=camera), pseudo,
                                cfg, include_geometry)
    total.backward()
    out = {}
    for name, t in params.tensors().items():
        out[name] = np.zeros(t.shape) if t.grad is None else t.grad.numpy().copy()
    return out


def _densify_decisions(scales: np.ndarray, grads: np.ndarray, cfg: TrainConfig):
    over = grads > cfg.densify_grad_threshold
    large = scales.max(axis=1) > cfg.split_scale_threshold
    split = over & large
    clone = over & ~large
    return clone, split


def densify_and_prune(splats: SplatSet, mean_abs_grad: np.ndarray,
                      cfg: TrainConfig | None = None) -> SplatSet:
    """Clone small / split large high-gradient splats, then prune transparent ones.

    ``mean_abs_grad`` is the per-splat mean absolute screen-space positional
    gradient accumulated since the last call.
    """
    cfg = cfg or TrainConfig()
    grads = np.asarray(mean_abs_grad, dtype=np.float64)
    if grads.shape != (len(splats),):
        raise InvalidParameterError("gradient accumulator length mismatch")
    clone, split = _densify_decisions(splats.scales, grads, cfg)

    pieces = [splats.subset(~split)]
    if clone.any():
        pieces.append(splats.subset(clone & ~split))
    if split.any():
        parents = splats.subset(split)
        from .splats import quat_to_rotmat
        R = quat_to_rotmat(parents.rotations)
        axis_i = parents.scales.argmax(axis=1)
        axes = R[np.arange(len(parents)), :, axis_i]
        sigma = parents.scales.max(axis=1)
        for sign in (+1.0, -1.0):
            child = SplatSet(parents.means + sign * 0.5 * sigma[:, None] * axes,
                             parents.rotations.copy(),
                             parents.scales / cfg.split_scale_shrink,
                             parents.opacities.copy(), parents.colors.copy())
            pieces.append(child)
    merged = SplatSet(
        np.concatenate([p.means for p in pieces]),
        np.concatenate([p.rotations for p in pieces]),
        np.concatenate([p.scales for p in pieces]),
        np.concatenate([p.opacities for p in pieces]),
        np.concatenate([p.colors for p in pieces]),
    )
    return merged.subset(merged.opacities >= cfg.prune_opacity)


def _apply_densify(params: SplatParams, opt: Adam, acc: np.ndarray, cnt: np.ndarray,
                   cfg: TrainConfig):
    """Tensor-level densify/prune keeping Adam moments for surviving rows."""
    splats = params.to_splats()
    grads = acc / np.maximum(cnt, 1.0)
    clone, split = _densify_decisions(splats.scales, grads, cfg)
    opac = splats.opacities
    keep = ~split & (opac >= cfg.prune_opacity)
    keep_idx = np.flatnonzero(keep)

    new_sets = []
    clone_idx = np.flatnonzero(clone & keep)
    if len(clone_idx):
        new_sets.append(splats.subset(clone_idx))
    split_idx = np.flatnonzero(split)
    if len(split_idx):
        parents = splats.subset(split_idx)
        from .splats import quat_to_rotmat
        R = quat_to_rotmat(parents.rotations)
        axis_i = parents.scales.argmax(axis=1)
        axes = R[np.arange(len(parents)), :, axis_i]
        sigma = parents.scales.max(axis=1)
        for sign in (+1.0, -1.0):
            new_sets.append(SplatSet(parents.means + sign * 0.5 * sigma[:, None] * axes,
                                     parents.rotations.copy(),
                                     parents.scales / cfg.split_scale_shrink,
                                     parents.opacities.copy(), parents.colors.copy()))
    n_new = sum(len(s) for s in new_sets)
    if n_new == 0 and keep.all():
        return params, opt, np.zeros(len(splats)), np.zeros(len(splats))

    kept = splats.subset(keep_idx)
    arrays = {
        "means": [kept.means], "rotations": [kept.rotations],
        "scales": [kept.scales], "opacities": [kept.opacities], "colors": [kept.colors],
    }
    for s in new_sets:
        arrays["means"].append(s.means)
        arrays["rotations"].append(s.rotations)
        arrays["scales"].append(s.scales)
        arrays["opacities"].append(s.opacities)
        arrays["colors"].append(s.colors)
    merged = SplatSet(*(np.concatenate(arrays[k]) for k in
                        ("means", "rotations", "scales", "opacities", "colors")))
    new_params = SplatParams.from_splats(merged)
    opt.rebuild_rows(keep_idx, n_new)
    n = len(merged)
    return new_params, opt, np.zeros(n), np.zeros(n)


def init_random_box(n: int, low, high, rng: np.random.Generator) -> SplatSet:
    """Uniform random splats inside an axis-aligned box (desk-scale fallback init)."""
    low = np.asarray(low, dtype=np.float64)
    high = np.asarray(high, dtype=np.float64)
    quats = rng.normal(size=(n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    extent = float(np.max(high - low))
    return SplatSet(
        rng.uniform(low, high, size=(n, 3)),
        quats,
        rng.uniform(0.02, 0.1, size=(n, 3)) * max(extent, 1.0),
        rng.uniform(0.3, 0.9, size=n),
        rng.uniform(0.05, 0.95, size=(n, 3)),
    )


def init_from_points(points: np.ndarray, colors: np.ndarray | None = None,
                     scale: float | None = None) -> SplatSet:
    """Isotropic splats seeded at a point cloud (e.g. SfM points)."""
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    if n == 0:
        raise InvalidParameterError("empty point cloud")
    if scale is None:
        extent = pts.max(0) - pts.min(0)
        scale = max(float(np.max(extent)), 1e-3) / max(n ** (1 / 3), 1.0) * 0.5
    quats = np.zeros((n, 4))
    quats[:, 0] = 1.0
    cols = np.full((n, 3), 0.5) if colors is None else np.clip(colors, 0.0, 1.0)
    return SplatSet(pts, quats, np.full((n, 3), scale), np.full(n, 0.5), cols)


def psnr(img: np.ndarray, ref: np.ndarray) -> float:
    mse = float(np.mean((np.asarray(img, dtype=np.float64) - np.asarray(ref, dtype=np.float64)) ** 2))
    if mse <= 0:
        return float("inf")
    return -10.0 * math.log10(mse)


def evaluate_views(splats: SplatSet, frames) -> tuple[float, float]:
    """Mean PSNR/SSIM of renders against the frames' images."""
    from .rasterizer import rasterize
    ps, ss = [], []
    for fr in frames:
        out = rasterize(splats, fr.camera)
        ps.append(psnr(out.color, fr.image))
        ss.append(float(ssim_map(out.color, fr.image).mean()))
    return float(np.mean(ps)), float(np.mean(ss))


def train(frames, cfg: TrainConfig, init: SplatSet | None = None,
          test_frames=()) -> tuple[SplatSet, TrainReport]:
    """Optimize splats against the total loss over the training frames.

    Geometry losses activate at ``cfg.geometry_start_iter``; densification runs
    on the configured interval inside [densify_start, densify_until]. Fully
    deterministic under a fixed ``cfg.seed``.
    """
    frames = list(frames)
    if not frames:
        raise InvalidParameterError("no training frames")
    rng = np.random.default_rng(cfg.seed)
    if init is None:
        cams = np.array([np.linalg.inv(f.camera.world_to_camera)[:3, 3] for f in frames])
        center = cams.mean(0)
        span = max(float(np.max(cams.max(0) - cams.min(0))), 2.0)
        init = init_random_box(2000, center - span, center + span, rng)
    init.validate()

    params = SplatParams.from_splats(init)
    opt = Adam(params)
    acc = np.zeros(len(params))
    cnt = np.zeros(len(params))
    report = TrainReport()
    pseudo_cache: dict[int, PseudoNormals] = {}

    lr0, lr1 = cfg.lrs.means, cfg.lrs.means_final
    horizon = max(cfg.iterations - 1, 1)

    for it in range(cfg.iterations):
        fi = int(rng.integers(len(frames)))
        frame = frames[fi]
        include_geometry = it >= cfg.geometry_start_iter
        pseudo = None
        if include_geometry:
            if fi not in pseudo_cache:
                pseudo_cache[fi] = pseudo_normals_from_depth(
                    frame.predicted_depth, frame.camera, cfg.pseudo_normal_radius)
            pseudo = pseudo_cache[fi]

        for t in params.tensors().values():
            t.grad = None
        total, breakdown, maps = _frame_losses(params, frame, pseudo, cfg,
                                               include_geometry, want_aux=True)
        if not torch.isfinite(total):
            raise TrainingError(f"non-finite loss at iteration {it}: "
                                f"{ {k: float(v) for k, v in breakdown.items()} }")
        maps["means2d"].retain_grad()
        total.backward()

        g2d = maps["means2d"].grad
        if g2d is not None:
            norms = torch.linalg.norm(g2d, dim=1).numpy()
            vis = maps["visible"].numpy()
            acc[vis] += norms[vis]
            cnt[vis] += 1.0

        lrs = {"means": lr0 * (lr1 / lr0) ** (it / horizon),
               "rotations": cfg.lrs.rotations, "log_scales": cfg.lrs.log_scales,
               "opacity_logits": cfg.lrs.opacity_logits, "color_logits": cfg.lrs.color_logits}
        opt.step(params, lrs)
        with torch.no_grad():
            params.rotations /= torch.linalg.norm(params.rotations, dim=1, keepdim=True)

        report.loss_history.append(
            {"total": float(total), **{k: float(v) for k, v in breakdown.items()}})
        report.splat_counts.append(len(params))

        next_it = it + 1
        if (cfg.densify_interval > 0 and cfg.densify_start <= next_it <= cfg.densify_until
                and next_it % cfg.densify_interval == 0):
            params, opt, acc, cnt = _apply_densify(params, opt, acc, cnt, cfg)

    result = params.to_splats()
    if test_frames:
        report.test_psnr, report.test_ssim = evaluate_views(result, test_frames)
    return result, report
