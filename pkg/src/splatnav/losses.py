"""Training losses: photometric RGB, scale-invariant depth NCC, normal cosine,
neighbor-normal geometry consistency, and splat flattening, plus pseudo
ground-truth normals derived from a predicted depth map.

All loss functions accept torch tensors (gradients flow through the rendered
inputs) or numpy arrays and return a scalar torch tensor.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from scipy import ndimage

from .cameras import Camera
from .errors import EmptySupportError, InvalidParameterError

EPS_STD = 1e-6
EPS_NORM = 1e-12


def _t(x) -> torch.Tensor:
    return torch.as_tensor(x, dtype=torch.float64)


# ---------------------------------------------------------------------------
# photometric loss


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> torch.Tensor:
    coords = torch.arange(size, dtype=torch.float64) - size // 2
    g = torch.exp(-(coords ** 2) / (2 * sigma ** 2))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim_map(img_a, img_b, window_size: int = 11, sigma: float = 1.5) -> torch.Tensor:
    """Per-pixel SSIM averaged over channels, 11x11 Gaussian window, L=1."""
    a = _t(img_a).permute(2, 0, 1).unsqueeze(0)
    b = _t(img_b).permute(2, 0, 1).unsqueeze(0)
    ch = a.shape[1]
    win = _gaussian_window(window_size, sigma).expand(ch, 1, window_size, window_size)
    pad = window_size // 2
    mu_a = F.conv2d(a, win, padding=pad, groups=ch)
    mu_b = F.conv2d(b, win, padding=pad, groups=ch)
    mu_aa, mu_bb, mu_ab = mu_a * mu_a, mu_b * mu_b, mu_a * mu_b
    sig_a = F.conv2d(a * a, win, padding=pad, groups=ch) - mu_aa
    sig_b = F.conv2d(b * b, win, padding=pad, groups=ch) - mu_bb
    cov = F.conv2d(a * b, win, padding=pad, groups=ch) - mu_ab
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    num = (2 * mu_ab + c1) * (2 * cov + c2)
    den = (mu_aa + mu_bb + c1) * (sig_a + sig_b + c2)
    return (num / den).squeeze(0).mean(0)


def rgb_loss(rendered, target, dyn_mask=None) -> torch.Tensor:
    """0.8 * L1 + 0.2 * (1 - SSIM) over unmasked pixels.

    ``dyn_mask`` marks dynamic pixels to exclude (True = ignore).
    """
    r, t = _t(rendered), _t(target)
    if r.shape != t.shape:
        raise InvalidParameterError(f"image shape mismatch: {tuple(r.shape)} vs {tuple(t.shape)}")
    valid = None
    if dyn_mask is not None:
        m = torch.as_tensor(np.asarray(dyn_mask, dtype=bool))
        if m.shape != r.shape[:2]:
            raise InvalidParameterError("mask shape mismatch")
        valid = ~m
        if not bool(valid.any()):
            warnings.warn("rgb_loss: every pixel is masked; returning 0")
            return torch.zeros((), dtype=torch.float64)
    l1_map = (r - t).abs().mean(-1)
    s_map = ssim_map(r, t)
    if valid is None:
        l1, s = l1_map.mean(), s_map.mean()
    else:
        l1, s = l1_map[valid].mean(), s_map[valid].mean()
    return 0.8 * l1 + 0.2 * (1.0 - s)


# ---------------------------------------------------------------------------
# scale-invariant depth loss


@dataclass
class PatchGrid:
    """Overlapping K x K patches at a fixed stride, all fully inside the image."""

    k: int = 11
    stride: int = 8
    tops: list = field(default_factory=list)  # (row, col) top-left corners

    def __post_init__(self):
        if self.k < 3 or self.k % 2 == 0:
            raise InvalidParameterError("patch size must be odd and >= 3")
        if self.stride < 1:
            raise InvalidParameterError("stride must be positive")

    @classmethod
    def for_image(cls, height: int, width: int, k: int = 11, stride: int = 8) -> "PatchGrid":
        grid = cls(k=k, stride=stride)
        if height < k or width < k:
            raise InvalidParameterError(f"image {height}x{width} smaller than patch size {k}")
        ys = range(0, height - k + 1, stride)
        xs = range(0, width - k + 1, stride)
        grid.tops = [(y, x) for y in ys for x in xs]
        return grid


def _gather_patches(depth: torch.Tensor, grid: PatchGrid) -> torch.Tensor:
    tops = torch.as_tensor(grid.tops, dtype=torch.int64)
    k = grid.k
    iy = tops[:, 0][:, None] + torch.arange(k)
    ix = tops[:, 1][:, None] + torch.arange(k)
    return depth[iy[:, :, None], ix[:, None, :]].reshape(len(tops), k * k)


def ncc_depth_loss(rendered_depth, predicted_depth, patches: PatchGrid | None = None,
                   dyn_mask=None) -> torch.Tensor:
    """1 - mean patchwise normalized cross-correlation between depth maps.

    Patches with per-map std below 1e-6 or containing any masked pixel are
    dropped; zero usable patches is an error.
    """
    rd, pd = _t(rendered_depth), _t(predicted_depth)
    if rd.shape != pd.shape:
        raise InvalidParameterError("depth map shape mismatch")
    if patches is None:
        patches = PatchGrid.for_image(rd.shape[0], rd.shape[1])
    if not patches.tops:
        raise EmptySupportError("patch grid is empty")
    pr = _gather_patches(rd, patches)
    pp = _gather_patches(pd, patches)
    keep = torch.ones(len(pr), dtype=torch.bool)
    if dyn_mask is not None:
        m = torch.as_tensor(np.asarray(dyn_mask, dtype=bool)).to(torch.float64)
        keep &= _gather_patches(m, patches).sum(1) == 0
    cr = pr - pr.mean(1, keepdim=True)
    cp = pp - pp.mean(1, keepdim=True)
    k2 = patches.k ** 2
    std_r = torch.sqrt((cr * cr).mean(1))
    std_p = torch.sqrt((cp * cp).mean(1))
    keep &= (std_r > EPS_STD) & (std_p > EPS_STD)
    if not bool(keep.any()):
        raise EmptySupportError("no usable patches for the depth NCC loss")
    # NCC per patch: cosine of the mean-centered patch vectors (|centered| = std * K).
    ncc = (cr * cp).sum(1) / (std_r * std_p * k2)
    return 1.0 - ncc[keep].mean()


# ---------------------------------------------------------------------------
# normal losses


@dataclass
class PseudoNormals:
    """Pseudo ground-truth normal map (camera frame) with a validity mask."""

    normals: np.ndarray  # (H, W, 3), unit where valid
    valid: np.ndarray    # (H, W) bool


def normal_loss(rendered_normal, pseudo: PseudoNormals) -> torch.Tensor:
    """1 - mean cosine similarity over valid pixels (both fields normalized)."""
    rn = _t(rendered_normal)
    gt = _t(pseudo.normals)
    if rn.shape != gt.shape:
        raise InvalidParameterError("normal map shape mismatch")
    rn_norm = torch.linalg.norm(rn, dim=-1)
    gt_norm = torch.linalg.norm(gt, dim=-1)
    valid = torch.as_tensor(pseudo.valid) & (rn_norm > EPS_NORM) & (gt_norm > EPS_NORM)
    if not bool(valid.any()):
        raise EmptySupportError("no valid pixels for the normal loss")
    cos = (rn * gt).sum(-1) / (rn_norm * gt_norm)
    return 1.0 - cos[valid].mean()


def geo_consistency_loss(rendered_normal, predicted_depth) -> torch.Tensor:
    """Depth-gradient-weighted neighbor-normal alignment penalty.

    Weights w = clamp(1 - |grad D_normalized|, 0, 1) with forward differences on
    the per-image min-max normalized predicted depth; right and bottom neighbor
    pairs share the pixel's weight. Empty weighted support returns 0 (this is a
    regularizer, not a data term).
    """
    n = _t(rendered_normal)
    d = _t(predicted_depth)
    H, W = d.shape
    if H < 2 or W < 2:
        raise InvalidParameterError("geo consistency needs at least a 2x2 image")
    if not torch.all(torch.isfinite(d)):
        raise InvalidParameterError("non-finite predicted depth")

    span = d.max() - d.min()
    dn = (d - d.min()) / torch.clamp(span, min=EPS_NORM)
    gx = dn[:, 1:] - dn[:, :-1]          # (H, W-1)
    gy = dn[1:, :] - dn[:-1, :]          # (H-1, W)
    grad = torch.sqrt(gx[:-1, :] ** 2 + gy[:, :-1] ** 2)  # (H-1, W-1)
    w = torch.clamp(1.0 - grad, 0.0, 1.0)

    norm = torch.linalg.norm(n, dim=-1, keepdim=True)
    ok = (norm.squeeze(-1) > EPS_NORM)
    unit = n / torch.clamp(norm, min=EPS_NORM)

    base = unit[:-1, :-1]
    right = unit[:-1, 1:]
    below = unit[1:, :-1]
    ok_r = ok[:-1, :-1] & ok[:-1, 1:]
    ok_b = ok[:-1, :-1] & ok[1:, :-1]
    term_r = (1.0 - (base * right).sum(-1)) * ok_r
    term_b = (1.0 - (base * below).sum(-1)) * ok_b
    wsum = (w * ok_r).sum() + (w * ok_b).sum()
    if float(wsum) <= 0.0:
        return torch.zeros((), dtype=torch.float64)
    return (w * term_r + w * term_b).sum() / wsum


# ---------------------------------------------------------------------------
# flattening + total


def scale_loss(scales) -> torch.Tensor:
    """Mean shortest-axis scale; accepts a SplatSet or an (N, 3) tensor."""
    s = scales.scales if hasattr(scales, "scales") else scales
    s = _t(s)
    return s.min(dim=1).values.mean()


@dataclass
class LossWeights:
    depth: float = 0.5
    normal: float = 0.1
    geo: float = 0.05
    scale: float = 10.0


def total_loss(rgb=None, depth=None, normal=None, geo=None, scale=None,
               weights: LossWeights | None = None):
    """Weighted sum of the loss components plus the unweighted breakdown.

    Components passed as None are inactive (contribute nothing).
    """
    weights = weights or LossWeights()
    total = torch.zeros((), dtype=torch.float64)
    breakdown = {}
    for name, value, w in (("rgb", rgb, 1.0), ("depth", depth, weights.depth),
                           ("normal", normal, weights.normal), ("geo", geo, weights.geo),
                           ("scale", scale, weights.scale)):
        if value is None:
            continue
        value = _t(value)
        breakdown[name] = value
        total = total + w * value
    return total, breakdown


# ---------------------------------------------------------------------------
# pseudo ground-truth normals from predicted depth


def pseudo_normals_from_depth(predicted_depth, camera: Camera, k: int = 2) -> PseudoNormals:
    """Plane normals by PCA over (2k+1)^2 neighborhoods of unprojected depth pixels.

    Pixels whose neighborhood is incomplete, touches the image border, or is
    rank-deficient (collinear points) are marked invalid. Normals are flipped
    to face the camera.
    """
    depth = np.asarray(predicted_depth, dtype=np.float64)
    H, W = depth.shape
    win = 2 * k + 1
    valid = np.isfinite(depth) & (depth > 0)
    pts = camera.unproject(np.where(valid, depth, 0.0))
    pts[~valid] = 0.0

    size = (win, win)
    cnt = ndimage.uniform_filter(valid.astype(np.float64), size=size) * win * win
    full = cnt > win * win - 0.5
    sums = np.stack([ndimage.uniform_filter(pts[..., i], size=size) for i in range(3)], -1) * win * win
    prods = {}
    for i in range(3):
        for j in range(i, 3):
            prods[(i, j)] = ndimage.uniform_filter(pts[..., i] * pts[..., j], size=size) * win * win

    mean = sums / np.maximum(cnt, 1.0)[..., None]
    cov = np.empty((H, W, 3, 3))
    for i in range(3):
        for j in range(i, 3):
            c = prods[(i, j)] / np.maximum(cnt, 1.0) - mean[..., i] * mean[..., j]
            cov[..., i, j] = c
            cov[..., j, i] = c

    interior = np.zeros((H, W), dtype=bool)
    if H > 2 * k and W > 2 * k:
        interior[k:H - k, k:W - k] = True
    usable = full & interior

    normals = np.zeros((H, W, 3))
    out_valid = np.zeros((H, W), dtype=bool)
    if usable.any():
        evals, evecs = np.linalg.eigh(cov[usable])
        n = evecs[..., 0]  # eigenvector of the smallest eigenvalue
        nondegenerate = evals[..., 1] > 1e-12  # mid eigenvalue: points span a plane
        flip = np.sum(n * mean[usable], axis=-1) > 0
        n[flip] *= -1.0
        n /= np.maximum(np.linalg.norm(n, axis=-1, keepdims=True), EPS_NORM)
        sel = np.zeros(usable.sum(), dtype=bool)
        sel[nondegenerate] = True
        idx = np.argwhere(usable)
        good = idx[sel]
        normals[good[:, 0], good[:, 1]] = n[sel]
        out_valid[good[:, 0], good[:, 1]] = True
    return PseudoNormals(normals=normals, valid=out_valid)
