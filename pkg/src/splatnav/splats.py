"""Gaussian splat data model: quaternion math, 3D covariance construction, checkpoints.

A splat set is stored as flat float64 arrays (structure-of-arrays) so the same
data feeds numpy-side geometry code and the torch-side differentiable renderer
without copies of per-splat objects.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError

UNIT_QUAT_TOL = 1e-6
CHECKPOINT_VERSION = 1


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices (...,3,3) from quaternions (...,4) in (w, x, y, z) order.

    Quaternions are normalized internally, so near-unit inputs are fine.
    """
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def build_covariance(rotation: np.ndarray, scales: np.ndarray) -> np.ndarray:
    """3D covariance R diag(s)^2 R^T from a unit quaternion and positive axis scales.

    Accepts a single (4,)/(3,) pair or batched (...,4)/(...,3) arrays.
    """
    rotation = np.asarray(rotation, dtype=np.float64)
    scales = np.asarray(scales, dtype=np.float64)
    if not (np.all(np.isfinite(rotation)) and np.all(np.isfinite(scales))):
        raise InvalidParameterError("non-finite rotation or scales")
    norm = np.linalg.norm(rotation, axis=-1)
    if np.any(np.abs(norm - 1.0) > UNIT_QUAT_TOL):
        raise InvalidParameterError("rotation quaternion must have unit norm")
    if np.any(scales <= 0):
        raise InvalidParameterError("scales must be strictly positive")
    R = quat_to_rotmat(rotation)
    M = R * scales[..., None, :]  # R @ diag(s)
    return M @ np.swapaxes(M, -1, -2)


@dataclass
class Splat:
    """One Gaussian primitive: position, orientation, axis scales, opacity, RGB color."""

    mean: np.ndarray
    rotation: np.ndarray  # unit quaternion (w, x, y, z)
    scales: np.ndarray
    opacity: float
    color: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.scales = np.asarray(self.scales, dtype=np.float64)
        self.color = np.asarray(self.color, dtype=np.float64)
        if self.mean.shape != (3,) or self.rotation.shape != (4,) or self.scales.shape != (3,):
            raise InvalidParameterError("splat fields have wrong shapes")
        if abs(np.linalg.norm(self.rotation) - 1.0) > UNIT_QUAT_TOL:
            raise InvalidParameterError("splat rotation must be a unit quaternion")
        if np.any(self.scales <= 0):
            raise InvalidParameterError("splat scales must be strictly positive")
        if not (0.0 < self.opacity < 1.0):
            raise InvalidParameterError("splat opacity must lie in the open interval (0, 1)")

    def covariance(self) -> np.ndarray:
        return build_covariance(self.rotation, self.scales)


@dataclass
class SplatSet:
    """Ordered collection of splats stored as flat arrays.

    means (N,3), rotations (N,4) unit quats, scales (N,3) > 0,
    opacities (N,) in (0,1), colors (N,3) in [0,1].
    """

    means: np.ndarray
    rotations: np.ndarray
    scales: np.ndarray
    opacities: np.ndarray
    colors: np.ndarray

    def __post_init__(self):
        self.means = np.ascontiguousarray(self.means, dtype=np.float64)
        self.rotations = np.ascontiguousarray(self.rotations, dtype=np.float64)
        self.scales = np.ascontiguousarray(self.scales, dtype=np.float64)
        self.opacities = np.ascontiguousarray(self.opacities, dtype=np.float64)
        self.colors = np.ascontiguousarray(self.colors, dtype=np.float64)
        n = len(self.means)
        shapes = (self.means.shape, self.rotations.shape, self.scales.shape,
                  self.opacities.shape, self.colors.shape)
        if shapes != ((n, 3), (n, 4), (n, 3), (n,), (n, 3)):
            raise InvalidParameterError(f"inconsistent splat array shapes: {shapes}")

    def __len__(self) -> int:
        return len(self.means)

    def validate(self):
        """Check the per-splat invariants; raises InvalidParameterError on violation."""
        if len(self) < 1:
            raise InvalidParameterError("splat set is empty")
        for arr in (self.means, self.rotations, self.scales, self.opacities, self.colors):
            if not np.all(np.isfinite(arr)):
                raise InvalidParameterError("non-finite splat parameters")
        if np.any(np.abs(np.linalg.norm(self.rotations, axis=1) - 1.0) > UNIT_QUAT_TOL):
            raise InvalidParameterError("rotations must be unit quaternions")
        if np.any(self.scales <= 0):
            raise InvalidParameterError("scales must be strictly positive")
        if np.any(self.opacities <= 0) or np.any(self.opacities >= 1):
            raise InvalidParameterError("opacities must lie in (0, 1)")

    def __getitem__(self, i: int) -> Splat:
        return Splat(self.means[i], self.rotations[i], self.scales[i],
                     float(self.opacities[i]), self.colors[i])

    def subset(self, mask_or_indices) -> "SplatSet":
        idx = np.asarray(mask_or_indices)
        return SplatSet(self.means[idx], self.rotations[idx], self.scales[idx],
                        self.opacities[idx], self.colors[idx])

    def covariances(self) -> np.ndarray:
        return build_covariance(self.rotations, self.scales)

    @staticmethod
    def from_splats(splats) -> "SplatSet":
        return SplatSet(
            np.stack([s.mean for s in splats]),
            np.stack([s.rotation for s in splats]),
            np.stack([s.scales for s in splats]),
            np.array([s.opacity for s in splats]),
            np.stack([s.color for s in splats]),
        )


def save_checkpoint(path, splats: SplatSet, metadata: dict | None = None):
    """Write a versioned .npz checkpoint (activated parameter values, field order fixed)."""
    splats.validate()
    meta = dict(metadata or {})
    np.savez(
        path,
        version=np.int64(CHECKPOINT_VERSION),
        means=splats.means,
        rotations=splats.rotations,
        scales=splats.scales,
        opacities=splats.opacities,
        colors=splats.colors,
        metadata=np.frombuffer(repr(meta).encode(), dtype=np.uint8),
    )


def load_checkpoint(path) -> SplatSet:
    with np.load(path if not isinstance(path, io.IOBase) else path) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise InvalidParameterError(f"unsupported checkpoint version {version}")
        splats = SplatSet(data["means"], data["rotations"], data["scales"],
                          data["opacities"], data["colors"])
    splats.validate()
    return splats
