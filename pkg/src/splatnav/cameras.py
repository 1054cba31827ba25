"""Pinhole camera model and pose helpers.

Conventions used throughout the toolkit:
  - camera frame: x right, y down, z forward (optical axis)
  - pixel (u, v): u = fx*x/z + cx along image width, v = fy*y/z + cy along
    height; pixel centers sit at integer coordinates, image[v, u]
  - world_to_camera is a rigid 4x4 (row-major) mapping world points into the
    camera frame
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError

ORTHONORMAL_TOL = 1e-6


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    world_to_camera: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        self.world_to_camera = np.asarray(self.world_to_camera, dtype=np.float64)
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidParameterError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise InvalidParameterError("image dimensions must be positive")
        if self.world_to_camera.shape != (4, 4):
            raise InvalidParameterError("world_to_camera must be 4x4")
        R = self.world_to_camera[:3, :3]
        if not np.all(np.isfinite(self.world_to_camera)):
            raise InvalidParameterError("world_to_camera contains non-finite entries")
        err = np.abs(R @ R.T - np.eye(3)).max()
        if err > ORTHONORMAL_TOL:
            raise InvalidParameterError(f"world_to_camera rotation block not orthonormal (err={err:.2e})")

    @property
    def rotation(self) -> np.ndarray:
        return self.world_to_camera[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.world_to_camera[:3, 3]

    def world_to_cam_points(self, points: np.ndarray) -> np.ndarray:
        """Map (N,3) world points into the camera frame."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def project(self, points_cam: np.ndarray) -> np.ndarray:
        """Project (N,3) camera-frame points to (N,2) pixel coordinates."""
        p = np.asarray(points_cam, dtype=np.float64)
        z = p[..., 2]
        u = self.fx * p[..., 0] / z + self.cx
        v = self.fy * p[..., 1] / z + self.cy
        return np.stack([u, v], axis=-1)

    def unproject(self, depth: np.ndarray) -> np.ndarray:
        """Lift a full-resolution depth map to an (H, W, 3) camera-frame point map."""
        d = np.asarray(depth, dtype=np.float64)
        v, u = np.mgrid[0 : self.height, 0 : self.width]
        x = (u - self.cx) / self.fx * d
        y = (v - self.cy) / self.fy * d
        return np.stack([x, y, d], axis=-1)

    def resized(self, width: int, height: int) -> "Camera":
        sx, sy = width / self.width, height / self.height
        return Camera(self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy,
                      width, height, self.world_to_camera.copy())


def euler_to_rotmat(rx: float, ry: float, rz: float) -> np.ndarray:
    """Rotation matrix from intrinsic x, y, z Euler angles (radians), R = Rz @ Ry @ Rx."""
    cx, sx = np.cos(rx), np.sin(rx)
    cy, sy = np.cos(ry), np.sin(ry)
    cz, sz = np.cos(rz), np.sin(rz)
    Rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return Rz @ Ry @ Rx


def pose_to_world_to_camera(position: np.ndarray, rotation_c2w: np.ndarray) -> np.ndarray:
    """Build a 4x4 world-to-camera from a camera position and camera-to-world rotation."""
    w2c = np.eye(4)
    R = np.asarray(rotation_c2w, dtype=np.float64)
    t = np.asarray(position, dtype=np.float64)
    w2c[:3, :3] = R.T
    w2c[:3, 3] = -R.T @ t
    return w2c


def look_at_world_to_camera(eye, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """World-to-camera for a camera at `eye` looking at `target` (world z-up by default)."""
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    fwd = target - eye
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        raise InvalidParameterError("look_at target coincides with eye")
    fwd = fwd / n
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(fwd, up)
    rn = np.linalg.norm(right)
    if rn < 1e-9:  # forward parallel to up: pick an arbitrary right
        right = np.cross(fwd, np.array([1.0, 0.0, 0.0]))
        rn = np.linalg.norm(right)
        if rn < 1e-9:
            right = np.cross(fwd, np.array([0.0, 1.0, 0.0]))
            rn = np.linalg.norm(right)
    right = right / rn
    down = np.cross(fwd, right)
    R_c2w = np.stack([right, down, fwd], axis=1)  # columns: camera x, y, z in world
    return pose_to_world_to_camera(eye, R_c2w)
