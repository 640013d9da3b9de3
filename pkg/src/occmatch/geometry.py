"""Pinhole camera model, SE(3) poses, and depth-map reprojection.

Conventions used across the package:

* Pixel coordinates are continuous with (0, 0) at the *center* of the
  top-left pixel; u grows to the right (columns), v grows down (rows).
* Camera frame: x right, y down, z forward. A point is in front of the
  camera iff z > 0.
* Poses are stored camera-to-world: X_world = R @ X_cam + t, so t is the
  camera center in world coordinates.
* Depth maps store the camera-frame z per pixel in meters, row-major;
  0.0 is the invalid sentinel (no return / no surface).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .errors import NonPositiveDepthError

# Orthonormality tolerance for pose validation.
_ROT_ATOL = 1e-9


class PixelPoint(NamedTuple):
    u: float
    v: float


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics; fx/fy in pixels, (cx, cy) the principal point."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got ({self.fx}, {self.fy})")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image size must be at least 1x1, got {self.width}x{self.height}")

    @property
    def k_matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


def _as_readonly(a: np.ndarray) -> np.ndarray:
    out = np.asarray(a, dtype=np.float64).copy()
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class PoseSE3:
    """Rigid camera-to-world transform: X_world = R @ X_cam + t."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self) -> None:
        R = _as_readonly(self.R).reshape(3, 3)
        t = _as_readonly(self.t).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), atol=_ROT_ATOL):
            raise ValueError("rotation is not orthonormal")
        if not np.isclose(np.linalg.det(R), 1.0, atol=_ROT_ATOL):
            raise ValueError("rotation must have determinant +1")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "PoseSE3":
        return cls(np.eye(3), np.zeros(3))

    def inverse(self) -> "PoseSE3":
        return PoseSE3(self.R.T, -self.R.T @ self.t)

    def compose(self, other: "PoseSE3") -> "PoseSE3":
        """self ∘ other: apply `other` first, then `self`."""
        return PoseSE3(self.R @ other.R, self.R @ other.t + self.t)

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Apply to one point (3,) or a stack (..., 3)."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.R.T + self.t


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel camera-frame z in meters; 0.0 marks invalid pixels."""

    data: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        d = _as_readonly(self.data)
        if d.ndim != 2:
            raise ValueError(f"depth data must be 2-d (height, width), got shape {d.shape}")
        if np.any(d < 0) or not np.all(np.isfinite(d)):
            raise ValueError("depth values must be finite and non-negative")
        object.__setattr__(self, "data", d)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def valid_mask(self) -> np.ndarray:
        return self.data > 0.0

    def at(self, u: int, v: int) -> float:
        """Depth at an integer pixel; 0.0 means invalid."""
        return float(self.data[v, u])


def project(p_cam: np.ndarray, k: CameraIntrinsics) -> tuple[PixelPoint, float]:
    """Project a camera-frame point to pixel coordinates.

    Returns (pixel, depth) with depth = z. Raises NonPositiveDepthError
    for points at or behind the image plane (z <= 0).
    """
    x, y, z = (float(c) for c in np.asarray(p_cam, dtype=np.float64).reshape(3))
    if z <= 0.0:
        raise NonPositiveDepthError(f"cannot project point with z={z}")
    return PixelPoint(k.fx * x / z + k.cx, k.fy * y / z + k.cy), z


def unproject(px: PixelPoint, depth: float, k: CameraIntrinsics) -> np.ndarray:
    """Lift a pixel with known depth back to a camera-frame point."""
    if depth <= 0.0:
        raise NonPositiveDepthError(f"cannot unproject depth={depth}")
    u, v = px
    return np.array(
        [(u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth], dtype=np.float64
    )


def relative_pose(pose_a: PoseSE3, pose_b: PoseSE3) -> PoseSE3:
    """Transform taking camera-A coordinates to camera-B coordinates.

    T_ba = inverse(pose_b) ∘ pose_a; with both cameras at the same pose
    this is the identity.
    """
    return pose_b.inverse().compose(pose_a)


def reproject(
    px: PixelPoint,
    depth: float,
    k_a: CameraIntrinsics,
    k_b: CameraIntrinsics,
    t_ba: PoseSE3,
) -> Optional[tuple[PixelPoint, float]]:
    """Carry a pixel of view A with known depth into view B.

    Returns (pixel_b, depth_b), or None when the transformed point falls
    at or behind B's image plane. The returned pixel may lie outside B's
    image bounds; bounds handling is the caller's concern.
    """
    p_b = t_ba.transform(unproject(px, depth, k_a))
    if p_b[2] <= 0.0:
        return None
    return project(p_b, k_b)
