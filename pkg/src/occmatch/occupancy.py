"""Voxel occupancy along viewing rays at half image resolution.

The grid for a target view has one column per 2x2 pixel block and D uniform
depth bins over [d_min, d_max). Ground truth comes from fusing both views'
depth maps into a world point cloud and binning it in the target frame;
the estimator turns a feature/view factor pair into per-column depth
distributions via a softmax over the depth axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyCloudError, ShapeMismatchError
from .geometry import CameraIntrinsics, DepthMap, PoseSE3
from .numerics import softmax, softmax_jacobian


@dataclass(frozen=True)
class OccupancyConfig:
    """Depth binning: `depth_bins` uniform bins covering [d_min, d_max)."""

    depth_bins: int = 64
    d_min: float = 0.1
    d_max: float = 10.0

    def __post_init__(self) -> None:
        if self.depth_bins < 1:
            raise ValueError(f"need at least one depth bin, got {self.depth_bins}")
        if not 0 < self.d_min < self.d_max:
            raise ValueError(f"need 0 < d_min < d_max, got [{self.d_min}, {self.d_max})")

    @property
    def bin_width(self) -> float:
        return (self.d_max - self.d_min) / self.depth_bins


def grid_shape(k: CameraIntrinsics) -> tuple[int, int]:
    """(rows, cols) of the half-resolution grid: cell (r, c) covers pixels
    [2c, 2c+2) x [2r, 2r+2)."""
    return (-(-k.height // 2), -(-k.width // 2))


def depth_bin_index(z: np.ndarray, cfg: OccupancyConfig) -> np.ndarray:
    """Bin index for camera depth z; only meaningful for z in [d_min, d_max)."""
    return np.floor((np.asarray(z, dtype=np.float64) - cfg.d_min) / cfg.bin_width).astype(np.intp)


@dataclass(frozen=True)
class OccupancyGrid:
    """Per-column depth distribution, shape (rows, cols, depth_bins)."""

    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise ValueError(f"occupancy values must be (rows, cols, bins), got {v.shape}")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("occupancy values must be finite and non-negative")
        object.__setattr__(self, "values", v)

    @property
    def column_sums(self) -> np.ndarray:
        return self.values.sum(axis=-1)


@dataclass(frozen=True)
class OccupancyFactors:
    """Factor pair for estimation.

    feature_term: (C, rows, cols, 1); view_term: (1, rows, cols, D). Their
    broadcast product summed over channels gives the per-bin logits.
    """

    feature_term: np.ndarray = field(repr=False)
    view_term: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        f = np.asarray(self.feature_term, dtype=np.float64)
        v = np.asarray(self.view_term, dtype=np.float64)
        if f.ndim != 4 or f.shape[3] != 1:
            raise ShapeMismatchError(f"feature term must be (C, rows, cols, 1), got {f.shape}")
        if v.ndim != 4 or v.shape[0] != 1:
            raise ShapeMismatchError(f"view term must be (1, rows, cols, D), got {v.shape}")
        if f.shape[1:3] != v.shape[1:3]:
            raise ShapeMismatchError(
                f"factor spatial shapes disagree: {f.shape[1:3]} vs {v.shape[1:3]}"
            )
        object.__setattr__(self, "feature_term", f)
        object.__setattr__(self, "view_term", v)


def _cloud_from_view(depth: DepthMap, k: CameraIntrinsics, pose: PoseSE3) -> np.ndarray:
    """World points of all valid pixels of one view, (N, 3)."""
    vs, us = np.nonzero(depth.valid_mask)
    if us.size == 0:
        return np.empty((0, 3))
    d = depth.data[vs, us]
    p_cam = np.column_stack([(us - k.cx) / k.fx * d, (vs - k.cy) / k.fy * d, d])
    return pose.transform(p_cam)


def build_ground_truth_occupancy(
    depth_a: DepthMap,
    depth_b: DepthMap,
    pose_a: PoseSE3,
    pose_b: PoseSE3,
    k_a: CameraIntrinsics,
    k_b: CameraIntrinsics,
    target: str = "a",
    cfg: OccupancyConfig = OccupancyConfig(),
    normalize: bool = True,
) -> OccupancyGrid:
    """Fuse both views into a point cloud and bin it in the target frame.

    The target view's own pixels bin directly at (row, col) = (v // 2,
    u // 2); only the other view's points go through the pose transform and
    reprojection. This keeps a pixel from drifting out of its own cell by
    one ulp of projective round-trip.

    With normalize=True each non-empty column is a uniform distribution
    over its occupied bins (sums to 1); empty columns stay all-zero.
    normalize=False keeps raw 0/1 occupancy.
    """
    if target not in ("a", "b"):
        raise ValueError(f"target must be 'a' or 'b', got {target!r}")
    if target == "a":
        depth_t, k_t, pose_t = depth_a, k_a, pose_a
        depth_o, k_o, pose_o = depth_b, k_b, pose_b
    else:
        depth_t, k_t, pose_t = depth_b, k_b, pose_b
        depth_o, k_o, pose_o = depth_a, k_a, pose_a
    if not (depth_t.valid_mask.any() or depth_o.valid_mask.any()):
        raise EmptyCloudError("no valid depth pixel in either view")
    rows, cols = grid_shape(k_t)
    occ = np.zeros((rows, cols, cfg.depth_bins))

    vt, ut = np.nonzero(depth_t.valid_mask)
    zt = depth_t.data[vt, ut]
    keep = (zt >= cfg.d_min) & (zt < cfg.d_max)
    if np.any(keep):
        occ[vt[keep] // 2, ut[keep] // 2, depth_bin_index(zt[keep], cfg)] = 1.0

    cloud = _cloud_from_view(depth_o, k_o, pose_o)
    if cloud.shape[0]:
        p = pose_t.inverse().transform(cloud)
        z = p[:, 2]
        keep = (z >= cfg.d_min) & (z < cfg.d_max)
        p, z = p[keep], z[keep]
        u = k_t.fx * p[:, 0] / z + k_t.cx
        v = k_t.fy * p[:, 1] / z + k_t.cy
        inside = (u >= 0.0) & (u < 2.0 * cols) & (v >= 0.0) & (v < 2.0 * rows)
        if np.any(inside):
            r = np.floor(v[inside] / 2.0).astype(np.intp)
            c = np.floor(u[inside] / 2.0).astype(np.intp)
            k = depth_bin_index(z[inside], cfg)
            occ[r, c, k] = 1.0
    if normalize:
        sums = occ.sum(axis=-1, keepdims=True)
        np.divide(occ, sums, out=occ, where=sums > 0)
    return OccupancyGrid(occ)


def estimate_occupancy(factors: OccupancyFactors) -> OccupancyGrid:
    """Softmax over depth bins of the channel-summed factor product.

    Adding a per-column constant to the view term does not change the
    result (softmax shift invariance).
    """
    logits = occupancy_logits(factors)
    return OccupancyGrid(softmax(logits, axis=-1))


def occupancy_logits(factors: OccupancyFactors) -> np.ndarray:
    """Pre-softmax logits, shape (rows, cols, D)."""
    return (factors.feature_term * factors.view_term).sum(axis=0)


def depth_softmax_jacobian(logits: np.ndarray) -> np.ndarray:
    """Analytic Jacobian of the per-column depth softmax.

    For logits (..., D) returns (..., D, D): d out_i / d logit_j.
    """
    return softmax_jacobian(logits)


def occupancy_loss(
    estimate: OccupancyGrid,
    ground_truth: OccupancyGrid,
    ignore_empty_columns: bool = False,
) -> float:
    """Mean absolute difference between the two grids.

    By default the mean runs over all rows*cols*D cells. With
    ignore_empty_columns=True, columns whose ground truth is all-zero
    (nothing observed along that ray) are excluded from the mean; if every
    column is empty the loss is defined as 0.
    """
    est, gt = estimate.values, ground_truth.values
    if est.shape != gt.shape:
        raise ShapeMismatchError(f"grid shapes disagree: {est.shape} vs {gt.shape}")
    diff = np.abs(est - gt)
    if not ignore_empty_columns:
        return float(diff.mean())
    mask = gt.sum(axis=-1) > 0
    if not mask.any():
        return 0.0
    return float(diff[mask].mean())
