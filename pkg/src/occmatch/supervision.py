"""Reprojection supervision: per-pixel visibility classes and GT coarse matches.

Every pixel of view A with known depth is carried into view B and compared
against B's rendered depth. The outcome partitions A's pixels into five
classes; patch-level aggregation of those classes yields the vv / vo / ov
ground-truth match lists that the coarse matcher and its losses consume.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional

import numpy as np

from .errors import EmptyDepthError
from .geometry import CameraIntrinsics, DepthMap, PixelPoint, PoseSE3


class PixelClass(IntEnum):
    """Visibility outcome of reprojecting one A pixel into view B."""

    COVISIBLE = 0
    OCCLUDED_IN_OTHER = 1
    OUT_OF_BOUNDS = 2
    INVALID_DEPTH = 3
    BEHIND_CAMERA = 4


@dataclass(frozen=True)
class OcclusionMargin:
    """Depth slack for the occlusion test: margin(d) = max(floor, relative * d).

    The floor absorbs sensor noise at close range; the relative term scales
    with distance. Defaults: 5 cm floor, 5 % relative.
    """

    floor: float = 0.05
    relative: float = 0.05

    def __post_init__(self) -> None:
        if self.floor <= 0 or self.relative < 0:
            raise ValueError(f"margin floor must be > 0 and slope >= 0, got {self}")

    def __call__(self, depth: np.ndarray | float) -> np.ndarray | float:
        return np.maximum(self.floor, self.relative * np.asarray(depth, dtype=np.float64))


@dataclass(frozen=True)
class PairStats:
    """Class counts and the derived pair-level scores for the A->B direction.

    occlusion_ratio and overlap_score are fractions of *all* pixels of A, so
    the five class fractions partition to exactly 1.
    """

    counts: dict[PixelClass, int]
    occlusion_ratio: float
    overlap_score: float

    @property
    def total(self) -> int:
        return sum(self.counts.values())


@dataclass(frozen=True)
class CoarseMatchSet:
    """Ground-truth patch matches between A and B at one patch stride.

    All pairs are (patch_index_a, patch_index_b), row-major per image grid:
      vv - A patch center covisible in B,
      vo - A patch center occluded behind B's surface,
      ov - the B->A occluded pairs with elements swapped back to (a, b).
    """

    patch_stride: int
    vv: list[tuple[int, int]]
    vo: list[tuple[int, int]]
    ov: list[tuple[int, int]]
    grid_a: tuple[int, int] = field(default=(0, 0))
    grid_b: tuple[int, int] = field(default=(0, 0))


def sample_depth_bilinear(depth: DepthMap, u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear depth lookup that excludes invalid (zero) neighbors.

    Valid neighbors are re-weighted to sum 1; a sample with no valid
    support reports ok = False. Coordinates must already lie within
    [0, W-1] x [0, H-1].
    """
    d = depth.data
    h, w = d.shape
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    x0 = np.floor(u).astype(np.intp)
    y0 = np.floor(v).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = u - x0
    fy = v - y0
    acc = np.zeros(u.shape, dtype=np.float64)
    wsum = np.zeros(u.shape, dtype=np.float64)
    for yy, xx, wt in (
        (y0, x0, (1.0 - fx) * (1.0 - fy)),
        (y0, x1, fx * (1.0 - fy)),
        (y1, x0, (1.0 - fx) * fy),
        (y1, x1, fx * fy),
    ):
        val = d[yy, xx]
        m = val > 0.0
        acc += wt * val * m
        wsum += wt * m
    ok = wsum > 1e-12
    out = np.zeros_like(acc)
    np.divide(acc, wsum, out=out, where=ok)
    return out, ok


def classify_points(
    u: np.ndarray,
    v: np.ndarray,
    depth_at: np.ndarray,
    depth_b: DepthMap,
    k_a: CameraIntrinsics,
    k_b: CameraIntrinsics,
    t_ba: PoseSE3,
    margin: OcclusionMargin = OcclusionMargin(),
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized core of the per-pixel classification.

    u, v: pixel coordinates in A; depth_at: A's depth at those pixels
    (0 = invalid). Returns (classes, uv_b, depth_in_b) where uv_b holds the
    reprojected continuous coordinates (NaN when the point never reaches
    B's image plane) and depth_in_b the point's z in B's frame.
    """
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    d = np.asarray(depth_at, dtype=np.float64).ravel()
    n = u.size
    cls = np.full(n, int(PixelClass.COVISIBLE), dtype=np.int8)
    uv_b = np.full((n, 2), np.nan)
    z_b = np.full(n, np.nan)

    valid = np.flatnonzero(d > 0.0)
    cls[d <= 0.0] = PixelClass.INVALID_DEPTH
    if valid.size == 0:
        return cls, uv_b, z_b

    # Unproject in A, move to B's frame.
    dv = d[valid]
    p_a = np.column_stack(
        [(u[valid] - k_a.cx) / k_a.fx * dv, (v[valid] - k_a.cy) / k_a.fy * dv, dv]
    )
    p_b = t_ba.transform(p_a)
    behind = p_b[:, 2] <= 0.0
    cls[valid[behind]] = PixelClass.BEHIND_CAMERA

    front = valid[~behind]
    p_b = p_b[~behind]
    ub = k_b.fx * p_b[:, 0] / p_b[:, 2] + k_b.cx
    vb = k_b.fy * p_b[:, 1] / p_b[:, 2] + k_b.cy
    uv_b[front, 0] = ub
    uv_b[front, 1] = vb
    z_b[front] = p_b[:, 2]

    inside = (ub >= 0.0) & (ub <= k_b.width - 1.0) & (vb >= 0.0) & (vb <= k_b.height - 1.0)
    cls[front[~inside]] = PixelClass.OUT_OF_BOUNDS

    hit = front[inside]
    sampled, ok = sample_depth_bilinear(depth_b, ub[inside], vb[inside])
    # Landing on invalid B depth counts as leaving the map.
    cls[hit[~ok]] = PixelClass.OUT_OF_BOUNDS
    occluded = ok & (z_b[hit] - sampled > margin(sampled))
    cls[hit[occluded]] = PixelClass.OCCLUDED_IN_OTHER
    return cls, uv_b, z_b


def classify_pixel(
    px: PixelPoint,
    depth_a: DepthMap,
    depth_b: DepthMap,
    k_a: CameraIntrinsics,
    k_b: CameraIntrinsics,
    t_ba: PoseSE3,
    margin: OcclusionMargin = OcclusionMargin(),
) -> PixelClass:
    """Classify a single integer pixel of view A."""
    u, v = int(px.u), int(px.v)
    cls, _, _ = classify_points(
        np.array([float(u)]), np.array([float(v)]), np.array([depth_a.at(u, v)]),
        depth_b, k_a, k_b, t_ba, margin,
    )
    return PixelClass(int(cls[0]))


def pair_stats(
    depth_a: DepthMap,
    depth_b: DepthMap,
    k_a: CameraIntrinsics,
    k_b: CameraIntrinsics,
    t_ba: PoseSE3,
    margin: OcclusionMargin = OcclusionMargin(),
) -> PairStats:
    """Classify every pixel of A and derive occlusion ratio / overlap score."""
    if not depth_a.valid_mask.any():
        raise EmptyDepthError("view A has no valid depth pixel")
    h, w = depth_a.data.shape
    vv, uu = np.mgrid[0:h, 0:w]
    cls, _, _ = classify_points(
        uu.astype(np.float64), vv.astype(np.float64), depth_a.data,
        depth_b, k_a, k_b, t_ba, margin,
    )
    counts = {c: int(np.count_nonzero(cls == c)) for c in PixelClass}
    total = h * w
    occluded = counts[PixelClass.OCCLUDED_IN_OTHER]
    covisible = counts[PixelClass.COVISIBLE]
    return PairStats(
        counts=counts,
        occlusion_ratio=occluded / total,
        overlap_score=(covisible + occluded) / total,
    )


def patch_grid(height: int, width: int, stride: int) -> tuple[int, int]:
    """Patch-grid shape (rows, cols); partial edge patches are kept."""
    return (-(-height // stride), -(-width // stride))


def patch_centers(height: int, width: int, stride: int) -> tuple[np.ndarray, np.ndarray]:
    """Integer center pixel (u, v) of every patch, row-major.

    A partial edge patch uses the center of its actual extent.
    """
    rows, cols = patch_grid(height, width, stride)
    pr = np.repeat(np.arange(rows), cols)
    pc = np.tile(np.arange(cols), rows)
    ph = np.minimum(stride, height - pr * stride)
    pw = np.minimum(stride, width - pc * stride)
    return (pc * stride + pw // 2).astype(np.float64), (pr * stride + ph // 2).astype(np.float64)


def coarse_match_ground_truth(
    depth_a: DepthMap,
    depth_b: DepthMap,
    k_a: CameraIntrinsics,
    k_b: CameraIntrinsics,
    t_ba: PoseSE3,
    t_ab: Optional[PoseSE3] = None,
    margin: OcclusionMargin = OcclusionMargin(),
    patch_stride: int = 8,
) -> CoarseMatchSet:
    """Patch-level GT matches; each patch is classified by its center pixel.

    vv and vo come from the A->B direction; ov is the B->A vo list with the
    pair elements swapped, so all three lists read (patch_a, patch_b).
    """
    if not depth_a.valid_mask.any():
        raise EmptyDepthError("view A has no valid depth pixel")
    if t_ab is None:
        t_ab = t_ba.inverse()

    grid_a = patch_grid(depth_a.height, depth_a.width, patch_stride)
    grid_b = patch_grid(depth_b.height, depth_b.width, patch_stride)

    def one_direction(
        d_src: DepthMap, d_dst: DepthMap, k_src, k_dst, t, grid_dst
    ) -> tuple[list[tuple[int, int]], list[tuple[int, int]]]:
        cu, cv = patch_centers(d_src.height, d_src.width, patch_stride)
        d_at = d_src.data[cv.astype(np.intp), cu.astype(np.intp)]
        cls, uv, _ = classify_points(cu, cv, d_at, d_dst, k_src, k_dst, t, margin)
        tgt_col = np.floor(uv[:, 0] / patch_stride)
        tgt_row = np.floor(uv[:, 1] / patch_stride)
        covis, occl = [], []
        for p in np.flatnonzero((cls == PixelClass.COVISIBLE) | (cls == PixelClass.OCCLUDED_IN_OTHER)):
            tgt = int(tgt_row[p]) * grid_dst[1] + int(tgt_col[p])
            (covis if cls[p] == PixelClass.COVISIBLE else occl).append((int(p), tgt))
        return covis, occl

    vv, vo = one_direction(depth_a, depth_b, k_a, k_b, t_ba, grid_b)
    _, ov_rev = one_direction(depth_b, depth_a, k_b, k_a, t_ab, grid_a)
    ov = [(a, b) for (b, a) in ov_rev]
    return CoarseMatchSet(
        patch_stride=patch_stride, vv=vv, vo=vo, ov=ov, grid_a=grid_a, grid_b=grid_b
    )
