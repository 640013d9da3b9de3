"""Synthetic scenes with exact geometry: depth rendering, analytic
visibility classes, and matched feature grids.

Scenes are unions of infinite planes and axis-aligned boxes, ray-cast per
pixel. Because intersections are computed in closed form, the generator
doubles as the independent oracle for the reprojection-supervision module:
its class maps come from casting the reprojected point against the *scene*,
never against a rendered depth raster.

Feature grids encode each cell's world point with a fixed bank of random
trigonometric frequencies and a per-texture sign pattern, so cells that see
the same surface point get near-identical descriptors across views while
distant points and different textures decorrelate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .geometry import CameraIntrinsics, DepthMap, PoseSE3
from .matching import FeatureGrid
from .supervision import PixelClass

_EPS_HIT = 1e-9


@dataclass(frozen=True)
class Plane:
    """Infinite plane through `point` with unit-insensitive `normal`."""

    point: tuple[float, float, float]
    normal: tuple[float, float, float]
    texture: int = 0


@dataclass(frozen=True)
class Box:
    """Axis-aligned box spanning [box_min, box_max] per axis."""

    box_min: tuple[float, float, float]
    box_max: tuple[float, float, float]
    texture: int = 0


Primitive = Union[Plane, Box]


@dataclass(frozen=True)
class SceneSpec:
    primitives: tuple[Primitive, ...]

    def __post_init__(self) -> None:
        if not self.primitives:
            raise ValueError("scene needs at least one primitive")
        object.__setattr__(self, "primitives", tuple(self.primitives))

    def textures(self) -> list[int]:
        return [p.texture for p in self.primitives]


def _plane_hits(p: Plane, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    n = np.asarray(p.normal, dtype=np.float64)
    denom = dirs @ n
    with np.errstate(divide="ignore", invalid="ignore"):
        s = ((np.asarray(p.point) - origin) @ n) / denom
    s = np.where(np.abs(denom) > 1e-12, s, np.inf)
    return np.where(s > _EPS_HIT, s, np.inf)


def _box_hits(b: Box, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    lo = np.full(dirs.shape[0], -np.inf)
    hi = np.full(dirs.shape[0], np.inf)
    for axis in range(3):
        d = dirs[:, axis]
        zero = d == 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (b.box_min[axis] - origin[axis]) / d
            t2 = (b.box_max[axis] - origin[axis]) / d
        inside = (origin[axis] >= b.box_min[axis]) & (origin[axis] <= b.box_max[axis])
        lo_a = np.where(zero, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
        hi_a = np.where(zero, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
        lo = np.maximum(lo, lo_a)
        hi = np.minimum(hi, hi_a)
    s = np.where(lo > _EPS_HIT, lo, hi)  # fall back to the exit face if inside
    hit = (lo <= hi) & (hi > _EPS_HIT)
    return np.where(hit & (s > _EPS_HIT), s, np.inf)


def first_hit(
    scene: SceneSpec, origin: np.ndarray, dirs: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Nearest intersection along each ray.

    Returns (s, prim_index) with s the ray parameter (inf and -1 where
    nothing is hit).
    """
    origin = np.asarray(origin, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    best = np.full(dirs.shape[0], np.inf)
    idx = np.full(dirs.shape[0], -1, dtype=np.intp)
    for i, prim in enumerate(scene.primitives):
        s = _plane_hits(prim, origin, dirs) if isinstance(prim, Plane) else _box_hits(prim, origin, dirs)
        closer = s < best
        best = np.where(closer, s, best)
        idx = np.where(closer, i, idx)
    return best, idx


def _pixel_dirs(k: CameraIntrinsics, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Camera-frame ray directions with z = 1, so the ray parameter equals
    the camera depth."""
    return np.column_stack(
        [(u - k.cx) / k.fx, (v - k.cy) / k.fy, np.ones(u.size)]
    )


def _cast_pixels(
    scene: SceneSpec, pose: PoseSE3, k: CameraIntrinsics, u: np.ndarray, v: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Ray-cast through continuous pixel coordinates.

    Returns (depth, prim_index, world_points); depth is 0 where no surface
    is hit.
    """
    dirs = _pixel_dirs(k, u, v) @ pose.R.T
    s, idx = first_hit(scene, pose.t, dirs)
    hit = idx >= 0
    depth = np.where(hit, s, 0.0)
    world = pose.t + np.where(hit, s, 0.0)[:, None] * dirs
    return depth, idx, world


def render_depth(scene: SceneSpec, pose: PoseSE3, k: CameraIntrinsics) -> DepthMap:
    """Per-pixel camera depth of the nearest surface; 0 where the ray
    escapes the scene."""
    vv, uu = np.mgrid[0 : k.height, 0 : k.width].astype(np.float64)
    depth, _, _ = _cast_pixels(scene, pose, k, uu.ravel(), vv.ravel())
    return DepthMap(depth.reshape(k.height, k.width))


def occluded_by_scene(
    scene: SceneSpec, viewpoint: np.ndarray, targets: np.ndarray, rel_tol: float = 1e-6
) -> np.ndarray:
    """True where the segment viewpoint -> target hits a surface strictly
    before the target point (the point itself registers at parameter 1)."""
    dirs = np.asarray(targets, dtype=np.float64) - np.asarray(viewpoint, dtype=np.float64)
    s, idx = first_hit(scene, viewpoint, dirs)
    return (idx >= 0) & (s < 1.0 - rel_tol)


def analytic_classes(
    scene: SceneSpec,
    depth_src: DepthMap,
    pose_src: PoseSE3,
    pose_dst: PoseSE3,
    k_src: CameraIntrinsics,
    k_dst: CameraIntrinsics,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact visibility classes of every source pixel w.r.t. the other view.

    Occlusion is decided by ray-casting the reprojected point against the
    scene itself, independent of any destination depth raster. Returns
    (classes (H, W), uv_dst (H, W, 2), depth_dst (H, W)).
    """
    h, w = depth_src.data.shape
    vv, uu = np.mgrid[0:h, 0:w].astype(np.float64)
    u, v, d = uu.ravel(), vv.ravel(), depth_src.data.ravel()
    cls = np.full(u.size, int(PixelClass.COVISIBLE), dtype=np.int8)
    uv = np.full((u.size, 2), np.nan)
    zb = np.full(u.size, np.nan)

    valid = np.flatnonzero(d > 0)
    cls[d <= 0] = PixelClass.INVALID_DEPTH
    if valid.size:
        dv = d[valid]
        p_src = np.column_stack(
            [(u[valid] - k_src.cx) / k_src.fx * dv, (v[valid] - k_src.cy) / k_src.fy * dv, dv]
        )
        world = pose_src.transform(p_src)
        p_dst = pose_dst.inverse().transform(world)
        behind = p_dst[:, 2] <= 0
        cls[valid[behind]] = PixelClass.BEHIND_CAMERA

        front = np.flatnonzero(~behind)  # positions within the valid subset
        pd = p_dst[front]
        ub = k_dst.fx * pd[:, 0] / pd[:, 2] + k_dst.cx
        vb = k_dst.fy * pd[:, 1] / pd[:, 2] + k_dst.cy
        uv[valid[front], 0], uv[valid[front], 1] = ub, vb
        zb[valid[front]] = pd[:, 2]
        inside = (ub >= 0) & (ub <= k_dst.width - 1) & (vb >= 0) & (vb <= k_dst.height - 1)
        cls[valid[front[~inside]]] = PixelClass.OUT_OF_BOUNDS

        vis = front[inside]
        occ = occluded_by_scene(scene, pose_dst.t, world[vis])
        cls[valid[vis[occ]]] = PixelClass.OCCLUDED_IN_OTHER

    return (
        cls.reshape(h, w),
        uv.reshape(h, w, 2),
        zb.reshape(h, w),
    )


def analytic_stats(classes: np.ndarray) -> tuple[float, float]:
    """(occlusion_ratio, overlap_score) over all pixels of a class map."""
    total = classes.size
    occ = int(np.count_nonzero(classes == PixelClass.OCCLUDED_IN_OTHER))
    cov = int(np.count_nonzero(classes == PixelClass.COVISIBLE))
    return occ / total, (occ + cov) / total


@dataclass(frozen=True)
class FeatureParams:
    """Controls of the synthetic descriptor bank.

    Kernel length scales are expressed in units of one grid cell's world
    footprint at the pair's median depth; channels must be even (cos/sin
    pairs).
    """

    channels: int = 128
    coarse_stride: int = 8
    fine_stride: int = 2
    coarse_scale_cells: float = 0.5
    fine_scale_cells: float = 1.0
    freq_seed: int = 61

    def __post_init__(self) -> None:
        if self.channels < 2 or self.channels % 2:
            raise ValueError(f"channels must be even and >= 2, got {self.channels}")
        if self.coarse_stride % self.fine_stride:
            raise ValueError("coarse stride must be a multiple of the fine stride")


def _texture_signs(texture: int, m: int) -> np.ndarray:
    rng = np.random.default_rng([97, texture])
    return np.where(rng.random(m) < 0.5, -1.0, 1.0)


def _grid_centers(k: CameraIntrinsics, stride: int) -> tuple[np.ndarray, np.ndarray, tuple[int, int]]:
    rows = -(-k.height // stride)
    cols = -(-k.width // stride)
    rr = np.repeat(np.arange(rows), cols).astype(np.float64)
    cc = np.tile(np.arange(cols), rows).astype(np.float64)
    half = (stride - 1) / 2.0
    return cc * stride + half, rr * stride + half, (rows, cols)


def _feature_grid(
    scene: SceneSpec,
    pose: PoseSE3,
    k: CameraIntrinsics,
    stride: int,
    omegas: np.ndarray,
    fallback_seed: int,
) -> FeatureGrid:
    """Unit descriptors of each cell's world point (cos/sin of frequency
    projections, per-texture sign flips); unseen cells get decorrelated
    random unit vectors."""
    u, v, (rows, cols) = _grid_centers(k, stride)
    depth, prim, world = _cast_pixels(scene, pose, k, u, v)
    m = omegas.shape[0]
    n = u.size
    feats = np.empty((2 * m, n))

    hit = prim >= 0
    phase = world[hit] @ omegas.T
    signs = np.ones((int(hit.sum()), m))
    textures = np.array([p.texture for p in scene.primitives])
    for tex in np.unique(textures):
        tex_cells = np.isin(prim[hit], np.flatnonzero(textures == tex))
        if tex_cells.any():
            signs[tex_cells] = _texture_signs(int(tex), m)
    feats[:m, hit] = (signs * np.cos(phase)).T
    feats[m:, hit] = (signs * np.sin(phase)).T

    miss = ~hit
    if miss.any():
        rng = np.random.default_rng([131, fallback_seed])
        rnd = rng.normal(size=(2 * m, int(miss.sum())))
        feats[:, miss] = rnd / np.linalg.norm(rnd, axis=0, keepdims=True) * math.sqrt(m)

    feats /= math.sqrt(m)  # exact unit norm: cos^2 + sin^2 sums to m
    return FeatureGrid(feats.reshape(2 * m, rows, cols), stride=stride)


@dataclass(frozen=True)
class SyntheticPair:
    """A rendered two-view pair with its exact ground truth."""

    scene: SceneSpec
    k: CameraIntrinsics
    pose_a: PoseSE3
    pose_b: PoseSE3
    depth_a: DepthMap
    depth_b: DepthMap
    classes_a: np.ndarray = field(repr=False)  # A->B visibility classes
    classes_b: np.ndarray = field(repr=False)
    reproj_a: np.ndarray = field(repr=False)  # continuous (u, v) in B per A pixel
    reproj_b: np.ndarray = field(repr=False)
    coarse_a: FeatureGrid = field(repr=False)
    coarse_b: FeatureGrid = field(repr=False)
    fine_a: FeatureGrid = field(repr=False)
    fine_b: FeatureGrid = field(repr=False)

    @property
    def stats_a(self) -> tuple[float, float]:
        return analytic_stats(self.classes_a)

    @property
    def stats_b(self) -> tuple[float, float]:
        return analytic_stats(self.classes_b)


def make_pair(
    scene: SceneSpec,
    pose_a: PoseSE3,
    pose_b: PoseSE3,
    k: CameraIntrinsics,
    params: FeatureParams = FeatureParams(),
) -> SyntheticPair:
    """Render both views and assemble depths, oracle class maps, and
    matched feature grids at the coarse and fine strides."""
    depth_a = render_depth(scene, pose_a, k)
    depth_b = render_depth(scene, pose_b, k)
    classes_a, reproj_a, _ = analytic_classes(scene, depth_a, pose_a, pose_b, k, k)
    classes_b, reproj_b, _ = analytic_classes(scene, depth_b, pose_b, pose_a, k, k)

    valid = np.concatenate([depth_a.data[depth_a.valid_mask], depth_b.data[depth_b.valid_mask]])
    med = float(np.median(valid)) if valid.size else 1.0
    m = params.channels // 2
    rng = np.random.default_rng(params.freq_seed)
    base_c = rng.normal(size=(m, 3))
    base_f = rng.normal(size=(m, 3))
    scale_c = params.coarse_scale_cells * params.coarse_stride * med / k.fx
    scale_f = params.fine_scale_cells * params.fine_stride * med / k.fx

    grids = {}
    for role, (pose, stride, base, scale) in enumerate(
        [
            (pose_a, params.coarse_stride, base_c, scale_c),
            (pose_b, params.coarse_stride, base_c, scale_c),
            (pose_a, params.fine_stride, base_f, scale_f),
            (pose_b, params.fine_stride, base_f, scale_f),
        ]
    ):
        grids[role] = _feature_grid(scene, pose, k, stride, base / scale, fallback_seed=role)

    return SyntheticPair(
        scene=scene,
        k=k,
        pose_a=pose_a,
        pose_b=pose_b,
        depth_a=depth_a,
        depth_b=depth_b,
        classes_a=classes_a,
        classes_b=classes_b,
        reproj_a=reproj_a,
        reproj_b=reproj_b,
        coarse_a=grids[0],
        coarse_b=grids[1],
        fine_a=grids[2],
        fine_b=grids[3],
    )


def _rot_y(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_z(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Fixture:
    """A named scene + camera pair with recommended matcher settings."""

    name: str
    scene: SceneSpec
    pose_a: PoseSE3
    pose_b: PoseSE3
    k: CameraIntrinsics
    match_overrides: dict


FIXTURE_NAMES = ("identity", "rotation", "stereo", "two_plane", "box_roll30")

# Shared fixture geometry: background plane 2 m ahead, occluders 1 m ahead,
# 0.25 m baseline. At the default 192x144 / f=128 the baseline gives exactly
# 16 px (two patches) of background disparity and 32 px on the occluder.
# Every surface depth is a power-of-two multiple of the baseline, so pure-x
# translations reproject pixel centers onto pixel centers exactly.
_BG = Plane(point=(0.0, 0.0, 2.0), normal=(0.0, 0.0, 1.0), texture=0)
_BASELINE = 0.25
# Sharp softmax temperatures suit the synthetic descriptors: their matched
# inner products sit far above the sampling noise floor, and a wide fine
# window keeps the sub-pixel expectation stable under 30 degree roll.
_SHARP = {"temperature": 0.02, "fine_temperature": 0.05, "fine_window": 7}


def make_fixture(name: str, width: int = 192, height: int = 144) -> Fixture:
    """Instantiate one of the named fixtures at the requested image size.

    The focal length scales with the width so the field of view (and the
    world geometry) stays put.
    """
    f = 128.0 * width / 192.0
    k = CameraIntrinsics(f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height)
    eye = PoseSE3.identity()
    shift = PoseSE3(np.eye(3), np.array([_BASELINE, 0.0, 0.0]))

    if name == "identity":
        return Fixture(name, SceneSpec((_BG,)), eye, eye, k, dict(_SHARP))
    if name == "rotation":
        # Pure rotation: ~16 px yaw shift at the principal point, no baseline.
        yaw = math.degrees(math.atan(16.0 / 128.0))
        return Fixture(
            name, SceneSpec((_BG,)), eye, PoseSE3(_rot_y(yaw), np.zeros(3)), k, dict(_SHARP)
        )
    if name == "stereo":
        # Two depth layers (16 px and 8 px disparity). A single plane would
        # leave the essential matrix underdetermined, so the backdrop at 4 m
        # shows through to the right of the slab edge at x = 0.25.
        slab = Box((-1.6, -1.2, 2.0), (0.25, 1.2, 2.02), texture=0)
        backdrop = Plane(point=(0.0, 0.0, 4.0), normal=(0.0, 0.0, 1.0), texture=2)
        return Fixture(name, SceneSpec((slab, backdrop)), eye, shift, k, dict(_SHARP))
    if name == "two_plane":
        occluder = Box((0.0, -0.75, 1.0), (0.4, 0.75, 1.02), texture=1)
        return Fixture(name, SceneSpec((_BG, occluder)), eye, shift, k, dict(_SHARP))
    if name == "box_roll30":
        occluder = Box((0.0, -0.25, 1.0), (0.35, 0.25, 1.02), texture=1)
        pose_b = PoseSE3(_rot_z(30.0), np.array([_BASELINE, 0.0, 0.0]))
        return Fixture(name, SceneSpec((_BG, occluder)), eye, pose_b, k, dict(_SHARP))
    raise ValueError(f"unknown fixture {name!r}; choose from {FIXTURE_NAMES}")
