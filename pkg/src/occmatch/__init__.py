"""Occlusion-aware two-view matching on synthetic ray-cast scenes.

The package splits into geometry/supervision (exact reprojection ground
truth), occupancy (per-ray depth distributions), matching (rotation-aligned
dual-softmax correspondence with coarse-to-fine refinement), pose_eval
(essential-matrix RANSAC and AUC scoring), synth (the fixture scenes), and
formats/cli (the on-disk pipeline).
"""

from .errors import OccMatchError
from .geometry import (
    CameraIntrinsics,
    DepthMap,
    PixelPoint,
    PoseSE3,
    project,
    relative_pose,
    reproject,
    unproject,
)
from .matching import (
    FeatureGrid,
    Match,
    MatchingConfig,
    MatchResult,
    coarse_loss,
    dual_softmax,
    dual_softmax_jacobian,
    extract_matches,
    fine_loss,
    gumbel_select,
    match_pair,
    neighborhood_mean,
    refine_fine_match,
    rotation_align,
    score_matrix,
    total_loss,
)
from .occupancy import (
    OccupancyConfig,
    OccupancyFactors,
    OccupancyGrid,
    build_ground_truth_occupancy,
    depth_softmax_jacobian,
    estimate_occupancy,
    occupancy_loss,
)
from .pose_eval import (
    PoseErrorReport,
    RansacConfig,
    auc,
    cumulative_occlusion_curve,
    essential_from_matches,
    essential_from_pose,
    pose_error,
    sampson_distance,
)
from .supervision import (
    CoarseMatchSet,
    OcclusionMargin,
    PairStats,
    PixelClass,
    classify_pixel,
    coarse_match_ground_truth,
    pair_stats,
)
from .synth import (
    FIXTURE_NAMES,
    Box,
    FeatureParams,
    Plane,
    SceneSpec,
    SyntheticPair,
    make_fixture,
    make_pair,
    render_depth,
)

__version__ = "0.1.0"

__all__ = [
    "OccMatchError",
    "CameraIntrinsics", "DepthMap", "PixelPoint", "PoseSE3",
    "project", "unproject", "relative_pose", "reproject",
    "PixelClass", "OcclusionMargin", "PairStats", "CoarseMatchSet",
    "classify_pixel", "pair_stats", "coarse_match_ground_truth",
    "OccupancyConfig", "OccupancyGrid", "OccupancyFactors",
    "build_ground_truth_occupancy", "estimate_occupancy",
    "depth_softmax_jacobian", "occupancy_loss",
    "FeatureGrid", "Match", "MatchResult", "MatchingConfig",
    "neighborhood_mean", "rotation_align", "score_matrix", "dual_softmax",
    "dual_softmax_jacobian", "gumbel_select", "extract_matches",
    "refine_fine_match", "coarse_loss", "fine_loss", "total_loss",
    "match_pair",
    "RansacConfig", "PoseErrorReport", "essential_from_pose",
    "essential_from_matches", "sampson_distance", "pose_error", "auc",
    "cumulative_occlusion_curve",
    "SceneSpec", "Plane", "Box", "FeatureParams", "SyntheticPair",
    "FIXTURE_NAMES", "render_depth", "make_pair", "make_fixture",
    "__version__",
]
