"""Coarse-to-fine feature matching with rotation-aligned descriptors.

Coarse feature grids are smoothed by a 5-tap neighborhood average whose four
off-center taps can be rotated by an angle theta (bilinear resampling in
index space, replicate padding). Scores are temperature-scaled inner
products, confidences come from a dual softmax, and one of the candidate
rotation branches (0/0, theta/0, 0/theta) is picked per entry by gumbel
sampling. Matches above threshold are refined to sub-pixel points with an
expectation over a local fine-feature correlation window.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    ChannelMismatchError,
    DegenerateHeatmapError,
    EmptyCandidatesError,
    EmptyGroundTruthError,
    LengthMismatchError,
    ShapeMismatchError,
    UnknownAngleError,
)
from .geometry import PixelPoint
from .numerics import bilinear_sample, gumbel_noise, softmax
from .supervision import CoarseMatchSet

_LOG_CLAMP = 1e-12


@dataclass(frozen=True)
class FeatureGrid:
    """Dense per-cell descriptors, values (C, h, w); each cell spans
    `stride` x `stride` pixels."""

    values: np.ndarray = field(repr=False)
    stride: int = 8

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise ValueError(f"feature values must be (C, h, w), got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("feature values must be finite")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        object.__setattr__(self, "values", v)

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.values.shape[1], self.values.shape[2]


@dataclass(frozen=True)
class MatchingConfig:
    """Knobs of the coarse matcher and its losses.

    temperature scales the inner-product scores (Lo-style dual softmax);
    angles is the candidate rotation set in degrees, 0 must be readable as
    the un-rotated branch. Loss weights lambda1..lambda4 follow the
    coarse/fine/occupancy composition defaults.
    """

    temperature: float = 0.1
    angles: tuple[float, ...] = (0.0, 30.0)
    gumbel_temperature: float = 1.0
    gumbel_hard: bool = True
    gumbel_granularity: str = "entry"
    match_threshold: float = 0.2
    mutual: bool = True
    fine_window: int = 5
    fine_temperature: float = 0.25
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    lambda4: float = 0.1

    def __post_init__(self) -> None:
        if self.temperature <= 0 or self.gumbel_temperature <= 0 or self.fine_temperature <= 0:
            raise ValueError("temperatures must be positive")
        if not self.angles or not all(math.isfinite(a) for a in self.angles):
            raise UnknownAngleError(f"angle set must be finite and non-empty, got {self.angles}")
        if not 0.0 <= self.match_threshold <= 1.0:
            raise ValueError(f"match_threshold must lie in [0, 1], got {self.match_threshold}")
        if self.fine_window < 1 or self.fine_window % 2 == 0:
            raise ValueError(f"fine_window must be odd and positive, got {self.fine_window}")
        if self.gumbel_granularity not in ("entry", "matrix"):
            raise ValueError(f"unknown gumbel granularity {self.gumbel_granularity!r}")
        if min(self.lambda1, self.lambda2, self.lambda3, self.lambda4) < 0:
            raise ValueError("loss weights must be non-negative")

    def branches(self) -> list[tuple[float, float]]:
        """Rotation pairs (theta_a, theta_b): un-rotated plus one-sided
        rotations for every non-zero configured angle. Rotating both views
        by the same angle would be redundant with (0, 0)."""
        out = [(0.0, 0.0)]
        for a in self.angles:
            if a != 0.0:
                out.append((a, 0.0))
                out.append((0.0, a))
        return out


@dataclass
class Match:
    """One extracted correspondence; points are filled by refinement."""

    patch_a: int
    patch_b: int
    confidence: float
    point_a: Optional[PixelPoint] = None
    point_b: Optional[PixelPoint] = None
    branch: Optional[tuple[float, float]] = None
    label: Optional[str] = None


def neighborhood_mean(f: FeatureGrid) -> FeatureGrid:
    """5-tap average of each cell with its 4 axis neighbors.

    Out-of-grid neighbors replicate the border cell, so a border tap
    degenerates to the center value.
    """
    v = f.values
    padded = np.pad(v, ((0, 0), (1, 1), (1, 1)), mode="edge")
    out = (
        padded[:, 1:-1, 1:-1]
        + padded[:, :-2, 1:-1]
        + padded[:, 2:, 1:-1]
        + padded[:, 1:-1, :-2]
        + padded[:, 1:-1, 2:]
    ) / 5.0
    return FeatureGrid(out, stride=f.stride)


def rotation_align(f: FeatureGrid, theta_deg: float) -> FeatureGrid:
    """5-tap average with the four off-center taps rotated by theta.

    Tap k (k = 0..3) samples the grid bilinearly at
    (i + cos(theta + k*pi/2), j + sin(theta + k*pi/2)); replicate padding
    at the borders. theta = 0 reproduces neighborhood_mean; cell indices
    are left untouched, only the sampled content rotates.
    """
    if not math.isfinite(theta_deg):
        raise UnknownAngleError(f"rotation angle must be finite, got {theta_deg}")
    v = f.values
    _, h, w = v.shape
    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
    theta = math.radians(theta_deg)
    acc = v.copy()
    for k in range(4):
        dr = math.cos(theta + k * math.pi / 2.0)
        dc = math.sin(theta + k * math.pi / 2.0)
        acc += bilinear_sample(v, rows + dr, cols + dc)
    return FeatureGrid(acc / 5.0, stride=f.stride)


def score_matrix(f_a: FeatureGrid, f_b: FeatureGrid, temperature: float) -> np.ndarray:
    """Temperature-scaled inner products of flattened (row-major) cells.

    Returns (n_a, n_b) with S[i, j] = <f_a_i, f_b_j> / temperature.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if f_a.channels != f_b.channels:
        raise ChannelMismatchError(
            f"channel counts disagree: {f_a.channels} vs {f_b.channels}"
        )
    fa = f_a.values.reshape(f_a.channels, -1)
    fb = f_b.values.reshape(f_b.channels, -1)
    return fa.T @ fb / temperature


def dual_softmax(s: np.ndarray) -> np.ndarray:
    """Elementwise product of row-wise and column-wise softmax of s.

    Entries lie strictly inside (0, 1) for finite s; adding a constant to
    all of s changes nothing.
    """
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2:
        raise ValueError(f"score matrix must be 2-d, got shape {s.shape}")
    return softmax(s, axis=1) * softmax(s, axis=0)


def dual_softmax_jacobian(s: np.ndarray) -> np.ndarray:
    """Analytic Jacobian of dual_softmax: out[i, j, k, l] = dP[i,j]/dS[k,l].

    With r/c the row/column softmax factors and P = r * c:
      dP[i,j]/dS[k,l] = 1[i=k] P[i,j] (1[j=l] - r[i,l])
                      + 1[j=l] P[i,j] (1[i=k] - c[k,j]).
    """
    s = np.asarray(s, dtype=np.float64)
    r = softmax(s, axis=1)
    c = softmax(s, axis=0)
    p = r * c
    na, nb = s.shape
    eye_a = np.eye(na)
    eye_b = np.eye(nb)
    term_row = eye_a[:, None, :, None] * p[:, :, None, None] * (
        eye_b[None, :, None, :] - r[:, None, None, :]
    )
    term_col = eye_b[None, :, None, :] * p[:, :, None, None] * (
        eye_a[:, None, :, None] - c.T[None, :, :, None]
    )
    return term_row + term_col


def gumbel_select(
    candidates: Sequence[np.ndarray],
    temperature: float,
    seed: int,
    hard: bool = False,
    granularity: str = "entry",
    return_choice: bool = False,
):
    """Stochastically blend (soft) or pick (hard) among candidate matrices.

    Per entry, candidate k gets logit log p_k plus Gumbel noise from the
    seeded generator; soft mode returns the softmax((logit)/T)-weighted sum,
    hard mode returns the argmax candidate's value (T plays no role then).
    granularity="matrix" draws one noise sample per candidate and scores
    whole matrices by their mean log-confidence. A single candidate passes
    through unchanged. With return_choice=True also returns the winning
    candidate index per entry.
    """
    if len(candidates) == 0:
        raise EmptyCandidatesError("no candidate matrices to select from")
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if granularity not in ("entry", "matrix"):
        raise ValueError(f"unknown granularity {granularity!r}")
    shapes = {np.asarray(c).shape for c in candidates}
    if len(shapes) != 1:
        raise ShapeMismatchError(f"candidate shapes disagree: {sorted(shapes)}")
    stack = np.stack([np.asarray(c, dtype=np.float64) for c in candidates])
    k = stack.shape[0]
    rng = np.random.default_rng(seed)
    logp = np.log(np.maximum(stack, 1e-300))

    if granularity == "entry":
        scores = logp + gumbel_noise(rng, stack.shape)
    else:
        flat_mean = logp.reshape(k, -1).mean(axis=1)
        per_matrix = flat_mean + gumbel_noise(rng, (k,))
        scores = np.broadcast_to(
            per_matrix.reshape((k,) + (1,) * (stack.ndim - 1)), stack.shape
        )

    choice = np.argmax(scores, axis=0)
    if hard:
        out = np.take_along_axis(stack, choice[None], axis=0)[0]
    else:
        w = softmax(scores / temperature, axis=0)
        out = (w * stack).sum(axis=0)
    if return_choice:
        return out, choice
    return out


def extract_matches(
    p_hat: np.ndarray, threshold: float, mutual: bool = True
) -> list[Match]:
    """Entries of the selected confidence matrix that qualify as matches.

    mutual=True keeps (i, j) only when j is the argmax of row i and i the
    argmax of column j (ties resolved to the smaller index, numpy argmax
    order). Output is sorted by (patch_a, patch_b).
    """
    p = np.asarray(p_hat, dtype=np.float64)
    matches: list[Match] = []
    if mutual:
        row_best = np.argmax(p, axis=1)
        col_best = np.argmax(p, axis=0)
        for i, j in enumerate(row_best):
            if col_best[j] == i and p[i, j] >= threshold:
                matches.append(Match(int(i), int(j), float(p[i, j])))
    else:
        for i, j in np.argwhere(p >= threshold):
            matches.append(Match(int(i), int(j), float(p[i, j])))
    return matches


def _class_nll(p_hat: np.ndarray, pairs: list[tuple[int, int]]) -> float:
    """-mean log confidence over one GT class; 0 for an empty class."""
    if not pairs:
        return 0.0
    idx = np.asarray(pairs, dtype=np.intp)
    vals = p_hat[idx[:, 0], idx[:, 1]]
    if np.any(vals <= _LOG_CLAMP):
        warnings.warn(
            "confidence at ground-truth entries clamped to 1e-12 in the coarse loss",
            RuntimeWarning,
            stacklevel=3,
        )
        vals = np.maximum(vals, _LOG_CLAMP)
    return float(-np.mean(np.log(vals)))


def coarse_loss(p_hat: np.ndarray, gt: CoarseMatchSet, lambda1: float = 1.0) -> float:
    """Negative log-likelihood of the GT matches under the confidences.

    L = nll(vv) + lambda1 * (nll(vo) + nll(ov)); empty classes contribute
    nothing, but all three empty is an error. Confidences at or below the
    1e-12 clamp raise a RuntimeWarning instead of propagating infinities.
    """
    if not (gt.vv or gt.vo or gt.ov):
        raise EmptyGroundTruthError("all ground-truth match classes are empty")
    p = np.asarray(p_hat, dtype=np.float64)
    return (
        _class_nll(p, gt.vv)
        + lambda1 * _class_nll(p, gt.vo)
        + lambda1 * _class_nll(p, gt.ov)
    )


def refine_fine_match(heatmap: np.ndarray, window_center: PixelPoint) -> PixelPoint:
    """Expectation-refined location from an odd square heatmap.

    The heatmap (already non-negative, e.g. a softmaxed correlation window)
    is normalized by its sum; the returned point is window_center plus the
    expected (du, dv) offset, in the same units as one heatmap cell.
    """
    h = np.asarray(heatmap, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] != h.shape[1] or h.shape[0] % 2 == 0:
        raise DegenerateHeatmapError(f"heatmap must be odd square, got shape {h.shape}")
    if np.any(h < 0):
        raise DegenerateHeatmapError("heatmap entries must be non-negative")
    total = h.sum()
    if not total > 0:
        raise DegenerateHeatmapError("heatmap mass must be positive")
    half = h.shape[0] // 2
    offsets = np.arange(-half, half + 1, dtype=np.float64)
    w = h / total
    du = float((w.sum(axis=0) * offsets).sum())
    dv = float((w.sum(axis=1) * offsets).sum())
    return PixelPoint(window_center.u + du, window_center.v + dv)


def fine_loss(
    predicted: Sequence[PixelPoint | tuple[float, float]],
    expected: Sequence[PixelPoint | tuple[float, float]],
    labels: Sequence[str],
    lambda2: float = 1.0,
) -> float:
    """Mean squared pixel distance per match class, combined with weights
    1 / lambda2 / lambda2 for vv / vo / ov. Empty classes contribute 0."""
    if not (len(predicted) == len(expected) == len(labels)):
        raise LengthMismatchError(
            f"got {len(predicted)} predictions, {len(expected)} targets, {len(labels)} labels"
        )
    sums = {"vv": 0.0, "vo": 0.0, "ov": 0.0}
    counts = {"vv": 0, "vo": 0, "ov": 0}
    for p, e, lab in zip(predicted, expected, labels):
        if lab not in sums:
            raise ValueError(f"unknown match label {lab!r}")
        d = np.asarray(p, dtype=np.float64) - np.asarray(e, dtype=np.float64)
        sums[lab] += float(d @ d)
        counts[lab] += 1
    mean = {c: sums[c] / counts[c] if counts[c] else 0.0 for c in sums}
    return mean["vv"] + lambda2 * (mean["vo"] + mean["ov"])


def total_loss(
    coarse: float, fine: float, occupancy: float,
    lambda3: float = 1.0, lambda4: float = 0.1,
) -> float:
    """Scalar training objective: coarse + lambda3*fine + lambda4*occupancy."""
    return coarse + lambda3 * fine + lambda4 * occupancy


@dataclass
class MatchResult:
    """Everything cmd-level consumers need from one matching run."""

    matches: list[Match]
    confidence: np.ndarray
    branch_choice: np.ndarray
    branches: list[tuple[float, float]]
    grid_a: tuple[int, int]
    grid_b: tuple[int, int]


def _unit_features(f: FeatureGrid) -> FeatureGrid:
    norms = np.linalg.norm(f.values, axis=0, keepdims=True)
    return FeatureGrid(f.values / np.maximum(norms, 1e-12), stride=f.stride)


def _anchor_cell(patch_row: int, patch_col: int, ratio: int) -> tuple[int, int]:
    # Fine cell holding the patch's integer center pixel.
    return patch_row * ratio + ratio // 2, patch_col * ratio + ratio // 2


def _cell_center_px(cell: float, stride: int) -> float:
    return stride * cell + (stride - 1) / 2.0


def match_pair(
    coarse_a: FeatureGrid,
    coarse_b: FeatureGrid,
    fine_a: Optional[FeatureGrid] = None,
    fine_b: Optional[FeatureGrid] = None,
    cfg: MatchingConfig = MatchingConfig(),
    seed: int = 0,
) -> MatchResult:
    """Full coarse-to-fine matching of one image pair.

    Builds the candidate confidence matrices for every rotation branch,
    gumbel-selects among them, extracts matches, and (when fine grids are
    provided) refines each match to sub-pixel points: the A point anchors
    at the matched patch's central fine cell, the B point comes from the
    expectation over a softmaxed fine-correlation window.
    """
    candidates = []
    branches = cfg.branches()
    for theta_a, theta_b in branches:
        # Re-normalize after averaging: the 5-tap mean shrinks vector norms
        # unevenly, and the scores should compare directions only.
        bar_a = _unit_features(rotation_align(coarse_a, theta_a))
        bar_b = _unit_features(rotation_align(coarse_b, theta_b))
        candidates.append(dual_softmax(score_matrix(bar_a, bar_b, cfg.temperature)))
    p_hat, choice = gumbel_select(
        candidates,
        cfg.gumbel_temperature,
        seed,
        hard=cfg.gumbel_hard,
        granularity=cfg.gumbel_granularity,
        return_choice=True,
    )
    matches = extract_matches(p_hat, cfg.match_threshold, cfg.mutual)
    ga, gb = coarse_a.grid_shape, coarse_b.grid_shape
    for m in matches:
        m.branch = branches[int(choice[m.patch_a, m.patch_b])]

    if fine_a is not None and fine_b is not None:
        if coarse_a.stride % fine_a.stride or coarse_b.stride % fine_b.stride:
            raise ValueError("coarse stride must be a multiple of the fine stride")
        ratio_a = coarse_a.stride // fine_a.stride
        ratio_b = coarse_b.stride // fine_b.stride
        half = cfg.fine_window // 2
        hb, wb = fine_b.grid_shape
        for m in matches:
            ra, ca = divmod(m.patch_a, ga[1])
            rb, cb = divmod(m.patch_b, gb[1])
            ar, ac = _anchor_cell(ra, ca, ratio_a)
            br, bc = _anchor_cell(rb, cb, ratio_b)
            anchor = fine_a.values[:, ar, ac]
            # Correlation window around B's anchor, replicate-clamped at edges.
            rr = np.clip(np.arange(br - half, br + half + 1), 0, hb - 1)
            cc = np.clip(np.arange(bc - half, bc + half + 1), 0, wb - 1)
            window = fine_b.values[:, rr[:, None], cc[None, :]]
            corr = np.tensordot(anchor, window, axes=(0, 0))
            heat = softmax(corr.ravel() / cfg.fine_temperature).reshape(corr.shape)
            refined = refine_fine_match(heat, PixelPoint(float(bc), float(br)))
            m.point_a = PixelPoint(
                _cell_center_px(ac, fine_a.stride), _cell_center_px(ar, fine_a.stride)
            )
            m.point_b = PixelPoint(
                _cell_center_px(refined.u, fine_b.stride),
                _cell_center_px(refined.v, fine_b.stride),
            )
    return MatchResult(matches, p_hat, choice, branches, ga, gb)
