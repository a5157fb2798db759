"""Feature description and correspondence search.

Two interchangeable descriptions drive the matching:

* approach 1 pairs features whose 41x41 regions share the most mutual
  information;
* approach 2 summarizes each bifurcation into four similarity-invariant
  numbers (two inter-branch angles and two width ratios) and pairs
  nearest descriptors.

Either way the raw pairing is cleaned up by a RANSAC consensus search
over a homography model before transform estimation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (DegenerateMatchesError, InputError, InsufficientMatchesError,
                     NoFeaturesError, WidthUndeterminedError)
from .features import REGION_DIM, BifurcationFeature
from .raster import ensure_gray, index_circumference, index_line, line_slope_angle

GRAY_LEVELS = 256

MODE_BASELINE = "baseline"
MODE_MUTUAL = "mutual"
METRIC_RAW = "raw"
METRIC_ZSCORE = "zscore"

PROFILE_LENGTH = 10
PROFILE_BACK_STEPS = 5
SKIP_NEAR_CENTER = 5

# Unit steps for the eight compass directions, keyed by angle.
_COMPASS = {0: (0, 1), 45: (-1, 1), 90: (-1, 0), 135: (-1, -1),
            180: (0, -1), 225: (1, -1), 270: (1, 0), 315: (1, 1)}

_RING_CACHE: dict[int, set] = {}


def _entropy_from_counts(counts: np.ndarray, total: int) -> float:
    p = counts[counts > 0] / total
    return float(-(p * np.log2(p)).sum())


def global_entropy(image: np.ndarray) -> float:
    """First-order Shannon entropy of the gray-level histogram, in bits."""
    image = ensure_gray(image)
    counts = np.bincount(image.ravel(), minlength=GRAY_LEVELS)
    return _entropy_from_counts(counts, image.size)


def mutual_information(a: np.ndarray, b: np.ndarray) -> float:
    """Mutual information between two equally shaped rasters, in bits.

    Computed as H(A) + H(B) - H(A, B) from 256-bin marginal histograms
    and the 256x256 joint histogram of co-located pixels.
    """
    a = ensure_gray(a)
    b = ensure_gray(b)
    if a.shape != b.shape:
        raise InputError("mutual information needs equally shaped rasters")
    joint = np.bincount((a.astype(np.int64) * GRAY_LEVELS + b.astype(np.int64)).ravel(),
                        minlength=GRAY_LEVELS * GRAY_LEVELS)
    total = a.size
    h_joint = _entropy_from_counts(joint, total)
    h_a = _entropy_from_counts(joint.reshape(GRAY_LEVELS, GRAY_LEVELS).sum(axis=1), total)
    h_b = _entropy_from_counts(joint.reshape(GRAY_LEVELS, GRAY_LEVELS).sum(axis=0), total)
    return h_a + h_b - h_joint


@dataclass
class MatchPair:
    """One candidate correspondence between features of two images."""

    index_a: int
    index_b: int
    a_xy: tuple[float, float]
    b_xy: tuple[float, float]
    score: float


@dataclass
class MatchSet:
    """An ordered list of candidate correspondences."""

    pairs: list[MatchPair]
    mode: str = MODE_BASELINE


def _center_xy(feature: BifurcationFeature) -> tuple[float, float]:
    return float(feature.center[1]), float(feature.center[0])


def _pair_sets(feats_a, feats_b):
    if not feats_a or not feats_b:
        raise NoFeaturesError("both images must contribute at least one feature")


def match_by_mi(feats_a: list[BifurcationFeature], feats_b: list[BifurcationFeature],
                mode: str = MODE_BASELINE) -> MatchSet:
    """Pair features by maximal region mutual information.

    Baseline mode keeps the best partner for every feature of the first
    image, duplicates allowed.  Mutual mode keeps only pairs that are
    each other's maximum.
    """
    _pair_sets(feats_a, feats_b)
    if mode not in (MODE_BASELINE, MODE_MUTUAL):
        raise InputError(f"unknown match mode {mode!r}")
    scores = np.array([[mutual_information(fa.region, fb.region) for fb in feats_b]
                       for fa in feats_a])
    best_b = scores.argmax(axis=1)
    pairs = []
    if mode == MODE_BASELINE:
        chosen = enumerate(best_b)
    else:
        best_a = scores.argmax(axis=0)
        chosen = ((i, j) for i, j in enumerate(best_b) if best_a[j] == i)
    for i, j in chosen:
        pairs.append(MatchPair(index_a=int(i), index_b=int(j),
                               a_xy=_center_xy(feats_a[i]),
                               b_xy=_center_xy(feats_b[j]),
                               score=float(scores[i, j])))
    return MatchSet(pairs=pairs, mode=mode)


def classify_angle(angle: float) -> int:
    """Slope class 1..8 for a direction angle, bins of 45 degrees.

    Class 1 spans (337.5, 360] and [0, 22.5]; classes then advance
    counter-clockwise in (lo, hi] bins of 45 degrees.
    """
    a = float(angle) % 360.0
    if a > 337.5 or a <= 22.5:
        return 1
    return int(math.ceil((a - 22.5) / 45.0)) + 1


def _ring_set(dimension: int) -> set:
    if dimension not in _RING_CACHE:
        _RING_CACHE[dimension] = set(index_circumference(dimension))
    return _RING_CACHE[dimension]


def branch_angles(branch_positions, dimension: int = REGION_DIM) -> list[float]:
    """Direction angles from the region center to ring branch positions."""
    ring = _ring_set(dimension)
    center = (dimension // 2, dimension // 2)
    angles = []
    for pos in branch_positions:
        pos = (int(pos[0]), int(pos[1]))
        if pos not in ring:
            raise InputError(f"branch position {pos} is not on the region ring")
        angles.append(line_slope_angle(center, pos)[1])
    return angles


def slope_class(branch_positions, dimension: int = REGION_DIM) -> list[int]:
    """Slope class of every branch position on the region ring."""
    return [classify_angle(a) for a in branch_angles(branch_positions, dimension)]


def branch_width(region: np.ndarray, branch_position, cls: int) -> int:
    """Estimate a branch's width from cross-sections of the region.

    Profiles of 10 pixels are read perpendicular to the branch direction
    (quantized to its slope class) at every pixel of the center-to-branch
    line past the first five.  Each profile's width is the offset between
    the extremes of its first difference; non-positive readings are
    discarded.  The mean width is scaled by sqrt(2) for the diagonal
    classes (2, 4, 6, 8), whose perpendicular advances in diagonal steps,
    and rounded half-up after the scaling.
    """
    region = ensure_gray(region)
    if region.shape != (REGION_DIM, REGION_DIM):
        raise InputError(f"expected a {REGION_DIM}x{REGION_DIM} region")
    if cls not in range(1, 9):
        raise InputError("slope class must be 1..8")
    center = (REGION_DIM // 2, REGION_DIM // 2)
    step = _COMPASS[((cls - 1) * 45 + 90) % 360]
    line = index_line(center, (int(branch_position[0]), int(branch_position[1])),
                      region.shape)
    widths = []
    for pr, pc in line[SKIP_NEAR_CENTER:]:
        profile = []
        for k in range(-PROFILE_BACK_STEPS, PROFILE_LENGTH - PROFILE_BACK_STEPS):
            qr, qc = pr + k * step[0], pc + k * step[1]
            if not (0 <= qr < REGION_DIM and 0 <= qc < REGION_DIM):
                profile = None
                break
            profile.append(float(region[qr, qc]))
        if profile is None:
            continue
        diff = np.diff(profile)
        width = int(np.argmin(diff)) - int(np.argmax(diff))
        if width > 0:
            widths.append(width)
    if not widths:
        raise WidthUndeterminedError(f"no valid cross-section at {tuple(branch_position)}")
    mean = float(np.mean(widths))
    if cls % 2 == 0:
        mean *= math.sqrt(2.0)
    return int(math.floor(mean + 0.5))


@dataclass
class InvariantDescriptor:
    """Similarity-invariant bifurcation signature.

    ``p1`` is the smallest inter-branch angle, ``p2`` the adjacent angle
    on the side of the wider branch, ``p3``/``p4`` the width ratios of
    the corresponding branch pairs.
    """

    p1: float
    p2: float
    p3: float
    p4: float

    def as_array(self) -> np.ndarray:
        return np.array([self.p1, self.p2, self.p3, self.p4], dtype=np.float64)


def _separation(a: float, b: float) -> float:
    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)


def _sector_ends(angles, u: int, v: int) -> tuple[int, int]:
    """Clockwise and counter-clockwise endpoints of the short sector u-v.

    Clockwise means decreasing mathematical angle, i.e. the on-screen
    clockwise sense with lines growing downward.
    """
    if (angles[v] - angles[u]) % 360.0 <= 180.0:
        return u, v
    return v, u


def combine_invariants(angles, widths) -> InvariantDescriptor:
    """Fold three branch angles and widths into the invariant descriptor.

    Inter-branch angles are minimal circular separations.  The smallest
    one is p1; p2 is the angle between the third branch and whichever of
    p1's branches is wider (the clockwise one on equal widths).  p3 is
    p1's width ratio, larger over smaller; p4 is p2's width ratio taken
    from the side that selected p2.
    """
    if len(angles) != 3 or len(widths) != 3:
        raise InputError("an invariant descriptor needs exactly 3 branches")
    if any(w <= 0 for w in widths):
        raise InputError("branch widths must be positive")
    pairs = [(0, 1), (0, 2), (1, 2)]
    p1_pair = min(pairs, key=lambda p: _separation(angles[p[0]], angles[p[1]]))
    p1 = _separation(angles[p1_pair[0]], angles[p1_pair[1]])
    cw, ccw = _sector_ends(angles, *p1_pair)
    if widths[ccw] > widths[cw]:
        shared, side_cw = ccw, False
    else:
        shared, side_cw = cw, True
    third = ({0, 1, 2} - set(p1_pair)).pop()
    p2 = _separation(angles[shared], angles[third])
    p3 = max(widths[cw], widths[ccw]) / min(widths[cw], widths[ccw])
    cw2, ccw2 = _sector_ends(angles, shared, third)
    if side_cw:
        p4 = widths[cw2] / widths[ccw2]
    else:
        p4 = widths[ccw2] / widths[cw2]
    return InvariantDescriptor(p1=float(p1), p2=float(p2), p3=float(p3), p4=float(p4))


def invariants(feature: BifurcationFeature) -> InvariantDescriptor:
    """Invariant descriptor of a validated bifurcation feature."""
    angles = branch_angles(feature.branch_positions)
    classes = slope_class(feature.branch_positions)
    widths = [branch_width(feature.region, pos, cls)
              for pos, cls in zip(feature.branch_positions, classes)]
    return combine_invariants(angles, widths)


def _descriptor_rows(features) -> tuple[list[int], np.ndarray]:
    indices, rows = [], []
    for i, feature in enumerate(features):
        try:
            rows.append(invariants(feature).as_array())
        except WidthUndeterminedError:
            continue
        indices.append(i)
    return indices, (np.array(rows) if rows else np.empty((0, 4)))


def match_by_invariants(feats_a: list[BifurcationFeature],
                        feats_b: list[BifurcationFeature],
                        mode: str = MODE_BASELINE,
                        metric: str = METRIC_RAW) -> MatchSet:
    """Pair features by nearest invariant descriptors.

    Features whose widths cannot be measured are left out.  With the
    z-score metric every descriptor dimension is standardized over the
    union of both images' descriptors before distances are taken.
    """
    _pair_sets(feats_a, feats_b)
    if mode not in (MODE_BASELINE, MODE_MUTUAL):
        raise InputError(f"unknown match mode {mode!r}")
    if metric not in (METRIC_RAW, METRIC_ZSCORE):
        raise InputError(f"unknown match metric {metric!r}")
    idx_a, rows_a = _descriptor_rows(feats_a)
    idx_b, rows_b = _descriptor_rows(feats_b)
    if not idx_a or not idx_b:
        raise NoFeaturesError("no feature with a computable descriptor")
    if metric == METRIC_ZSCORE:
        stacked = np.vstack([rows_a, rows_b])
        mean = stacked.mean(axis=0)
        std = stacked.std(axis=0)
        scale = np.where(std > 0.0, std, 1.0)
        rows_a = (rows_a - mean) / scale
        rows_b = (rows_b - mean) / scale
    dist = np.linalg.norm(rows_a[:, None, :] - rows_b[None, :, :], axis=2)
    best_b = dist.argmin(axis=1)
    pairs = []
    if mode == MODE_BASELINE:
        chosen = enumerate(best_b)
    else:
        best_a = dist.argmin(axis=0)
        chosen = ((i, j) for i, j in enumerate(best_b) if best_a[j] == i)
    for i, j in chosen:
        pairs.append(MatchPair(index_a=idx_a[i], index_b=idx_b[j],
                               a_xy=_center_xy(feats_a[idx_a[i]]),
                               b_xy=_center_xy(feats_b[idx_b[j]]),
                               score=float(dist[i, j])))
    return MatchSet(pairs=pairs, mode=mode)


@dataclass
class RansacParams:
    """Consensus-search settings for match filtering."""

    threshold: float = 3.0
    iterations: int = 2000
    seed: int = 42
    min_inliers: int = 4


def _normalize_for_dlt(points: np.ndarray):
    centroid = points.mean(axis=0)
    rms = np.sqrt(((points - centroid) ** 2).sum(axis=1).mean())
    if rms <= 0.0:
        return None
    s = math.sqrt(2.0) / rms
    T = np.array([[s, 0.0, -s * centroid[0]],
                  [0.0, s, -s * centroid[1]],
                  [0.0, 0.0, 1.0]])
    return T


def _fit_homography(src: np.ndarray, dst: np.ndarray):
    """Normalized direct linear transform; None on degenerate input."""
    t_src = _normalize_for_dlt(src)
    t_dst = _normalize_for_dlt(dst)
    if t_src is None or t_dst is None:
        return None
    ones = np.ones((src.shape[0], 1))
    sn = (t_src @ np.hstack([src, ones]).T).T
    dn = (t_dst @ np.hstack([dst, ones]).T).T
    rows = []
    for (x, y, _), (u, v, _) in zip(sn, dn):
        rows.append([-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u])
        rows.append([0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v])
    try:
        _, _, vt = np.linalg.svd(np.array(rows))
    except np.linalg.LinAlgError:
        return None
    h = vt[-1].reshape(3, 3)
    H = np.linalg.inv(t_dst) @ h @ t_src
    if not np.isfinite(H).all() or abs(H[2, 2]) < 1e-12:
        return None
    return H / H[2, 2]


def _projection_errors(H: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    ones = np.ones((src.shape[0], 1))
    mapped = (H @ np.hstack([src, ones]).T).T
    w = mapped[:, 2]
    errors = np.full(src.shape[0], np.inf)
    ok = np.abs(w) > 1e-12
    errors[ok] = np.hypot(mapped[ok, 0] / w[ok] - dst[ok, 0],
                          mapped[ok, 1] / w[ok] - dst[ok, 1])
    return errors


def _degenerate_sample(points: np.ndarray) -> bool:
    """Duplicate points or a collinear triple make the sample unusable."""
    for i in range(len(points)):
        for j in range(i + 1, len(points)):
            if np.hypot(*(points[i] - points[j])) < 1e-9:
                return True
            for k in range(j + 1, len(points)):
                d1 = points[j] - points[i]
                d2 = points[k] - points[i]
                if abs(d1[0] * d2[1] - d1[1] * d2[0]) < 1e-9:
                    return True
    return False


def ransac_inliers(matches: MatchSet, params: RansacParams | None = None) -> MatchSet:
    """Largest consensus subset of the matches under a homography model.

    Random 4-pair samples seed homography fits; the best consensus is
    refit by least squares over all its inliers and the consensus is
    recomputed once with the refit model.  The surviving pairs are
    returned in their original order.
    """
    if params is None:
        params = RansacParams()
    pairs = matches.pairs
    if len(pairs) < 4:
        raise InsufficientMatchesError(f"need at least 4 matches, got {len(pairs)}")
    src = np.array([p.b_xy for p in pairs], dtype=np.float64)
    dst = np.array([p.a_xy for p in pairs], dtype=np.float64)
    rng = np.random.default_rng(params.seed)
    best_count = 0
    best_inliers = None
    for _ in range(params.iterations):
        sample = rng.choice(len(pairs), size=4, replace=False)
        if _degenerate_sample(src[sample]) or _degenerate_sample(dst[sample]):
            continue
        H = _fit_homography(src[sample], dst[sample])
        if H is None:
            continue
        inliers = _projection_errors(H, src, dst) < params.threshold
        count = int(inliers.sum())
        if count > best_count:
            best_count = count
            best_inliers = inliers
    if best_count < params.min_inliers:
        raise DegenerateMatchesError("no consensus with the minimum inlier support")
    refit = _fit_homography(src[best_inliers], dst[best_inliers])
    if refit is not None:
        recomputed = _projection_errors(refit, src, dst) < params.threshold
        if int(recomputed.sum()) >= params.min_inliers:
            best_inliers = recomputed
    keep = [pair for pair, good in zip(pairs, best_inliers) if good]
    return MatchSet(pairs=keep, mode=matches.mode)
