"""Bifurcation (y-feature) detection on the segmented vessel tree.

Candidate junctions are skeleton pixels with three or more skeleton
neighbors.  Candidates are clustered, thinned out where they bunch up,
and finally validated against the enhanced image: a true bifurcation
shows exactly three bright arcs where its branches cross a ring of
radius 20 around the junction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from skimage.morphology import thin

from .raster import (ensure_gray, ensure_mask, index_area, index_circumference,
                     label_components, line_slope_angle, round_half_up)

REGION_DIM = 41
REGION_RADIUS = REGION_DIM // 2
RING_THRESHOLD_FACTOR = 1.3
MIN_BRANCH_SEPARATION_DEG = 25.0
BRANCH_COUNT = 3
DENSITY_WINDOW = 41
DENSITY_MAX_POINTS = 2

REJECT_BORDER = "border"
REJECT_TOO_FEW_ARCS = "too-few-arcs"
REJECT_SEPARATION = "too-few-after-separation"

_RING = index_circumference(REGION_DIM)
_RING_ANGLES = [line_slope_angle((REGION_RADIUS, REGION_RADIUS), pix)[1] for pix in _RING]

_NEIGHBOR_KERNEL = np.array([[1, 1, 1], [1, 0, 1], [1, 1, 1]], dtype=np.int8)


@dataclass
class BifurcationFeature:
    """A validated bifurcation.

    ``center`` is the junction pixel in full-image coordinates;
    ``branch_positions`` are the three branch pixels on the radius-20
    ring, in region-local coordinates and angular order; ``region`` is
    the 41x41 crop of the enhanced image the feature was validated on.
    """

    center: tuple[int, int]
    branch_positions: list[tuple[int, int]]
    region: np.ndarray = field(repr=False)
    image_dims: tuple[int, int]


def skeletonize(mask: np.ndarray) -> np.ndarray:
    """Thin the vessel mask to 1-pixel-wide, connectivity-preserving lines."""
    mask = ensure_mask(mask)
    return thin(mask)


def bifurcation_candidates(skeleton: np.ndarray) -> list[tuple[int, int]]:
    """Skeleton pixels with at least 3 skeleton neighbors, row-major order."""
    skeleton = ensure_mask(skeleton)
    neighbors = ndimage.convolve(skeleton.astype(np.int8), _NEIGHBOR_KERNEL,
                                 mode="constant", cval=0)
    rows, cols = np.nonzero(skeleton & (neighbors >= 3))
    return [(int(r), int(c)) for r, c in zip(rows, cols)]


def cluster_candidates(candidates: list[tuple[int, int]],
                       dims: tuple[int, int]) -> list[tuple[int, int]]:
    """Merge 8-connected candidate clusters into their rounded centroids.

    Adjacent junction pixels describe one bifurcation; each cluster is
    replaced by the centroid of its members, rounded half-up per axis.
    """
    if not candidates:
        return []
    mask = np.zeros(dims, dtype=bool)
    for r, c in candidates:
        mask[r, c] = True
    labels, counts = label_components(mask, connectivity=8)
    rr, cc = np.nonzero(mask)
    which = labels[rr, cc]
    sum_r = np.bincount(which, weights=rr, minlength=counts.size)
    sum_c = np.bincount(which, weights=cc, minlength=counts.size)
    centers = [(int(round_half_up(sum_r[label] / counts[label])),
                int(round_half_up(sum_c[label] / counts[label])))
               for label in range(1, counts.size)]
    centers.sort()
    return centers


def _box_counts(raster: np.ndarray, half: int) -> np.ndarray:
    """Sum of the raster over a centered (2*half+1) square at every pixel."""
    rows, cols = raster.shape
    integral = np.zeros((rows + 1, cols + 1), dtype=np.int64)
    integral[1:, 1:] = raster.cumsum(axis=0).cumsum(axis=1)
    top = np.clip(np.arange(rows) - half, 0, rows)
    bottom = np.clip(np.arange(rows) + half + 1, 0, rows)
    left = np.clip(np.arange(cols) - half, 0, cols)
    right = np.clip(np.arange(cols) + half + 1, 0, cols)
    return (integral[np.ix_(bottom, right)] - integral[np.ix_(top, right)]
            - integral[np.ix_(bottom, left)] + integral[np.ix_(top, left)])


def density_filter(points: list[tuple[int, int]],
                   window: int = DENSITY_WINDOW) -> list[tuple[int, int]]:
    """Drop every point that falls in an overcrowded window.

    For each point the centered ``window x window`` neighborhood is
    examined; when it holds more than 2 points (counting the center),
    every point inside it is marked for removal.  Crowded junctions are
    unreliable landmarks, typically tangled or doubled vessel crossings.
    """
    if not points:
        return []
    half = window // 2
    rows = max(p[0] for p in points) + 1
    cols = max(p[1] for p in points) + 1
    raster = np.zeros((rows, cols), dtype=np.int64)
    for r, c in points:
        raster[r, c] += 1
    crowded = (raster > 0) & (_box_counts(raster, half) > DENSITY_MAX_POINTS)
    # A point dies if any crowded center lies within its window, which is
    # the same as a crowded window containing it.
    doom = _box_counts(crowded.astype(np.int64), half) > 0
    return sorted(p for p in points if not doom[p[0], p[1]])


def _ring_arcs(above: np.ndarray) -> list[list[int]]:
    """Maximal runs of true ring positions, with circular wraparound."""
    n = above.size
    if not above.any():
        return []
    if above.all():
        return [list(range(n))]
    arcs: list[list[int]] = []
    for i in range(n):
        if above[i] and not above[i - 1]:
            arc = []
            j = i
            while above[j % n]:
                arc.append(j % n)
                j += 1
            arcs.append(arc)
    return arcs


def _angular_distance(a: float, b: float) -> float:
    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)


def validate_bifurcation(enhanced: np.ndarray, point: tuple[int, int]):
    """Check a candidate junction against the enhanced image.

    A 41x41 region centered on the point is cropped and the intensities
    along its radius-20 ring are thresholded at 1.3 times their mean.
    Each above-threshold arc contributes one branch position (its
    brightest pixel); branches closer than 25 degrees to a stronger one
    are discarded, and if more than three survive, the three whose
    5-pixel-wide center-to-branch band sums brightest are kept.

    Returns ``(feature, None)`` when exactly three branches remain, or
    ``(None, cause)`` with cause one of ``"border"``, ``"too-few-arcs"``,
    ``"too-few-after-separation"``.
    """
    enhanced = ensure_gray(enhanced)
    rows, cols = enhanced.shape
    r, c = int(point[0]), int(point[1])
    if (r < REGION_RADIUS or r > rows - 1 - REGION_RADIUS
            or c < REGION_RADIUS or c > cols - 1 - REGION_RADIUS):
        return None, REJECT_BORDER
    region = enhanced[r - REGION_RADIUS:r + REGION_RADIUS + 1,
                      c - REGION_RADIUS:c + REGION_RADIUS + 1]
    values = np.array([float(region[p]) for p in _RING])
    threshold = RING_THRESHOLD_FACTOR * values.mean()
    arcs = _ring_arcs(values > threshold)
    if len(arcs) < BRANCH_COUNT:
        return None, REJECT_TOO_FEW_ARCS

    # One branch per arc: the brightest ring pixel, first wins on ties.
    branches = []
    for arc in arcs:
        arc_values = values[arc]
        peak = arc[int(np.argmax(arc_values))]
        branches.append((peak, float(values[peak])))

    # Suppress branches too close in angle to a stronger one; equal peaks
    # resolve in favor of the earlier ring position.
    order = sorted(branches, key=lambda b: (-b[1], b[0]))
    kept: list[int] = []
    for ring_index, _ in order:
        angle = _RING_ANGLES[ring_index]
        if all(_angular_distance(angle, _RING_ANGLES[k]) >= MIN_BRANCH_SEPARATION_DEG
               for k in kept):
            kept.append(ring_index)
    if len(kept) < BRANCH_COUNT:
        return None, REJECT_SEPARATION

    if len(kept) > BRANCH_COUNT:
        center = (REGION_RADIUS, REGION_RADIUS)
        def band_sum(ring_index: int) -> float:
            band = index_area(center, _RING[ring_index], region.shape)
            return float(sum(int(region[p]) for p in band))
        kept.sort(key=lambda k: (-band_sum(k), k))
        kept = kept[:BRANCH_COUNT]

    kept.sort()
    feature = BifurcationFeature(
        center=(r, c),
        branch_positions=[_RING[k] for k in kept],
        region=region.copy(),
        image_dims=(rows, cols),
    )
    return feature, None
