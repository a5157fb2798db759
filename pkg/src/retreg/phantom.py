"""Synthetic vessel-tree phantoms with known bifurcation ground truth.

A phantom is rendered from a declarative tree of branches.  Every branch
is a straight segment with a Gaussian cross-section whose sigma is half
the nominal width, so the width recovered from the extrema of the
intensity derivative matches the nominal value.  A branch node with two
or more children produces a junction whose center, branch angles and
branch widths are reported as ground truth.

Rendering is fully deterministic: all randomness (the optional additive
noise) comes from a counter-based splitmix64 stream seeded by the spec,
so the same spec always produces the same raster on every platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .enhancement import POLARITY_BRIGHT, POLARITY_DARK
from .errors import PhantomSpecError
from .transform import TransformModel, apply, jacobian, resample

MIN_BRANCH_WIDTH = 2.0
MIN_SIBLING_SEPARATION_DEG = 30.0
MASK_LEVEL = 2
NOISE_SMOOTHING_PASSES = 400

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX_1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX_2 = np.uint64(0x94D049BB133111EB)
_NORMAL_DRAWS = 12


def splitmix64(seed: int, count: int, offset: int = 0) -> np.ndarray:
    """Words ``offset .. offset + count - 1`` of the splitmix64 stream.

    The stream is counter based, so any slice can be generated without
    computing the words before it.
    """
    if count < 0 or offset < 0:
        raise ValueError("count and offset must be non-negative")
    index = np.arange(offset + 1, offset + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + index * _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _MIX_1
        z = (z ^ (z >> np.uint64(27))) * _MIX_2
        z = z ^ (z >> np.uint64(31))
    return z


def uniform_stream(seed: int, count: int, offset: int = 0) -> np.ndarray:
    """Uniform doubles in [0, 1), one per stream word."""
    words = splitmix64(seed, count, offset)
    return (words >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def normal_stream(seed: int, count: int, offset: int = 0) -> np.ndarray:
    """Approximately standard normal draws (sum of 12 uniforms minus 6).

    Each draw consumes 12 stream words; ``offset`` counts draws, not
    words.
    """
    u = uniform_stream(seed, count * _NORMAL_DRAWS, offset * _NORMAL_DRAWS)
    return u.reshape(count, _NORMAL_DRAWS).sum(axis=1) - 6.0


def _binomial_pass(field_: np.ndarray, axis: int) -> np.ndarray:
    """One [1, 4, 6, 4, 1] / 16 smoothing pass with mirrored edges.

    All weights are dyadic rationals, so the arithmetic is exact in
    binary floating point and the result is bit-identical everywhere.
    """
    moved = np.moveaxis(field_, axis, 0)
    padded = np.concatenate([moved[1:3][::-1], moved, moved[-3:-1][::-1]], axis=0)
    out = (padded[:-4] + 4.0 * padded[1:-3] + 6.0 * padded[2:-2]
           + 4.0 * padded[3:-1] + padded[4:]) / 16.0
    return np.moveaxis(out, 0, axis)


def _smoothing_gain() -> float:
    """Pointwise standard-deviation factor of the 2-D smoothing."""
    width = 4 * NOISE_SMOOTHING_PASSES + 9
    kernel = np.zeros(width)
    kernel[width // 2] = 1.0
    for _ in range(NOISE_SMOOTHING_PASSES):
        kernel = _binomial_pass(kernel, 0)
    axis_gain = float(np.sqrt((kernel ** 2).sum()))
    return axis_gain * axis_gain


def noise_field(seed: int, rows: int, cols: int) -> np.ndarray:
    """Smooth zero-mean noise mottle with pointwise standard deviation 1.

    Independent per-pixel draws would be unrepresentative of fundus
    backgrounds, which vary smoothly (uneven illumination, optics); the
    draws are therefore correlated over roughly five pixels by repeated
    exact binomial smoothing, then rescaled to unit pointwise deviation.
    Images too small to smooth keep the raw draws.
    """
    field_ = normal_stream(seed, rows * cols).reshape(rows, cols)
    if rows < 5 or cols < 5:
        return field_
    for _ in range(NOISE_SMOOTHING_PASSES):
        field_ = _binomial_pass(field_, 0)
        field_ = _binomial_pass(field_, 1)
    return field_ / _smoothing_gain()


@dataclass
class VesselBranch:
    """One straight vessel segment.

    ``angle`` is in degrees, measured counter-clockwise from the
    positive column axis (lines grow downward).  Root branches need an
    explicit ``start``; children begin where the parent ends.
    """

    angle: float
    length: float
    width: float
    start: tuple[float, float] | None = None
    children: list["VesselBranch"] = field(default_factory=list)

    def end_point(self, start: tuple[float, float]) -> tuple[float, float]:
        rad = math.radians(self.angle)
        return (start[0] + self.length * math.cos(rad),
                start[1] - self.length * math.sin(rad))


@dataclass
class JunctionTruth:
    """Ground truth for one junction: center plus per-branch geometry.

    The first angle/width pair is the parent branch (pointing back along
    the incoming segment), the rest are the children in declaration
    order.
    """

    center: tuple[float, float]
    angles: tuple[float, ...]
    widths: tuple[float, ...]


@dataclass
class GroundTruth:
    junctions: list[JunctionTruth]


@dataclass
class VesselTreeSpec:
    """Complete description of a phantom image."""

    seed: int
    rows: int
    cols: int
    branches: list[VesselBranch]
    polarity: str = POLARITY_BRIGHT
    background: float = 40.0
    contrast: float = 160.0
    noise_sigma: float = 0.0
    illumination_amplitude: float = 0.0
    mask_radius: float = 0.0

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "rows": self.rows,
            "cols": self.cols,
            "polarity": self.polarity,
            "background": self.background,
            "contrast": self.contrast,
            "noise_sigma": self.noise_sigma,
            "illumination_amplitude": self.illumination_amplitude,
            "mask_radius": self.mask_radius,
            "branches": [_branch_to_dict(b) for b in self.branches],
        }

    @staticmethod
    def from_dict(data: dict) -> "VesselTreeSpec":
        try:
            branches = [_branch_from_dict(b) for b in data["branches"]]
            return VesselTreeSpec(
                seed=int(data["seed"]),
                rows=int(data["rows"]),
                cols=int(data["cols"]),
                branches=branches,
                polarity=data.get("polarity", POLARITY_BRIGHT),
                background=float(data.get("background", 40.0)),
                contrast=float(data.get("contrast", 160.0)),
                noise_sigma=float(data.get("noise_sigma", 0.0)),
                illumination_amplitude=float(data.get("illumination_amplitude", 0.0)),
                mask_radius=float(data.get("mask_radius", 0.0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise PhantomSpecError(f"malformed phantom description: {exc}") from exc


def _branch_to_dict(branch: VesselBranch) -> dict:
    return {
        "angle": branch.angle,
        "length": branch.length,
        "width": branch.width,
        "start": None if branch.start is None else list(branch.start),
        "children": [_branch_to_dict(c) for c in branch.children],
    }


def _branch_from_dict(data: dict) -> VesselBranch:
    start = data.get("start")
    return VesselBranch(
        angle=float(data["angle"]),
        length=float(data["length"]),
        width=float(data["width"]),
        start=None if start is None else (float(start[0]), float(start[1])),
        children=[_branch_from_dict(c) for c in data.get("children", [])],
    )


def _circular_separation(a: float, b: float) -> float:
    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)


def _validate_branch(branch: VesselBranch, is_root: bool):
    if branch.width < MIN_BRANCH_WIDTH:
        raise PhantomSpecError(
            f"branch width {branch.width} is below the minimum {MIN_BRANCH_WIDTH}")
    if branch.length <= 0.0:
        raise PhantomSpecError("branch length must be positive")
    if is_root and branch.start is None:
        raise PhantomSpecError("root branches need an explicit start point")
    if branch.children:
        # All directions leaving the junction must be well separated,
        # including the way back along the incoming branch.
        directions = [(branch.angle + 180.0) % 360.0] + [c.angle for c in branch.children]
        for i in range(len(directions)):
            for j in range(i + 1, len(directions)):
                sep = _circular_separation(directions[i], directions[j])
                if sep < MIN_SIBLING_SEPARATION_DEG:
                    raise PhantomSpecError(
                        f"junction branches are only {sep:.1f} degrees apart "
                        f"(minimum {MIN_SIBLING_SEPARATION_DEG})")
    for child in branch.children:
        _validate_branch(child, is_root=False)


def validate(spec: VesselTreeSpec):
    """Raise :class:`PhantomSpecError` if the spec cannot be rendered."""
    if spec.rows <= 0 or spec.cols <= 0:
        raise PhantomSpecError("image dimensions must be positive")
    if spec.polarity not in (POLARITY_BRIGHT, POLARITY_DARK):
        raise PhantomSpecError(f"unknown polarity {spec.polarity!r}")
    if not spec.branches:
        raise PhantomSpecError("a phantom needs at least one branch")
    if not 0.0 <= spec.background <= 255.0:
        raise PhantomSpecError("background level must lie in [0, 255]")
    if spec.contrast <= 0.0 or spec.background + spec.contrast > 255.0:
        raise PhantomSpecError("background plus contrast must stay within [0, 255]")
    if spec.noise_sigma < 0.0 or spec.illumination_amplitude < 0.0 or spec.mask_radius < 0.0:
        raise PhantomSpecError("noise, illumination and mask radius cannot be negative")
    for branch in spec.branches:
        _validate_branch(branch, is_root=True)


def _collect_segments(spec: VesselTreeSpec):
    """Flatten the trees into segments and junction ground truth."""
    segments = []
    junctions = []

    def walk(branch: VesselBranch, start: tuple[float, float]):
        end = branch.end_point(start)
        segments.append((start, end, branch.width))
        if len(branch.children) >= 2:
            angles = tuple([(branch.angle + 180.0) % 360.0]
                           + [c.angle for c in branch.children])
            widths = tuple([branch.width] + [c.width for c in branch.children])
            junctions.append(JunctionTruth(center=end, angles=angles, widths=widths))
        for child in branch.children:
            walk(child, end)

    for root in spec.branches:
        walk(root, root.start)
    return segments, junctions


def _paint_segment(field_: np.ndarray, start, end, width):
    rows, cols = field_.shape
    sigma = width / 2.0
    reach = 3.0 * sigma + 2.0
    x0 = max(int(math.floor(min(start[0], end[0]) - reach)), 0)
    x1 = min(int(math.ceil(max(start[0], end[0]) + reach)), cols - 1)
    y0 = max(int(math.floor(min(start[1], end[1]) - reach)), 0)
    y1 = min(int(math.ceil(max(start[1], end[1]) + reach)), rows - 1)
    if x0 > x1 or y0 > y1:
        return
    xs, ys = np.meshgrid(np.arange(x0, x1 + 1, dtype=np.float64),
                         np.arange(y0, y1 + 1, dtype=np.float64))
    dx, dy = end[0] - start[0], end[1] - start[1]
    length_sq = dx * dx + dy * dy
    t = ((xs - start[0]) * dx + (ys - start[1]) * dy) / length_sq
    t = np.clip(t, 0.0, 1.0)
    dist_sq = (xs - (start[0] + t * dx)) ** 2 + (ys - (start[1] + t * dy)) ** 2
    profile = np.exp(-dist_sq / (2.0 * sigma * sigma))
    patch = field_[y0:y1 + 1, x0:x1 + 1]
    np.maximum(patch, profile, out=patch)


def render(spec: VesselTreeSpec) -> tuple[np.ndarray, GroundTruth]:
    """Render the phantom and return it with its junction ground truth."""
    validate(spec)
    segments, junctions = _collect_segments(spec)
    ridge = np.zeros((spec.rows, spec.cols), dtype=np.float64)
    for start, end, width in segments:
        _paint_segment(ridge, start, end, width)
    if spec.polarity == POLARITY_BRIGHT:
        image = spec.background + spec.contrast * ridge
    else:
        image = (spec.background + spec.contrast) - spec.contrast * ridge
    if spec.illumination_amplitude > 0.0:
        ramp = np.arange(spec.cols, dtype=np.float64)
        if spec.cols > 1:
            ramp = ramp / (spec.cols - 1) - 0.5
        else:
            ramp = np.zeros(1)
        image = image + spec.illumination_amplitude * ramp[np.newaxis, :]
    if spec.noise_sigma > 0.0:
        image = image + spec.noise_sigma * noise_field(spec.seed, spec.rows, spec.cols)
    quantized = np.clip(np.floor(image + 0.5), 0.0, 255.0).astype(np.uint8)
    if spec.mask_radius > 0.0:
        cy, cx = (spec.rows - 1) / 2.0, (spec.cols - 1) / 2.0
        yy, xx = np.mgrid[0:spec.rows, 0:spec.cols]
        outside = (xx - cx) ** 2 + (yy - cy) ** 2 > spec.mask_radius ** 2
        quantized[outside] = MASK_LEVEL
    return quantized, GroundTruth(junctions=junctions)


def _warp_truth(truth: GroundTruth, model: TransformModel) -> GroundTruth:
    warped = []
    for junction in truth.junctions:
        center = apply(model, junction.center)
        jac = jacobian(model, junction.center)
        det = abs(jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0])
        width_scale = math.sqrt(det)
        new_angles = []
        for angle in junction.angles:
            rad = math.radians(angle)
            # Image-space direction: lines grow downward, so the y
            # component of a math-convention direction is negated.
            vec = jac @ np.array([math.cos(rad), -math.sin(rad)])
            new_angles.append(math.degrees(math.atan2(-vec[1], vec[0])) % 360.0)
        warped.append(JunctionTruth(
            center=(float(center[0]), float(center[1])),
            angles=tuple(new_angles),
            widths=tuple(w * width_scale for w in junction.widths)))
    return GroundTruth(junctions=warped)


def warp(image: np.ndarray, truth: GroundTruth, model: TransformModel,
         interpolation: str = "bilinear") -> tuple[np.ndarray, GroundTruth]:
    """Move a phantom through a transform, keeping the original frame.

    Content at point ``p`` ends up at ``apply(model, p)``.  Pixels of
    the output frame that receive no content are set to the dark mask
    level.  The returned ground truth carries the mapped junction
    centers, locally rotated branch angles and rescaled widths; centers
    may fall outside the frame, callers filter as needed.
    """
    rows, cols = image.shape[:2]
    canvas, valid, info = resample(image, model, interpolation=interpolation,
                                   ref_dims=(rows, cols))
    ox, oy = info.ref_offset
    out = canvas[oy:oy + rows, ox:ox + cols].copy()
    inside = valid[oy:oy + rows, ox:ox + cols]
    out[~inside] = MASK_LEVEL
    return out, _warp_truth(truth, model)
