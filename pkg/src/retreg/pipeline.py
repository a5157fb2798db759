"""End-to-end registration of a fundus image pair, with artifacts.

The pipeline chains the five stages (vessel enhancement, segmentation
and cleanup, bifurcation detection, matching with consensus filtering,
transform estimation and resampling) and writes every result as a file:
PNG rasters plus JSON dumps of features, matches, inliers, the fitted
transform and a run report.  All JSON uses 0-based (x, y) = (column,
line) coordinates, announced by a ``"coords": "xy0"`` field.

Artifact files are written only once the whole run has succeeded; a
failed run leaves exactly ``report.json`` behind, with the cause.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import matching
from .enhancement import (MODALITY_ANGIOGRAPHY, MODALITY_COLOR,
                          MODALITY_RED_FREE, build_filter_bank, enhance,
                          extract_working_channel, polarity_for_modality)
from .errors import (ConfigError, DegenerateGeometryError,
                     DegenerateMatchesError, InsufficientMatchesError,
                     NoFeaturesError, RegistrationNotPossibleError,
                     ResampleFailureError, RetregError,
                     WidthUndeterminedError)
from .features import (BifurcationFeature, REGION_RADIUS,
                       bifurcation_candidates, cluster_candidates,
                       density_filter, skeletonize, validate_bifurcation)
from .imgio import load_image, save_png, save_pbm, to_grayscale
from .matching import (MatchPair, MatchSet, RansacParams, match_by_invariants,
                       match_by_mi, ransac_inliers)
from .segmentation import (detect_camera_mask, entropy_threshold,
                           fill_hollow_vessels, remove_mask, segment,
                           size_filter)
from .transform import Correspondence, TransformModel, estimate, resample

APPROACH_MI = 1
APPROACH_INVARIANTS = 2
OUT_ENV_VAR = "RETREG_OUT"
COORDS = "xy0"

OUTCOME_REGISTERED = "registered"
OUTCOME_FAILED = "failed"

_MODALITIES = (MODALITY_COLOR, MODALITY_RED_FREE, MODALITY_ANGIOGRAPHY)
_MODALITY_ALIASES = {"1": MODALITY_COLOR, "2": MODALITY_RED_FREE,
                     "3": MODALITY_ANGIOGRAPHY}

_CAUSE_BY_ERROR = (
    (NoFeaturesError, "no-features"),
    (InsufficientMatchesError, "insufficient-matches"),
    (DegenerateMatchesError, "degenerate-matches"),
    (RegistrationNotPossibleError, "registration-not-possible"),
    (DegenerateGeometryError, "degenerate-geometry"),
    (ResampleFailureError, "resample-failure"),
)


def canonical_modality(value) -> str:
    """Map a modality name or its numeric code onto the canonical name."""
    text = str(value).strip().lower()
    text = _MODALITY_ALIASES.get(text, text)
    if text not in _MODALITIES:
        raise ConfigError(f"invalid modality {value!r}")
    return text


@dataclass
class PipelineConfig:
    """Every knob of the registration pipeline, with working defaults."""

    modality1: str = MODALITY_ANGIOGRAPHY
    modality2: str = MODALITY_ANGIOGRAPHY
    approach: int = APPROACH_INVARIANTS
    match_filter: str = matching.MODE_BASELINE
    metric: str = matching.METRIC_RAW
    interpolation: str = "bilinear"
    ransac_threshold: float = 3.0
    ransac_iterations: int = 2000
    seed: int = 42
    debug: bool = False
    out_dir: str = "."

    def validated(self) -> "PipelineConfig":
        self.modality1 = canonical_modality(self.modality1)
        self.modality2 = canonical_modality(self.modality2)
        if self.approach not in (APPROACH_MI, APPROACH_INVARIANTS):
            raise ConfigError(f"invalid approach {self.approach!r}")
        if self.match_filter not in (matching.MODE_BASELINE, matching.MODE_MUTUAL):
            raise ConfigError(f"invalid match_filter {self.match_filter!r}")
        if self.metric not in (matching.METRIC_RAW, matching.METRIC_ZSCORE):
            raise ConfigError(f"invalid metric {self.metric!r}")
        if self.interpolation not in ("nearest", "bilinear", "bicubic"):
            raise ConfigError(f"invalid interpolation {self.interpolation!r}")
        if not self.ransac_threshold > 0.0:
            raise ConfigError(f"invalid ransac_threshold {self.ransac_threshold!r}")
        if self.ransac_iterations < 1:
            raise ConfigError(f"invalid ransac_iterations {self.ransac_iterations!r}")
        return self


_CONFIG_CASTS = {
    "modality1": str, "modality2": str, "approach": int,
    "match_filter": str, "metric": str, "interpolation": str,
    "ransac_threshold": float, "ransac_iterations": int, "seed": int,
    "debug": bool, "out": str,
}
_FLAG_TO_FIELD = {"out": "out_dir", "ransac_iters": "ransac_iterations"}


def _apply_settings(config: PipelineConfig, settings: dict, origin: str):
    for key, value in settings.items():
        if value is None:
            continue
        name = str(key).replace("-", "_")
        name = _FLAG_TO_FIELD.get(name, name)
        field_name = "out" if name == "out_dir" else name
        if field_name not in _CONFIG_CASTS:
            raise ConfigError(f"unknown configuration key {key!r} in {origin}")
        try:
            cast = _CONFIG_CASTS[field_name](value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid {key}: {value!r}") from exc
        setattr(config, "out_dir" if field_name == "out" else field_name, cast)


def load_config(path=None, flags: dict | None = None) -> PipelineConfig:
    """Build the pipeline configuration.

    Precedence: command-line flags beat the config file, the file beats
    the defaults.  The default output directory can also be replaced by
    the ``RETREG_OUT`` environment variable; an explicit setting wins
    over it.
    """
    config = PipelineConfig()
    env_out = os.environ.get(OUT_ENV_VAR)
    if env_out:
        config.out_dir = env_out
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as handle:
                settings = json.load(handle)
        except FileNotFoundError:
            raise
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
        if not isinstance(settings, dict):
            raise ConfigError(f"configuration {path} must hold a JSON object")
        _apply_settings(config, settings, str(path))
    if flags:
        _apply_settings(config, flags, "command line")
    return config.validated()


@dataclass
class FeatureDetection:
    """All intermediate rasters and the accepted features of one image."""

    modality: str
    channel: np.ndarray = field(repr=False)
    enhanced: np.ndarray = field(repr=False)
    threshold: int
    segmented: np.ndarray = field(repr=False)
    vessels: np.ndarray = field(repr=False)
    skeleton: np.ndarray = field(repr=False)
    candidates: list
    features: list
    rejections: list


def detect_features_raster(image: np.ndarray, modality: str) -> FeatureDetection:
    """Run the full feature-detection chain on an image array."""
    modality = canonical_modality(modality)
    channel = extract_working_channel(image, modality)
    bank = build_filter_bank(polarity_for_modality(modality))
    enhanced = enhance(channel, bank, modality).image
    threshold = entropy_threshold(enhanced)
    segmented = segment(enhanced, threshold.threshold)
    vessels = remove_mask(fill_hollow_vessels(size_filter(segmented)),
                          detect_camera_mask(channel))
    skeleton = skeletonize(vessels)
    raw = bifurcation_candidates(skeleton)
    candidates = density_filter(cluster_candidates(raw, skeleton.shape))
    features, rejections = [], []
    for point in candidates:
        feature, cause = validate_bifurcation(enhanced, point)
        if feature is not None:
            features.append(feature)
        else:
            rejections.append((point, cause))
    return FeatureDetection(modality=modality, channel=channel,
                            enhanced=enhanced, threshold=threshold.threshold,
                            segmented=segmented, vessels=vessels,
                            skeleton=skeleton, candidates=candidates,
                            features=features, rejections=rejections)


def detect_features(path, modality: str) -> FeatureDetection:
    """Load an image file and run feature detection on it."""
    return detect_features_raster(load_image(path), modality)


def _branch_payload(feature: BifurcationFeature) -> list[dict]:
    angles = matching.branch_angles(feature.branch_positions)
    classes = matching.slope_class(feature.branch_positions)
    r0 = feature.center[0] - REGION_RADIUS
    c0 = feature.center[1] - REGION_RADIUS
    branches = []
    for pos, angle, cls in zip(feature.branch_positions, angles, classes):
        try:
            width = float(matching.branch_width(feature.region, pos, cls))
        except WidthUndeterminedError:
            width = None
        branches.append({"x": int(c0 + pos[1]), "y": int(r0 + pos[0]),
                         "angle": angle, "slope_class": cls, "width": width})
    return branches


def feature_payload(feature: BifurcationFeature) -> dict:
    """JSON-ready description of one feature."""
    try:
        descriptor = [float(v) for v in matching.invariants(feature).as_array()]
    except WidthUndeterminedError:
        descriptor = None
    return {"center": {"x": int(feature.center[1]), "y": int(feature.center[0])},
            "branches": _branch_payload(feature),
            "descriptor": descriptor}


def features_payload(detection: FeatureDetection) -> dict:
    return {"coords": COORDS,
            "modality": detection.modality,
            "count": len(detection.features),
            "features": [feature_payload(f) for f in detection.features]}


def _pair_payload(pair: MatchPair) -> dict:
    return {"index_01": pair.index_a, "index_02": pair.index_b,
            "point_01": {"x": pair.a_xy[0], "y": pair.a_xy[1]},
            "point_02": {"x": pair.b_xy[0], "y": pair.b_xy[1]},
            "score": pair.score}


def write_json(path, payload: dict):
    """Write JSON deterministically: sorted keys, 2-space indent."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


@dataclass
class RegistrationReport:
    """Summary of one registration run."""

    outcome: str
    cause: str | None
    features_01: int
    features_02: int
    initial_matches: int
    inliers: int
    model_kind: str | None
    mean_residual_px: float | None
    max_residual_px: float | None
    timings_ms: dict

    def to_dict(self) -> dict:
        return {"coords": COORDS, "outcome": self.outcome, "cause": self.cause,
                "features_01": self.features_01, "features_02": self.features_02,
                "initial_matches": self.initial_matches, "inliers": self.inliers,
                "model_kind": self.model_kind,
                "mean_residual_px": self.mean_residual_px,
                "max_residual_px": self.max_residual_px,
                "timings_ms": self.timings_ms}


def _cause_for(error: RetregError) -> str | None:
    for err_type, cause in _CAUSE_BY_ERROR:
        if isinstance(error, err_type):
            return cause
    return None


def _feature_overlay(detection: FeatureDetection) -> np.ndarray:
    """Debug raster: channel with skeleton, candidates and features marked."""
    base = np.stack([detection.channel] * 3, axis=2).astype(np.uint8)
    base[detection.skeleton] = (80, 80, 255)
    rows, cols = detection.channel.shape
    for r, c in detection.candidates:
        base[r, c] = (255, 255, 0)
    for feature in detection.features:
        r, c = feature.center
        for dr in range(-2, 3):
            for dc in range(-2, 3):
                if (dr == 0 or dc == 0) and 0 <= r + dr < rows and 0 <= c + dc < cols:
                    base[r + dr, c + dc] = (255, 0, 0)
    return base


def write_debug_artifacts(detection: FeatureDetection, out_dir, prefix: str):
    out = Path(out_dir)
    save_png(out / f"{prefix}enhanced.png", detection.enhanced)
    save_pbm(out / f"{prefix}segmented.pbm", detection.segmented)
    save_pbm(out / f"{prefix}vessels.pbm", detection.vessels)
    save_pbm(out / f"{prefix}skeleton.pbm", detection.skeleton)
    save_png(out / f"{prefix}features.png", _feature_overlay(detection))


def _match_features(det01: FeatureDetection, det02: FeatureDetection,
                    config: PipelineConfig) -> MatchSet:
    if not det01.features or not det02.features:
        raise NoFeaturesError("an image contributed no validated bifurcation")
    if config.approach == APPROACH_MI:
        return match_by_mi(det01.features, det02.features, config.match_filter)
    return match_by_invariants(det01.features, det02.features,
                               config.match_filter, config.metric)


def _transform_payload(model: TransformModel, info) -> dict:
    return {"coords": COORDS, "kind": model.kind,
            "coefficients": [float(v) for v in model.coefficients.ravel()],
            "canvas": {"rows": info.rows, "cols": info.cols,
                       "ref_offset": {"x": info.ref_offset[0],
                                      "y": info.ref_offset[1]}}}


def _overlay_image(reference: np.ndarray, canvas: np.ndarray, info) -> np.ndarray:
    """Half-and-half blend of the reference and the resampled image."""
    ref_gray = to_grayscale(reference).astype(np.float64)
    canvas_gray = to_grayscale(canvas).astype(np.float64)
    layer = np.zeros_like(canvas_gray)
    ox, oy = info.ref_offset
    rows, cols = ref_gray.shape
    layer[oy:oy + rows, ox:ox + cols] = ref_gray
    blend = 0.5 * layer + 0.5 * canvas_gray
    return np.floor(blend + 0.5).astype(np.uint8)


def register_pair(image01, image02, config: PipelineConfig | None = None) -> RegistrationReport:
    """Register a sensed image (the second) onto a reference (the first).

    Runs the full pipeline and writes all artifacts into the configured
    output directory.  The returned report mirrors ``report.json``.
    Registration failures (too few features, no consensus, degenerate
    geometry, resampling breakdown) produce a ``failed`` report instead
    of an exception; input and configuration problems raise.
    """
    if config is None:
        config = PipelineConfig()
    config = config.validated()
    out_dir = Path(config.out_dir)
    timings: dict[str, float] = {}
    counts = {"features_01": 0, "features_02": 0, "initial_matches": 0,
              "inliers": 0}
    started = time.perf_counter()

    def clocked(stage, fn, *args):
        t0 = time.perf_counter()
        result = fn(*args)
        timings[stage] = (time.perf_counter() - t0) * 1000.0
        return result

    raster01 = load_image(image01)
    raster02 = load_image(image02)
    model_kind = None
    residuals = None
    try:
        det01 = clocked("features_01", detect_features_raster, raster01, config.modality1)
        counts["features_01"] = len(det01.features)
        det02 = clocked("features_02", detect_features_raster, raster02, config.modality2)
        counts["features_02"] = len(det02.features)
        matches = clocked("matching", _match_features, det01, det02, config)
        counts["initial_matches"] = len(matches.pairs)
        params = RansacParams(threshold=config.ransac_threshold,
                              iterations=config.ransac_iterations,
                              seed=config.seed)
        inliers = clocked("consensus", ransac_inliers, matches, params)
        counts["inliers"] = len(inliers.pairs)
        correspondences = [Correspondence(src=p.b_xy, dst=p.a_xy)
                           for p in inliers.pairs]
        model, residuals = clocked("estimation", estimate, correspondences)
        model_kind = model.kind
        canvas, valid, info = clocked(
            "resampling", lambda: resample(raster02, model, config.interpolation,
                                           raster01.shape[:2]))
    except RetregError as error:
        cause = _cause_for(error)
        if cause is None:
            raise
        timings["total"] = (time.perf_counter() - started) * 1000.0
        report = RegistrationReport(
            outcome=OUTCOME_FAILED, cause=cause, model_kind=model_kind,
            mean_residual_px=None, max_residual_px=None,
            timings_ms=timings, **counts)
        write_json(out_dir / "report.json", report.to_dict())
        return report

    timings["total"] = (time.perf_counter() - started) * 1000.0
    report = RegistrationReport(
        outcome=OUTCOME_REGISTERED, cause=None, model_kind=model_kind,
        mean_residual_px=float(np.mean(residuals)),
        max_residual_px=float(np.max(residuals)),
        timings_ms=timings, **counts)

    save_png(out_dir / "registered.png", canvas)
    save_png(out_dir / "overlay.png", _overlay_image(raster01, canvas, info))
    write_json(out_dir / "features_01.json", features_payload(det01))
    write_json(out_dir / "features_02.json", features_payload(det02))
    write_json(out_dir / "matches.json",
               {"coords": COORDS, "approach": config.approach,
                "mode": matches.mode, "metric": config.metric,
                "count": len(matches.pairs),
                "pairs": [_pair_payload(p) for p in matches.pairs]})
    write_json(out_dir / "inliers.json",
               {"coords": COORDS, "count": len(inliers.pairs),
                "pairs": [_pair_payload(p) for p in inliers.pairs]})
    write_json(out_dir / "transform.json", _transform_payload(model, info))
    write_json(out_dir / "report.json", report.to_dict())
    if config.debug:
        write_debug_artifacts(det01, out_dir, "debug_01_")
        write_debug_artifacts(det02, out_dir, "debug_02_")
    return report
