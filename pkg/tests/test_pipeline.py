"""Configuration handling, end-to-end registration runs and the CLI."""

import json
import math
import random

import numpy as np
import pytest

import helpers
from retreg import phantom as ph
from retreg import pipeline as pl
from retreg import transform as tf
from retreg.cli import main
from retreg.errors import ConfigError
from retreg.imgio import save_png

SUCCESS_ARTIFACTS = {"registered.png", "overlay.png", "features_01.json",
                     "features_02.json", "matches.json", "inliers.json",
                     "transform.json", "report.json"}
DEBUG_SUFFIXES = {"enhanced.png", "segmented.pbm", "vessels.pbm",
                  "skeleton.pbm", "features.png"}
TIMING_KEYS = {"features_01", "features_02", "matching", "consensus",
               "estimation", "resampling", "total"}


def _equilateral_spec(parent_angle=45.0, width=4.0, length=60.0, dims=256):
    back = (parent_angle + 180.0) % 360.0
    center = dims / 2.0
    rad = math.radians(parent_angle)
    start = (center - length * math.cos(rad), center + length * math.sin(rad))
    root = ph.VesselBranch(
        angle=parent_angle, length=length, width=width, start=start,
        children=[ph.VesselBranch(angle=(back + 120.0) % 360.0,
                                  length=length, width=width),
                  ph.VesselBranch(angle=(back - 120.0) % 360.0,
                                  length=length, width=width)])
    return ph.VesselTreeSpec(seed=3, rows=dims, cols=dims, branches=[root])


def _strip_spec(layout_seed, grid_x, grid_y):
    rng = random.Random(layout_seed)
    branches = helpers.grid_trees(rng, grid_x=grid_x, grid_y=grid_y)
    return ph.VesselTreeSpec(seed=layout_seed, rows=512, cols=512,
                             branches=branches, background=40.0,
                             contrast=160.0)


@pytest.fixture(scope="module")
def self_run(clean_tree_paths, tmp_path_factory):
    """One successful self-registration whose artifacts many tests read."""
    out = tmp_path_factory.mktemp("selfreg")
    config = pl.PipelineConfig(out_dir=str(out))
    report = pl.register_pair(str(clean_tree_paths), str(clean_tree_paths), config)
    return out, report


@pytest.fixture(scope="module")
def disjoint_paths(tmp_path_factory):
    """Two phantoms whose vessel content occupies different image halves."""
    root = tmp_path_factory.mktemp("disjoint")
    left, _ = ph.render(_strip_spec(22, [100], [85, 240, 450]))
    right, _ = ph.render(_strip_spec(31, [330, 430], [140, 305, 470]))
    path_a, path_b = root / "left.png", root / "right.png"
    save_png(path_a, left)
    save_png(path_b, right)
    return path_a, path_b


# ---------------------------------------------------------------------------
# Configuration.

def test_canonical_modality_names_and_codes():
    assert pl.canonical_modality("color") == "color"
    assert pl.canonical_modality("red-free") == "red-free"
    assert pl.canonical_modality("angiography") == "angiography"
    assert pl.canonical_modality("1") == "color"
    assert pl.canonical_modality(2) == "red-free"
    assert pl.canonical_modality(" Angiography ") == "angiography"
    with pytest.raises(ConfigError):
        pl.canonical_modality("4")
    with pytest.raises(ConfigError):
        pl.canonical_modality("fundus")


def test_config_defaults():
    config = pl.PipelineConfig()
    assert config.modality1 == "angiography"
    assert config.modality2 == "angiography"
    assert config.approach == pl.APPROACH_INVARIANTS
    assert config.match_filter == "baseline"
    assert config.metric == "raw"
    assert config.interpolation == "bilinear"
    assert config.ransac_threshold == 3.0
    assert config.ransac_iterations == 2000
    assert config.seed == 42
    assert config.debug is False
    assert config.out_dir == "."


def test_config_validation_rejects_bad_values():
    with pytest.raises(ConfigError):
        pl.PipelineConfig(approach=3).validated()
    with pytest.raises(ConfigError):
        pl.PipelineConfig(match_filter="greedy").validated()
    with pytest.raises(ConfigError):
        pl.PipelineConfig(metric="l2").validated()
    with pytest.raises(ConfigError):
        pl.PipelineConfig(interpolation="lanczos").validated()
    with pytest.raises(ConfigError):
        pl.PipelineConfig(ransac_threshold=0.0).validated()
    with pytest.raises(ConfigError):
        pl.PipelineConfig(ransac_iterations=0).validated()


def test_load_config_precedence(tmp_path, monkeypatch):
    monkeypatch.delenv(pl.OUT_ENV_VAR, raising=False)
    assert pl.load_config().out_dir == "."
    monkeypatch.setenv(pl.OUT_ENV_VAR, "/tmp/envdir")
    assert pl.load_config().out_dir == "/tmp/envdir"
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"out": "/tmp/filedir", "approach": "1",
                               "ransac-threshold": 2.5}))
    from_file = pl.load_config(cfg)
    assert from_file.out_dir == "/tmp/filedir"
    assert from_file.approach == 1
    assert from_file.ransac_threshold == 2.5
    merged = pl.load_config(cfg, {"out": "/tmp/flagdir", "approach": None})
    assert merged.out_dir == "/tmp/flagdir"
    assert merged.approach == 1


def test_load_config_unknown_key_names_key_and_origin(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"bogus": 1}))
    with pytest.raises(ConfigError) as excinfo:
        pl.load_config(cfg)
    assert "bogus" in str(excinfo.value)
    assert str(cfg) in str(excinfo.value)
    with pytest.raises(ConfigError) as excinfo:
        pl.load_config(None, {"nonsense": "x"})
    assert "command line" in str(excinfo.value)


def test_load_config_file_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        pl.load_config(tmp_path / "missing.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(ConfigError):
        pl.load_config(broken)
    listing = tmp_path / "list.json"
    listing.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        pl.load_config(listing)


# ---------------------------------------------------------------------------
# Feature detection on known content.

def test_detection_recall_on_clean_grid():
    spec = helpers.equilateral_grid_spec()
    image, truth = ph.render(spec)
    detection = pl.detect_features_raster(image, "angiography")
    assert len(truth.junctions) == 12
    hits = helpers.junction_recall(truth, detection.features, 3.0)
    assert hits >= 10


def test_detection_single_equilateral_junction():
    image, truth = ph.render(_equilateral_spec())
    detection = pl.detect_features_raster(image, "angiography")
    assert len(detection.features) == 1
    feature = detection.features[0]
    assert len(feature.branch_positions) == 3
    gx, gy = truth.junctions[0].center
    assert math.hypot(feature.center[0] - gy, feature.center[1] - gx) <= 3.0


def test_detection_all_black_image_is_empty():
    detection = pl.detect_features_raster(np.zeros((64, 64), dtype=np.uint8),
                                          "angiography")
    assert detection.features == []
    assert detection.candidates == []


# ---------------------------------------------------------------------------
# Full registration runs.

def test_self_registration_succeeds(self_run):
    _out, report = self_run
    assert report.outcome == pl.OUTCOME_REGISTERED
    assert report.cause is None
    assert report.features_01 == report.features_02 == 12
    assert report.inliers == report.initial_matches == 12
    assert report.model_kind == "quadratic"
    assert report.mean_residual_px < 1e-6
    assert report.max_residual_px < 1e-6


def test_success_writes_exactly_the_artifact_set(self_run):
    out, _report = self_run
    assert {p.name for p in out.iterdir()} == SUCCESS_ARTIFACTS


def test_report_file_mirrors_report_object(self_run):
    out, report = self_run
    on_disk = json.loads((out / "report.json").read_text())
    assert on_disk == report.to_dict()
    assert on_disk["coords"] == "xy0"
    assert set(on_disk["timings_ms"]) == TIMING_KEYS
    assert all(v >= 0.0 for v in on_disk["timings_ms"].values())


def test_feature_artifact_schema(self_run):
    out, report = self_run
    payload = json.loads((out / "features_01.json").read_text())
    assert payload["coords"] == "xy0"
    assert payload["modality"] == "angiography"
    assert payload["count"] == report.features_01 == len(payload["features"])
    for feature in payload["features"]:
        assert 0 <= feature["center"]["x"] < 512
        assert 0 <= feature["center"]["y"] < 512
        assert len(feature["branches"]) == 3
        for branch in feature["branches"]:
            assert set(branch) == {"x", "y", "angle", "slope_class", "width"}
            assert 1 <= branch["slope_class"] <= 8
        assert feature["descriptor"] is None or len(feature["descriptor"]) == 4


def test_match_artifacts_are_consistent(self_run):
    out, report = self_run
    matches = json.loads((out / "matches.json").read_text())
    inliers = json.loads((out / "inliers.json").read_text())
    assert matches["count"] == report.initial_matches == len(matches["pairs"])
    assert inliers["count"] == report.inliers == len(inliers["pairs"])
    assert report.inliers <= report.initial_matches
    for pair in matches["pairs"]:
        assert set(pair) == {"index_01", "index_02", "point_01", "point_02",
                             "score"}
    # self registration pairs every feature with itself
    assert all(p["index_01"] == p["index_02"] for p in matches["pairs"])


def test_report_residuals_recompute_from_artifacts(self_run):
    out, report = self_run
    model = helpers.load_model(out)
    inliers = json.loads((out / "inliers.json").read_text())
    residuals = []
    for pair in inliers["pairs"]:
        src = (pair["point_02"]["x"], pair["point_02"]["y"])
        dst = np.array([pair["point_01"]["x"], pair["point_01"]["y"]])
        residuals.append(float(np.linalg.norm(tf.apply(model, src) - dst)))
    assert abs(np.mean(residuals) - report.mean_residual_px) < 1e-9
    assert abs(np.max(residuals) - report.max_residual_px) < 1e-9


def test_registration_under_known_warp(clean_tree_phantom, tmp_path):
    _spec, image, truth = clean_tree_phantom
    angle = math.radians(5.0)
    c, s = math.cos(angle), math.sin(angle)
    center = (512 - 1) / 2.0
    tx = 30.0 + center - c * center + s * center
    ty = -10.0 + center - s * center - c * center
    model = tf.TransformModel.affine(np.array([[c, -s, tx],
                                               [s, c, ty],
                                               [0.0, 0.0, 1.0]]))
    warped, warped_truth = ph.warp(image, truth, model)
    ref_path, sensed_path = tmp_path / "ref.png", tmp_path / "sensed.png"
    save_png(ref_path, image)
    save_png(sensed_path, warped)
    out = tmp_path / "out"
    config = pl.PipelineConfig(out_dir=str(out), match_filter="mutual")
    report = pl.register_pair(str(ref_path), str(sensed_path), config)
    assert report.outcome == pl.OUTCOME_REGISTERED
    fitted = helpers.load_model(out)
    assert helpers.ground_truth_rms(fitted, truth, warped_truth) < 2.0


def test_failed_run_leaves_only_the_report(tmp_path):
    flat_a, flat_b = tmp_path / "a.png", tmp_path / "b.png"
    save_png(flat_a, np.full((64, 64), 90, dtype=np.uint8))
    save_png(flat_b, np.full((64, 64), 90, dtype=np.uint8))
    out = tmp_path / "out"
    report = pl.register_pair(str(flat_a), str(flat_b),
                              pl.PipelineConfig(out_dir=str(out)))
    assert report.outcome == pl.OUTCOME_FAILED
    assert report.cause == "no-features"
    assert report.model_kind is None
    assert report.mean_residual_px is None
    assert {p.name for p in out.iterdir()} == {"report.json"}
    on_disk = json.loads((out / "report.json").read_text())
    assert on_disk["outcome"] == "failed"
    assert on_disk["cause"] == "no-features"


def test_disjoint_content_cannot_register(disjoint_paths, tmp_path):
    path_a, path_b = disjoint_paths
    out = tmp_path / "out"
    report = pl.register_pair(str(path_a), str(path_b),
                              pl.PipelineConfig(out_dir=str(out)))
    assert report.outcome == pl.OUTCOME_FAILED
    assert report.cause in ("insufficient-matches", "degenerate-matches")
    assert {p.name for p in out.iterdir()} == {"report.json"}


def test_debug_flag_writes_intermediate_rasters(clean_tree_paths, tmp_path):
    out = tmp_path / "out"
    config = pl.PipelineConfig(out_dir=str(out), debug=True)
    report = pl.register_pair(str(clean_tree_paths), str(clean_tree_paths), config)
    assert report.outcome == pl.OUTCOME_REGISTERED
    names = {p.name for p in out.iterdir()}
    expected = set(SUCCESS_ARTIFACTS)
    for prefix in ("debug_01_", "debug_02_"):
        expected |= {prefix + suffix for suffix in DEBUG_SUFFIXES}
    assert names == expected


# ---------------------------------------------------------------------------
# Command line.

def test_cli_register_round_trip(clean_tree_paths, tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["register", str(clean_tree_paths), str(clean_tree_paths),
                 "--out", str(out)])
    assert code == 0
    assert capsys.readouterr().out.startswith("registered:")
    assert (out / "report.json").exists()
    assert (out / "registered.png").exists()


def test_cli_register_failure_exits_2(disjoint_paths, tmp_path, capsys):
    path_a, path_b = disjoint_paths
    out = tmp_path / "out"
    code = main(["register", str(path_a), str(path_b), "--out", str(out)])
    assert code == 2
    assert "registration failed:" in capsys.readouterr().err
    assert {p.name for p in out.iterdir()} == {"report.json"}


def test_cli_register_out_flag_beats_config_file(disjoint_paths, tmp_path):
    path_a, path_b = disjoint_paths
    cfg = tmp_path / "cfg.json"
    dir_a, dir_b = tmp_path / "from_file", tmp_path / "from_flag"
    cfg.write_text(json.dumps({"out": str(dir_a)}))
    code = main(["register", str(path_a), str(path_b),
                 "--config", str(cfg), "--out", str(dir_b)])
    assert code == 2
    assert not dir_a.exists()
    assert (dir_b / "report.json").exists()
    code = main(["register", str(path_a), str(path_b), "--config", str(cfg)])
    assert code == 2
    assert (dir_a / "report.json").exists()


def test_cli_features_writes_feature_dump(clean_tree_paths, tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["features", str(clean_tree_paths), "--out", str(out), "--debug"])
    assert code == 0
    assert "12 features" in capsys.readouterr().out
    payload = json.loads((out / "features.json").read_text())
    assert payload["count"] == 12
    names = {p.name for p in out.iterdir()}
    assert names == {"features.json"} | {"debug_" + s for s in DEBUG_SUFFIXES}


def test_cli_features_empty_image_is_success(tmp_path, capsys):
    black = tmp_path / "black.png"
    save_png(black, np.zeros((64, 64), dtype=np.uint8))
    out = tmp_path / "out"
    code = main(["features", str(black), "--out", str(out)])
    assert code == 0
    payload = json.loads((out / "features.json").read_text())
    assert payload["count"] == 0 and payload["features"] == []


def test_cli_features_honours_out_env_var(tmp_path, monkeypatch, capsys):
    black = tmp_path / "black.png"
    save_png(black, np.zeros((64, 64), dtype=np.uint8))
    env_dir = tmp_path / "envout"
    monkeypatch.setenv(pl.OUT_ENV_VAR, str(env_dir))
    assert main(["features", str(black)]) == 0
    assert (env_dir / "features.json").exists()


def test_cli_phantom_renders_spec(tmp_path, capsys):
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(_equilateral_spec().to_dict()))
    out = tmp_path / "out"
    code = main(["phantom", str(spec_path), "--out", str(out)])
    assert code == 0
    from retreg.imgio import load_image
    image = load_image(out / "phantom.png")
    assert image.shape == (256, 256)
    truth = json.loads((out / "ground_truth.json").read_text())
    assert truth["coords"] == "xy0"
    assert len(truth["junctions"]) == 1
    junction = truth["junctions"][0]
    assert set(junction) == {"center", "angles", "widths"}
    assert len(junction["angles"]) == 3


def test_cli_error_paths_exit_1(tmp_path, capsys):
    cases = [
        ["register", str(tmp_path / "nope.png"), str(tmp_path / "nope.png")],
        ["register", "a.png", "b.png", "--approach", "7"],
        ["register", "a.png", "b.png", "--bogus"],
        ["features", str(tmp_path / "nope.png")],
        ["features", "x.png", "--modality", "9"],
        ["phantom", str(tmp_path / "nope.json")],
    ]
    for argv in cases:
        assert main(argv) == 1, argv
        assert capsys.readouterr().err.strip().splitlines()[-1].startswith("error:")


def test_cli_phantom_rejects_malformed_spec(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{broken")
    assert main(["phantom", str(bad)]) == 1
    assert "error:" in capsys.readouterr().err
    missing_key = tmp_path / "missing.json"
    missing_key.write_text(json.dumps({"seed": 1}))
    assert main(["phantom", str(missing_key)]) == 1
    assert "error:" in capsys.readouterr().err
