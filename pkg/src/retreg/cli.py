"""Command-line entry points.

Three subcommands: ``register`` runs the full pipeline on an image pair,
``features`` dumps the detected bifurcations of a single image, and
``phantom`` renders a synthetic vessel tree from a JSON description.

Exit codes: 0 on success, 2 when a registration could not be effectuated
(the report carries the cause), 1 for input or configuration problems.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import ConfigError, InputError, PhantomSpecError
from .imgio import save_png
from .phantom import VesselTreeSpec, render
from .pipeline import (COORDS, OUTCOME_REGISTERED, detect_features,
                       features_payload, load_config, register_pair,
                       write_debug_artifacts, write_json)


class _Parser(argparse.ArgumentParser):
    """Argument parser that reports usage problems as config errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="retreg",
                     description="Feature-based registration of retinal fundus images.")
    sub = parser.add_subparsers(dest="command", required=True)

    reg = sub.add_parser("register", help="register a sensed image onto a reference")
    reg.add_argument("image01", help="reference image")
    reg.add_argument("image02", help="sensed image, resampled onto the reference")
    reg.add_argument("--modality1", default=None,
                     help="reference modality: color | red-free | angiography, or 1 | 2 | 3")
    reg.add_argument("--modality2", default=None, help="sensed modality")
    reg.add_argument("--approach", type=int, default=None,
                     help="1 = mutual information, 2 = invariant descriptors")
    reg.add_argument("--match-filter", dest="match_filter", default=None,
                     help="baseline | mutual")
    reg.add_argument("--metric", default=None, help="raw | zscore")
    reg.add_argument("--interpolation", default=None,
                     help="nearest | bilinear | bicubic")
    reg.add_argument("--ransac-threshold", dest="ransac_threshold",
                     type=float, default=None, help="inlier distance in pixels")
    reg.add_argument("--ransac-iters", dest="ransac_iters", type=int, default=None)
    reg.add_argument("--seed", type=int, default=None)
    reg.add_argument("--debug", action="store_true", default=None,
                     help="also write the intermediate rasters")
    reg.add_argument("--out", default=None, help="output directory")
    reg.add_argument("--config", default=None, help="JSON config file")

    feats = sub.add_parser("features", help="detect bifurcations in one image")
    feats.add_argument("image")
    feats.add_argument("--modality", default=None)
    feats.add_argument("--debug", action="store_true", default=None)
    feats.add_argument("--out", default=None, help="output directory")

    phant = sub.add_parser("phantom", help="render a synthetic vessel-tree image")
    phant.add_argument("spec", help="JSON vessel-tree description")
    phant.add_argument("--out", default=None, help="output directory")
    return parser


def _cmd_register(args) -> int:
    flags = {"modality1": args.modality1, "modality2": args.modality2,
             "approach": args.approach, "match_filter": args.match_filter,
             "metric": args.metric, "interpolation": args.interpolation,
             "ransac_threshold": args.ransac_threshold,
             "ransac_iters": args.ransac_iters, "seed": args.seed,
             "debug": args.debug, "out": args.out}
    config = load_config(args.config, flags)
    report = register_pair(args.image01, args.image02, config)
    if report.outcome == OUTCOME_REGISTERED:
        print(f"registered: {report.inliers} inliers, {report.model_kind} model, "
              f"mean residual {report.mean_residual_px:.3f} px")
        return 0
    print(f"registration failed: {report.cause}", file=sys.stderr)
    return 2


def _cmd_features(args) -> int:
    flags = {"debug": args.debug, "out": args.out}
    if args.modality is not None:
        flags["modality1"] = args.modality
    config = load_config(None, flags)
    detection = detect_features(args.image, config.modality1)
    out_dir = Path(config.out_dir)
    write_json(out_dir / "features.json", features_payload(detection))
    if config.debug:
        write_debug_artifacts(detection, out_dir, "debug_")
    print(f"{len(detection.features)} features written to {out_dir / 'features.json'}")
    return 0


def _cmd_phantom(args) -> int:
    config = load_config(None, {"out": args.out})
    try:
        with open(args.spec, "r", encoding="utf-8") as handle:
            data = json.load(handle)
    except json.JSONDecodeError as exc:
        raise PhantomSpecError(f"cannot parse {args.spec}: {exc}") from exc
    image, truth = render(VesselTreeSpec.from_dict(data))
    out_dir = Path(config.out_dir)
    save_png(out_dir / "phantom.png", image)
    write_json(out_dir / "ground_truth.json",
               {"coords": COORDS,
                "junctions": [{"center": {"x": j.center[0], "y": j.center[1]},
                               "angles": list(j.angles),
                               "widths": list(j.widths)}
                              for j in truth.junctions]})
    print(f"phantom written to {out_dir}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "register":
            return _cmd_register(args)
        if args.command == "features":
            return _cmd_features(args)
        return _cmd_phantom(args)
    except (ConfigError, InputError, PhantomSpecError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
