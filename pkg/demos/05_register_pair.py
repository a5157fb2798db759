"""The full pipeline in one call: register a sensed frame to a reference.

A rendered phantom stands in for the reference image and a rigidly
moved copy for the later acquisition.  ``register_pair`` runs the whole
chain on the two files: enhancement, thresholding, skeleton landmarks,
descriptor matching, consensus filtering, transform fitting and
resampling.  Every intermediate result lands in the output directory as
a JSON or image artifact, so the run can be audited afterwards.  The
script closes the loop by reading the written ``transform.json`` back
and checking it against the motion the phantom was given.

Set ``RETREG_OUT`` to redirect the artifacts, for example

    RETREG_OUT=/tmp/demo python3 demos/05_register_pair.py
"""

import json
import math
import os
from pathlib import Path

import numpy as np

from retreg.imgio import save_png
from retreg.phantom import VesselBranch, VesselTreeSpec, render, warp
from retreg.pipeline import PipelineConfig, register_pair
from retreg.transform import TransformModel, apply

OUT = Path(os.environ.get("RETREG_OUT", Path(__file__).parent / "demo_out"))
OUT = OUT / "05_register_pair"

# per junction: center, parent angle, child offsets off the parent's
# back direction, child widths; every arm direction is an odd multiple
# of 15 degrees so the skeleton stays artifact free
LAYOUT = [((120.0, 100.0), 15.0, (120.0, 120.0), (4.0, 4.0)),
          ((360.0, 90.0), 75.0, (90.0, 120.0), (4.0, 5.0)),
          ((110.0, 260.0), 135.0, (60.0, 150.0), (5.0, 4.0)),
          ((380.0, 270.0), 195.0, (90.0, 150.0), (5.0, 5.0)),
          ((130.0, 420.0), 255.0, (150.0, 120.0), (4.0, 5.0)),
          ((350.0, 430.0), 315.0, (60.0, 90.0), (5.0, 5.0))]


def build_spec():
    branches = []
    for center, parent, (o1, o2), (w1, w2) in LAYOUT:
        back = (parent + 180.0) % 360.0
        rad = math.radians(parent)
        start = (center[0] - 45.0 * math.cos(rad),
                 center[1] + 45.0 * math.sin(rad))
        children = [VesselBranch(angle=(back + o1) % 360.0, length=40.0, width=w1),
                    VesselBranch(angle=(back - o2) % 360.0, length=40.0, width=w2)]
        branches.append(VesselBranch(angle=parent, length=45.0, width=4.0,
                                     start=start, children=children))
    # full-span chords keep vessel coverage high enough that the entropy
    # threshold stays stable under noise; their crossings also seed a few
    # decoy candidates for the consensus stage to reject
    for x in (175.0, 330.0):
        branches.append(VesselBranch(angle=270.0, length=511.0, width=3.0,
                                     start=(x, 0.0)))
    for y in (175.0, 340.0):
        branches.append(VesselBranch(angle=0.0, length=511.0, width=3.0,
                                     start=(0.0, y)))
    return VesselTreeSpec(seed=77, rows=512, cols=512, noise_sigma=1.5,
                          branches=branches)


def rigid_about_center(angle_deg, tx, ty, dims):
    a = math.radians(angle_deg)
    c, s = math.cos(a), math.sin(a)
    m = (dims - 1) / 2.0
    return TransformModel.affine(np.array(
        [[c, -s, tx + m - c * m + s * m],
         [s, c, ty + m - s * m - c * m],
         [0.0, 0.0, 1.0]]))


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    reference, truth_ref = render(build_spec())
    motion = rigid_about_center(4.0, 25.0, -12.0, 512)
    sensed, truth_sen = warp(reference, truth_ref, motion)

    ref_path = OUT / "reference.png"
    sen_path = OUT / "sensed.png"
    save_png(ref_path, reference)
    save_png(sen_path, sensed)

    config = PipelineConfig(match_filter="mutual", out_dir=str(OUT))
    report = register_pair(ref_path, sen_path, config)

    print(f"outcome: {report.outcome}")
    print(f"features: {report.features_01} reference, "
          f"{report.features_02} sensed")
    print(f"matches: {report.initial_matches} initial, "
          f"{report.inliers} after consensus")
    print(f"model: {report.model_kind}, residuals "
          f"{report.mean_residual_px:.3f} px mean / "
          f"{report.max_residual_px:.3f} px max")
    print(f"total time: {report.timings_ms['total']:.0f} ms")

    print("artifacts:")
    for path in sorted(OUT.iterdir()):
        if path.suffix in (".json", ".png", ".pbm") and path not in (ref_path,
                                                                     sen_path):
            print(f"  {path.name} ({path.stat().st_size} bytes)")

    # read the stored transform back and score it against the known
    # motion: the model maps sensed coordinates onto the reference
    data = json.loads((OUT / "transform.json").read_text())
    co = np.array(data["coefficients"])
    co = co.reshape((2, 6) if data["kind"] == "quadratic" else (3, 3))
    model = TransformModel(kind=data["kind"], coefficients=co)
    errs = [np.linalg.norm(apply(model, j_sen.center) - np.asarray(j_ref.center))
            for j_ref, j_sen in zip(truth_ref.junctions, truth_sen.junctions)]
    rms = math.sqrt(float(np.mean(np.square(errs))))
    print(f"junction centers mapped back onto the reference: "
          f"{rms:.3f} px RMS against ground truth")


if __name__ == "__main__":
    main()
