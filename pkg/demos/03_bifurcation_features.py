"""From a vessel mask to validated bifurcation landmarks.

The cleaned vessel mask is thinned to a unit-width skeleton; every
skeleton pixel with three or more skeleton neighbors is a bifurcation
candidate.  Touching candidates merge into one point, overcrowded
clusters are dropped wholesale, and each survivor is validated on the
enhanced image: brightness arcs on a ring around the candidate must
resolve into exactly three well-separated branches.  Each accepted
landmark carries its ring positions and the surrounding region, the raw
material for the two matching approaches.

    python3 demos/03_bifurcation_features.py
"""

import os
from pathlib import Path

import numpy as np

from retreg.features import (bifurcation_candidates, cluster_candidates,
                             density_filter, skeletonize,
                             validate_bifurcation)
from retreg.imgio import save_pbm, save_png
from retreg.phantom import VesselBranch, VesselTreeSpec, render
from retreg.pipeline import detect_features_raster

OUT = Path(os.environ.get("RETREG_OUT", Path(__file__).parent / "demo_out"))
OUT = OUT / "03_features"


def junction(start, parent_angle, o1, o2):
    back = (parent_angle + 180.0) % 360.0
    return VesselBranch(
        angle=parent_angle, length=45.0, width=4.0, start=start,
        children=[VesselBranch(angle=(back + o1) % 360.0, length=40.0, width=4.0),
                  VesselBranch(angle=(back - o2) % 360.0, length=40.0, width=4.0)])


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    spec = VesselTreeSpec(
        seed=41, rows=320, cols=320, noise_sigma=0.5,
        branches=[junction((35.0, 75.0), 15.0, 55.0, 75.0),
                  junction((280.0, 70.0), 165.0, 95.0, 60.0),
                  junction((60.0, 255.0), 345.0, 70.0, 110.0),
                  junction((270.0, 245.0), 195.0, 115.0, 85.0)])
    image, truth = render(spec)
    save_png(OUT / "input.png", image)

    detection = detect_features_raster(image, "angiography")
    save_pbm(OUT / "skeleton.pbm", detection.skeleton)

    raw = bifurcation_candidates(detection.skeleton)
    clustered = cluster_candidates(raw, detection.skeleton.shape)
    survivors = density_filter(clustered)
    print(f"skeleton: {int(detection.skeleton.sum())} px")
    print(f"candidates: {len(raw)} raw -> {len(clustered)} clustered "
          f"-> {len(survivors)} after density filter")

    for point in survivors:
        feature, cause = validate_bifurcation(detection.enhanced, point)
        verdict = "accepted" if feature else f"rejected ({cause})"
        print(f"  candidate {point}: {verdict}")

    print(f"{len(detection.features)} validated features "
          f"for {len(truth.junctions)} ground-truth junctions")
    for feature in detection.features:
        r, c = feature.center
        nearest = min(truth.junctions,
                      key=lambda j: (j.center[0] - c) ** 2 + (j.center[1] - r) ** 2)
        dist = np.hypot(nearest.center[0] - c, nearest.center[1] - r)
        print(f"  feature at (x={c}, y={r}), {dist:.1f} px from ground truth")

    # red crosses on the channel mark the accepted landmarks
    overlay = np.stack([detection.channel] * 3, axis=2)
    overlay[detection.skeleton] = (90, 90, 230)
    for feature in detection.features:
        r, c = feature.center
        overlay[max(r - 4, 0):r + 5, c] = (255, 40, 40)
        overlay[r, max(c - 4, 0):c + 5] = (255, 40, 40)
    save_png(OUT / "landmarks.png", overlay)
    print(f"outputs in {OUT}")


if __name__ == "__main__":
    main()
