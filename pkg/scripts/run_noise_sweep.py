#!/usr/bin/env python3
"""Sweep the mask corruption rate and report painted-point correctness.

For each rate, generates scenes, paints them from the (corrupted) mask and
prints the fraction of visible points whose painted class matches ground
truth, averaged over seeds.
"""

import argparse

import numpy as np

from pointpaint.geometry import paint_with_mask, project_points
from pointpaint.synth import SceneConfig, gen_scene


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--rates", type=float, nargs="+",
                    default=[0.0, 0.1, 0.2, 0.3, 0.5])
    ap.add_argument("--seeds", type=int, nargs="+", default=[11, 12, 13, 14, 15])
    ap.add_argument("--points", type=int, default=300)
    args = ap.parse_args()

    for rate in args.rates:
        fracs = []
        for seed in args.seeds:
            scene = gen_scene(SceneConfig(seed=seed, n_points=args.points,
                                          mask_noise_rate=rate))
            proj = project_points(scene.cloud, scene.calib)
            painted = paint_with_mask(scene.cloud, proj, scene.mask,
                                      scene.config.classes.num_classes)
            vis = proj.visible
            fracs.append(np.mean(painted.column("sem")[vis]
                                 == scene.cloud.gt_labels[vis]))
        print(f"rate={rate:.2f} correct_fraction={float(np.mean(fracs)):.4f}")


if __name__ == "__main__":
    main()
