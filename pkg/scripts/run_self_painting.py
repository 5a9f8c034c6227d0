#!/usr/bin/env python3
"""Measure how much the second self-painting pass improves over the first.

Trains a self-painting model per seed and reports stage-1 and stage-2
holdout mIoU; stage 2 feeds the stage-1 predictions back in as the
selfsem column.
"""

import argparse

import numpy as np

from pointpaint.train import ExperimentConfig, train


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+",
                    default=[101, 102, 103, 104, 105])
    ap.add_argument("--steps", type=int, default=800)
    ap.add_argument("--corrupt-rate", type=float, default=0.5,
                    help="object-level label corruption rate during training")
    args = ap.parse_args()

    s1, s2 = [], []
    for seed in args.seeds:
        result = train(ExperimentConfig(seed=seed, painting="self",
                                        steps=args.steps,
                                        selfsem_corrupt_rate=args.corrupt_rate))
        s1.append(result.holdout_miou_stage1)
        s2.append(result.holdout_miou)
        print(f"seed={seed} stage1={s1[-1]:.4f} stage2={s2[-1]:.4f} "
              f"delta={s2[-1] - s1[-1]:+.4f}")

    m1, m2 = float(np.mean(s1)), float(np.mean(s2))
    print(f"mean stage1={m1:.4f} mean stage2={m2:.4f} delta={m2 - m1:+.4f}")


if __name__ == "__main__":
    main()
