"""Command-line surface: gen, paint, selfpaint, train, eval, gradcheck.

Exit codes: 0 success, 1 usage error, 2 data error. All randomness flows
from explicit seeds.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import fileio
from .core import PointPaintError, miou
from .encoder import EncoderConfig, SegmentationModel, init_params
from .geometry import (paint_with_mask, project_points, self_paint_stage1,
                       self_paint_stage2)
from .grad import Tape, grad_check
from .gradcheck import standard_grad_check
from .synth import SceneConfig, corrupt_mask, gen_scene
from .train import ExperimentConfig, train


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    p = _Parser(prog="pointpaint")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic scene", parents=[])
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True,
                   help="cloud text path; <out>.mask and <out>.calib are written too")
    g.add_argument("--points", type=int, default=512)
    g.add_argument("--noise", type=float, default=0.0, help="mask noise rate")

    q = sub.add_parser("paint", help="paint a cloud from a labeled mask")
    q.add_argument("--cloud", required=True)
    q.add_argument("--mask", required=True)
    q.add_argument("--calib", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--classes", type=int, default=4)
    q.add_argument("--noise", type=float, default=0.0,
                   help="corrupt the mask at this rate before painting")
    q.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("selfpaint", help="append the selfsem column")
    s.add_argument("--cloud", required=True)
    s.add_argument("--stage", type=int, choices=(1, 2), required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--classes", type=int, default=4)
    s.add_argument("--ckpt", help="trained checkpoint (required for stage 2)")

    t = sub.add_parser("train", help="run a training experiment")
    t.add_argument("--config", required=True, help="JSON experiment config")
    t.add_argument("--out", required=True, help="checkpoint output path")
    t.add_argument("--log", help="metrics log path (default: <out>.log)")
    t.add_argument("--seed", type=int, help="override the config seed")

    e = sub.add_parser("eval", help="mIoU of predictions against ground truth")
    e.add_argument("--pred", help="text file, one predicted class id per line")
    e.add_argument("--gt", help="text file, one ground-truth class id per line")
    e.add_argument("--cloud", help="cloud text with gt labels (model evaluation)")
    e.add_argument("--ckpt", help="checkpoint to evaluate --cloud with")
    e.add_argument("--classes", type=int, default=4)

    c = sub.add_parser("gradcheck", help="finite-difference gradient check")
    c.add_argument("--seed", type=int, default=0)
    return p


def _read_labels(path) -> np.ndarray:
    with open(path) as f:
        return np.array([int(line) for line in f.read().split()], dtype=np.int64)


def _cmd_gen(args) -> int:
    cfg = SceneConfig(seed=args.seed, n_points=args.points,
                      mask_noise_rate=args.noise)
    scene = gen_scene(cfg)
    fileio.write_cloud_text(args.out, scene.cloud)
    fileio.write_mask_text(args.out + ".mask", scene.mask)
    fileio.write_kitti_calib(args.out + ".calib", scene.calib)
    print(f"wrote {args.out} ({scene.cloud.n_points} points), "
          f"{args.out}.mask, {args.out}.calib")
    return 0


def _cmd_paint(args) -> int:
    cloud = fileio.read_cloud_text(args.cloud)
    mask = fileio.read_mask_text(args.mask)
    calib = fileio.read_calib(args.calib)
    if args.noise > 0:
        mask = corrupt_mask(mask, args.noise, args.seed)
    proj = project_points(cloud, calib)
    painted = paint_with_mask(cloud, proj, mask, args.classes)
    fileio.write_cloud_text(args.out, painted)
    print(f"wrote {args.out} ({int(proj.visible.sum())} of "
          f"{cloud.n_points} points visible)")
    return 0


def _cmd_selfpaint(args) -> int:
    cloud = fileio.read_cloud_text(args.cloud)
    if args.stage == 1:
        painted = self_paint_stage1(cloud, args.classes)
    else:
        if not args.ckpt:
            print("error: --ckpt is required for --stage 2", file=sys.stderr)
            return 1
        schema, config, params = fileio.load_checkpoint(args.ckpt)
        model = SegmentationModel(schema, config, params)
        stage1_cloud = self_paint_stage1(cloud, config.num_classes)
        preds = model.predict(stage1_cloud)
        painted = self_paint_stage2(cloud, preds, config.num_classes)
    fileio.write_cloud_text(args.out, painted)
    print(f"wrote {args.out}")
    return 0


def _cmd_train(args) -> int:
    cfg = ExperimentConfig.from_json(args.config)
    if args.seed is not None:
        cfg = type(cfg)(**{**cfg.__dict__, "seed": args.seed})
    result = train(cfg)
    fileio.save_checkpoint(args.out, result.model.schema, result.model.config,
                           result.model.params)
    log_path = args.log or args.out + ".log"
    with open(log_path, "w") as f:
        for line in result.metrics:
            f.write(line + "\n")
    print(f"wrote {args.out}; holdout miou={result.holdout_miou:.6g}")
    return 0


def _cmd_eval(args) -> int:
    if args.pred and args.gt:
        pred = _read_labels(args.pred)
        gt = _read_labels(args.gt)
        num_classes = args.classes
    elif args.cloud and args.ckpt:
        schema, config, params = fileio.load_checkpoint(args.ckpt)
        model = SegmentationModel(schema, config, params)
        cloud = fileio.read_cloud_text(args.cloud)
        if cloud.gt_labels is None:
            raise PointPaintError(f"{args.cloud} carries no gt labels")
        pred = model.predict(cloud)
        gt = cloud.gt_labels
        num_classes = config.num_classes
    else:
        print("error: eval needs either --pred/--gt or --cloud/--ckpt",
              file=sys.stderr)
        return 1
    result = miou(pred, gt, num_classes)
    for c, iou in enumerate(result.per_class_iou):
        print(f"class_iou[{c}]={'nan' if np.isnan(iou) else f'{iou:.12g}'}")
    print(f"miou={result.miou:.12g}")
    return 0


def _cmd_gradcheck(args) -> int:
    report = standard_grad_check(seed=args.seed)
    for name in sorted(report.per_tensor):
        err = report.per_tensor[name]
        status = "ok" if err <= report.tol else "FAIL"
        print(f"{name}: max_rel_err={err:.3e} {status}")
    for coord in report.failures:
        print(f"FLAGGED {coord}")
    print(f"max_rel_err={report.max_rel_err:.3e} "
          f"{'PASS' if report.passed else 'FAIL'}")
    return 0


_COMMANDS = {
    "gen": _cmd_gen,
    "paint": _cmd_paint,
    "selfpaint": _cmd_selfpaint,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (PointPaintError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
