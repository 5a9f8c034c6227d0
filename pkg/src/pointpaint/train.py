"""Experiment configuration and the deterministic training loop."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import PointCloud, SchemaError, TrainingError, miou
from .encoder import (EncoderConfig, SegmentationModel, _knn_average_matrix,
                      forward_graph, init_params)
from .geometry import (paint_with_mask, project_points, run_two_stage,
                       self_paint_stage1)
from .grad import AdamState, Tape, adam_step, backward, zero_grads
from .synth import SceneConfig, Scene, gen_scene

PAINTING_MODES = ("none", "mask", "self")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    painting: str = "none"
    steps: int = 800
    lr: float = 0.005
    n_train_scenes: int = 24
    n_holdout_scenes: int = 2
    points_per_scene: int = 384
    mask_noise_rate: float = 0.0
    selfsem_corrupt_rate: float = 0.5  # per-object label-flip rate for "self" samples
    token_dim: int = 4
    head_hidden: int = 32
    knn_k: int = 8
    log_every: int = 50

    def __post_init__(self):
        if self.painting not in PAINTING_MODES:
            raise SchemaError(f"painting mode must be one of {PAINTING_MODES}")
        if self.steps < 0 or self.lr <= 0:
            raise SchemaError("steps must be >= 0 and lr > 0")

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        with open(path) as f:
            raw = json.load(f)
        known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        unknown = set(raw) - known
        if unknown:
            raise SchemaError(f"unknown config keys: {sorted(unknown)}")
        if "seed" not in raw:
            raise SchemaError("config must set an explicit seed")
        return cls(**raw)


def _scene_config(cfg: ExperimentConfig, seed: int) -> SceneConfig:
    return SceneConfig(seed=seed, n_points=cfg.points_per_scene,
                       mask_noise_rate=cfg.mask_noise_rate)


def prepared_cloud(scene: Scene, painting: str) -> PointCloud:
    """The model-input cloud for a scene under the given painting mode.

    "mask" appends the projected mask labels; "self" appends the stage-1
    sentinel column (training substitutes per-sample columns on top); "none"
    leaves the raw attributes.
    """
    c = scene.config.classes.num_classes
    if painting == "mask":
        proj = project_points(scene.cloud, scene.calib)
        return paint_with_mask(scene.cloud, proj, scene.mask, c)
    if painting == "self":
        return self_paint_stage1(scene.cloud, c)
    return scene.cloud


@dataclass
class TrainResult:
    model: SegmentationModel
    metrics: list[str]  # structured "step=... loss=... miou_train=... miou_holdout=..." lines
    holdout_miou: float
    holdout_miou_stage1: float | None = None  # "self" mode only


def _corrupt_labels(gt: np.ndarray, gt_instance: np.ndarray, num_classes: int,
                    rate: float, rng: np.random.Generator) -> np.ndarray:
    """Training-time label corruption for "self" samples.

    Stage-1 mistakes are correlated within an object, so corruption is
    object-level: each instance is flipped to one uniformly random other
    class with probability `rate`, every point of it consistently.
    """
    lbl = gt.astype(np.float64).copy()
    for inst in np.unique(gt_instance):
        if rng.random() < rate:
            sel = gt_instance == inst
            true = int(gt[sel][0])
            lbl[sel] = (true + int(rng.integers(1, num_classes))) % num_classes
    return lbl


def _holdout_miou(model: SegmentationModel, clouds, labels, num_classes) -> float:
    preds = np.concatenate([model.predict(cl) for cl in clouds])
    return miou(preds, np.concatenate(labels), num_classes).miou


def train(cfg: ExperimentConfig) -> TrainResult:
    """Deterministic in cfg.seed: scene generation, init, sample order and the
    per-sample selfsem columns all flow from it. Aborts on non-finite loss."""
    rng = np.random.default_rng(cfg.seed)
    scene_seeds = [int(rng.integers(2 ** 62)) for _ in
                   range(cfg.n_train_scenes + cfg.n_holdout_scenes)]
    scenes = [gen_scene(_scene_config(cfg, s)) for s in scene_seeds]
    train_scenes = scenes[:cfg.n_train_scenes]
    holdout_scenes = scenes[cfg.n_train_scenes:]
    num_classes = scenes[0].config.classes.num_classes

    train_clouds = [prepared_cloud(s, cfg.painting) for s in train_scenes]
    holdout_clouds = [prepared_cloud(s, cfg.painting) for s in holdout_scenes]
    schema = train_clouds[0].schema

    enc = EncoderConfig(n_attrs=len(schema), num_classes=num_classes,
                        token_dim=cfg.token_dim, head_hidden=cfg.head_hidden,
                        knn_k=cfg.knn_k)
    params = init_params(schema, enc, seed=int(rng.integers(2 ** 62)))
    model = SegmentationModel(schema, enc, params)
    state = AdamState()

    # per-scene constants
    knn_mats = None
    if enc.knn_k > 0:
        knn_mats = [_knn_average_matrix(s.cloud.xyz(), enc.knn_k) for s in train_scenes]
    selfsem_col = schema.index_of("selfsem") if cfg.painting == "self" else None

    def holdout():
        if cfg.painting == "self":
            res = [run_two_stage(model, s.cloud) for s in holdout_scenes]
            gts = [s.cloud.gt_labels for s in holdout_scenes]
            gt = np.concatenate(gts)
            m1 = miou(np.concatenate([r.stage1 for r in res]), gt, num_classes).miou
            m2 = miou(np.concatenate([r.stage2 for r in res]), gt, num_classes).miou
            return m2, m1
        m = _holdout_miou(model, holdout_clouds,
                          [s.cloud.gt_labels for s in holdout_scenes], num_classes)
        return m, None

    metrics: list[str] = []

    def log(step, loss):
        m_train = _holdout_miou(model, train_clouds,
                                [s.cloud.gt_labels for s in train_scenes], num_classes)
        m_hold, m1 = holdout()
        line = (f"step={step} loss={loss:.12g} "
                f"miou_train={m_train:.12g} miou_holdout={m_hold:.12g}")
        if m1 is not None:
            line += f" miou_stage1={m1:.12g}"
        metrics.append(line)

    for step in range(1, cfg.steps + 1):
        si = (step - 1) % cfg.n_train_scenes
        scene = train_scenes[si]
        values = train_clouds[si].values
        if cfg.painting == "self":
            values = values.copy()
            gt = scene.cloud.gt_labels.astype(np.float64)
            if rng.random() < 0.5:
                values[:, selfsem_col] = -1.0
            else:
                values[:, selfsem_col] = _corrupt_labels(
                    gt, scene.gt_instance, num_classes,
                    cfg.selfsem_corrupt_rate, rng)

        tape = Tape()
        logits = forward_graph(tape, values, schema, params, enc,
                               knn_matrix=None if knn_mats is None else knn_mats[si])
        loss = tape.cross_entropy(logits, scene.cloud.gt_labels)
        if not np.isfinite(loss.data):
            raise TrainingError(f"non-finite loss {loss.data} at step {step}")
        zero_grads(params)
        backward(tape, loss)
        adam_step(params, state, lr=cfg.lr)

        if step % cfg.log_every == 0 or step == cfg.steps:
            log(step, float(loss.data))

    if cfg.steps == 0:
        log(0, float("nan"))
    m_hold, m1 = holdout()
    return TrainResult(model=model, metrics=metrics, holdout_miou=m_hold,
                       holdout_miou_stage1=m1)
