"""Camera calibration, lidar-to-image projection, mask painting, and the
two-stage self-painting harness."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (AttrDesc, Kind, PointCloud, SchemaError, ShapeError,
                   append_column)
from .encoder import INSTANCE_CARDINALITY

_TINY_DEPTH = 1e-12


def _ro(a, shape) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    if a.shape != shape:
        raise ShapeError(f"expected shape {shape}, got {a.shape}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Calibration:
    P: np.ndarray  # 3x4 camera projection
    R_rect: np.ndarray  # 4x4 homogeneous rectification
    T_velo_cam: np.ndarray  # 4x4 homogeneous lidar->camera rigid transform
    image_w: int
    image_h: int

    def __post_init__(self):
        object.__setattr__(self, "P", _ro(self.P, (3, 4)))
        object.__setattr__(self, "R_rect", _ro(self.R_rect, (4, 4)))
        object.__setattr__(self, "T_velo_cam", _ro(self.T_velo_cam, (4, 4)))
        for name in ("R_rect", "T_velo_cam"):
            if not np.array_equal(getattr(self, name)[3], [0, 0, 0, 1]):
                raise ShapeError(f"bottom row of {name} must be (0,0,0,1)")
        if not np.any(self.P[2] != 0):
            raise ShapeError("third row of P (depth row) is all zero")
        if self.image_w < 1 or self.image_h < 1:
            raise ShapeError("image extents must be positive")

    def chain(self) -> np.ndarray:
        """The full 3x4 lidar-to-image matrix P . R_rect . T_velo_cam."""
        return self.P @ self.R_rect @ self.T_velo_cam


@dataclass(frozen=True)
class Projection:
    u: np.ndarray  # pixels, real-valued
    v: np.ndarray
    depth: np.ndarray  # image-coordinate z
    visible: np.ndarray  # bool
    image_w: int
    image_h: int

    @property
    def n_points(self) -> int:
        return self.u.shape[0]


@dataclass(frozen=True)
class LabeledMask:
    width: int
    height: int
    semantic: np.ndarray  # H x W ints in [-1, C)
    instance: np.ndarray  # H x W ints >= -1

    def __post_init__(self):
        sem = np.array(self.semantic, dtype=np.int64, copy=True)
        inst = np.array(self.instance, dtype=np.int64, copy=True)
        if sem.shape != (self.height, self.width) or inst.shape != sem.shape:
            raise ShapeError(
                f"mask arrays must be {self.height}x{self.width}, "
                f"got {sem.shape} and {inst.shape}")
        if np.any(sem < -1) or np.any(inst < -1):
            raise ShapeError("mask labels must be >= -1")
        sem.setflags(write=False)
        inst.setflags(write=False)
        object.__setattr__(self, "semantic", sem)
        object.__setattr__(self, "instance", inst)


def project_points(cloud: PointCloud, calib: Calibration) -> Projection:
    """Project x,y,z through P . R_rect . T_velo_cam; u,v stay real-valued.

    Points with |image z| < 1e-12 are flagged invisible and never divided.
    Visibility uses half-open pixel ranges: 0 <= u < image_w, 0 <= v < image_h.
    """
    for name in ("x", "y", "z"):
        if not cloud.schema.has(name):
            raise SchemaError(f"cloud lacks attribute {name!r} needed for projection")
    xyz = cloud.xyz()
    hom = np.concatenate([xyz, np.ones((xyz.shape[0], 1))], axis=1)
    img = hom @ calib.chain().T  # N x 3
    depth = img[:, 2]
    safe = np.abs(depth) >= _TINY_DEPTH
    denom = np.where(safe, depth, 1.0)
    u = np.where(safe, img[:, 0] / denom, 0.0)
    v = np.where(safe, img[:, 1] / denom, 0.0)
    visible = (safe & (depth > 0)
               & (u >= 0) & (u < calib.image_w)
               & (v >= 0) & (v < calib.image_h))
    return Projection(u=u, v=v, depth=depth, visible=visible,
                      image_w=calib.image_w, image_h=calib.image_h)


def paint_with_mask(cloud: PointCloud, proj: Projection, mask: LabeledMask,
                    num_classes: int) -> PointCloud:
    """Append "sem" and "inst" columns looked up at pixel (floor u, floor v).

    Invisible points get (-1, -1). Instance ids are nominal and folded modulo
    the embedding-table size; only distinctness matters downstream.
    """
    if proj.n_points != cloud.n_points:
        raise ShapeError(f"projection has {proj.n_points} points, cloud {cloud.n_points}")
    if (mask.width, mask.height) != (proj.image_w, proj.image_h):
        raise ShapeError(
            f"mask extent {mask.width}x{mask.height} != image extent "
            f"{proj.image_w}x{proj.image_h}")
    sem = np.full(cloud.n_points, -1.0)
    inst = np.full(cloud.n_points, -1.0)
    vis = proj.visible
    px = np.floor(proj.u[vis]).astype(np.int64)
    py = np.floor(proj.v[vis]).astype(np.int64)
    sem[vis] = mask.semantic[py, px]
    raw_inst = mask.instance[py, px]
    inst[vis] = np.where(raw_inst < 0, -1, raw_inst % INSTANCE_CARDINALITY)
    out = append_column(cloud, AttrDesc("sem", Kind.CATEGORICAL, num_classes), sem)
    return append_column(out, AttrDesc("inst", Kind.CATEGORICAL, INSTANCE_CARDINALITY), inst)


def self_paint_stage1(cloud: PointCloud, num_classes: int) -> PointCloud:
    """Stage-1 painting: a "selfsem" column of -1 (no prior known yet)."""
    col = np.full(cloud.n_points, -1.0)
    return append_column(cloud, AttrDesc("selfsem", Kind.CATEGORICAL, num_classes), col)


def self_paint_stage2(cloud: PointCloud, preds: np.ndarray,
                      num_classes: int) -> PointCloud:
    """Stage-2 painting: the stage-1 predictions become the "selfsem" column.

    Stage 2 carries real labels only; the label range is that of the
    segmentation task, so -1 and out-of-range ids are rejected.
    """
    preds = np.asarray(preds)
    if preds.shape != (cloud.n_points,):
        raise ShapeError(f"preds shape {preds.shape} != ({cloud.n_points},)")
    if np.any((preds != np.floor(preds)) | (preds < 0) | (preds >= num_classes)):
        raise SchemaError(f"stage-2 labels must lie in [0, {num_classes})")
    return append_column(cloud, AttrDesc("selfsem", Kind.CATEGORICAL, num_classes),
                         preds.astype(np.float64))


@dataclass(frozen=True)
class TwoStageResult:
    stage1: np.ndarray
    stage2: np.ndarray


def run_two_stage(model, cloud: PointCloud) -> TwoStageResult:
    """Infer once with the -1 prior, repaint with the result, infer again.

    `model` must expose predict(cloud) -> class ids and config.num_classes,
    and must have been trained with a selfsem input column.
    """
    c = model.config.num_classes
    stage1 = model.predict(self_paint_stage1(cloud, c))
    stage2 = model.predict(self_paint_stage2(cloud, stage1, c))
    return TwoStageResult(stage1=stage1, stage2=stage2)


def _rotation_about(axis: np.ndarray, angle: float) -> np.ndarray:
    # Rodrigues formula
    a = axis / np.linalg.norm(axis)
    kx = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + np.sin(angle) * kx + (1 - np.cos(angle)) * (kx @ kx)


def perturb_calibration(calib: Calibration, rot_noise_rad: float,
                        trans_noise_m: float, seed: int) -> Calibration:
    """Perturb the lidar->camera extrinsic: a rotation of exactly
    rot_noise_rad about a seeded random axis, plus a translation of exactly
    trans_noise_m along a seeded random direction. Zero noise returns the
    input unchanged.
    """
    if rot_noise_rad < 0 or trans_noise_m < 0:
        raise ShapeError("noise magnitudes must be >= 0")
    if rot_noise_rad == 0 and trans_noise_m == 0:
        return calib
    rng = np.random.default_rng(seed)
    delta = np.eye(4)
    if rot_noise_rad > 0:
        delta[:3, :3] = _rotation_about(rng.normal(size=3), rot_noise_rad)
    if trans_noise_m > 0:
        direction = rng.normal(size=3)
        delta[:3, 3] = trans_noise_m * direction / np.linalg.norm(direction)
    return Calibration(P=calib.P, R_rect=calib.R_rect,
                       T_velo_cam=delta @ calib.T_velo_cam,
                       image_w=calib.image_w, image_h=calib.image_h)
