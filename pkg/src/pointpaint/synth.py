"""Deterministic synthetic scenes: primitives on a ground plane, an analytic
per-pixel rendered panoptic mask, and lidar points sampled on the very same
camera rays, so the mask label of every visible point provably equals its
ground-truth class at zero noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (AttrDesc, AttributeSchema, ClassSpace, GenerationError,
                   Kind, PointCloud, SchemaError)
from .geometry import Calibration, LabeledMask

CLASS_GROUND = 0
CLASS_VEHICLE = 1
CLASS_POLE = 2
CLASS_PEDESTRIAN = 3

DEFAULT_CLASSES = ClassSpace(("ground", "vehicle", "pole", "pedestrian"))

# reflectance is a surface property: one base level per object instance,
# jittered per point, so intensity groups instances without coding the class
_INTENSITY_RANGE = (0.2, 0.9)

RAW_SCHEMA = AttributeSchema((
    AttrDesc("x", Kind.CONTINUOUS, unit="m"),
    AttrDesc("y", Kind.CONTINUOUS, unit="m"),
    AttrDesc("z", Kind.CONTINUOUS, unit="m"),
    AttrDesc("intensity", Kind.CONTINUOUS),
    AttrDesc("t", Kind.CONTINUOUS, unit="s"),
))


def default_calibration(image_w: int = 200, image_h: int = 150,
                        focal: float = 120.0, cam_height: float = 1.6) -> Calibration:
    """Forward-looking camera, KITTI-style axes (lidar x forward / z up)."""
    p = np.array([[focal, 0.0, image_w / 2, 0.0],
                  [0.0, focal, image_h / 2, 0.0],
                  [0.0, 0.0, 1.0, 0.0]])
    r = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
    t = -r @ np.array([0.0, 0.0, cam_height])
    tvc = np.eye(4)
    tvc[:3, :3] = r
    tvc[:3, 3] = t
    return Calibration(P=p, R_rect=np.eye(4), T_velo_cam=tvc,
                       image_w=image_w, image_h=image_h)


@dataclass(frozen=True)
class SceneConfig:
    seed: int
    n_points: int = 512
    classes: ClassSpace = DEFAULT_CLASSES
    n_vehicles: tuple[int, int] = (1, 3)
    n_poles: tuple[int, int] = (1, 3)
    n_pedestrians: tuple[int, int] = (1, 3)
    x_range: tuple[float, float] = (4.0, 20.0)
    y_range: tuple[float, float] = (-6.0, 6.0)
    calib: Calibration = field(default_factory=default_calibration)
    mask_noise_rate: float = 0.0
    drop_rate: float = 0.0
    oov_fraction: float = 0.1  # share of points placed outside the camera view

    def __post_init__(self):
        if self.n_points < 1:
            raise SchemaError("n_points must be >= 1")
        for name in ("mask_noise_rate", "drop_rate", "oov_fraction"):
            r = getattr(self, name)
            if not 0.0 <= r <= 1.0:
                raise SchemaError(f"{name} must lie in [0, 1], got {r}")


@dataclass(frozen=True)
class Scene:
    cloud: PointCloud  # x,y,z,intensity,t with gt class labels
    gt_instance: np.ndarray  # per-point instance id
    mask: LabeledMask
    calib: Calibration
    config: SceneConfig


# ---- primitives and ray casting -------------------------------------------

_EPS = 1e-9


@dataclass(frozen=True)
class _Primitive:
    kind: str  # plane | box | cylinder | sphere
    class_id: int
    instance_id: int
    p: np.ndarray  # kind-specific geometry parameters


def _isect_plane(o, d):
    dz = d[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(np.abs(dz) > _EPS, -o[2] / dz, np.inf)
    return np.where(t > _EPS, t, np.inf)


def _isect_box(o, d, p):
    xmin, xmax, ymin, ymax, zmin, zmax = p
    lo = np.array([xmin, ymin, zmin])
    hi = np.array([xmax, ymax, zmax])
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (lo[None, :] - o[None, :]) * inv
        t2 = (hi[None, :] - o[None, :]) * inv
    tnear = np.minimum(t1, t2).max(axis=1)
    tfar = np.maximum(t1, t2).min(axis=1)
    hit = (tfar >= tnear) & (tfar > _EPS)
    t = np.where(tnear > _EPS, tnear, tfar)  # camera inside a box: exit face
    return np.where(hit, t, np.inf)


def _isect_sphere(o, d, p):
    cx, cy, cz, r = p
    oc = o - np.array([cx, cy, cz])
    a = (d * d).sum(axis=1)
    b = 2.0 * (d @ oc)
    c = oc @ oc - r * r
    disc = b * b - 4 * a * c
    ok = disc >= 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t1 = (-b - sq) / (2 * a)
    t2 = (-b + sq) / (2 * a)
    t = np.where(t1 > _EPS, t1, t2)
    return np.where(ok & (t > _EPS), t, np.inf)


def _isect_cylinder(o, d, p):
    # vertical lateral surface, z in [0, h]
    cx, cy, r, h = p
    ox, oy = o[0] - cx, o[1] - cy
    dx, dy = d[:, 0], d[:, 1]
    a = dx * dx + dy * dy
    b = 2.0 * (ox * dx + oy * dy)
    c = ox * ox + oy * oy - r * r
    disc = b * b - 4 * a * c
    ok = (disc >= 0) & (a > _EPS)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    denom = np.where(a > _EPS, 2 * a, 1.0)
    out = np.full(d.shape[0], np.inf)
    for root in ((-b - sq) / denom, (-b + sq) / denom):
        z = o[2] + root * d[:, 2]
        valid = ok & (root > _EPS) & (z >= 0) & (z <= h) & np.isinf(out)
        out = np.where(valid, root, out)
    return out


def _intersect(prim: _Primitive, o, d):
    if prim.kind == "plane":
        return _isect_plane(o, d)
    if prim.kind == "box":
        return _isect_box(o, d, prim.p)
    if prim.kind == "sphere":
        return _isect_sphere(o, d, prim.p)
    return _isect_cylinder(o, d, prim.p)


def _camera_rays(calib: Calibration):
    """Per-pixel-center rays. The chain matrix is [A|b]; the ray through
    pixel (u,v) is X(t) = -A^-1 b + t A^-1 (u,v,1), and t is exactly the
    image-coordinate depth of X(t), so nearest-hit in t is a depth z-buffer.
    """
    m = calib.chain()
    a, b = m[:, :3], m[:, 3]
    if abs(np.linalg.det(a)) < 1e-12:
        raise GenerationError("degenerate calibration: chain matrix not invertible")
    ainv = np.linalg.inv(a)
    origin = -ainv @ b
    uu, vv = np.meshgrid(np.arange(calib.image_w) + 0.5,
                         np.arange(calib.image_h) + 0.5)
    pix = np.stack([uu.ravel(), vv.ravel(), np.ones(uu.size)], axis=1)
    dirs = pix @ ainv.T
    return origin, dirs


def _render(prims: list[_Primitive], calib: Calibration):
    origin, dirs = _camera_rays(calib)
    ts = np.stack([_intersect(pr, origin, dirs) for pr in prims])
    winner = np.argmin(ts, axis=0)
    tmin = ts[winner, np.arange(ts.shape[1])]
    hit = np.isfinite(tmin)
    cls = np.array([pr.class_id for pr in prims])
    inst = np.array([pr.instance_id for pr in prims])
    sem = np.where(hit, cls[winner], -1).reshape(calib.image_h, calib.image_w)
    ins = np.where(hit, inst[winner], -1).reshape(calib.image_h, calib.image_w)
    pts = origin[None, :] + np.where(hit, tmin, 0.0)[:, None] * dirs
    return sem, ins, hit, pts


def _sample_primitives(cfg: SceneConfig, rng: np.random.Generator) -> list[_Primitive]:
    prims = [_Primitive("plane", CLASS_GROUND, 0, np.zeros(0))]
    counts = [int(rng.integers(lo, hi + 1)) for lo, hi in
              (cfg.n_vehicles, cfg.n_poles, cfg.n_pedestrians)]
    # instance ids are nominal: shuffle them so the id carries no class signal
    ids = [int(i) for i in 1 + rng.permutation(sum(counts))]
    x0, x1 = cfg.x_range
    y0, y1 = cfg.y_range

    def place():
        return rng.uniform(x0, x1), rng.uniform(y0, y1)

    for _ in range(counts[0]):
        cx, cy = place()
        hx, hy = rng.uniform(0.6, 1.2, size=2)
        hz = rng.uniform(0.5, 0.9)
        prims.append(_Primitive("box", CLASS_VEHICLE, ids.pop(),
                                np.array([cx - hx, cx + hx, cy - hy, cy + hy, 0.0, 2 * hz])))
    for _ in range(counts[1]):
        cx, cy = place()
        prims.append(_Primitive("cylinder", CLASS_POLE, ids.pop(),
                                np.array([cx, cy, rng.uniform(0.08, 0.2),
                                          rng.uniform(2.0, 4.0)])))
    for _ in range(counts[2]):
        cx, cy = place()
        r = rng.uniform(0.4, 0.8)
        cz = r + rng.uniform(0.0, 0.4)
        prims.append(_Primitive("sphere", CLASS_PEDESTRIAN, ids.pop(),
                                np.array([cx, cy, cz, r])))
    return prims


def gen_scene(config: SceneConfig) -> Scene:
    """Fully deterministic in config.seed; same config gives identical scenes."""
    rng = np.random.default_rng(config.seed)
    prims = _sample_primitives(config, rng)
    sem, ins, hit, hit_points = _render(prims, config.calib)
    hit_idx = np.flatnonzero(hit)
    if hit_idx.size == 0:
        raise GenerationError("camera sees no content: zero visible pixels")

    n_oov = int(round(config.n_points * config.oov_fraction))
    n_vis = config.n_points - n_oov

    chosen = rng.choice(hit_idx, size=n_vis, replace=True)
    xyz_vis = hit_points[chosen]
    cls_vis = sem.ravel()[chosen]
    inst_vis = ins.ravel()[chosen]

    # out-of-view points: on the ground behind the camera
    x_oov = rng.uniform(-20.0, -2.0, size=n_oov)
    y_oov = rng.uniform(config.y_range[0], config.y_range[1], size=n_oov)
    xyz_oov = np.stack([x_oov, y_oov, np.zeros(n_oov)], axis=1)

    xyz = np.concatenate([xyz_vis, xyz_oov])
    cls = np.concatenate([cls_vis, np.full(n_oov, CLASS_GROUND)])
    inst = np.concatenate([inst_vis, np.zeros(n_oov, dtype=np.int64)])

    perm = rng.permutation(config.n_points)
    xyz, cls, inst = xyz[perm], cls[perm], inst[perm]

    n_inst = int(max(pr.instance_id for pr in prims)) + 1
    inst_base = rng.uniform(*_INTENSITY_RANGE, size=n_inst)
    intensity = np.clip(inst_base[inst]
                        + rng.normal(0.0, 0.02, size=config.n_points), 0.0, 1.0)
    tstamp = rng.uniform(0.0, 0.1, size=config.n_points)
    values = np.column_stack([xyz, intensity, tstamp])

    if config.drop_rate > 0:
        n_drop = int(round(config.drop_rate * config.n_points))
        dropped = rng.choice(config.n_points, size=n_drop, replace=False)
        values[dropped] = 0.0

    mask = LabeledMask(width=config.calib.image_w, height=config.calib.image_h,
                       semantic=sem, instance=ins)
    if config.mask_noise_rate > 0:
        mask = corrupt_mask(mask, config.mask_noise_rate,
                            int(rng.integers(2 ** 62)))

    cloud = PointCloud(RAW_SCHEMA, values, gt_labels=cls)
    return Scene(cloud=cloud, gt_instance=inst.astype(np.int64), mask=mask,
                 calib=config.calib, config=config)


def corrupt_mask(mask: LabeledMask, rate: float, seed: int) -> LabeledMask:
    """Resample boundary-adjacent pixels to a neighboring region's label.

    A pixel is eligible iff some pixel within Chebyshev distance 2 carries a
    different semantic label; each eligible pixel is flipped with probability
    `rate` to the (semantic, instance) pair of a uniformly chosen differing
    neighbor in that window. Deterministic in seed.
    """
    if not 0.0 <= rate <= 1.0:
        raise SchemaError(f"rate must lie in [0, 1], got {rate}")
    if rate == 0.0:
        return mask
    h, w = mask.height, mask.width
    sem = mask.semantic
    inst = mask.instance
    ps = np.pad(sem, 2, mode="edge")
    pi = np.pad(inst, 2, mode="edge")
    shifts = [(dy, dx) for dy in range(-2, 3) for dx in range(-2, 3)
              if (dy, dx) != (0, 0)]
    diff = np.stack([ps[2 + dy:2 + dy + h, 2 + dx:2 + dx + w] != sem
                     for dy, dx in shifts])
    count = diff.sum(axis=0)
    eligible = count > 0

    rng = np.random.default_rng(seed)
    flip = eligible & (rng.random((h, w)) < rate)
    # pick the (r+1)-th differing neighbor, uniformly over the count
    r = np.floor(rng.random((h, w)) * count).astype(np.int64)
    cum = np.cumsum(diff, axis=0)
    sel = np.argmax(diff & (cum == r[None] + 1), axis=0)

    new_sem = sem.copy()
    new_inst = inst.copy()
    for k, (dy, dx) in enumerate(shifts):
        take = flip & (sel == k)
        new_sem[take] = ps[2 + dy:2 + dy + h, 2 + dx:2 + dx + w][take]
        new_inst[take] = pi[2 + dy:2 + dy + h, 2 + dx:2 + dx + w][take]
    return LabeledMask(width=w, height=h, semantic=new_sem, instance=new_inst)
