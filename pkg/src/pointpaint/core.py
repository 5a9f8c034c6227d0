"""Shared domain types: attribute schemas, point clouds, class spaces, metrics."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class PointPaintError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(PointPaintError):
    pass


class ShapeError(PointPaintError):
    pass


class DataFormatError(PointPaintError):
    """Malformed on-disk data (bad calib key, truncated binary, bad header)."""


class GenerationError(PointPaintError):
    pass


class TrainingError(PointPaintError):
    pass


class Kind(enum.Enum):
    CONTINUOUS = "f"
    CATEGORICAL = "c"


@dataclass(frozen=True)
class AttrDesc:
    name: str
    kind: Kind
    cardinality: int | None = None  # categorical only; excludes the -1 sentinel
    unit: str = ""

    def __post_init__(self):
        if self.kind is Kind.CATEGORICAL:
            if self.cardinality is None or self.cardinality < 1:
                raise SchemaError(f"categorical attribute {self.name!r} needs cardinality >= 1")
        elif self.cardinality is not None:
            raise SchemaError(f"continuous attribute {self.name!r} must not carry a cardinality")


@dataclass(frozen=True)
class AttributeSchema:
    attrs: tuple[AttrDesc, ...]

    def __post_init__(self):
        object.__setattr__(self, "attrs", tuple(self.attrs))
        names = [a.name for a in self.attrs]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate attribute names in {names}")

    def __len__(self):
        return len(self.attrs)

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.attrs]

    def index_of(self, name: str) -> int:
        for i, a in enumerate(self.attrs):
            if a.name == name:
                return i
        raise SchemaError(f"no attribute named {name!r}")

    def has(self, name: str) -> bool:
        return name in self.names

    def extended(self, desc: AttrDesc) -> "AttributeSchema":
        return AttributeSchema(self.attrs + (desc,))


def _check_categorical(column: np.ndarray, desc: AttrDesc):
    ok = (column == -1.0) | (
        (column == np.floor(column)) & (column >= 0) & (column < desc.cardinality)
    )
    if not np.all(ok):
        bad = column[~ok][0]
        raise SchemaError(
            f"categorical attribute {desc.name!r}: value {bad} outside "
            f"{{-1}} U [0, {desc.cardinality})"
        )


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PointCloud:
    schema: AttributeSchema
    values: np.ndarray  # N x m, float64; categorical ids stored as integral reals
    gt_labels: np.ndarray | None = None  # length N int class ids, optional

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ShapeError(f"values must be 2-d, got shape {v.shape}")
        if v.shape[1] != len(self.schema):
            raise ShapeError(
                f"values have {v.shape[1]} columns, schema has {len(self.schema)} attributes"
            )
        for j, a in enumerate(self.schema.attrs):
            if a.kind is Kind.CATEGORICAL:
                _check_categorical(v[:, j], a)
        object.__setattr__(self, "values", _frozen(v))
        if self.gt_labels is not None:
            g = np.array(self.gt_labels, dtype=np.int64, copy=True)
            if g.shape != (v.shape[0],):
                raise ShapeError(f"gt_labels shape {g.shape} != ({v.shape[0]},)")
            g.setflags(write=False)
            object.__setattr__(self, "gt_labels", g)

    @property
    def n_points(self) -> int:
        return self.values.shape[0]

    @property
    def n_attrs(self) -> int:
        return self.values.shape[1]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.schema.index_of(name)]

    def xyz(self) -> np.ndarray:
        return np.stack([self.column(n) for n in ("x", "y", "z")], axis=1)


@dataclass(frozen=True)
class ClassSpace:
    names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if not self.names:
            raise SchemaError("class space needs at least one class")

    @property
    def num_classes(self) -> int:
        return len(self.names)


def append_column(cloud: PointCloud, desc: AttrDesc, column: np.ndarray) -> PointCloud:
    """Return a new cloud with `column` appended under `desc`; the input is untouched."""
    col = np.asarray(column, dtype=np.float64)
    if col.shape != (cloud.n_points,):
        raise ShapeError(f"column has shape {col.shape}, expected ({cloud.n_points},)")
    if cloud.schema.has(desc.name):
        raise SchemaError(f"attribute {desc.name!r} already present")
    if desc.kind is Kind.CATEGORICAL:
        _check_categorical(col, desc)
    values = np.concatenate([cloud.values, col[:, None]], axis=1)
    return PointCloud(cloud.schema.extended(desc), values, gt_labels=cloud.gt_labels)


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # C x C, rows = ground truth, cols = prediction

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ShapeError(f"confusion matrix must be square, got {c.shape}")
        if np.any(c < 0):
            raise ShapeError("confusion matrix entries must be non-negative")
        c = c.copy()
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion_matrix(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> ConfusionMatrix:
    pred = np.asarray(pred, dtype=np.int64)
    gt = np.asarray(gt, dtype=np.int64)
    if pred.shape != gt.shape or pred.ndim != 1:
        raise ShapeError(f"pred/gt shapes differ: {pred.shape} vs {gt.shape}")
    if pred.size == 0:
        raise ShapeError("cannot evaluate zero points")
    for name, ids in (("pred", pred), ("gt", gt)):
        if np.any((ids < 0) | (ids >= num_classes)):
            raise SchemaError(f"{name} ids must lie in [0, {num_classes})")
    flat = num_classes * gt + pred
    counts = np.bincount(flat, minlength=num_classes * num_classes)
    return ConfusionMatrix(counts.reshape(num_classes, num_classes))


@dataclass(frozen=True)
class MiouResult:
    per_class_iou: np.ndarray  # length C, nan where the class is absent from pred and gt
    miou: float


def miou_from_confusion(cm: ConfusionMatrix) -> MiouResult:
    counts = cm.counts.astype(np.float64)
    tp = np.diag(counts)
    fp = counts.sum(axis=0) - tp
    fn = counts.sum(axis=1) - tp
    denom = tp + fp + fn
    iou = np.full(counts.shape[0], np.nan)
    present = denom > 0
    iou[present] = tp[present] / denom[present]
    return MiouResult(per_class_iou=iou, miou=float(np.mean(iou[present])))


def miou(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> MiouResult:
    """Mean IoU over classes; classes absent from both pred and gt are excluded."""
    return miou_from_confusion(confusion_matrix(pred, gt, num_classes))
