"""On-disk formats: KITTI velodyne binaries and calib text, the columnar
cloud-text format, mask text files, and the binary parameter checkpoint.

Cloud text: one header line of "name:kind" tokens ("x:f" continuous,
"sem:c4" categorical with cardinality 4), optionally a trailing "gt:l"
column carrying ground-truth class labels, then one whitespace-separated
row per point. Floats are written with repr precision, so round-trips are
lossless.

Checkpoint: little-endian; magic "PEPK", u32 format version, a config block
(u32 token_dim, heads, num_classes, head_hidden, knn_k, n_attrs, then per
attribute: u16 name length, name bytes, kind byte, u32 cardinality or 0),
u32 tensor count, then per tensor: u32 name length, name bytes, u32 rank,
u32 dims, float64 payload.
"""

from __future__ import annotations

import struct

import numpy as np

from .core import (AttrDesc, AttributeSchema, DataFormatError, Kind,
                   PointCloud)
from .encoder import EncoderConfig
from .geometry import Calibration, LabeledMask
from .grad import Tensor

# ---- KITTI velodyne binary -------------------------------------------------

KITTI_SCHEMA = AttributeSchema((
    AttrDesc("x", Kind.CONTINUOUS, unit="m"),
    AttrDesc("y", Kind.CONTINUOUS, unit="m"),
    AttrDesc("z", Kind.CONTINUOUS, unit="m"),
    AttrDesc("intensity", Kind.CONTINUOUS),
))


def read_kitti_bin(path) -> PointCloud:
    """Little-endian float32 (x, y, z, intensity) records, widened to float64."""
    raw = open(path, "rb").read()
    if len(raw) % 16 != 0:
        raise DataFormatError(
            f"{path}: length {len(raw)} not divisible by 16-byte records")
    values = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(-1, 4)
    return PointCloud(KITTI_SCHEMA, values)


def write_kitti_bin(path, cloud: PointCloud) -> None:
    if cloud.schema.names[:4] != ["x", "y", "z", "intensity"]:
        raise DataFormatError("KITTI binary needs leading x,y,z,intensity attributes")
    cols = [cloud.column(n) for n in ("x", "y", "z", "intensity")]
    np.stack(cols, axis=1).astype("<f4").tofile(path)


# ---- KITTI calibration text ------------------------------------------------

_CALIB_ARITY = {"P2": 12, "R0_rect": 9, "Tr_velo_to_cam": 12}


def read_kitti_calib(path, image_w: int = 1242, image_h: int = 375) -> Calibration:
    """Parse "P2:", "R0_rect:", "Tr_velo_to_cam:" lines; image extents are not
    stored in KITTI calib files, so they are passed in (defaults match the
    usual KITTI camera-2 resolution)."""
    found: dict[str, np.ndarray] = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            if ":" not in line:
                continue
            key, rest = line.split(":", 1)
            key = key.strip()
            if key not in _CALIB_ARITY:
                continue
            fields = rest.split()
            if len(fields) != _CALIB_ARITY[key]:
                raise DataFormatError(
                    f"{path}:{lineno}: key {key!r} has {len(fields)} values, "
                    f"expected {_CALIB_ARITY[key]}")
            vals = np.empty(len(fields))
            for col, tok in enumerate(fields):
                try:
                    vals[col] = float(tok)
                except ValueError:
                    raise DataFormatError(
                        f"{path}:{lineno}: key {key!r}, field {col + 1}: "
                        f"unparsable number {tok!r}") from None
            found[key] = vals
    for key in _CALIB_ARITY:
        if key not in found:
            raise DataFormatError(f"{path}: missing calibration key {key!r}")
    p = found["P2"].reshape(3, 4)
    r = np.eye(4)
    r[:3, :3] = found["R0_rect"].reshape(3, 3)
    t = np.eye(4)
    t[:3, :] = found["Tr_velo_to_cam"].reshape(3, 4)
    return Calibration(P=p, R_rect=r, T_velo_cam=t, image_w=image_w, image_h=image_h)


def write_kitti_calib(path, calib: Calibration) -> None:
    def row(vals):
        return " ".join(repr(float(v)) for v in vals)

    with open(path, "w") as f:
        f.write(f"P2: {row(calib.P.ravel())}\n")
        f.write(f"R0_rect: {row(calib.R_rect[:3, :3].ravel())}\n")
        f.write(f"Tr_velo_to_cam: {row(calib.T_velo_cam[:3, :].ravel())}\n")
        f.write(f"image_extent: {calib.image_w} {calib.image_h}\n")


def read_calib(path) -> Calibration:
    """read_kitti_calib, honoring an optional image_extent line if present."""
    w, h = 1242, 375
    with open(path) as f:
        for line in f:
            if line.startswith("image_extent:"):
                fields = line.split(":", 1)[1].split()
                if len(fields) != 2:
                    raise DataFormatError(f"{path}: image_extent needs 2 values")
                w, h = int(fields[0]), int(fields[1])
    return read_kitti_calib(path, image_w=w, image_h=h)


# ---- columnar cloud text ---------------------------------------------------


def _kind_suffix(a: AttrDesc) -> str:
    return "f" if a.kind is Kind.CONTINUOUS else f"c{a.cardinality}"


def write_cloud_text(path, cloud: PointCloud) -> None:
    header = [f"{a.name}:{_kind_suffix(a)}" for a in cloud.schema.attrs]
    if cloud.gt_labels is not None:
        header.append("gt:l")
    with open(path, "w") as f:
        f.write(" ".join(header) + "\n")
        for i in range(cloud.n_points):
            row = [repr(float(v)) for v in cloud.values[i]]
            if cloud.gt_labels is not None:
                row.append(str(int(cloud.gt_labels[i])))
            f.write(" ".join(row) + "\n")


def read_cloud_text(path) -> PointCloud:
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines:
        raise DataFormatError(f"{path}: empty file, expected a header line")
    attrs = []
    has_gt = False
    tokens = lines[0].split()
    for i, tok in enumerate(tokens):
        if ":" not in tok:
            raise DataFormatError(f"{path}: header token {tok!r} lacks a kind suffix")
        name, kind = tok.rsplit(":", 1)
        if kind == "l":
            if i != len(tokens) - 1:
                raise DataFormatError(f"{path}: gt column must come last")
            has_gt = True
        elif kind == "f":
            attrs.append(AttrDesc(name, Kind.CONTINUOUS))
        elif kind.startswith("c") and kind[1:].isdigit():
            attrs.append(AttrDesc(name, Kind.CATEGORICAL, int(kind[1:])))
        else:
            raise DataFormatError(f"{path}: unknown kind suffix in {tok!r}")
    schema = AttributeSchema(tuple(attrs))
    width = len(attrs) + (1 if has_gt else 0)
    values = np.empty((len(lines) - 1, len(attrs)))
    gt = np.empty(len(lines) - 1, dtype=np.int64) if has_gt else None
    for r, line in enumerate(lines[1:], start=2):
        fields = line.split()
        if len(fields) != width:
            raise DataFormatError(
                f"{path}:{r}: row has {len(fields)} fields, header has {width}")
        try:
            values[r - 2] = [float(tok) for tok in fields[:len(attrs)]]
            if has_gt:
                gt[r - 2] = int(fields[-1])
        except ValueError as e:
            raise DataFormatError(f"{path}:{r}: {e}") from None
    return PointCloud(schema, values, gt_labels=gt)


# ---- mask text -------------------------------------------------------------


def write_mask_text(path, mask: LabeledMask) -> None:
    with open(path, "w") as f:
        f.write(f"{mask.width} {mask.height}\n")
        for grid in (mask.semantic, mask.instance):
            for row in grid:
                f.write(" ".join(str(int(v)) for v in row) + "\n")


def read_mask_text(path) -> LabeledMask:
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines:
        raise DataFormatError(f"{path}: empty mask file")
    try:
        w, h = (int(tok) for tok in lines[0].split())
    except ValueError:
        raise DataFormatError(f"{path}:1: expected 'width height'") from None
    if len(lines) != 1 + 2 * h:
        raise DataFormatError(
            f"{path}: expected {1 + 2 * h} lines for a {w}x{h} mask, got {len(lines)}")

    def grid(rows, base):
        out = np.empty((h, w), dtype=np.int64)
        for i, line in enumerate(rows):
            fields = line.split()
            if len(fields) != w:
                raise DataFormatError(
                    f"{path}:{base + i + 1}: row has {len(fields)} values, expected {w}")
            out[i] = [int(tok) for tok in fields]
        return out

    return LabeledMask(width=w, height=h, semantic=grid(lines[1:1 + h], 1),
                       instance=grid(lines[1 + h:], 1 + h))


# ---- binary parameter checkpoint ------------------------------------------

_MAGIC = b"PEPK"
_VERSION = 1


def save_checkpoint(path, schema: AttributeSchema, config: EncoderConfig,
                    params: dict[str, Tensor]) -> None:
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", _VERSION))
        f.write(struct.pack("<6I", config.token_dim, config.heads,
                            config.num_classes, config.head_hidden,
                            config.knn_k, config.n_attrs))
        for a in schema.attrs:
            name = a.name.encode()
            f.write(struct.pack("<H", len(name)))
            f.write(name)
            f.write(a.kind.value.encode())
            f.write(struct.pack("<I", a.cardinality or 0))
        f.write(struct.pack("<I", len(params)))
        for name, t in params.items():
            nb = name.encode()
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", t.data.ndim))
            f.write(struct.pack(f"<{t.data.ndim}I", *t.data.shape))
            f.write(t.data.astype("<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != _MAGIC:
        raise DataFormatError(f"{path}: bad magic {raw[:4]!r}")
    off = 4

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(raw):
            raise DataFormatError(f"{path}: truncated checkpoint")
        out = struct.unpack_from(fmt, raw, off)
        off += size
        return out

    (version,) = take("<I")
    if version != _VERSION:
        raise DataFormatError(f"{path}: unsupported checkpoint version {version}")
    d, heads, c, hidden, knn_k, n_attrs = take("<6I")
    attrs = []
    for _ in range(n_attrs):
        (nlen,) = take("<H")
        name = raw[off:off + nlen].decode()
        off += nlen
        kind = raw[off:off + 1].decode()
        off += 1
        (card,) = take("<I")
        attrs.append(AttrDesc(name, Kind(kind), card if kind == "c" else None))
    schema = AttributeSchema(tuple(attrs))
    config = EncoderConfig(n_attrs=n_attrs, num_classes=c, token_dim=d,
                           heads=heads, head_hidden=hidden, knn_k=knn_k)
    (n_tensors,) = take("<I")
    params: dict[str, Tensor] = {}
    for _ in range(n_tensors):
        (nlen,) = take("<I")
        name = raw[off:off + nlen].decode()
        off += nlen
        (rank,) = take("<I")
        dims = take(f"<{rank}I")
        count = int(np.prod(dims)) if rank else 1
        size = 8 * count
        if off + size > len(raw):
            raise DataFormatError(f"{path}: truncated tensor payload for {name!r}")
        data = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(dims)
        off += size
        params[name] = Tensor(data.copy(), requires_grad=True)
    return schema, config, params
