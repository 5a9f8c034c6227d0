"""Attribute-token point encoder: per-attribute tokenizer, single-layer
self-attention over the tokens of one point, and a small per-point
segmentation head with optional k-NN mean pooling for spatial context.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import AttributeSchema, Kind, PointCloud, SchemaError, ShapeError
from .grad import Tape, Tensor

# instance ids are nominal; scene-local ids are folded into a fixed-size table
INSTANCE_CARDINALITY = 64


@dataclass(frozen=True)
class EncoderConfig:
    n_attrs: int  # m, attribute count
    num_classes: int  # C
    token_dim: int = 4  # d
    heads: int = 1
    head_hidden: int = 32
    knn_k: int = 8

    def __post_init__(self):
        if self.token_dim < 1:
            raise SchemaError("token_dim must be >= 1")
        if self.token_dim % self.heads != 0:
            raise SchemaError("token_dim must be divisible by heads")
        if self.knn_k < 0:
            raise SchemaError("knn_k must be >= 0")

    @property
    def feature_dim(self) -> int:
        return self.n_attrs * self.token_dim

    @property
    def head_in_dim(self) -> int:
        return self.feature_dim * (2 if self.knn_k > 0 else 1)


def init_params(schema: AttributeSchema, config: EncoderConfig,
                seed: int) -> dict[str, Tensor]:
    """Seeded init: weights uniform in [-1/sqrt(d), 1/sqrt(d)], biases zero.

    Categorical tables carry cardinality+1 rows; the last row is the -1
    (unknown) sentinel embedding.
    """
    if len(schema) != config.n_attrs:
        raise SchemaError(f"schema has {len(schema)} attrs, config says {config.n_attrs}")
    rng = np.random.default_rng(seed)
    d = config.token_dim
    bound = 1.0 / np.sqrt(d)

    def u(*shape):
        return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)

    def z(*shape):
        return Tensor(np.zeros(shape), requires_grad=True)

    params: dict[str, Tensor] = {}
    for a in schema.attrs:
        if a.kind is Kind.CONTINUOUS:
            params[f"tok.{a.name}.w"] = u(d)
            params[f"tok.{a.name}.b"] = z(d)
        else:
            params[f"emb.{a.name}"] = u(a.cardinality + 1, d)
    for name in ("wq", "wk", "wv", "wo"):
        params[f"attn.{name}"] = u(d, d)
    params["head.w1"] = u(config.head_in_dim, config.head_hidden)
    params["head.b1"] = z(config.head_hidden)
    params["head.w2"] = u(config.head_hidden, config.num_classes)
    params["head.b2"] = z(config.num_classes)
    return params


def _table_index(col: np.ndarray, cardinality: int) -> np.ndarray:
    ids = np.asarray(col)
    if np.any((ids != np.floor(ids)) | ((ids != -1) & ((ids < 0) | (ids >= cardinality)))):
        raise SchemaError(f"categorical id outside {{-1}} U [0, {cardinality})")
    ids = ids.astype(np.int64)
    return np.where(ids < 0, cardinality, ids)


# ---- per-point reference path (plain numpy, no tape) ----------------------


def tokenize(point: np.ndarray, schema: AttributeSchema,
             params: dict[str, Tensor], config: EncoderConfig) -> np.ndarray:
    """Embed one point's m scalar attributes as an m x d token matrix."""
    point = np.asarray(point, dtype=np.float64)
    if point.shape != (len(schema),):
        raise ShapeError(f"point shape {point.shape} != ({len(schema)},)")
    tokens = np.empty((len(schema), config.token_dim))
    for j, a in enumerate(schema.attrs):
        if a.kind is Kind.CONTINUOUS:
            w = params[f"tok.{a.name}.w"].data
            b = params[f"tok.{a.name}.b"].data
            tokens[j] = point[j] * w + b
        else:
            table = params[f"emb.{a.name}"].data
            tokens[j] = table[_table_index(point[j:j + 1], a.cardinality)[0]]
    return tokens


def attend(tokens: np.ndarray, params: dict[str, Tensor],
           config: EncoderConfig) -> np.ndarray:
    """Single-layer self-attention over one point's attribute tokens.

    No residual, no layer norm, no positional encoding: attribute identity is
    already carried by the per-attribute tokenizer parameters.
    """
    tokens = np.asarray(tokens, dtype=np.float64)
    q = tokens @ params["attn.wq"].data
    k = tokens @ params["attn.wk"].data
    v = tokens @ params["attn.wv"].data
    scores = q @ k.T / np.sqrt(config.token_dim)
    z = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(z)
    a = e / e.sum(axis=-1, keepdims=True)
    return (a @ v) @ params["attn.wo"].data


def encode_point(point: np.ndarray, schema: AttributeSchema,
                 params: dict[str, Tensor], config: EncoderConfig) -> np.ndarray:
    """Concatenated attended tokens, schema order: a length m*d feature."""
    return attend(tokenize(point, schema, params, config), params, config).reshape(-1)


# ---- k-NN context ---------------------------------------------------------


def knn_indices(xyz: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k nearest neighbors per point (self excluded).

    Brute-force all-pairs Euclidean distances; ties break toward the lower
    point index via a stable sort.
    """
    n = xyz.shape[0]
    if k >= n:
        raise ShapeError(f"knn_k={k} must be < number of points {n}")
    d2 = ((xyz[:, None, :] - xyz[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    order = np.argsort(d2, axis=1, kind="stable")
    return order[:, :k]


def _knn_average_matrix(xyz: np.ndarray, k: int) -> np.ndarray:
    n = xyz.shape[0]
    idx = knn_indices(xyz, k)
    m = np.zeros((n, n))
    rows = np.repeat(np.arange(n), k)
    np.add.at(m, (rows, idx.reshape(-1)), 1.0 / k)
    return m


# ---- whole-cloud forward on the tape --------------------------------------


def forward_graph(tape: Tape, values: np.ndarray, schema: AttributeSchema,
                  params: dict[str, Tensor], config: EncoderConfig,
                  knn_matrix: np.ndarray | None = None) -> Tensor:
    """N x C logits for a whole cloud, differentiable w.r.t. params.

    knn_matrix, when pooling is on, is the constant N x N neighbor-averaging
    matrix (precomputable per scene); derived from the x,y,z columns if absent.
    """
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[0]
    if values.shape[1] != len(schema):
        raise ShapeError(f"values have {values.shape[1]} columns, schema {len(schema)}")
    d = config.token_dim

    token_blocks = []
    for j, a in enumerate(schema.attrs):
        col = values[:, j]
        if a.kind is Kind.CONTINUOUS:
            w = params[f"tok.{a.name}.w"]
            b = params[f"tok.{a.name}.b"]
            tok = tape.add(tape.mul(Tensor(col[:, None]), w), b)  # (N,1)*(d,)+(d,)
        else:
            tok = tape.gather_rows(params[f"emb.{a.name}"],
                                   _table_index(col, a.cardinality))
        token_blocks.append(tape.reshape(tok, (n, 1, d)))
    tokens = tape.concat(token_blocks, axis=1)  # N x m x d

    q = tape.matmul(tokens, params["attn.wq"])
    k = tape.matmul(tokens, params["attn.wk"])
    v = tape.matmul(tokens, params["attn.wv"])
    scores = tape.scale(tape.matmul(q, tape.transpose(k)), 1.0 / np.sqrt(d))
    attn = tape.rowsoftmax(scores)
    attended = tape.matmul(tape.matmul(attn, v), params["attn.wo"])
    feats = tape.reshape(attended, (n, config.feature_dim))

    if config.knn_k > 0:
        if knn_matrix is None:
            ix = schema.index_of("x")
            iy = schema.index_of("y")
            iz = schema.index_of("z")
            xyz = values[:, [ix, iy, iz]]
            knn_matrix = _knn_average_matrix(xyz, config.knn_k)
        pooled = tape.matmul(Tensor(knn_matrix), feats)
        head_in = tape.concat([feats, pooled], axis=1)
    else:
        head_in = feats

    h = tape.relu(tape.add(tape.matmul(head_in, params["head.w1"]), params["head.b1"]))
    return tape.add(tape.matmul(h, params["head.w2"]), params["head.b2"])


def forward_segmentation(cloud: PointCloud, params: dict[str, Tensor],
                         config: EncoderConfig) -> np.ndarray:
    """Plain N x C logits for inference."""
    return forward_graph(Tape(), cloud.values, cloud.schema, params, config).data


class SegmentationModel:
    """Bundles schema, config and parameters behind a predict() surface."""

    def __init__(self, schema: AttributeSchema, config: EncoderConfig,
                 params: dict[str, Tensor]):
        if len(schema) != config.n_attrs:
            raise SchemaError("schema/config attribute count mismatch")
        self.schema = schema
        self.config = config
        self.params = params

    @classmethod
    def initialized(cls, schema: AttributeSchema, config: EncoderConfig,
                    seed: int) -> "SegmentationModel":
        return cls(schema, config, init_params(schema, config, seed))

    def logits(self, cloud: PointCloud) -> np.ndarray:
        if cloud.schema != self.schema:
            raise SchemaError("cloud schema does not match the model's schema")
        return forward_segmentation(cloud, self.params, self.config)

    def predict(self, cloud: PointCloud) -> np.ndarray:
        return np.argmax(self.logits(cloud), axis=1)
