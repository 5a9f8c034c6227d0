import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pointpaint.core import (AttrDesc, AttributeSchema, Kind, PointCloud,
                             SchemaError, ShapeError)
from pointpaint.encoder import (EncoderConfig, SegmentationModel, attend,
                                encode_point, forward_segmentation,
                                init_params, knn_indices, tokenize)


def continuous_schema(m):
    names = ["x", "y", "z", "intensity", "t", "u", "w"][:m]
    return AttributeSchema(tuple(AttrDesc(n, Kind.CONTINUOUS) for n in names))


def mixed_schema():
    return AttributeSchema((
        AttrDesc("x", Kind.CONTINUOUS),
        AttrDesc("y", Kind.CONTINUOUS),
        AttrDesc("z", Kind.CONTINUOUS),
        AttrDesc("sem", Kind.CATEGORICAL, 4),
    ))


def setup(schema, d=4, knn_k=0, seed=0, num_classes=4):
    config = EncoderConfig(n_attrs=len(schema), num_classes=num_classes,
                           token_dim=d, knn_k=knn_k)
    return config, init_params(schema, config, seed=seed)


class TestTokenize:
    def test_zero_weight_degenerate(self):
        schema = continuous_schema(1)
        config, params = setup(schema)
        params["tok.x.w"].data[:] = 0.0
        params["tok.x.b"].data[:] = [1, 2, 3, 4]
        for v in (-7.0, 0.0, 123.4):
            assert np.array_equal(tokenize(np.array([v]), schema, params, config)[0],
                                  [1, 2, 3, 4])

    def test_sentinel_uses_last_table_row(self):
        schema = mixed_schema()
        config, params = setup(schema)
        tok = tokenize(np.array([0.0, 0.0, 0.0, -1.0]), schema, params, config)
        assert np.array_equal(tok[3], params["emb.sem"].data[-1])

    def test_scalar_affine_oracle(self):
        schema = continuous_schema(2)
        config, params = setup(schema, seed=3)
        tok = tokenize(np.array([2.5, -1.0]), schema, params, config)
        expected = 2.5 * params["tok.x.w"].data + params["tok.x.b"].data
        assert np.max(np.abs(tok[0] - expected)) <= 1e-15

    def test_id_out_of_range(self):
        schema = mixed_schema()
        config, params = setup(schema)
        with pytest.raises(SchemaError):
            tokenize(np.array([0.0, 0.0, 0.0, 4.0]), schema, params, config)

    def test_linearity_about_bias(self):
        schema = continuous_schema(1)
        config, params = setup(schema, seed=5)
        b = params["tok.x.b"].data
        t1 = tokenize(np.array([1.7]), schema, params, config)[0]
        t3 = tokenize(np.array([3 * 1.7]), schema, params, config)[0]
        assert np.allclose(t3 - b, 3 * (t1 - b), rtol=1e-13, atol=1e-15)


class TestAttend:
    def test_single_token(self):
        schema = continuous_schema(1)
        config, params = setup(schema, seed=1)
        tok = tokenize(np.array([0.3]), schema, params, config)
        out = attend(tok, params, config)
        expected = tok @ params["attn.wv"].data @ params["attn.wo"].data
        assert np.allclose(out, expected, atol=1e-14)

    def test_zero_query_uniform_attention(self):
        schema = continuous_schema(3)
        config, params = setup(schema, seed=2)
        params["attn.wq"].data[:] = 0.0
        tok = tokenize(np.array([0.5, -2.0, 1.0]), schema, params, config)
        out = attend(tok, params, config)
        v = tok @ params["attn.wv"].data
        expected_row = v.mean(axis=0) @ params["attn.wo"].data
        for row in out:
            assert np.allclose(row, expected_row, atol=1e-14)

    def test_dense_reference_oracle(self):
        config, params = setup(continuous_schema(3), seed=7)
        rng = np.random.default_rng(0)
        tokens = rng.standard_normal((3, 4))
        out = attend(tokens, params, config)
        # straight-line reference, written independently
        wq, wk = params["attn.wq"].data, params["attn.wk"].data
        wv, wo = params["attn.wv"].data, params["attn.wo"].data
        ref = np.empty((3, 4))
        scores = (tokens @ wq) @ (tokens @ wk).T / 2.0  # sqrt(d)=2
        for i in range(3):
            e = np.exp(scores[i] - scores[i].max())
            a = e / e.sum()
            ref[i] = sum(a[j] * (tokens[j] @ wv) for j in range(3)) @ wo
        assert np.max(np.abs(out - ref)) <= 1e-12

    def test_rows_sum_to_one_property(self):
        config, params = setup(continuous_schema(5), seed=11)
        wq, wk = params["attn.wq"].data, params["attn.wk"].data
        rng = np.random.default_rng(4)
        for _ in range(50):
            tokens = rng.standard_normal((5, 4)) * 30
            scores = (tokens @ wq) @ (tokens @ wk).T / 2.0
            e = np.exp(scores - scores.max(axis=1, keepdims=True))
            a = e / e.sum(axis=1, keepdims=True)
            assert np.allclose(a.sum(axis=1), 1.0, atol=1e-12)


class TestEncodePoint:
    @pytest.mark.parametrize("m,d", [(3, 2), (5, 4), (7, 4)])
    def test_output_length_is_m_times_d(self, m, d):
        schema = continuous_schema(m)
        config, params = setup(schema, d=d)
        out = encode_point(np.zeros(m), schema, params, config)
        assert out.shape == (m * d,)

    def test_single_attribute_equals_attend_of_tokenize(self):
        schema = continuous_schema(1)
        config, params = setup(schema, seed=3)
        p = np.array([0.8])
        out = encode_point(p, schema, params, config)
        assert np.array_equal(
            out, attend(tokenize(p, schema, params, config), params, config).reshape(-1))

    def test_attribute_permutation_permutes_blocks(self):
        schema = continuous_schema(3)
        config, params = setup(schema, seed=9)
        point = np.array([1.5, -0.3, 2.0])
        out = encode_point(point, schema, params, config)

        perm = [2, 0, 1]
        schema_p = AttributeSchema(tuple(schema.attrs[j] for j in perm))
        out_p = encode_point(point[perm], schema_p, params, config)
        d = config.token_dim
        for new_pos, old_pos in enumerate(perm):
            assert np.allclose(out_p[new_pos * d:(new_pos + 1) * d],
                               out[old_pos * d:(old_pos + 1) * d], atol=1e-14)

    def test_learned_normalization_compensation(self):
        # scaling one continuous input by 10 is exactly undone by w /= 10
        schema = continuous_schema(4)
        config, params = setup(schema, seed=13)
        point = np.array([1.0, 2.0, 3.0, 0.7])
        base = encode_point(point, schema, params, config)
        params["tok.intensity.w"].data /= 10.0
        scaled = point.copy()
        scaled[3] *= 10.0
        assert np.max(np.abs(encode_point(scaled, schema, params, config) - base)) <= 1e-12


class TestKnn:
    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(21)
        xyz = rng.standard_normal((6, 3))
        idx = knn_indices(xyz, 2)
        for i in range(6):
            dists = [(np.sum((xyz[i] - xyz[j]) ** 2), j) for j in range(6) if j != i]
            dists.sort()
            assert set(idx[i]) == {j for _, j in dists[:2]}

    def test_tie_breaks_toward_lower_index(self):
        xyz = np.array([[0.0, 0, 0], [1.0, 0, 0], [-1.0, 0, 0], [2.0, 0, 0]])
        idx = knn_indices(xyz, 1)
        assert idx[0, 0] == 1  # points 1 and 2 equidistant from 0

    def test_k_too_large(self):
        with pytest.raises(ShapeError):
            knn_indices(np.zeros((3, 3)), 3)


class TestForwardSegmentation:
    def cloud(self, n=8, seed=0, schema=None):
        schema = schema or continuous_schema(5)
        rng = np.random.default_rng(seed)
        return PointCloud(schema, rng.standard_normal((n, len(schema))))

    def test_pointwise_permutation_equivariance(self):
        cloud = self.cloud()
        config, params = setup(cloud.schema, knn_k=0, seed=2)
        logits = forward_segmentation(cloud, params, config)
        perm = np.array([3, 1, 7, 0, 2, 6, 4, 5])
        shuffled = PointCloud(cloud.schema, cloud.values[perm])
        assert np.allclose(forward_segmentation(shuffled, params, config),
                           logits[perm], atol=1e-12)

    def test_zero_head_gives_zero_logits(self):
        cloud = self.cloud()
        config, params = setup(cloud.schema, knn_k=0)
        for name in ("head.w1", "head.b1", "head.w2", "head.b2"):
            params[name].data[:] = 0.0
        assert np.all(forward_segmentation(cloud, params, config) == 0.0)

    def test_matches_per_point_reference_without_pooling(self):
        cloud = self.cloud(n=5, seed=8)
        config, params = setup(cloud.schema, knn_k=0, seed=8)
        logits = forward_segmentation(cloud, params, config)
        w1, b1 = params["head.w1"].data, params["head.b1"].data
        w2, b2 = params["head.w2"].data, params["head.b2"].data
        for i in range(5):
            f = encode_point(cloud.values[i], cloud.schema, params, config)
            ref = np.maximum(f @ w1 + b1, 0.0) @ w2 + b2
            assert np.allclose(logits[i], ref, atol=1e-12)

    def test_knn_pooling_matches_neighbor_oracle(self):
        cloud = self.cloud(n=6, seed=4)
        config, params = setup(cloud.schema, knn_k=2, seed=4)
        logits = forward_segmentation(cloud, params, config)
        feats = np.stack([encode_point(cloud.values[i], cloud.schema, params, config)
                          for i in range(6)])
        idx = knn_indices(cloud.values[:, :3], 2)
        w1, b1 = params["head.w1"].data, params["head.b1"].data
        w2, b2 = params["head.w2"].data, params["head.b2"].data
        for i in range(6):
            g = feats[idx[i]].mean(axis=0)
            ref = np.maximum(np.concatenate([feats[i], g]) @ w1 + b1, 0.0) @ w2 + b2
            assert np.allclose(logits[i], ref, atol=1e-12)

    def test_knn_k_must_be_below_n(self):
        cloud = self.cloud(n=4)
        config, params = setup(cloud.schema, knn_k=8)
        with pytest.raises(ShapeError):
            forward_segmentation(cloud, params, config)

    def test_model_schema_check(self):
        cloud = self.cloud()
        other = continuous_schema(3)
        config, params = setup(other, knn_k=0)
        model = SegmentationModel(other, config, params)
        with pytest.raises(SchemaError):
            model.predict(cloud)


class TestConfig:
    def test_heads_must_divide_token_dim(self):
        with pytest.raises(SchemaError):
            EncoderConfig(n_attrs=3, num_classes=2, token_dim=3, heads=2)

    def test_head_in_dim_doubles_with_pooling(self):
        on = EncoderConfig(n_attrs=5, num_classes=4, token_dim=4, knn_k=8)
        off = EncoderConfig(n_attrs=5, num_classes=4, token_dim=4, knn_k=0)
        assert on.head_in_dim == 2 * off.head_in_dim == 40


@given(st.floats(-100, 100), st.floats(0.1, 10))
@settings(max_examples=40)
def test_tokenizer_linearity_property(v, alpha):
    schema = continuous_schema(1)
    config = EncoderConfig(n_attrs=1, num_classes=2, token_dim=4, knn_k=0)
    params = init_params(schema, config, seed=17)
    b = params["tok.x.b"].data
    t_v = tokenize(np.array([v]), schema, params, config)[0]
    t_av = tokenize(np.array([alpha * v]), schema, params, config)[0]
    assert np.allclose(t_av - b, alpha * (t_v - b), rtol=1e-12, atol=1e-12)
