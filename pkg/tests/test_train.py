import numpy as np
import pytest

from pointpaint.core import SchemaError
from pointpaint.synth import SceneConfig, gen_scene
from pointpaint.train import (ExperimentConfig, _corrupt_labels,
                              prepared_cloud, train)

FAST = dict(steps=6, n_train_scenes=3, n_holdout_scenes=1,
            points_per_scene=48, log_every=3)


class TestExperimentConfig:
    def test_rejects_unknown_painting(self):
        with pytest.raises(SchemaError):
            ExperimentConfig(seed=0, painting="always")

    def test_from_json_rejects_unknown_keys(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text('{"seed": 1, "stepz": 5}')
        with pytest.raises(SchemaError, match="stepz"):
            ExperimentConfig.from_json(path)

    def test_from_json_requires_seed(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text('{"steps": 5}')
        with pytest.raises(SchemaError, match="seed"):
            ExperimentConfig.from_json(path)

    def test_from_json_round_trip(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text('{"seed": 3, "painting": "mask", "steps": 10}')
        cfg = ExperimentConfig.from_json(path)
        assert cfg == ExperimentConfig(seed=3, painting="mask", steps=10)


class TestPreparedCloud:
    def scene(self):
        return gen_scene(SceneConfig(seed=6, n_points=64))

    def test_none_is_raw(self):
        scene = self.scene()
        assert prepared_cloud(scene, "none") is scene.cloud

    def test_mask_appends_paint_columns(self):
        cloud = prepared_cloud(self.scene(), "mask")
        assert cloud.schema.names[-2:] == ["sem", "inst"]

    def test_self_appends_sentinel_column(self):
        cloud = prepared_cloud(self.scene(), "self")
        assert cloud.schema.names[-1] == "selfsem"
        assert np.all(cloud.column("selfsem") == -1.0)


class TestCorruptLabels:
    def test_rate_zero_identity(self):
        rng = np.random.default_rng(0)
        gt = np.array([0, 0, 1, 1, 2])
        inst = np.array([0, 0, 1, 1, 2])
        assert np.array_equal(_corrupt_labels(gt, inst, 4, 0.0, rng), gt)

    def test_rate_one_flips_objects_consistently(self):
        rng = np.random.default_rng(1)
        gt = np.array([0, 0, 0, 3, 3])
        inst = np.array([5, 5, 5, 9, 9])
        out = _corrupt_labels(gt, inst, 4, 1.0, rng)
        assert np.all(out != gt)
        # one label per object
        assert len(set(out[:3])) == 1 and len(set(out[3:])) == 1
        assert set(out) <= set(range(4))


class TestTrain:
    def test_zero_steps_logs_initial_state(self):
        result = train(ExperimentConfig(seed=2, steps=0, n_train_scenes=2,
                                        n_holdout_scenes=1, points_per_scene=48))
        assert len(result.metrics) == 1
        assert result.metrics[0].startswith("step=0 loss=nan")
        assert 0.0 <= result.holdout_miou <= 1.0

    def test_fixed_seed_bit_identical(self):
        cfg = ExperimentConfig(seed=5, painting="mask", **FAST)
        a, b = train(cfg), train(cfg)
        assert a.metrics == b.metrics
        for name in a.model.params:
            assert np.array_equal(a.model.params[name].data,
                                  b.model.params[name].data)

    def test_loss_decreases_from_start(self):
        cfg = ExperimentConfig(seed=7, painting="mask", steps=60,
                               n_train_scenes=2, n_holdout_scenes=1,
                               points_per_scene=48, log_every=60, lr=0.01)
        result = train(cfg)
        first = float(result.metrics[0].split()[1].split("=")[1])
        assert first < np.log(4)  # below the chance-level starting loss

    def test_self_mode_reports_both_stages(self):
        result = train(ExperimentConfig(seed=9, painting="self", **FAST))
        assert result.holdout_miou_stage1 is not None
        assert "miou_stage1=" in result.metrics[-1]

    def test_mask_mode_has_no_stage1_metric(self):
        result = train(ExperimentConfig(seed=9, painting="mask", **FAST))
        assert result.holdout_miou_stage1 is None
