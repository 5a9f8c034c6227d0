import json

import numpy as np
import pytest

from pointpaint import fileio
from pointpaint.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestUsageErrors:
    def test_unknown_flag_exits_1(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["gen", "--seed", "1", "--out", "x", "--bogus"])
        assert exc.value.code == 1

    def test_missing_required_argument_exits_1(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["gen", "--seed", "1"])
        assert exc.value.code == 1

    def test_selfpaint_stage2_without_ckpt(self, tmp_path, capsys):
        code, _, _ = run(capsys, "gen", "--seed", "1", "--points", "32",
                         "--out", str(tmp_path / "c.pc"))
        assert code == 0
        code, _, err = run(capsys, "selfpaint", "--cloud", str(tmp_path / "c.pc"),
                           "--stage", "2", "--out", str(tmp_path / "o.pc"))
        assert code == 1 and "--ckpt" in err


class TestGen:
    def test_byte_identical_outputs(self, tmp_path, capsys):
        for name in ("a.pc", "b.pc"):
            code, _, _ = run(capsys, "gen", "--seed", "11", "--points", "64",
                             "--out", str(tmp_path / name))
            assert code == 0
        for suffix in ("", ".mask", ".calib"):
            assert (tmp_path / ("a.pc" + suffix)).read_bytes() == \
                (tmp_path / ("b.pc" + suffix)).read_bytes()

    def test_missing_input_exits_2(self, tmp_path, capsys):
        code, _, err = run(capsys, "paint",
                           "--cloud", str(tmp_path / "nope.pc"),
                           "--mask", str(tmp_path / "nope.mask"),
                           "--calib", str(tmp_path / "nope.calib"),
                           "--out", str(tmp_path / "o.pc"))
        assert code == 2 and "error:" in err


class TestPaintPipeline:
    def gen(self, tmp_path, capsys, seed=21):
        out = tmp_path / "scene.pc"
        code, _, _ = run(capsys, "gen", "--seed", str(seed), "--points", "96",
                         "--out", str(out))
        assert code == 0
        return out

    def test_paint_round_trip_correctness(self, tmp_path, capsys):
        cloud_path = self.gen(tmp_path, capsys)
        out = tmp_path / "painted.pc"
        code, msg, _ = run(capsys, "paint", "--cloud", str(cloud_path),
                           "--mask", str(cloud_path) + ".mask",
                           "--calib", str(cloud_path) + ".calib",
                           "--out", str(out))
        assert code == 0 and "visible" in msg
        painted = fileio.read_cloud_text(out)
        sem = painted.column("sem")
        vis = sem >= 0
        # zero-noise painting agrees with ground truth wherever visible
        assert np.array_equal(sem[vis], painted.gt_labels[vis])

    def test_mask_extent_mismatch_exits_2(self, tmp_path, capsys):
        cloud_path = self.gen(tmp_path, capsys)
        bad = tmp_path / "bad.mask"
        bad.write_text("2 2\n0 0\n0 0\n0 0\n0 0\n")
        code, _, err = run(capsys, "paint", "--cloud", str(cloud_path),
                           "--mask", str(bad),
                           "--calib", str(cloud_path) + ".calib",
                           "--out", str(tmp_path / "o.pc"))
        assert code == 2 and "error:" in err

    def test_selfpaint_stage1(self, tmp_path, capsys):
        cloud_path = self.gen(tmp_path, capsys)
        out = tmp_path / "s1.pc"
        code, _, _ = run(capsys, "selfpaint", "--cloud", str(cloud_path),
                         "--stage", "1", "--out", str(out))
        assert code == 0
        cloud = fileio.read_cloud_text(out)
        assert np.all(cloud.column("selfsem") == -1.0)


class TestTrainEval:
    def test_train_then_eval_and_stage2(self, tmp_path, capsys):
        cfg = dict(seed=31, painting="self", steps=4, n_train_scenes=2,
                   n_holdout_scenes=1, points_per_scene=48, log_every=2)
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(cfg))
        ckpt = tmp_path / "model.ckpt"
        code, msg, _ = run(capsys, "train", "--config", str(cfg_path),
                           "--out", str(ckpt))
        assert code == 0 and "holdout miou=" in msg
        log_lines = (tmp_path / "model.ckpt.log").read_text().splitlines()
        assert len(log_lines) == 2 and log_lines[0].startswith("step=2 ")

        cloud_path = tmp_path / "scene.pc"
        code, _, _ = run(capsys, "gen", "--seed", "5", "--points", "64",
                         "--out", str(cloud_path))
        assert code == 0
        s2 = tmp_path / "s2.pc"
        code, _, _ = run(capsys, "selfpaint", "--cloud", str(cloud_path),
                         "--stage", "2", "--ckpt", str(ckpt), "--out", str(s2))
        assert code == 0
        col = fileio.read_cloud_text(s2).column("selfsem")
        assert np.all((col >= 0) & (col < 4))

        s1 = tmp_path / "s1.pc"
        code, _, _ = run(capsys, "selfpaint", "--cloud", str(cloud_path),
                         "--stage", "1", "--out", str(s1))
        assert code == 0
        code, out, _ = run(capsys, "eval", "--cloud", str(s1),
                           "--ckpt", str(ckpt))
        assert code == 0
        assert "class_iou[0]=" in out
        assert any(line.startswith("miou=") for line in out.splitlines())

    def test_eval_perfect_predictions(self, tmp_path, capsys):
        labels = "0\n1\n2\n3\n1\n"
        (tmp_path / "pred.txt").write_text(labels)
        (tmp_path / "gt.txt").write_text(labels)
        code, out, _ = run(capsys, "eval", "--pred", str(tmp_path / "pred.txt"),
                           "--gt", str(tmp_path / "gt.txt"))
        assert code == 0
        assert "miou=1" in out.splitlines()[-1]

    def test_eval_without_inputs_exits_1(self, capsys):
        code, _, err = run(capsys, "eval")
        assert code == 1 and "eval needs" in err


class TestGradcheckCommand:
    def test_reports_pass(self, capsys):
        code, out, _ = run(capsys, "gradcheck", "--seed", "3")
        assert code == 0
        assert out.strip().splitlines()[-1].endswith("PASS")
        assert "head.w1" in out
