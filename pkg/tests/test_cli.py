import csv
import io

import numpy as np
import pytest

from cake.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from cake.io import read_cake1, read_sidecar, write_cake1


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


class TestRipcheck:
    def test_smoke(self, capsys):
        code, out, _ = run("ripcheck --mask bs --d1 2 --d2 2 --n1 8 --n2 8 --s 2 --seed 1".split(), capsys)
        assert code == EXIT_OK
        rows = list(csv.DictReader(io.StringIO(out)))
        assert [r["s"] for r in rows] == ["1", "2"]
        for r in rows:
            assert float(r["delta_s"]) <= float(r["gershgorin"]) + 1e-12

    def test_divisibility(self, capsys):
        code, _, err = run("ripcheck --downsample sub --d1 3 --n1 8".split(), capsys)
        assert code == EXIT_USAGE
        assert "not divisible" in err and "usage" in err

    def test_bad_s(self, capsys):
        code, _, _ = run("ripcheck --n1 4 --n2 4 --s 0".split(), capsys)
        assert code == EXIT_USAGE


class TestUsage:
    @pytest.mark.parametrize("argv", [
        [],
        ["frobnicate"],
        ["ripcheck", "--bogus"],
        ["ripcheck", "--mask", "xx"],
        ["reconstruct", "--penalty", "l2", "--in", "a", "--out", "b"],
    ])
    def test_usage_errors(self, argv, capsys):
        code, _, err = run(argv, capsys)
        assert code == EXIT_USAGE and "usage" in err

    def test_missing_input_is_runtime(self, tmp_path, capsys):
        code, _, err = run(["sense", "--in", str(tmp_path / "none.cake1"), "--out", str(tmp_path / "y")], capsys)
        assert code == EXIT_RUNTIME and "failed" in err


class TestPipeline:
    def test_phantom_mask_sense_reconstruct(self, tmp_path, capsys):
        scene = tmp_path / "scene.cake1"
        data = tmp_path / "y.cake1"
        est = tmp_path / "est.cake1"
        assert main(["phantom", "--kind", "sparse-spikes", "--n1", "32", "--n2", "32", "--s", "5",
                     "--out", str(scene)]) == EXIT_OK
        assert read_cake1(scene).shape == (32, 32)
        assert main(["mask", "--mask", "up", "--n1", "32", "--n2", "32", "--out", str(tmp_path / "m.cake1")]) == 0
        assert main(["sense", "--in", str(scene), "--mask", "bs", "--downsample", "sub", "--out", str(data)]) == 0
        meta = read_sidecar(str(data) + ".meta")
        assert meta["mask"] == "bs" and meta["n1"] == "32" and meta["B"] == "1"
        capsys.readouterr()
        code = main(["reconstruct", "--in", str(data), "--penalty", "l1", "--tau", "1e-4", "--tol", "1e-8",
                     "--max-iter", "3000", "--no-precondition", "--truth", str(scene), "--out", str(est)])
        assert code == EXIT_OK
        line = capsys.readouterr().out
        rmse = float(line.split("rmse_percent=")[1])
        assert rmse <= 1.0
        assert read_cake1(est).shape == (32, 32)

    def test_video_pipeline(self, tmp_path, capsys):
        scene = tmp_path / "video.cake1"
        assert main(["phantom", "--kind", "moving-blob", "--n1", "16", "--n2", "16", "--N", "8",
                     "--out", str(scene)]) == 0
        data = tmp_path / "y.cake1"
        assert main(["sense", "--in", str(scene), "--B", "4", "--implementable", "--out", str(data)]) == 0
        assert read_cake1(data).shape == (2, 8, 8)
        est = tmp_path / "est.cake1"
        assert main(["reconstruct", "--in", str(data), "--penalty", "video", "--max-iter", "50",
                     "--out", str(est)]) == 0
        assert read_cake1(est).shape == (8, 16, 16)

    def test_video_needs_blocks(self, tmp_path, capsys):
        scene = tmp_path / "video.cake1"
        write_cake1(scene, np.zeros((6, 8, 8)))
        code, _, err = run(["sense", "--in", str(scene), "--B", "4", "--out", str(tmp_path / "y")], capsys)
        assert code == EXIT_USAGE and "divisible" in err

    def test_pgm_output(self, tmp_path):
        out = tmp_path / "p.pgm"
        assert main(["phantom", "--n1", "16", "--n2", "16", "--out", str(out)]) == 0
        assert out.read_bytes().startswith(b"P5")


class TestExperiment:
    def test_config_and_flag_override(self, tmp_path, capsys):
        cfg = tmp_path / "table.cfg"
        cfg.write_text("n1 = 32\nn2 = 32\nmasks = BS, UP\ndownsamplers = subsample\nd = 4\n"
                       "penalties = tv-aniso\ntau_points = 2\nconventional = no\n")
        code, out, _ = run(["experiment", "--config", str(cfg)], capsys)
        assert code == EXIT_OK
        rows = list(csv.DictReader(io.StringIO(out)))
        assert [(r["mask"], r["d"]) for r in rows] == [("BS", "4"), ("UP", "4")]
        code, out2, _ = run(["experiment", "--config", str(cfg), "--mask", "bs"], capsys)
        assert code == EXIT_OK
        assert [r["mask"] for r in csv.DictReader(io.StringIO(out2))] == ["BS"]
        # same cell, different config digest
        assert out.splitlines()[1].rsplit(",", 1)[0] == out2.splitlines()[1].rsplit(",", 1)[0]

    def test_writes_file(self, tmp_path):
        cfg = tmp_path / "t.cfg"
        cfg.write_text("n1 = 16\nn2 = 16\nmasks = BS\ndownsamplers = subsample\nd = 4\npenalties = tv-iso\n"
                       "tau_points = 1\nconventional = no\n")
        out = tmp_path / "t.csv"
        assert main(["experiment", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
        assert len(out.read_text().splitlines()) == 2

    def test_bad_config_key(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("colour = blue\n")
        code, _, err = run(["experiment", "--config", str(cfg)], capsys)
        assert code == EXIT_USAGE and "colour" in err
