"""End-to-end CLI: synth -> train -> infer -> eval -> cloud, plus exit codes."""

import json
import os

import numpy as np
import pytest

from stereodepth import cli
from stereodepth import formats as F
from stereodepth import geometry as G
from stereodepth import model as M
from stereodepth import synth as S


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A tiny synthetic dataset plus weights trained for two epochs."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    rc = cli.main(["synth", "--seed", "7", "--count", "4", "--size", "32x32",
                   "--ndisp", "16", "--out", str(data)])
    assert rc == 0
    weights = root / "model.stwt"
    rc = cli.main(["train", "--data", str(data), "--epochs", "2", "--lr", "1e-3",
                   "--batch", "2", "--crop", "32x32", "--seed", "1",
                   "--out-weights", str(weights), "--augment", "flip,jitter",
                   "--log", str(root / "train.log")])
    assert rc == 0
    return root


class TestSynthCommand:
    def test_writes_expected_files(self, workspace):
        names = sorted(os.listdir(workspace / "data"))
        assert "0000_left.ppm" in names
        assert "0003_disp.pfm" in names
        assert len(names) == 16  # 4 samples x 4 files

    def test_deterministic_across_runs(self, workspace, tmp_path):
        rc = cli.main(["synth", "--seed", "7", "--count", "1", "--size", "32x32",
                       "--ndisp", "16", "--out", str(tmp_path)])
        assert rc == 0
        a = (workspace / "data" / "0000_left.ppm").read_bytes()
        b = (tmp_path / "0000_left.ppm").read_bytes()
        assert a == b


class TestTrainCommand:
    def test_weights_loadable_and_log_written(self, workspace):
        ws = M.load_weights(workspace / "model.stwt")
        assert "enc.stem0.w" in ws
        lines = (workspace / "train.log").read_text().strip().splitlines()
        assert len(lines) == 2
        assert len(lines[0].split("\t")) == 8

    def test_bad_augment_name_fails(self, workspace, tmp_path):
        rc = cli.main(["train", "--data", str(workspace / "data"), "--epochs", "1",
                       "--lr", "1e-3", "--batch", "2", "--crop", "32x32", "--seed", "0",
                       "--out-weights", str(tmp_path / "w.stwt"), "--augment", "mirror"])
        assert rc == 1

    def test_missing_data_dir_exit_2(self, tmp_path):
        rc = cli.main(["train", "--data", str(tmp_path / "absent"), "--epochs", "1",
                       "--lr", "1e-3", "--batch", "2", "--crop", "32x32", "--seed", "0",
                       "--out-weights", str(tmp_path / "w.stwt")])
        assert rc == 2


class TestInferCommand:
    def test_end_to_end_outputs(self, workspace, capsys):
        out_disp = workspace / "out.pfm"
        out_conf = workspace / "conf.pfm"
        ply = workspace / "cloud.ply"
        rc = cli.main(["infer", "--left", str(workspace / "data" / "0000_left.ppm"),
                       "--right", str(workspace / "data" / "0000_right.ppm"),
                       "--weights", str(workspace / "model.stwt"),
                       "--ndisp", "16", "--cv-scale", "4",
                       "--out-disp", str(out_disp), "--out-conf", str(out_conf),
                       "--filtered", "--conf-thresh", "0.25", "--min-region", "64",
                       "--ply", str(ply)])
        assert rc == 0
        summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert summary["width"] == 32 and summary["height"] == 32
        assert summary["padding"] == [0, 0, 0, 0]
        assert 0.0 <= summary["valid_fraction"] <= 1.0

        disp, _ = F.read_pfm(out_disp)
        assert disp.shape == (32, 32)
        conf, _ = F.read_pfm(out_conf)
        assert conf.min() > 0.0 and conf.max() <= 1.0
        filtered, _ = F.read_pfm(workspace / "out.filtered.pfm")
        assert np.isnan(filtered).sum() + np.isfinite(filtered).sum() == filtered.size
        cloud = G.read_ply(str(ply))
        assert (cloud.points[:, 2] > 0).all()

    def test_runs_twice_bitwise_identical(self, workspace, tmp_path, capsys):
        argv = ["infer", "--left", str(workspace / "data" / "0001_left.ppm"),
                "--right", str(workspace / "data" / "0001_right.ppm"),
                "--weights", str(workspace / "model.stwt"),
                "--ndisp", "16", "--cv-scale", "4"]
        a, b = tmp_path / "a.pfm", tmp_path / "b.pfm"
        assert cli.main(argv + ["--out-disp", str(a)]) == 0
        assert cli.main(argv + ["--out-disp", str(b)]) == 0
        capsys.readouterr()
        assert a.read_bytes() == b.read_bytes()

    def test_padding_for_indivisible_dims(self, workspace, tmp_path, capsys):
        # 30x30 image needs symmetric padding to a multiple of 4
        img = np.random.default_rng(0).uniform(0, 1, (3, 30, 30)).astype(np.float32)
        for name in ("l.ppm", "r.ppm"):
            (tmp_path / name).write_bytes(F.write_ppm(img))
        out = tmp_path / "d.pfm"
        rc = cli.main(["infer", "--left", str(tmp_path / "l.ppm"),
                       "--right", str(tmp_path / "r.ppm"),
                       "--weights", str(workspace / "model.stwt"),
                       "--ndisp", "16", "--cv-scale", "4", "--out-disp", str(out)])
        assert rc == 0
        summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert summary["padding"] == [1, 1, 1, 1]
        disp, _ = F.read_pfm(out)
        assert disp.shape == (30, 30)

    def test_missing_weights_exit_2(self, workspace, tmp_path, capsys):
        missing = tmp_path / "nope.stwt"
        rc = cli.main(["infer", "--left", str(workspace / "data" / "0000_left.ppm"),
                       "--right", str(workspace / "data" / "0000_right.ppm"),
                       "--weights", str(missing),
                       "--ndisp", "16", "--cv-scale", "4",
                       "--out-disp", str(tmp_path / "d.pfm")])
        assert rc == 2
        assert str(missing) in capsys.readouterr().err

    def test_dim_mismatch_fails(self, workspace, tmp_path, capsys):
        img = np.zeros((3, 32, 32), dtype=np.float32)
        (tmp_path / "l.ppm").write_bytes(F.write_ppm(img))
        (tmp_path / "r.ppm").write_bytes(F.write_ppm(np.zeros((3, 16, 32), np.float32)))
        rc = cli.main(["infer", "--left", str(tmp_path / "l.ppm"),
                       "--right", str(tmp_path / "r.ppm"),
                       "--weights", str(workspace / "model.stwt"),
                       "--ndisp", "16", "--cv-scale", "4",
                       "--out-disp", str(tmp_path / "d.pfm")])
        assert rc == 1
        assert "differ" in capsys.readouterr().err


class TestEvalCommand:
    def test_single_pair_json(self, tmp_path, capsys):
        gt = np.zeros((4, 4), dtype=np.float32)
        pred = gt.copy()
        pred[0, :] = 3.0
        F.write_pfm_file(tmp_path / "pred.pfm", pred)
        F.write_pfm_file(tmp_path / "gt.pfm", gt)
        rc = cli.main(["eval", "--pred", str(tmp_path / "pred.pfm"),
                       "--gt", str(tmp_path / "gt.pfm"), "--thresholds", "1.0,2.0"])
        assert rc == 0
        report = json.loads(capsys.readouterr().out)
        assert report["epe"] == pytest.approx(0.75)
        assert report["bad"]["1"] == pytest.approx(0.25)
        assert report["n_frames"] == 1

    def test_directory_mode_with_masks(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        for sub in ("pred", "gt", "mask"):
            os.makedirs(tmp_path / sub)
        for i in range(3):
            gt = rng.uniform(0, 10, (8, 8)).astype(np.float32)
            pred = gt + 1.0
            mask = rng.uniform(size=(8, 8)) > 0.5
            F.write_pfm_file(tmp_path / "pred" / f"{i}.pfm", pred)
            F.write_pfm_file(tmp_path / "gt" / f"{i}.pfm", gt)
            (tmp_path / "mask" / f"{i}.pgm").write_bytes(F.write_pgm(mask))
        rc = cli.main(["eval", "--pred", str(tmp_path / "pred"),
                       "--gt", str(tmp_path / "gt"), "--mask", str(tmp_path / "mask")])
        assert rc == 0
        report = json.loads(capsys.readouterr().out)
        assert report["epe"] == pytest.approx(1.0, abs=1e-5)
        assert report["n_frames"] == 3

    def test_nan_predictions_excluded(self, tmp_path, capsys):
        gt = np.full((4, 4), 2.0, dtype=np.float32)
        pred = gt.copy()
        pred[0, 0] = np.nan
        F.write_pfm_file(tmp_path / "p.pfm", pred)
        F.write_pfm_file(tmp_path / "g.pfm", gt)
        rc = cli.main(["eval", "--pred", str(tmp_path / "p.pfm"),
                       "--gt", str(tmp_path / "g.pfm")])
        assert rc == 0
        report = json.loads(capsys.readouterr().out)
        assert report["n_evaluated"] == 15
        assert report["epe"] == 0.0


class TestCloudCommand:
    def test_cloud_and_voxel_output(self, tmp_path, capsys):
        disp = np.full((8, 8), 10.0, dtype=np.float32)
        disp[0, 0] = np.nan
        F.write_pfm_file(tmp_path / "d.pfm", disp)
        out = tmp_path / "c.ply"
        rc = cli.main(["cloud", "--disp", str(tmp_path / "d.pfm"),
                       "--fx", "100", "--fy", "100", "--cx", "4", "--cy", "4",
                       "--baseline", "0.1", "--out", str(out)])
        assert rc == 0
        assert json.loads(capsys.readouterr().out)["points"] == 63
        cloud = G.read_ply(str(out))
        assert len(cloud) == 63  # NaN pixel omitted

        rc = cli.main(["cloud", "--disp", str(tmp_path / "d.pfm"),
                       "--fx", "100", "--fy", "100", "--cx", "4", "--cy", "4",
                       "--baseline", "0.1", "--out", str(out), "--voxel", "0.02"])
        assert rc == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["voxels"] == summary["points"]
        assert summary["voxel"] == 0.02

    def test_missing_disp_exit_2(self, tmp_path):
        rc = cli.main(["cloud", "--disp", str(tmp_path / "nope.pfm"),
                       "--fx", "1", "--fy", "1", "--cx", "0", "--cy", "0",
                       "--baseline", "0.1", "--out", str(tmp_path / "c.ply")])
        assert rc == 2
