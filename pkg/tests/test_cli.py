"""Command-line interface tests: subcommand workflows and exit codes."""

import numpy as np
import pytest

from mvdi.cli import main
from mvdi.depthio import load_video, read_pgm
from mvdi.rankpool import PoolConfig, approx_rank_pool, to_dynamic_image
from mvdi.serialize import read_ranking_vector, write_features


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_data")
    code = main(
        [
            "synth",
            "--out",
            str(root),
            "--classes",
            "2",
            "--per-class",
            "6",
            "--size",
            "16",
            "--frames",
            "8",
            "--seed",
            "3",
        ]
    )
    assert code == 0
    return root


class TestSynthAndVideoCommands:
    def test_project_identity_roundtrip(self, dataset, tmp_path):
        video_dir = dataset / "videos" / "c0_i0_v0"
        out = tmp_path / "projected"
        code = main(
            [
                "project",
                "--video",
                str(video_dir),
                "--alpha",
                "0",
                "--beta",
                "0",
                "--hole-fill",
                "0",
                "--out",
                str(out),
            ]
        )
        assert code == 0
        assert load_video(out) == load_video(video_dir)

    def test_project_rotated_changes_content(self, dataset, tmp_path):
        video_dir = dataset / "videos" / "c0_i0_v0"
        out = tmp_path / "rot"
        assert main(
            ["project", "--video", str(video_dir), "--alpha", "30", "--out", str(out)]
        ) == 0
        assert load_video(out) != load_video(video_dir)

    def test_pool_writes_8bit_graymap_and_dump(self, dataset, tmp_path):
        video_dir = dataset / "videos" / "c0_i0_v0"
        out = tmp_path / "di.pgm"
        dump = tmp_path / "u.bin"
        code = main(
            [
                "pool",
                "--video",
                str(video_dir),
                "--variant",
                "approx-frames",
                "--out",
                str(out),
                "--dump-u",
                str(dump),
            ]
        )
        assert code == 0
        image, maxval = read_pgm(out)
        assert maxval == 255
        video = load_video(video_dir)
        expected = to_dynamic_image(
            approx_rank_pool(video, PoolConfig(variant="approx_frames"))
        )
        np.testing.assert_array_equal(image, expected.pixels)
        u, w, h = read_ranking_vector(dump)
        assert (w, h) == (video.width, video.height)
        np.testing.assert_allclose(
            u, approx_rank_pool(video, PoolConfig(variant="approx_frames")).u
        )

    def test_dmm_writes_8bit_graymap(self, dataset, tmp_path):
        video_dir = dataset / "videos" / "c0_i0_v0"
        out = tmp_path / "dmm.pgm"
        assert main(
            ["dmm", "--video", str(video_dir), "--epsilon", "25", "--out", str(out)]
        ) == 0
        _, maxval = read_pgm(out)
        assert maxval == 255

    def test_propose_with_boxes(self, dataset, tmp_path):
        video_dir = dataset / "videos" / "c0_i0_v0"
        boxes = dataset / "boxes" / "c0_i0_v0.csv"
        out = tmp_path / "cropped"
        code = main(
            [
                "propose",
                "--video",
                str(video_dir),
                "--boxes",
                str(boxes),
                "--margin",
                "2",
                "--out",
                str(out),
            ]
        )
        assert code == 0
        cropped = load_video(out)
        original = load_video(video_dir)
        assert cropped.num_frames == original.num_frames
        assert cropped.width <= original.width

    def test_propose_from_skeleton(self, dataset, tmp_path):
        video_dir = dataset / "videos" / "c0_i0_v0"
        skel = dataset / "skeletons" / "c0_i0_v0.csv"
        out = tmp_path / "cropped"
        assert main(
            [
                "propose",
                "--video",
                str(video_dir),
                "--from-skeleton",
                str(skel),
                "--out",
                str(out),
            ]
        ) == 0
        assert load_video(out).num_frames == 8

    def test_propose_requires_exactly_one_source(self, dataset, tmp_path):
        assert main(
            [
                "propose",
                "--video",
                str(dataset / "videos" / "c0_i0_v0"),
                "--out",
                str(tmp_path / "x"),
            ]
        ) == 2


class TestTrainAndGradcheck:
    def test_train_writes_checkpoint(self, dataset, tmp_path):
        out = tmp_path / "model.bin"
        code = main(
            [
                "train",
                "--manifest",
                str(dataset / "manifest.csv"),
                "--groups",
                "2",
                "--iters",
                "3",
                "--seed",
                "1",
                "--input-size",
                "16",
                "--out",
                str(out),
            ]
        )
        assert code == 0
        from mvdi.minicnn import load_model

        model = load_model(out)
        assert model.num_groups == 2
        assert model.num_classes == 2

    def test_gradcheck_passes(self):
        assert main(["gradcheck", "--seed", "0", "--models", "3"]) == 0


class TestClassify:
    def test_classify_separable(self, tmp_path):
        rng = np.random.default_rng(0)
        train = np.vstack([rng.normal(0, 1, (20, 4)) + 3, rng.normal(0, 1, (20, 4)) - 3])
        test = np.vstack([rng.normal(0, 1, (5, 4)) + 3, rng.normal(0, 1, (5, 4)) - 3])
        write_features(tmp_path / "train.bin", train)
        write_features(tmp_path / "test.bin", test)
        (tmp_path / "train.labels").write_text("\n".join(["0"] * 20 + ["1"] * 20))
        (tmp_path / "test.labels").write_text("\n".join(["0"] * 5 + ["1"] * 5))
        code = main(
            [
                "classify",
                "--train-features",
                str(tmp_path / "train.bin"),
                "--train-labels",
                str(tmp_path / "train.labels"),
                "--test-features",
                str(tmp_path / "test.bin"),
                "--test-labels",
                str(tmp_path / "test.labels"),
                "--pca-dim",
                "3",
            ]
        )
        assert code == 0

    def test_classify_length_mismatch_is_data_error(self, tmp_path):
        write_features(tmp_path / "train.bin", np.zeros((4, 2)))
        write_features(tmp_path / "test.bin", np.zeros((2, 2)))
        (tmp_path / "train.labels").write_text("0\n1\n")
        (tmp_path / "test.labels").write_text("0\n1\n")
        assert main(
            [
                "classify",
                "--train-features",
                str(tmp_path / "train.bin"),
                "--train-labels",
                str(tmp_path / "train.labels"),
                "--test-features",
                str(tmp_path / "test.bin"),
                "--test-labels",
                str(tmp_path / "test.labels"),
            ]
        ) == 3


def write_run_config(path, dataset, **extra):
    lines = {
        "manifest": str(dataset / "manifest.csv"),
        "seed": "5",
        "split.mode": "cross_subject",
        "split.train_subjects": "0,1,2",
        "views.groups": "3",
        "model.input_size": "16",
        "model.conv": "4:3:1:1:1",
        "model.hidden": "16",
        "train.iters": "10",
        "train.batch_size": "4",
        "pca.dim": "6",
    }
    lines.update(extra)
    path.write_text("\n".join(f"{k} = {v}" for k, v in lines.items()) + "\n")
    return path


class TestRunAndAblate:
    def test_run_writes_reports(self, dataset, tmp_path, capsys):
        out_dir = tmp_path / "out"
        config = write_run_config(
            tmp_path / "run.cfg", dataset, **{"output_dir": str(out_dir)}
        )
        assert main(["run", "--config", str(config)]) == 0
        captured = capsys.readouterr().out
        assert "overall_accuracy" in captured
        assert (out_dir / "report.txt").is_file()
        assert (out_dir / "timings.txt").is_file()
        assert "[timings]" not in (out_dir / "report.txt").read_text()
        assert "overall" in (out_dir / "timings.txt").read_text()

    def test_run_bad_config_exit_2(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("manifest = m.csv\nrepresentation = wrong\n")
        assert main(["run", "--config", str(bad)]) == 2

    def test_run_missing_manifest_exit_3(self, tmp_path):
        config = tmp_path / "c.cfg"
        config.write_text("manifest = /nonexistent/m.csv\n")
        assert main(["run", "--config", str(config)]) == 3

    def test_ablate_proposal_axis(self, dataset, tmp_path, capsys):
        config = write_run_config(tmp_path / "run.cfg", dataset)
        assert main(["ablate", "--config", str(config), "--axis", "proposal"]) == 0
        out = capsys.readouterr().out
        assert "MVDI-O" in out and "MVDI-AP" in out
