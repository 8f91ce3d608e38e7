"""CLI subcommands: happy paths, error categories, byte-identical reruns."""

import json

import numpy as np
import pytest

from bbkd.cli import main
from bbkd.formats import read_imgf, write_imgf

TINY = {
    "image_size": 16,
    "T": 6,
    "n_paired": 2,
    "n_unpaired": 1,
    "n_test": 1,
    "seed": 0,
    "degradation": {"n_views": 6},
    "denoiser": {"base_channels": 4, "num_blocks": 1, "time_embed_dim": 4},
    "teacher": {"train_steps": 4, "batch_size": 2, "eval_every": 2},
    "student": {"train_steps": 4, "batch_size": 2, "eval_every": 2},
}


@pytest.fixture()
def tiny_config(tmp_path):
    path = tmp_path / "cfg.json"
    cfg = dict(TINY)
    cfg["out_dir"] = str(tmp_path / "run")
    path.write_text(json.dumps(cfg))
    return path


class TestGenData:
    def test_writes_manifest_and_images(self, tiny_config, tmp_path, capsys):
        assert main(["gen-data", "--config", str(tiny_config)]) == 0
        assert (tmp_path / "run" / "data" / "manifest.json").exists()
        assert "wrote" in capsys.readouterr().out

    def test_seed_override_changes_output(self, tiny_config, tmp_path):
        main(["gen-data", "--config", str(tiny_config)])
        a = (tmp_path / "run" / "data" / "images" / "paired_0000_ct.imgf").read_bytes()
        main(["gen-data", "--config", str(tiny_config), "--seed", "9", "--out-dir", str(tmp_path / "run9")])
        b = (tmp_path / "run9" / "data" / "images" / "paired_0000_ct.imgf").read_bytes()
        assert a != b


class TestErrorReporting:
    def test_bad_config_is_config_category(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"T": 1}')
        assert main(["gen-data", "--config", str(bad)]) == 1
        err = capsys.readouterr().err
        assert err.startswith("error: config:")
        assert err.count("\n") == 1

    def test_missing_checkpoint_is_io_category(self, tiny_config, tmp_path, capsys):
        main(["gen-data", "--config", str(tiny_config)])
        code = main(
            ["pseudo-label", "--config", str(tiny_config), "--checkpoint", str(tmp_path / "none.bbkd1")]
        )
        assert code == 1
        assert capsys.readouterr().err.startswith("error: io:")

    def test_corrupt_checkpoint_is_io_category(self, tiny_config, tmp_path, capsys):
        main(["gen-data", "--config", str(tiny_config)])
        fake = tmp_path / "fake.bbkd1"
        fake.write_bytes(b"not a checkpoint")
        assert main(["pseudo-label", "--config", str(tiny_config), "--checkpoint", str(fake)]) == 1
        assert capsys.readouterr().err.startswith("error: io:")

    def test_missing_manifest_is_io_category(self, tiny_config, capsys):
        assert main(["train-teacher", "--config", str(tiny_config)]) == 1
        assert capsys.readouterr().err.startswith("error: io:")


class TestPipelineCommands:
    def test_stepwise_pipeline(self, tiny_config, tmp_path, capsys):
        run = tmp_path / "run"
        assert main(["gen-data", "--config", str(tiny_config)]) == 0
        assert main(["train-teacher", "--config", str(tiny_config)]) == 0
        teacher = run / "checkpoints" / "teacher.bbkd1"
        assert teacher.exists()
        assert main(["pseudo-label", "--config", str(tiny_config), "--checkpoint", str(teacher)]) == 0
        pseudo_manifest = run / "pseudo" / "manifest.json"
        assert pseudo_manifest.exists()
        assert (
            main(
                [
                    "train-student",
                    "--config",
                    str(tiny_config),
                    "--manifest",
                    str(pseudo_manifest),
                    "--init",
                    str(teacher),
                ]
            )
            == 0
        )
        assert (run / "checkpoints" / "student.bbkd1").exists()

    def test_translate_and_evaluate(self, tiny_config, tmp_path, capsys):
        run = tmp_path / "run"
        main(["gen-data", "--config", str(tiny_config)])
        main(["train-teacher", "--config", str(tiny_config)])
        teacher = run / "checkpoints" / "teacher.bbkd1"

        src = run / "data" / "images" / "test_0000_cbct.imgf"
        out = tmp_path / "translated.imgf"
        png = tmp_path / "translated.png"
        assert (
            main(
                [
                    "translate",
                    "--config",
                    str(tiny_config),
                    "--checkpoint",
                    str(teacher),
                    "--input",
                    str(src),
                    "--output",
                    str(out),
                    "--png",
                    str(png),
                ]
            )
            == 0
        )
        assert out.exists() and png.exists()
        assert read_imgf(out).shape == (1, 16, 16)

        pred_dir = tmp_path / "preds"
        truth_dir = tmp_path / "truths"
        pred_dir.mkdir()
        truth_dir.mkdir()
        rng = np.random.default_rng(0)
        for i in range(2):
            img = rng.uniform(-1, 1, (1, 16, 16))
            write_imgf(pred_dir / f"im{i}.imgf", img)
            write_imgf(truth_dir / f"im{i}.imgf", np.clip(img + 0.05, -1, 1))
        report = tmp_path / "report.json"
        assert main(["evaluate", "--pred-dir", str(pred_dir), "--truth-dir", str(truth_dir), "--report", str(report)]) == 0
        data = json.loads(report.read_text())
        assert len(data["per_image"]) == 2
        table = capsys.readouterr().out
        assert "SSIM" in table

    def test_self_train_rerun_is_byte_identical(self, tmp_path):
        cfg = dict(TINY)
        results = []
        for name in ("one", "two"):
            cfg["out_dir"] = str(tmp_path / name)
            path = tmp_path / f"{name}.json"
            path.write_text(json.dumps(cfg))
            assert main(["self-train", "--config", str(path)]) == 0
            results.append(tmp_path / name)
        compared = 0
        for rel in [p.relative_to(results[0]) for p in results[0].rglob("*") if p.is_file()]:
            if rel.parts[0] == "records":
                continue  # wall-clock duration lives here
            a = (results[0] / rel).read_bytes()
            b = (results[1] / rel).read_bytes()
            assert a == b, rel
            compared += 1
        assert compared > 10
