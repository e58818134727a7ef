import json

import pytest
from click.testing import CliRunner

from minetune.cli import (
    EXIT_IO,
    EXIT_K_TOO_LARGE,
    EXIT_NO_PAIRS,
    EXIT_VALIDATION,
    main,
)

from test_pipeline import small_run_config


@pytest.fixture
def runner():
    return CliRunner()


def write_config(path, seed=1, **overrides):
    cfg = small_run_config(seed=seed, **overrides)
    path.write_text(json.dumps(cfg.model_dump(mode="json", by_alias=True)))
    return path


class TestGenerate:
    def test_writes_datasets(self, runner, tmp_path):
        cfg = write_config(tmp_path / "cfg.json")
        result = runner.invoke(
            main, ["generate", "--config", str(cfg), "--out", str(tmp_path / "data")]
        )
        assert result.exit_code == 0, result.output
        assert (tmp_path / "data" / "virtual.bin").exists()
        assert (tmp_path / "data" / "real.bin").exists()
        assert "virtual:" in result.output

    def test_rerun_identical(self, runner, tmp_path):
        cfg = write_config(tmp_path / "cfg.json")
        args = ["generate", "--config", str(cfg), "--out", str(tmp_path / "data")]
        runner.invoke(main, args)
        first = (tmp_path / "data" / "virtual.bin").read_bytes()
        runner.invoke(main, args)
        assert (tmp_path / "data" / "virtual.bin").read_bytes() == first

    def test_invalid_field_exits_validation(self, runner, tmp_path):
        raw = json.loads(
            (write_config(tmp_path / "cfg.json")).read_text()
        )
        raw["generator"]["virtual"]["n_cameras"] = 0
        (tmp_path / "bad.json").write_text(json.dumps(raw))
        result = runner.invoke(
            main, ["generate", "--config", str(tmp_path / "bad.json"), "--out", str(tmp_path)]
        )
        assert result.exit_code == EXIT_VALIDATION
        assert "n_cameras" in result.output

    def test_missing_config_file(self, runner, tmp_path):
        result = runner.invoke(
            main, ["generate", "--config", str(tmp_path / "nope.json")]
        )
        assert result.exit_code == EXIT_IO


class TestRun:
    def test_full_run(self, runner, tmp_path):
        cfg = write_config(tmp_path / "cfg.json")
        result = runner.invoke(
            main, ["run", "--config", str(cfg), "--out", str(tmp_path / "out")]
        )
        assert result.exit_code == 0, result.output
        assert "final:" in result.output
        assert (tmp_path / "out" / "report.json").exists()

    def test_ablation_none(self, runner, tmp_path):
        cfg = write_config(tmp_path / "cfg.json")
        result = runner.invoke(
            main, ["run", "--config", str(cfg), "--ablation", "none", "--json"]
        )
        assert result.exit_code == 0
        report = json.loads(result.output)["report"]
        assert "final" not in report
        assert "mining_accuracy" not in report

    def test_no_pairs_exit_code(self, runner, tmp_path):
        raw = json.loads(write_config(tmp_path / "cfg.json").read_text())
        raw["generator"]["real"]["n_cameras"] = 1
        (tmp_path / "cfg.json").write_text(json.dumps(raw))
        result = runner.invoke(main, ["run", "--config", str(tmp_path / "cfg.json")])
        assert result.exit_code == EXIT_NO_PAIRS

    def test_seed_override_changes_results(self, runner, tmp_path):
        cfg = write_config(tmp_path / "cfg.json")
        r1 = runner.invoke(main, ["run", "--config", str(cfg), "--seed", "3", "--json"])
        r2 = runner.invoke(main, ["run", "--config", str(cfg), "--seed", "4", "--json"])
        m1 = json.loads(r1.output)["report"]["mAP"]
        m2 = json.loads(r2.output)["report"]["mAP"]
        assert m1 != m2

    def test_lambda_and_k_overrides_land_in_report(self, runner, tmp_path):
        cfg = write_config(tmp_path / "cfg.json")
        result = runner.invoke(
            main,
            ["run", "--config", str(cfg), "--lambda", "0.25", "--k", "4", "--json"],
        )
        report = json.loads(result.output)["report"]
        assert report["config"]["train"]["lambda"] == 0.25
        assert report["config"]["train"]["k"] == 4


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """One small end-to-end run shared by the mine/eval CLI tests."""
    tmp = tmp_path_factory.mktemp("cli-artifacts")
    runner = CliRunner()
    cfg = write_config(tmp / "cfg.json")
    res = runner.invoke(
        main,
        ["generate", "--config", str(cfg), "--out", str(tmp / "data")],
    )
    assert res.exit_code == 0
    res = runner.invoke(
        main, ["run", "--config", str(cfg), "--out", str(tmp / "out")]
    )
    assert res.exit_code == 0
    return tmp


class TestMine:
    def test_mine_to_csv(self, runner, trained):
        result = runner.invoke(
            main,
            [
                "mine",
                "--checkpoint", str(trained / "out" / "final.ckpt"),
                "--dataset", str(trained / "data" / "real.bin"),
                "--k", "6",
                "--out", str(trained / "pairs.csv"),
            ],
        )
        assert result.exit_code == 0, result.output
        lines = (trained / "pairs.csv").read_text().strip().splitlines()
        assert lines[0] == "anchor_id,positive_id,f_score,same_identity"
        assert len(lines) > 1

    def test_k_too_large_exit_code(self, runner, trained):
        result = runner.invoke(
            main,
            [
                "mine",
                "--checkpoint", str(trained / "out" / "final.ckpt"),
                "--dataset", str(trained / "data" / "real.bin"),
                "--k", "48",
            ],
        )
        assert result.exit_code == EXIT_K_TOO_LARGE

    def test_no_cross_camera_flag(self, runner, trained):
        result = runner.invoke(
            main,
            [
                "mine",
                "--checkpoint", str(trained / "out" / "final.ckpt"),
                "--dataset", str(trained / "data" / "real.bin"),
                "--k", "6",
                "--no-cross-camera",
                "--json",
            ],
        )
        assert result.exit_code == 0
        assert json.loads(result.output)["count"] > 0

    def test_missing_dataset_io_exit(self, runner, trained):
        result = runner.invoke(
            main,
            [
                "mine",
                "--checkpoint", str(trained / "out" / "final.ckpt"),
                "--dataset", str(trained / "missing.bin"),
            ],
        )
        assert result.exit_code == EXIT_IO


class TestEval:
    def test_hand_computed_map_on_toy_dataset(self, runner, tmp_path):
        # four items on the unit circle, two identities over two cameras; the
        # cross-camera protocol leaves each query one relevant item, at ranks
        # 2, 3, 3, 2 -> mAP = (1/2 + 1/3 + 1/3 + 1/2) / 4 = 5/12
        import math

        import numpy as np

        from minetune.dataio import write_dataset
        from minetune.embeddings import EmbeddingMatrix
        from minetune.model import EmbedderParams, save_checkpoint
        from conftest import make_meta

        angles = [0.0, 1.0, 0.4, 1.4]
        feats = np.array([[math.cos(a), math.sin(a)] for a in angles])
        meta = make_meta([0, 1, 0, 1], true_ids=[0, 0, 1, 1])
        write_dataset(tmp_path / "toy.bin", EmbeddingMatrix(feats, meta))
        params = EmbedderParams(
            w=np.eye(2), b=np.zeros(2), w_cls=np.zeros((2, 2)), b_cls=np.zeros(2)
        )
        save_checkpoint(tmp_path / "id.ckpt", params)

        result = runner.invoke(
            main,
            [
                "eval",
                "--checkpoint", str(tmp_path / "id.ckpt"),
                "--dataset", str(tmp_path / "toy.bin"),
                "--per-query-csv", str(tmp_path / "ap.csv"),
                "--json",
            ],
        )
        assert result.exit_code == 0, result.output
        body = json.loads(result.output)
        assert abs(body["mAP"] - 5.0 / 12.0) < 1e-12
        assert body["cmc"]["1"] == 0.0
        assert body["cmc"]["5"] == 1.0
        lines = (tmp_path / "ap.csv").read_text().strip().splitlines()
        assert lines[0] == "query_id,ap"
        aps = sorted(float(line.split(",")[1]) for line in lines[1:])
        assert aps == pytest.approx(sorted([0.5, 1 / 3, 1 / 3, 0.5]))

    def test_eval_prints_metrics(self, runner, trained):
        result = runner.invoke(
            main,
            [
                "eval",
                "--checkpoint", str(trained / "out" / "final.ckpt"),
                "--dataset", str(trained / "data" / "real.bin"),
                "--ranks", "1,5",
            ],
        )
        assert result.exit_code == 0, result.output
        assert "mAP:" in result.output
        assert "rank-1:" in result.output

    def test_final_beats_coarse(self, runner, trained):
        def rank1(ckpt):
            res = runner.invoke(
                main,
                ["eval", "--checkpoint", str(ckpt),
                 "--dataset", str(trained / "data" / "real.bin"), "--json"],
            )
            return json.loads(res.output)["cmc"]["1"]

        assert rank1(trained / "out" / "final.ckpt") >= rank1(trained / "out" / "coarse.ckpt")


class TestSweep:
    def test_sweep_lambda(self, runner, tmp_path):
        cfg = write_config(tmp_path / "cfg.json")
        result = runner.invoke(
            main,
            ["sweep", "--config", str(cfg), "--param", "lambda", "--values", "0,1"],
        )
        assert result.exit_code == 0, result.output
        assert "lambda=0" in result.output
        assert "lambda=1" in result.output

    def test_bad_values_rejected(self, runner, tmp_path):
        cfg = write_config(tmp_path / "cfg.json")
        result = runner.invoke(
            main,
            ["sweep", "--config", str(cfg), "--param", "k", "--values", "a,b"],
        )
        assert result.exit_code == EXIT_VALIDATION


class TestHelp:
    def test_subcommands_listed(self, runner):
        result = runner.invoke(main, ["--help"])
        for cmd in ("generate", "run", "mine", "eval", "sweep", "serve"):
            assert cmd in result.output
