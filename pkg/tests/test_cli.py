import json

import pytest

from crossmil.cli import main

TINY = {
    "data": {
        "n_train_per_class": 4,
        "n_test_per_class": 2,
        "n_locations": 9,
        "dim": 8,
    },
    "cluster": {"k": 3},
    "model": {"encoder_dim": 8, "attention_hidden": 4},
    "train": {"epochs": 2, "learning_rate": 1e-3, "bag_size": 4, "n_splits": 2},
    "eval": {"n_bootstrap": 200},
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config = root / "config.json"
    config.write_text(json.dumps(TINY))
    c = str(config)
    assert main(["gen-data", "--config", c, "--out-dir", str(root / "data"), "--seed", "3"]) == 0
    assert main([
        "cluster", "--config", c, "--data", str(root / "data/train/manifest.json"),
        "--out-dir", str(root / "clust"), "--seed", "3",
    ]) == 0
    assert main([
        "train", "--config", c, "--data", str(root / "data/train/manifest.json"),
        "--cluster", str(root / "clust/cluster_model.json"),
        "--out-dir", str(root / "ckpt"), "--seed", "3",
    ]) == 0
    return root, c


class TestGenData:
    def test_writes_both_classes_and_three_scales(self, workspace):
        root, _ = workspace
        manifest = json.loads((root / "data/train/manifest.json").read_text())
        labels = {e["label"] for e in manifest["patients"]}
        assert labels == {0, 1}
        assert all(e["n_scales"] == 3 for e in manifest["patients"])
        assert all(e["scale_labels"] == ["20x", "10x", "5x"] for e in manifest["patients"])

    def test_rerun_is_byte_identical(self, workspace, tmp_path):
        root, c = workspace
        assert main(["gen-data", "--config", c, "--out-dir", str(tmp_path / "again"), "--seed", "3"]) == 0
        for sub in ("train", "test"):
            first = sorted((root / "data" / sub).iterdir())
            second = sorted((tmp_path / "again" / sub).iterdir())
            assert [f.name for f in first] == [f.name for f in second]
            for f1, f2 in zip(first, second):
                assert f1.read_bytes() == f2.read_bytes()

    def test_invalid_signal_fraction_exits_2_naming_field(self, tmp_path, capsys):
        config = tmp_path / "bad.json"
        config.write_text(json.dumps({"data": {"signal_fraction": 0.0}}))
        code = main(["gen-data", "--config", str(config), "--out-dir", str(tmp_path / "out")])
        assert code == 2
        assert "signal_fraction" in capsys.readouterr().err

    def test_unknown_config_key_rejected(self, tmp_path, capsys):
        config = tmp_path / "bad.json"
        config.write_text(json.dumps({"data": {"typo_key": 1}}))
        assert main(["gen-data", "--config", str(config), "--out-dir", str(tmp_path / "o")]) == 2
        assert "typo_key" in capsys.readouterr().err


class TestTrain:
    def test_one_checkpoint_and_curve_per_split(self, workspace):
        root, _ = workspace
        assert len(list((root / "ckpt").glob("checkpoint_split*.bin"))) == 2
        assert len(list((root / "ckpt").glob("loss_split*.csv"))) == 2
        assert (root / "ckpt/resolved_config.json").exists()

    @pytest.mark.parametrize("fusion", ["cs-attn", "concat", "add"])
    def test_fusion_flags_accepted(self, workspace, tmp_path, fusion):
        root, c = workspace
        code = main([
            "train", "--config", c, "--data", str(root / "data/train/manifest.json"),
            "--cluster", str(root / "clust/cluster_model.json"),
            "--out-dir", str(tmp_path / fusion), "--seed", "3", "--fusion", fusion,
        ])
        assert code == 0

    def test_missing_dataset_exits_2(self, workspace, tmp_path):
        root, c = workspace
        code = main([
            "train", "--config", c, "--data", str(tmp_path / "nope/manifest.json"),
            "--cluster", str(root / "clust/cluster_model.json"),
            "--out-dir", str(tmp_path / "out"),
        ])
        assert code == 2


class TestEval:
    def test_report_fields_populated(self, workspace, tmp_path):
        root, c = workspace
        out = tmp_path / "eval"
        code = main([
            "eval", "--config", c, "--data", str(root / "data/test/manifest.json"),
            "--cluster", str(root / "clust/cluster_model.json"),
            "--ckpt-dir", str(root / "ckpt"), "--out-dir", str(out), "--seed", "3",
        ])
        assert code == 0
        report = dict(
            line.split("=") for line in (out / "report.txt").read_text().splitlines()
        )
        for key in ("auc", "ap", "accuracy"):
            assert 0.0 <= float(report[key]) <= 1.0
        assert (out / "roc.csv").read_text().startswith("fpr,tpr")
        assert (out / "pr.csv").read_text().startswith("recall,precision")
        assert (out / "scores.csv").exists()

    def test_eval_without_checkpoints_exits_2(self, workspace, tmp_path):
        root, c = workspace
        code = main([
            "eval", "--config", c, "--data", str(root / "data/test/manifest.json"),
            "--cluster", str(root / "clust/cluster_model.json"),
            "--ckpt-dir", str(tmp_path / "empty"), "--out-dir", str(tmp_path / "out"),
        ])
        assert code == 2


class TestCompare:
    def test_two_variant_table(self, workspace, tmp_path):
        root, c = workspace
        eval_a = tmp_path / "eval_a"
        main([
            "eval", "--config", c, "--data", str(root / "data/test/manifest.json"),
            "--cluster", str(root / "clust/cluster_model.json"),
            "--ckpt-dir", str(root / "ckpt"), "--out-dir", str(eval_a), "--seed", "3",
        ])
        out = tmp_path / "cmp"
        code = main([
            "compare", "--config", c, "--out-dir", str(out), "--seed", "3",
            "--scores", f"cs-attn={eval_a}/scores.csv",
            "--scores", f"again={eval_a}/scores.csv",
        ])
        assert code == 0
        lines = (out / "comparison.csv").read_text().splitlines()
        assert lines[0] == "model,auc,ap,acc,p_auc_vs_ref,p_ap_vs_ref"
        assert len(lines) == 3
        # identical scores against the reference: both tests give p = 1
        again = lines[2].split(",")
        assert float(again[4]) == 1.0 and float(again[5]) == 1.0

    def test_single_entry_rejected(self, workspace, tmp_path):
        _, c = workspace
        code = main([
            "compare", "--config", c, "--out-dir", str(tmp_path),
            "--scores", "only=/nonexistent.csv",
        ])
        assert code in (2, 3)


class TestAttnMap:
    def test_images_per_patient_per_scale(self, workspace, tmp_path):
        root, c = workspace
        out = tmp_path / "maps"
        code = main([
            "attn-map", "--config", c, "--data", str(root / "data/test/manifest.json"),
            "--ckpt-dir", str(root / "ckpt"), "--out-dir", str(out), "--seed", "3",
            "--patients", "pos004,neg004",
        ])
        assert code == 0
        for pid in ("pos004", "neg004"):
            for scale in ("20x", "10x", "5x"):
                assert (out / f"{pid}_scale-{scale}.pgm").exists()
        assert (out / "attention_records.csv").exists()

    def test_concat_model_has_no_attention(self, workspace, tmp_path, capsys):
        root, c = workspace
        concat_dir = tmp_path / "concat_ckpt"
        main([
            "train", "--config", c, "--data", str(root / "data/train/manifest.json"),
            "--cluster", str(root / "clust/cluster_model.json"),
            "--out-dir", str(concat_dir), "--seed", "3", "--fusion", "concat",
        ])
        config = tmp_path / "concat.json"
        doc = json.loads((concat_dir / "resolved_config.json").read_text())
        config.write_text(json.dumps(doc))
        code = main([
            "attn-map", "--config", str(config),
            "--data", str(root / "data/test/manifest.json"),
            "--ckpt-dir", str(concat_dir), "--out-dir", str(tmp_path / "maps"),
        ])
        assert code == 2
        assert "no cross-scale attention" in capsys.readouterr().err

    def test_unknown_patient_named_in_error(self, workspace, tmp_path, capsys):
        root, c = workspace
        code = main([
            "attn-map", "--config", c, "--data", str(root / "data/test/manifest.json"),
            "--ckpt-dir", str(root / "ckpt"), "--out-dir", str(tmp_path / "maps"),
            "--patients", "pos000",  # training patient, absent from the test set
        ])
        assert code == 2
        assert "pos000" in capsys.readouterr().err

    def test_rerun_is_byte_identical(self, workspace, tmp_path):
        root, c = workspace
        outputs = []
        for tag in ("m1", "m2"):
            out = tmp_path / tag
            assert main([
                "attn-map", "--config", c, "--data", str(root / "data/test/manifest.json"),
                "--ckpt-dir", str(root / "ckpt"), "--out-dir", str(out), "--seed", "3",
                "--patients", "pos004",
            ]) == 0
            outputs.append(
                {f.name: f.read_bytes() for f in sorted(out.iterdir())}
            )
        assert outputs[0] == outputs[1]
