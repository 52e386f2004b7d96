"""Pipeline stages, artifacts, manifests, exit codes, and report determinism."""

import json

import numpy as np
import pytest

from rodd.cli import run
from rodd.data import read_features

SMALL_CFG = """
[synth]
classes = 3
per_class = 40
test_per_class = 20
input_dim = 8
separation = 6.0
noise_sigma = 1.0
ood_n = 60
ood_offset_norm = 9.0
ood_noise_sigma = 0.5
ood_direction_seed = 5
seed = 3

[model]
hidden_sizes = 16,12
feature_dim = 6
seed = 3

[pretrain]
epochs = 2
batch_size = 16
lr = 0.02
aug_gaussian_sigma = 0.05
seed = 3

[train]
epochs = 4
batch_size = 16
lr = 0.05
input_noise = 0.3
seed = 3

[ood]
quantile = 0.95
mode = single
seed = 3

[eval]
tpr_target = 0.95

[corruption]
kind = gaussian_noise
severities = 1,3
apply_to = ood
seed = 3
"""


@pytest.fixture(scope="module")
def small_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "small.cfg"
    path.write_text(SMALL_CFG)
    return path


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory, small_config):
    out = tmp_path_factory.mktemp("run")
    for command in ("synth", "pretrain", "train", "fit", "eval"):
        assert run([command, "--config", str(small_config), "--out", str(out)]) == 0
    return out


class TestPipeline:
    def test_artifacts_exist(self, pipeline_dir):
        for name in (
            "id_train.feat",
            "id_test.feat",
            "ood.feat",
            "model.ckpt",
            "pretrain_history.json",
            "train_history.json",
            "subspaces.json",
            "id_train_features.feat",
            "eval.json",
            "eval.csv",
            "id_test_scores.csv",
            "ood_scores.csv",
            "run.json",
        ):
            assert (pipeline_dir / name).exists(), name

    def test_eval_rows_cover_clean_and_severities(self, pipeline_dir):
        payload = json.loads((pipeline_dir / "eval.json").read_text())
        rows = payload["rows"]
        assert [(r["corruption"], r["severity"]) for r in rows] == [
            ("none", 0),
            ("gaussian_noise", 1),
            ("gaussian_noise", 3),
        ]
        for row in rows:
            assert set(row.keys()) == {
                "ood_set",
                "corruption",
                "severity",
                "fpr95",
                "auroc",
                "detection_error",
                "n_id",
                "n_ood",
                "threshold_used",
            }
        assert payload["id_accuracy"] is not None

    def test_eval_csv_header(self, pipeline_dir):
        header = (pipeline_dir / "eval.csv").read_text().split("\n")[0]
        assert header == (
            "ood_set,corruption,severity,fpr95,auroc,detection_error,n_id,n_ood,threshold_used"
        )

    def test_manifest_accumulates_stages(self, pipeline_dir, small_config):
        manifest = json.loads((pipeline_dir / "run.json").read_text())
        commands = [entry["command"] for entry in manifest["runs"]]
        assert commands == ["synth", "pretrain", "train", "fit", "eval"]
        for entry in manifest["runs"]:
            assert len(entry["config_sha256"]) == 64
            assert "timestamp" in entry and "artifacts" in entry

    def test_score_command_single_mode(self, pipeline_dir, small_config):
        assert run(["score", "--config", str(small_config), "--out", str(pipeline_dir)]) == 0
        lines = (pipeline_dir / "id_test_scores.csv").read_text().strip().split("\n")
        assert lines[0] == "sample_id,delta,argmin_class,mc_probability,decision"
        assert len(lines) == 61  # header + 3 classes * 20 test samples

    def test_corrupt_command_writes_files(self, pipeline_dir, small_config):
        assert run(["corrupt", "--config", str(small_config), "--out", str(pipeline_dir)]) == 0
        for severity in (1, 3):
            path = pipeline_dir / f"ood_gaussian_noise_s{severity}.feat"
            feats, labels = read_features(path)
            assert feats.shape[0] == 60
            assert labels is None

    def test_frozen_projection_through_checkpoints(self, pipeline_dir):
        from rodd.encoder import load_model

        model = load_model(pipeline_dir / "model.ckpt")
        gram = model.class_proj.T @ model.class_proj
        assert np.abs(gram - np.eye(model.n_classes)).max() <= 1e-8


class TestDeterminism:
    def test_reports_byte_identical_across_reruns(self, tmp_path, small_config):
        outputs = []
        for name in ("a", "b"):
            out = tmp_path / name
            for command in ("synth", "pretrain", "train", "fit", "eval"):
                assert run([command, "--config", str(small_config), "--out", str(out)]) == 0
            outputs.append(
                {
                    "eval.json": (out / "eval.json").read_bytes(),
                    "eval.csv": (out / "eval.csv").read_bytes(),
                    "id_test_scores.csv": (out / "id_test_scores.csv").read_bytes(),
                    "ood_scores.csv": (out / "ood_scores.csv").read_bytes(),
                    "model.ckpt": (out / "model.ckpt").read_bytes(),
                }
            )
        assert outputs[0] == outputs[1]


class TestExitCodes:
    def test_unknown_subcommand(self, small_config, capsys):
        assert run(["transmogrify", "--config", str(small_config), "--out", "/tmp/x"]) == 1
        assert "usage" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path):
        assert run(["synth", "--config", str(tmp_path / "nope.cfg"), "--out", str(tmp_path)]) == 1

    def test_config_parse_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("[synth]\nwhatever = 1\n")
        assert run(["synth", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
        assert "line 2" in capsys.readouterr().err

    def test_missing_artifact(self, tmp_path, small_config, capsys):
        out = tmp_path / "empty"
        assert run(["eval", "--config", str(small_config), "--out", str(out)]) == 1
        assert "missing artifact" in capsys.readouterr().err

    def test_seed_override_changes_synth(self, tmp_path, small_config):
        out_a, out_b = tmp_path / "sa", tmp_path / "sb"
        assert run(["synth", "--config", str(small_config), "--out", str(out_a)]) == 0
        assert run(["synth", "--config", str(small_config), "--out", str(out_b), "--seed", "99"]) == 0
        a, _ = read_features(out_a / "id_train.feat")
        b, _ = read_features(out_b / "id_train.feat")
        assert not np.array_equal(a, b)

    def test_numeric_failure_exits_two(self, tmp_path, small_config, capsys):
        diverging = tmp_path / "diverge.cfg"
        diverging.write_text(
            SMALL_CFG.replace("lr = 0.05", "lr = 1e12").replace(
                "input_noise = 0.3", "input_noise = 0.0\ngrad_clip = 1e18"
            )
        )
        out = tmp_path / "dout"
        assert run(["synth", "--config", str(diverging), "--out", str(out)]) == 0
        with np.errstate(all="ignore"):
            code = run(["train", "--config", str(diverging), "--out", str(out)])
        assert code == 2
        assert "numeric failure" in capsys.readouterr().err


THEORY_CFG = """
[theory]
class_sizes = 5,4
delta = 0.05
eta = 0.0
normalization = unit-spectral-per-block
d = 9
mu = 0.0001
mu_values = 1e-6,1e-4,1e-2
max_iters = 3000
seed = 11
"""


class TestVerifyTheory:
    def test_report_contents(self, tmp_path):
        cfg = tmp_path / "theory.cfg"
        cfg.write_text(THEORY_CFG)
        out = tmp_path / "tout"
        assert run(["verify-theory", "--config", str(cfg), "--out", str(out)]) == 0
        payload = json.loads((out / "theory_report.json").read_text())
        lemma = payload["lemma"]
        assert set(lemma["bounds"].keys()) == {"bound2", "bound4", "bound2_from_bound4"}
        assert len(lemma["per_class"]) == 2
        for entry in lemma["per_class"]:
            assert "sigma" in entry and "tail2" in entry and "tail4" in entry
        assert isinstance(lemma["pass"], bool)
        sweep = payload["sweep"]
        assert [row["mu"] for row in sweep["rows"]] == [1e-6, 1e-4, 1e-2]


class TestMcScoring:
    def test_mc_mode_deterministic(self, tmp_path, small_config, pipeline_dir):
        mc_cfg = tmp_path / "mc.cfg"
        mc_cfg.write_text(
            SMALL_CFG.replace("mode = single", "mode = mc")
            + "\n"  # keep defaults for draws/noise
        )
        outputs = []
        for _ in range(2):
            assert run(["score", "--config", str(mc_cfg), "--out", str(pipeline_dir)]) == 0
            outputs.append((pipeline_dir / "id_test_scores.csv").read_bytes())
        assert outputs[0] == outputs[1]
        rows = outputs[0].decode().strip().split("\n")[1:]
        for row in rows:
            assert row.split(",")[3] != ""
