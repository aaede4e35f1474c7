import json
import shutil
import subprocess

import numpy as np
import pytest
from PIL import Image

import percepdet as pd
from percepdet.cli import DEFAULT_DEGRADATIONS, main, parse_degradations
from conftest import smoothed_counterpart, synth_photo


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    """Twelve images with train/val/test splits for both labels."""
    root = tmp_path_factory.mktemp("cli_corpus")
    rng = np.random.default_rng(17)
    records = []
    splits = ["train", "train", "val", "val", "test", "test"]
    for i, split in enumerate(splits):
        photo = synth_photo(rng, side=48)
        smooth = smoothed_counterpart(photo)
        for label, img in (("real", photo), ("fake", smooth)):
            rel = f"{label}_{i}.png"
            Image.fromarray(np.rint(img).astype(np.uint8), mode="L").save(root / rel)
            records.append(
                {
                    "id": f"{label}_{i}",
                    "path": rel,
                    "label": label,
                    "sample_type": label,
                    "generator": "medfilter",
                    "split": split,
                }
            )
    manifest = root / "manifest.json"
    manifest.write_text(
        json.dumps({"name": "cli_corpus", "records": records}), encoding="utf-8"
    )
    return root


@pytest.fixture(scope="module")
def artifacts(corpus, tmp_path_factory):
    """Feature file and trained model shared by the downstream command tests."""
    out = tmp_path_factory.mktemp("cli_artifacts")
    features = out / "features.pcff"
    model = out / "model.pfdm"
    config = out / "config.json"
    config.write_text(json.dumps({"epochs": 2}), encoding="utf-8")
    assert main([
        "extract", "--manifest", str(corpus / "manifest.json"),
        "--out", str(features),
    ]) == 0
    assert main([
        "train", "--features", str(features), "--out", str(model),
        "--config", str(config), "--seed", "9",
    ]) == 0
    return {"features": features, "model": model, "config": config, "dir": out}


def run(capsys, argv):
    code = main(argv)
    captured = capsys.readouterr()
    summary = json.loads(captured.out) if code == 0 and captured.out else None
    return code, summary, captured.err


class TestUsage:
    def test_no_arguments(self, capsys):
        assert main([]) == 1

    def test_unknown_command(self, capsys):
        assert main(["frobnicate"]) == 1

    def test_unknown_flag(self, capsys):
        assert main(["extract", "--wat", "x"]) == 1

    def test_missing_required_flag(self, capsys):
        assert main(["train", "--out", "m.pfdm"]) == 1

    def test_bad_threads(self, corpus, capsys, tmp_path):
        code = main([
            "extract", "--manifest", str(corpus / "manifest.json"),
            "--out", str(tmp_path / "f.pcff"), "--threads", "0",
        ])
        assert code == 1

    def test_help_exits_clean(self, capsys):
        assert main(["--help"]) == 0


class TestDegradationGrammar:
    def test_default_sweep(self):
        degs = parse_degradations(DEFAULT_DEGRADATIONS)
        assert len(degs) == 12
        assert degs[0].name == "blur" and degs[0].level == 1.0
        assert degs[4].name == "blur" and degs[4].level == 5.0
        assert degs[5].name == "jpeg" and degs[5].level == 90
        assert degs[-1].name == "jpeg" and degs[-1].level == 30

    def test_empty_string(self):
        assert parse_degradations("") == []

    def test_bad_grammar(self):
        with pytest.raises(pd.ValidationError):
            parse_degradations("blur")
        with pytest.raises(pd.ValidationError):
            parse_degradations("blur:a,b")
        with pytest.raises(pd.ValidationError):
            parse_degradations("warp:1")  # unknown degradation name


class TestExtract:
    def test_writes_features_and_summary(self, corpus, capsys, tmp_path):
        out = tmp_path / "f.pcff"
        code, summary, _ = run(capsys, [
            "extract", "--manifest", str(corpus / "manifest.json"), "--out", str(out),
        ])
        assert code == 0
        assert summary["command"] == "extract"
        assert summary["backend"] == "nss36"
        assert summary["dim"] == 36
        assert summary["records"] == 12
        fs = pd.read_feature_file(out)
        assert len(fs.records) == 12

    def test_split_filter(self, corpus, capsys, tmp_path):
        out = tmp_path / "f.pcff"
        code, summary, _ = run(capsys, [
            "extract", "--manifest", str(corpus / "manifest.json"),
            "--out", str(out), "--split", "test",
        ])
        assert code == 0 and summary["records"] == 4

    def test_rerun_byte_identical(self, corpus, capsys, tmp_path):
        a, b = tmp_path / "a.pcff", tmp_path / "b.pcff"
        base = ["extract", "--manifest", str(corpus / "manifest.json")]
        assert main(base + ["--out", str(a)]) == 0
        assert main(base + ["--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_missing_manifest(self, capsys, tmp_path):
        code = main([
            "extract", "--manifest", str(tmp_path / "nope.json"),
            "--out", str(tmp_path / "f.pcff"),
        ])
        assert code == 2

    def test_invalid_manifest_json(self, capsys, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json", encoding="utf-8")
        code = main(["extract", "--manifest", str(bad), "--out", str(tmp_path / "f.pcff")])
        assert code == 2


class TestTrain:
    def test_model_written_with_seed(self, artifacts, capsys):
        model = pd.load_model(artifacts["model"])
        assert model.meta["seed"] == 9
        assert model.threshold == 0.5
        assert model.dim == 36

    def test_rerun_byte_identical(self, artifacts, capsys, tmp_path):
        out = tmp_path / "again.pfdm"
        code = main([
            "train", "--features", str(artifacts["features"]), "--out", str(out),
            "--config", str(artifacts["config"]), "--seed", "9",
        ])
        assert code == 0
        assert out.read_bytes() == artifacts["model"].read_bytes()

    def test_flag_overrides_config_seed(self, artifacts, capsys, tmp_path):
        config = tmp_path / "c.json"
        config.write_text(json.dumps({"epochs": 2, "seed": 1}), encoding="utf-8")
        out = tmp_path / "m.pfdm"
        assert main([
            "train", "--features", str(artifacts["features"]), "--out", str(out),
            "--config", str(config), "--seed", "9",
        ]) == 0
        assert pd.load_model(out).meta["seed"] == 9

    def test_unknown_config_key(self, artifacts, capsys, tmp_path):
        config = tmp_path / "c.json"
        config.write_text(json.dumps({"lr": 0.1}), encoding="utf-8")
        code = main([
            "train", "--features", str(artifacts["features"]),
            "--out", str(tmp_path / "m.pfdm"), "--config", str(config),
        ])
        assert code == 3

    def test_malformed_config(self, artifacts, capsys, tmp_path):
        config = tmp_path / "c.json"
        config.write_text("{", encoding="utf-8")
        code = main([
            "train", "--features", str(artifacts["features"]),
            "--out", str(tmp_path / "m.pfdm"), "--config", str(config),
        ])
        assert code == 2

    def test_missing_features_file(self, capsys, tmp_path):
        code = main([
            "train", "--features", str(tmp_path / "nope.pcff"),
            "--out", str(tmp_path / "m.pfdm"),
        ])
        assert code == 2


class TestCalibrateEval:
    def test_calibrate_updates_threshold(self, artifacts, capsys, tmp_path):
        out = tmp_path / "calibrated.pfdm"
        code, summary, _ = run(capsys, [
            "calibrate", "--model", str(artifacts["model"]),
            "--features", str(artifacts["features"]), "--out", str(out),
        ])
        assert code == 0
        model = pd.load_model(out)
        assert model.threshold == summary["threshold"]
        assert 0.0 <= summary["threshold"] <= 1.0

    def test_eval_json_report(self, artifacts, capsys, tmp_path):
        out = tmp_path / "report.json"
        code, summary, _ = run(capsys, [
            "eval", "--model", str(artifacts["model"]),
            "--features", str(artifacts["features"]), "--out", str(out),
        ])
        assert code == 0
        assert summary["dataset"] == "features"  # stem of the feature file
        assert 0.0 <= summary["macc"] <= 100.0
        report = pd.read_report(out)
        assert report.macc == summary["macc"]
        assert report.model_digest
        assert report.featureset_digest

    def test_eval_csv_report(self, artifacts, capsys, tmp_path):
        out = tmp_path / "report.csv"
        code, _, _ = run(capsys, [
            "eval", "--model", str(artifacts["model"]),
            "--features", str(artifacts["features"]),
            "--out", str(out), "--format", "csv",
        ])
        assert code == 0
        head = out.read_text(encoding="utf-8").splitlines()[0]
        assert head == "type,name,level,real_acc,fake_acc,balanced_acc,macc"

    def test_eval_dataset_flag(self, artifacts, capsys):
        code, summary, _ = run(capsys, [
            "eval", "--model", str(artifacts["model"]),
            "--features", str(artifacts["features"]), "--dataset", "named",
        ])
        assert code == 0 and summary["dataset"] == "named"

    def test_eval_missing_model(self, artifacts, capsys, tmp_path):
        code = main([
            "eval", "--model", str(tmp_path / "nope.pfdm"),
            "--features", str(artifacts["features"]),
        ])
        assert code == 2

    def test_eval_corrupt_model(self, artifacts, capsys, tmp_path):
        bad = tmp_path / "bad.pfdm"
        bad.write_bytes(b"garbage bytes here")
        code = main([
            "eval", "--model", str(bad), "--features", str(artifacts["features"]),
        ])
        assert code == 2


class TestRobustnessCommand:
    def test_two_point_sweep(self, corpus, artifacts, capsys, tmp_path):
        out = tmp_path / "rob.json"
        code, summary, _ = run(capsys, [
            "robustness", "--model", str(artifacts["model"]),
            "--manifest", str(corpus / "manifest.json"),
            "--degradations", "blur:1", "--out", str(out),
        ])
        assert code == 0
        assert summary["points"] == 2
        report = pd.read_report(out)
        assert [p.level for p in report.robustness] == ["none", "1"]
        assert report.macc == report.robustness[0].macc

    def test_empty_sweep(self, corpus, artifacts, capsys):
        code, summary, _ = run(capsys, [
            "robustness", "--model", str(artifacts["model"]),
            "--manifest", str(corpus / "manifest.json"), "--degradations", "",
        ])
        assert code == 0 and summary["points"] == 1

    def test_bad_grammar_is_validation_error(self, corpus, artifacts, capsys):
        code = main([
            "robustness", "--model", str(artifacts["model"]),
            "--manifest", str(corpus / "manifest.json"), "--degradations", "blur",
        ])
        assert code == 3


class TestSeparabilityCommand:
    def test_outputs(self, artifacts, capsys, tmp_path):
        out = tmp_path / "sep.json"
        code, summary, _ = run(capsys, [
            "separability", "--features", str(artifacts["features"]),
            "--out", str(out),
        ])
        assert code == 0
        data = json.loads(out.read_text(encoding="utf-8"))
        assert data["fisher_ratio"] == summary["fisher_ratio"]
        assert data["fisher_ratio"] > 0.0
        pca = tmp_path / "sep_pca2d.csv"
        assert pca.exists()
        lines = pca.read_text(encoding="utf-8").strip().splitlines()
        assert lines[0] == "id,x,y,label"
        assert len(lines) == 13  # header + 12 records

    def test_split_scoped(self, artifacts, capsys, tmp_path):
        out = tmp_path / "sep.json"
        code, _, _ = run(capsys, [
            "separability", "--features", str(artifacts["features"]),
            "--out", str(out), "--split", "train",
        ])
        assert code == 0
        pca = tmp_path / "sep_pca2d.csv"
        assert len(pca.read_text(encoding="utf-8").strip().splitlines()) == 5


def test_console_script_installed():
    exe = shutil.which("percepdet")
    assert exe, "console script not on PATH"
    proc = subprocess.run(
        [exe, "--help"], capture_output=True, text=True, timeout=60
    )
    assert proc.returncode == 0
    assert "extract" in proc.stdout
