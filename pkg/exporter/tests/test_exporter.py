"""End-to-end tests for the feature exporter.

The interop tests import the detector package deliberately: the exporter's
whole job is producing files that pipeline consumes, so its reader,
trainer, and evaluator act as the reference implementation here.
"""

import json
import subprocess
import shutil

import numpy as np
import pytest
from PIL import Image, ImageFilter

import dfexport as dx
import percepdet as pd
from dfexport.cli import main as cli_main


def synth_photo(rng: np.random.Generator, side: int = 32) -> np.ndarray:
    """A textured grayscale test image in [0, 255]."""
    y, x = np.mgrid[0:side, 0:side].astype(np.float64)
    base = 96.0 + 48.0 * np.sin(x / 3.1) + 32.0 * np.cos(y / 2.3)
    return np.clip(base + rng.normal(0.0, 18.0, (side, side)), 0.0, 255.0)


def save_gray(img: np.ndarray, path) -> None:
    Image.fromarray(np.rint(img).astype(np.uint8), mode="L").save(path)


def build_corpus(root, pairs: int = 6, name: str = "export_corpus") -> str:
    """Write a small dual-label PNG corpus plus its manifest; returns the path."""
    rng = np.random.default_rng(23)
    splits = ["train", "train", "val", "val", "test", "test"]
    records = []
    for i in range(pairs):
        split = splits[i % len(splits)]
        photo = synth_photo(rng)
        smooth = np.asarray(
            Image.fromarray(np.rint(photo).astype(np.uint8), mode="L").filter(
                ImageFilter.MedianFilter(5)
            ),
            dtype=np.float64,
        )
        for label, img in (("real", photo), ("fake", smooth)):
            rel = f"{label}_{i}.png"
            save_gray(img, root / rel)
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
    manifest.write_text(json.dumps({"name": name, "records": records}), encoding="utf-8")
    return str(manifest)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    return build_corpus(root)


@pytest.fixture(scope="module")
def weights(tmp_path_factory):
    root = tmp_path_factory.mktemp("weights")
    return dx.make_stub_weights(root / "stub.npz", dim=8, side=16, seed=0)


def stub_spec(weights, dim: int = 8, name: str = "stub8") -> dx.BackboneSpec:
    return dx.BackboneSpec(name=name, weights=weights, dim=dim)


class TestBackboneSpec:
    def test_rejects_empty_name(self, weights):
        with pytest.raises(dx.ValidationError, match="name"):
            dx.BackboneSpec(name="  ", weights=weights, dim=8)

    def test_rejects_nonpositive_dim(self, weights):
        with pytest.raises(dx.ValidationError, match="dim"):
            dx.BackboneSpec(name="stub", weights=weights, dim=0)

    def test_loads_stub(self, weights):
        backbone = dx.load_backbone(stub_spec(weights))
        assert backbone.dim == 8
        assert backbone.projection.shape == (8, 256)
        assert backbone.note

    def test_weights_are_read_only(self, weights):
        backbone = dx.load_backbone(stub_spec(weights))
        with pytest.raises(ValueError):
            backbone.projection[0, 0] = 1.0

    def test_missing_weights(self, tmp_path):
        spec = dx.BackboneSpec(name="stub", weights=tmp_path / "nope.npz", dim=8)
        with pytest.raises(dx.FileFormatError, match="not found"):
            dx.load_backbone(spec)

    def test_corrupt_weights(self, tmp_path):
        bad = tmp_path / "bad.npz"
        bad.write_bytes(b"this is not a zip archive")
        with pytest.raises(dx.FileFormatError, match="corrupt"):
            dx.load_backbone(dx.BackboneSpec(name="stub", weights=bad, dim=8))

    def test_missing_archive_keys(self, tmp_path):
        partial = tmp_path / "partial.npz"
        np.savez(partial, projection=np.zeros((8, 256)))
        with pytest.raises(dx.FileFormatError, match="missing"):
            dx.load_backbone(dx.BackboneSpec(name="stub", weights=partial, dim=8))

    def test_dim_mismatch(self, weights):
        with pytest.raises(dx.ValidationError, match="dim"):
            dx.load_backbone(stub_spec(weights, dim=7))


class TestExport:
    def test_summary_and_primary_parse(self, corpus, weights, tmp_path):
        out = tmp_path / "features.pcff"
        summary = dx.export_features(corpus, stub_spec(weights), out)
        assert summary["records"] == 12
        assert summary["dim"] == 8
        assert summary["backend"] == "stub8"
        assert summary["preprocessing"]

        fs = pd.read_feature_file(out)
        assert fs.dim == 8
        assert fs.backend_name == "stub8"
        assert len(fs.records) == 12
        assert [r.id for r in fs.records][:2] == ["real_0", "fake_0"]
        assert all(np.isfinite(r.features).all() for r in fs.records)
        assert {r.split for r in fs.records} == {"train", "val", "test"}

    def test_primary_trains_and_evaluates(self, corpus, weights, tmp_path):
        """The full handoff: exported file -> detector training -> report."""
        out = tmp_path / "features.pcff"
        dx.export_features(corpus, stub_spec(weights), out)
        fs = pd.read_feature_file(out)
        model = pd.train(fs, pd.TrainConfig(epochs=2, seed=3))
        report = pd.evaluate(model, fs, dataset="export_corpus")
        assert 0.0 <= report.macc <= 100.0
        assert [s.generator for s in report.subsets] == ["medfilter"]

    def test_rerun_is_byte_identical(self, corpus, weights, tmp_path):
        a, b = tmp_path / "a.pcff", tmp_path / "b.pcff"
        dx.export_features(corpus, stub_spec(weights), a)
        dx.export_features(corpus, stub_spec(weights), b)
        assert a.read_bytes() == b.read_bytes()

    def test_batch_size_does_not_change_bytes(self, corpus, weights, tmp_path):
        a, b = tmp_path / "a.pcff", tmp_path / "b.pcff"
        dx.export_features(corpus, stub_spec(weights), a, batch_size=1)
        dx.export_features(corpus, stub_spec(weights), b, batch_size=7)
        assert a.read_bytes() == b.read_bytes()

    def test_same_seed_weights_reproduce_output(self, corpus, tmp_path):
        w1 = dx.make_stub_weights(tmp_path / "w1.npz", seed=4)
        w2 = dx.make_stub_weights(tmp_path / "w2.npz", seed=4)
        a, b = tmp_path / "a.pcff", tmp_path / "b.pcff"
        dx.export_features(corpus, stub_spec(w1), a)
        dx.export_features(corpus, stub_spec(w2), b)
        assert a.read_bytes() == b.read_bytes()

    def test_split_filter(self, corpus, weights, tmp_path):
        out = tmp_path / "test_only.pcff"
        summary = dx.export_features(corpus, stub_spec(weights), out, split="test")
        assert summary["records"] == 4
        fs = pd.read_feature_file(out)
        assert {r.split for r in fs.records} == {"test"}

    def test_unknown_split(self, corpus, weights, tmp_path):
        with pytest.raises(dx.ValidationError, match="split"):
            dx.export_features(corpus, stub_spec(weights), tmp_path / "x.pcff", split="dev")

    def test_bad_batch_size(self, corpus, weights, tmp_path):
        with pytest.raises(dx.ValidationError, match="batch"):
            dx.export_features(corpus, stub_spec(weights), tmp_path / "x.pcff", batch_size=0)

    def test_four_image_fixture(self, weights, tmp_path):
        build_corpus(tmp_path, pairs=2, name="four")
        out = tmp_path / "four.pcff"
        summary = dx.export_features(tmp_path / "manifest.json", stub_spec(weights), out)
        assert summary["records"] == 4
        assert pd.read_feature_file(out).dim == 8


class TestFailureAtomicity:
    def test_decode_failures_name_every_record(self, weights, tmp_path):
        manifest = build_corpus(tmp_path)
        (tmp_path / "real_1.png").write_bytes(b"not a png")
        (tmp_path / "fake_2.png").unlink()
        out = tmp_path / "features.pcff"
        with pytest.raises(dx.ImageError) as err:
            dx.export_features(manifest, stub_spec(weights), out)
        assert "real_1" in str(err.value) and "fake_2" in str(err.value)
        assert "2 of 12" in str(err.value)
        assert not out.exists()
        assert not list(tmp_path.glob("*.tmp"))

    def test_corrupt_weights_write_nothing(self, tmp_path):
        manifest = build_corpus(tmp_path)
        bad = tmp_path / "bad.npz"
        bad.write_bytes(b"garbage")
        out = tmp_path / "features.pcff"
        with pytest.raises(dx.FileFormatError):
            dx.export_features(manifest, dx.BackboneSpec("stub", bad, 8), out)
        assert not out.exists()

    def test_dim_mismatch_writes_nothing(self, corpus, weights, tmp_path):
        out = tmp_path / "features.pcff"
        with pytest.raises(dx.ValidationError):
            dx.export_features(corpus, stub_spec(weights, dim=12), out)
        assert not out.exists()

    def test_malformed_manifest(self, weights, tmp_path):
        bad = tmp_path / "manifest.json"
        bad.write_text("{", encoding="utf-8")
        with pytest.raises(dx.FileFormatError, match="malformed"):
            dx.export_features(bad, stub_spec(weights), tmp_path / "x.pcff")

    def test_unknown_label_rejected(self, weights, tmp_path):
        doc = {
            "name": "bad",
            "records": [
                {
                    "id": "a",
                    "path": "a.png",
                    "label": "synthetic",
                    "sample_type": "fake",
                    "generator": "g",
                    "split": "train",
                }
            ],
        }
        bad = tmp_path / "manifest.json"
        bad.write_text(json.dumps(doc), encoding="utf-8")
        with pytest.raises(dx.ValidationError, match="label"):
            dx.export_features(bad, stub_spec(weights), tmp_path / "x.pcff")


class TestCli:
    def run(self, capsys, argv):
        code = cli_main(argv)
        out = capsys.readouterr().out.strip()
        return code, json.loads(out) if code == 0 and out else None

    def test_usage_errors(self, capsys):
        assert cli_main([]) == 1
        assert cli_main(["embed"]) == 1
        assert cli_main(["export", "--manifest", "m"]) == 1

    def test_make_weights_then_export(self, corpus, tmp_path, capsys):
        wpath = tmp_path / "w.npz"
        code, summary = self.run(
            capsys, ["make-weights", "--out", str(wpath), "--seed", "2"]
        )
        assert code == 0 and summary["dim"] == 8

        out = tmp_path / "cli.pcff"
        code, summary = self.run(
            capsys,
            [
                "export",
                "--manifest", corpus,
                "--weights", str(wpath),
                "--name", "stub8",
                "--dim", "8",
                "--out", str(out),
            ],
        )
        assert code == 0
        assert summary["records"] == 12
        assert pd.read_feature_file(out).backend_name == "stub8"

    def test_missing_manifest_is_io_error(self, weights, tmp_path, capsys):
        code = cli_main(
            [
                "export",
                "--manifest", str(tmp_path / "nope.json"),
                "--weights", str(weights),
                "--name", "stub8",
                "--dim", "8",
                "--out", str(tmp_path / "x.pcff"),
            ]
        )
        assert code == 2

    def test_dim_mismatch_is_validation_error(self, corpus, weights, tmp_path, capsys):
        code = cli_main(
            [
                "export",
                "--manifest", corpus,
                "--weights", str(weights),
                "--name", "stub8",
                "--dim", "9",
                "--out", str(tmp_path / "x.pcff"),
            ]
        )
        assert code == 3

    def test_bad_batch_flag(self, corpus, weights, tmp_path, capsys):
        code = cli_main(
            [
                "export",
                "--manifest", corpus,
                "--weights", str(weights),
                "--name", "stub8",
                "--dim", "8",
                "--out", str(tmp_path / "x.pcff"),
                "--batch", "0",
            ]
        )
        assert code == 1

    def test_console_script_installed(self):
        exe = shutil.which("dfexport")
        assert exe is not None
        proc = subprocess.run([exe, "--help"], capture_output=True, text=True)
        assert proc.returncode == 0
        assert "export" in proc.stdout
