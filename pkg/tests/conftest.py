import json
import math
from pathlib import Path

import numpy as np
import pytest
from PIL import Image
from scipy import ndimage

import percepdet as p


def synth_photo(rng: np.random.Generator, side: int = 64) -> np.ndarray:
    """A camera-plausible grayscale patch: coarse structure plus fine grain."""
    coarse = ndimage.gaussian_filter(rng.normal(128.0, 40.0, (side, side)), 4.0)
    mid = ndimage.gaussian_filter(rng.normal(0.0, 20.0, (side, side)), 1.0)
    fine = rng.normal(0.0, 4.0, (side, side))
    return np.clip(coarse + mid + fine, 0.0, 255.0)


def smoothed_counterpart(arr: np.ndarray) -> np.ndarray:
    # the "generated" class: grain stripped by a median filter
    return ndimage.median_filter(arr, size=5)


def _save_gray(arr: np.ndarray, path: Path) -> None:
    Image.fromarray(np.rint(arr).astype(np.uint8), mode="L").save(path)


def build_toy_corpus(root: Path, count_per_class: int = 100) -> Path:
    """Two-class image corpus with 60/20/20 splits; returns the manifest path."""
    root.mkdir(parents=True, exist_ok=True)
    (root / "img").mkdir(exist_ok=True)
    records = []
    n_train = int(count_per_class * 0.6)
    n_val = int(count_per_class * 0.2)
    for i in range(count_per_class):
        rng = np.random.default_rng(1000 + i)
        photo = synth_photo(rng)
        fake = smoothed_counterpart(photo)
        split = "train" if i < n_train else ("val" if i < n_train + n_val else "test")
        for tag, arr, label, stype in (
            ("real", photo, "real", "real"),
            ("fake", fake, "fake", "fake"),
        ):
            rel = f"img/{tag}_{i:03d}.png"
            _save_gray(arr, root / rel)
            records.append(
                {
                    "id": f"{tag}_{i:03d}",
                    "path": rel,
                    "label": label,
                    "sample_type": stype,
                    "generator": "medfilter",
                    "split": split,
                }
            )
    manifest_path = root / "manifest.json"
    manifest_path.write_text(
        json.dumps({"name": "toy_corpus", "records": records}, indent=2),
        encoding="utf-8",
    )
    return manifest_path


@pytest.fixture(scope="session")
def toy_manifest_path(tmp_path_factory) -> Path:
    return build_toy_corpus(tmp_path_factory.mktemp("corpus"))


@pytest.fixture(scope="session")
def toy_manifest(toy_manifest_path) -> p.Manifest:
    return p.load_manifest(toy_manifest_path)


@pytest.fixture(scope="session")
def toy_features(toy_manifest) -> p.FeatureSet:
    return p.extract_features(toy_manifest, "nss")


@pytest.fixture(scope="session")
def toy_model(toy_features) -> p.ClassifierModel:
    model = p.train(toy_features, p.TrainConfig(seed=7))
    threshold = p.calibrate_threshold(model, toy_features)
    return p.with_threshold(model, threshold)


def blob_features(
    dim: int = 16,
    per_class: int = 500,
    separation: float = 10.0,
    seed: int = 5,
    split: str = "train",
) -> p.FeatureSet:
    """Two spherical unit-variance Gaussian classes `separation` sigma apart."""
    rng = np.random.default_rng(seed)
    offset = np.full(dim, separation / math.sqrt(dim))
    records = []
    for cls, label in ((0, "real"), (1, "fake")):
        x = rng.normal(0.0, 1.0, (per_class, dim)) + (offset if cls else 0.0)
        for i, row in enumerate(x):
            records.append(
                p.FeatureRecord(
                    id=f"{label}_{i:04d}",
                    label=label,
                    sample_type=label,
                    generator="blob",
                    split=split,
                    features=row.astype(np.float32),
                )
            )
    return p.FeatureSet(dim=dim, backend_name="synthetic", records=records)


def random_batch(seed: int, n: int = 4, dim: int = 8, hidden: int = 16):
    """A model plus raw batch used by loss/gradient oracle checks."""
    rng = np.random.default_rng(seed)
    model = p.ClassifierModel(
        w1=rng.normal(0.0, 0.6, (hidden, dim)),
        b1=rng.normal(0.0, 0.3, hidden),
        w2=rng.normal(0.0, 0.6, hidden),
        b2=float(rng.normal(0.0, 0.3)),
        norm_mu=rng.normal(0.0, 1.0, dim),
        norm_sigma=rng.uniform(0.5, 2.0, dim),
    )
    x = rng.normal(0.0, 1.5, (n, dim))
    labels = rng.integers(0, 2, n).astype(np.float64)
    if labels.min() == labels.max():
        labels[0] = 1.0 - labels[0]
    return model, x, labels


def fd_safe_batch(seed: int, n: int = 4, dim: int = 8, margin: float = 1.0):
    """A random batch on which central differences of the loss are trustworthy.

    Central differences need the float-evaluated loss to be locally smooth, so
    draws are rejected when any of the following sit too close to the
    evaluation point: a saturated sigmoid (the stored probability is quantized
    near 0/1 and stops responding to parameter bumps), a relu pre-activation
    near zero, a cross-label pair distance near the hinge margin, or two
    hidden rows nearly coincident (sqrt kink). No implementation could pass a
    difference oracle at those points; the analytic gradient is checked on
    them indirectly through the loss-decrease property during training.
    """
    guard = 1e-3
    for offset in range(1000):
        model, x, labels = random_batch(seed * 1000 + offset, n=n, dim=dim)
        batch = p.forward_batch(model, x, labels)
        pre = batch.norm_inputs @ model.w1.T + model.b1
        off_diagonal = batch.distances[~np.eye(n, dtype=bool)]
        cross = batch.distances[batch.pair_same == 0.0]
        if (
            np.abs(batch.logits).max() <= 8.0
            and np.abs(pre).min() > guard
            and off_diagonal.min() > guard
            and np.abs(cross - margin).min() > guard
        ):
            return model, x, labels
    raise AssertionError(f"no finite-difference-safe batch for seed {seed}")


def oracle_contrastive(hidden: np.ndarray, labels: np.ndarray, margin: float) -> float:
    """Literal double loop over all ordered pairs, diagonal included."""
    n = len(labels)
    total = 0.0
    for i in range(n):
        for j in range(n):
            d = math.sqrt(float(np.sum((hidden[i] - hidden[j]) ** 2)))
            if labels[i] == labels[j]:
                total += d * d
            else:
                total += max(0.0, margin - d) ** 2
    return total / (n * n)


def oracle_bce(probs: np.ndarray, labels: np.ndarray) -> float:
    total = 0.0
    for y, q in zip(labels, probs):
        total += y * math.log(q) + (1.0 - y) * math.log(1.0 - q)
    return -total / len(labels)


def checkerboard(side: int = 32, cell: int = 4, lo: float = 40.0, hi: float = 210.0):
    """Deterministic high-contrast texture for imaging tests."""
    idx = np.arange(side)
    board = ((idx[:, None] // cell + idx[None, :] // cell) % 2).astype(np.float64)
    return p.ImagePlane(lo + board * (hi - lo))


def noise_image(seed: int = 3, side: int = 64) -> p.ImagePlane:
    rng = np.random.default_rng(seed)
    return p.ImagePlane(rng.uniform(0.0, 255.0, (side, side, 3)))
