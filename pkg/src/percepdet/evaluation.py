"""Metrics, threshold calibration, robustness sweeps and report emission.

Accuracy is always reported per generator subset as the balanced mean of the
real-image and fake-image accuracies, and aggregated as mAcc, the arithmetic
mean of per-subset balanced accuracies. Calibration sweeps the decision
threshold over score midpoints on a validation split. Robustness re-extracts
features from degraded test images and re-evaluates, one point per level.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classifier import ClassifierModel, model_digest, predict_proba
from .errors import ValidationError
from .features import (
    FeatureBackend,
    FeatureSet,
    FileBackend,
    extract_features,
    featureset_digest,
    resolve_backend,
)
from .imaging import Degradation
from .manifest import Manifest, group_by_generator


@dataclass(frozen=True)
class SubsetAccuracy:
    generator: str
    real_acc: float
    fake_acc: float
    balanced_acc: float


@dataclass(frozen=True)
class RobustnessPoint:
    degradation: str
    level: str
    macc: float
    subsets: tuple[SubsetAccuracy, ...]


@dataclass(frozen=True)
class Separability:
    fisher_ratio: float
    pca2d_path: str


@dataclass
class EvalReport:
    dataset: str
    threshold: float
    subsets: list[SubsetAccuracy]
    macc: float
    robustness: list[RobustnessPoint] = field(default_factory=list)
    separability: Separability | None = None
    model_digest: str = ""
    featureset_digest: str = ""


def mean_accuracy(balanced_accs) -> float:
    """Arithmetic mean of per-subset balanced accuracies (the mAcc column)."""
    vals = list(balanced_accs)
    if not vals:
        raise ValidationError("no subset accuracies to average")
    return float(np.mean(np.asarray(vals, dtype=np.float64)))


def _score_by_id(model: ClassifierModel, records) -> dict[str, float]:
    x = np.stack([r.features for r in records]).astype(np.float64)
    probs = predict_proba(model, x)
    return {r.id: float(p) for r, p in zip(records, probs)}


def _subset_table(model, records, threshold):
    scores = _score_by_id(model, records)
    subsets = []
    for generator, (reals, fakes) in group_by_generator(records).items():
        real_hits = sum(1 for r in reals if scores[r.id] < threshold)
        fake_hits = sum(1 for r in fakes if scores[r.id] >= threshold)
        real_acc = 100.0 * real_hits / len(reals)
        fake_acc = 100.0 * fake_hits / len(fakes)
        subsets.append(
            SubsetAccuracy(
                generator=generator,
                real_acc=real_acc,
                fake_acc=fake_acc,
                balanced_acc=(real_acc + fake_acc) / 2.0,
            )
        )
    if not subsets:
        raise ValidationError("no generator subsets to evaluate")
    return subsets


def evaluate(
    model: ClassifierModel,
    features: FeatureSet,
    threshold: float | None = None,
    dataset: str = "",
    split: str = "test",
) -> EvalReport:
    """Per-generator balanced accuracies and their mean on one split.

    Real records count as correct below the threshold, fakes at or above it.
    The threshold defaults to the one stored in the model. Pure: identical
    inputs give an identical report.
    """
    if features.dim != model.dim:
        raise ValidationError(
            f"feature dim {features.dim} does not match model dim {model.dim}"
        )
    records = features.split(split)
    if not records:
        raise ValidationError(f"split {split!r} has no records")
    t = model.threshold if threshold is None else float(threshold)
    subsets = _subset_table(model, records, t)
    return EvalReport(
        dataset=dataset,
        threshold=t,
        subsets=subsets,
        macc=mean_accuracy(s.balanced_acc for s in subsets),
        model_digest=model_digest(model),
        featureset_digest=featureset_digest(features),
    )


def _balanced_accuracy(scores: np.ndarray, labels: np.ndarray, threshold: float) -> float:
    real_acc = float(np.mean(scores[labels == 0] < threshold))
    fake_acc = float(np.mean(scores[labels == 1] >= threshold))
    return 50.0 * (real_acc + fake_acc)


def calibrate_threshold(
    model: ClassifierModel, features: FeatureSet, split: str = "val"
) -> float:
    """Threshold maximizing overall balanced accuracy on the given split.

    Candidates are 0, 1, and the midpoints between consecutive distinct
    scores, which between them realize every achievable classification of the
    split. Ties go to the candidate nearest 0.5 (then the smaller one).
    """
    if features.dim != model.dim:
        raise ValidationError(
            f"feature dim {features.dim} does not match model dim {model.dim}"
        )
    records = features.split(split)
    if not records:
        raise ValidationError(f"split {split!r} has no records")
    labels = np.array([0 if r.label == "real" else 1 for r in records])
    if labels.min() == labels.max():
        raise ValidationError("calibration needs both labels present")
    x = np.stack([r.features for r in records]).astype(np.float64)
    scores = predict_proba(model, x)

    distinct = np.unique(scores)
    candidates = [0.0] + [
        float(0.5 * (a + b)) for a, b in zip(distinct[:-1], distinct[1:])
    ] + [1.0]
    best_t = None
    best_acc = -1.0
    for t in candidates:
        acc = _balanced_accuracy(scores, labels, t)
        better = acc > best_acc
        if not better and acc == best_acc:
            better = abs(t - 0.5) < abs(best_t - 0.5) or (
                abs(t - 0.5) == abs(best_t - 0.5) and t < best_t
            )
        if better:
            best_t, best_acc = t, acc
    return best_t


def fisher_ratio(features: FeatureSet, split: str | None = None) -> float:
    """Between-class to within-class variance ratio, summed over dimensions."""
    records = features.records if split is None else features.split(split)
    reals = [r.features for r in records if r.label == "real"]
    fakes = [r.features for r in records if r.label == "fake"]
    if not reals or not fakes:
        raise ValidationError("fisher ratio needs both labels present")
    xr = np.stack(reals).astype(np.float64)
    xf = np.stack(fakes).astype(np.float64)
    delta = xf.mean(axis=0) - xr.mean(axis=0)
    denom = xr.var(axis=0) + xf.var(axis=0) + 1e-12
    return float(np.sum(delta * delta / denom))


def _top_eigenvector(cov: np.ndarray, exclude: list[np.ndarray]) -> np.ndarray:
    d = cov.shape[0]
    v = np.full(d, 1.0 / np.sqrt(d))
    for u in exclude:
        v = v - (v @ u) * u
    if np.linalg.norm(v) < 1e-12:
        v = np.zeros(d)
        v[len(exclude) % d] = 1.0
    v = v / np.linalg.norm(v)
    for _ in range(20000):
        w = cov @ v
        for u in exclude:
            w = w - (w @ u) * u
        norm = np.linalg.norm(w)
        if norm < 1e-18:
            # flat direction (rank-deficient data): any orthogonal unit
            # vector spans it; keep a deterministic one
            break
        w = w / norm
        if min(np.linalg.norm(w - v), np.linalg.norm(w + v)) < 1e-10:
            v = w
            break
        v = w
    nz = np.nonzero(v)[0]
    if nz.size and v[nz[0]] < 0:
        v = -v
    return v


def pca_project2d(features: FeatureSet) -> list[tuple[str, float, float, str]]:
    """Mean-centered projection onto the top two principal directions.

    Power iteration with deflation; the sign convention (first nonzero
    loading positive) makes the output deterministic.
    """
    if len(features.records) < 3:
        raise ValidationError("2-D projection needs at least 3 records")
    x = np.stack([r.features for r in features.records]).astype(np.float64)
    x = x - x.mean(axis=0)
    cov = (x.T @ x) / x.shape[0]
    if float(np.trace(cov)) < 1e-18:
        raise ValidationError("zero-variance features cannot be projected")
    u1 = _top_eigenvector(cov, [])
    u2 = _top_eigenvector(cov, [u1])
    p1 = x @ u1
    p2 = x @ u2
    return [
        (rec.id, float(a), float(b), rec.label)
        for rec, a, b in zip(features.records, p1, p2)
    ]


def write_pca2d(points, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "x", "y", "label"])
        for rid, x, y, label in points:
            writer.writerow([rid, repr(x), repr(y), label])


def robustness_sweep(
    model: ClassifierModel,
    manifest: Manifest,
    backend: str | FeatureBackend,
    degradations: list[Degradation],
    threshold: float | None = None,
    dataset: str = "",
) -> list[RobustnessPoint]:
    """Clean baseline plus one full re-extract-and-evaluate per level.

    Features must be recomputable from images, so precomputed file backends
    are rejected. The baseline point is byte-identical to a plain evaluation
    of the same test split.
    """
    if isinstance(backend, str):
        backend = resolve_backend(backend)
    if isinstance(backend, FileBackend):
        raise ValidationError("robustness sweeps need a re-extractable backend")
    points = []
    for deg in [None, *degradations]:
        fs = extract_features(manifest, backend, augment=deg, splits=["test"])
        rep = evaluate(model, fs, threshold=threshold, dataset=dataset)
        points.append(
            RobustnessPoint(
                degradation="none" if deg is None else deg.name,
                level="none" if deg is None else format(deg.level, "g"),
                macc=rep.macc,
                subsets=tuple(rep.subsets),
            )
        )
    return points


def _subset_dict(s: SubsetAccuracy) -> dict:
    return {
        "generator": s.generator,
        "real_acc": s.real_acc,
        "fake_acc": s.fake_acc,
        "balanced_acc": s.balanced_acc,
    }


def report_to_dict(report: EvalReport) -> dict:
    return {
        "dataset": report.dataset,
        "threshold": report.threshold,
        "macc": report.macc,
        "subsets": [_subset_dict(s) for s in report.subsets],
        "robustness": [
            {
                "degradation": p.degradation,
                "level": p.level,
                "macc": p.macc,
                "subsets": [_subset_dict(s) for s in p.subsets],
            }
            for p in report.robustness
        ],
        "separability": (
            None
            if report.separability is None
            else {
                "fisher_ratio": report.separability.fisher_ratio,
                "pca2d_path": report.separability.pca2d_path,
            }
        ),
        "provenance": {
            "model_digest": report.model_digest,
            "featureset_digest": report.featureset_digest,
        },
    }


def report_from_dict(data: dict) -> EvalReport:
    def subset(d):
        return SubsetAccuracy(
            generator=d["generator"],
            real_acc=d["real_acc"],
            fake_acc=d["fake_acc"],
            balanced_acc=d["balanced_acc"],
        )

    sep = data.get("separability")
    prov = data.get("provenance", {})
    return EvalReport(
        dataset=data["dataset"],
        threshold=data["threshold"],
        subsets=[subset(d) for d in data["subsets"]],
        macc=data["macc"],
        robustness=[
            RobustnessPoint(
                degradation=p["degradation"],
                level=p["level"],
                macc=p["macc"],
                subsets=tuple(subset(d) for d in p["subsets"]),
            )
            for p in data.get("robustness", [])
        ],
        separability=None if sep is None else Separability(**sep),
        model_digest=prov.get("model_digest", ""),
        featureset_digest=prov.get("featureset_digest", ""),
    )


def emit_report(report: EvalReport, path: str | Path, format: str = "json") -> None:
    """Write the report as JSON (full fidelity) or CSV (one row per entry)."""
    path = Path(path)
    if format == "json":
        path.write_text(json.dumps(report_to_dict(report), indent=2) + "\n", encoding="utf-8")
        return
    if format != "csv":
        raise ValidationError(f"unknown report format {format!r}")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["type", "name", "level", "real_acc", "fake_acc", "balanced_acc", "macc"]
        )
        for s in report.subsets:
            writer.writerow(
                ["subset", s.generator, "", repr(s.real_acc), repr(s.fake_acc),
                 repr(s.balanced_acc), ""]
            )
        writer.writerow(["summary", report.dataset, "", "", "", "", repr(report.macc)])
        for p in report.robustness:
            writer.writerow(["curve", p.degradation, p.level, "", "", "", repr(p.macc)])


def read_report(path: str | Path) -> EvalReport:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return report_from_dict(data)
