"""Dataset manifests: which images exist, their labels, sample types, generator
subsets, and train/val/test splits.

A manifest is a single JSON document referencing images in place, so corpora
never need to be copied or re-organized. Record paths may be relative to the
manifest file's directory.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path, PurePosixPath

from .errors import FileFormatError, ValidationError

LABELS = ("real", "fake")
SAMPLE_TYPES = ("real", "fake", "real_recon", "fake_recon")
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class SampleRecord:
    """One image: identity, location, label, provenance tags."""

    id: str
    path: str
    label: str
    sample_type: str
    generator: str
    split: str


@dataclass
class Manifest:
    """An ordered collection of sample records plus corpus-level metadata.

    Immutable by convention after load; safe to share read-only across
    threads. ``recon_label_override=False`` (the default) means reconstructed
    samples of either origin carry the training label "fake": they passed
    through a diffusion pipeline and act as hard positives. With the override
    on, real-reconstructed samples keep the label "real" instead.
    """

    name: str
    records: list[SampleRecord]
    source_note: str = ""
    recon_label_override: bool = False
    base_dir: Path | None = field(default=None, compare=False)


def _expected_label(sample_type: str, override: bool) -> str:
    if sample_type == "real":
        return "real"
    if sample_type == "real_recon" and override:
        return "real"
    return "fake"


def validate_manifest(manifest: Manifest) -> None:
    """Check all manifest invariants; every failure names a record id."""
    seen: set[str] = set()
    for rec in manifest.records:
        if not rec.id:
            raise ValidationError("manifest record with empty id")
        if rec.id in seen:
            raise ValidationError(f"duplicate record id {rec.id!r}")
        seen.add(rec.id)
        if rec.label not in LABELS:
            raise ValidationError(f"record {rec.id!r}: unknown label {rec.label!r}")
        if rec.sample_type not in SAMPLE_TYPES:
            raise ValidationError(
                f"record {rec.id!r}: unknown sample_type {rec.sample_type!r}"
            )
        if rec.split not in SPLITS:
            raise ValidationError(f"record {rec.id!r}: unknown split {rec.split!r}")
        expected = _expected_label(rec.sample_type, manifest.recon_label_override)
        if rec.label != expected:
            raise ValidationError(
                f"record {rec.id!r}: sample_type {rec.sample_type!r} requires "
                f"label {expected!r}, got {rec.label!r}"
            )
        if not rec.path:
            raise ValidationError(f"record {rec.id!r}: empty path")

    # Per-subset balanced accuracy needs at least one real per fake generator
    # tag in the test split.
    real_test_tags = {
        r.generator for r in manifest.records if r.split == "test" and r.label == "real"
    }
    for rec in manifest.records:
        if rec.split == "test" and rec.label == "fake":
            if rec.generator not in real_test_tags:
                raise ValidationError(
                    f"record {rec.id!r}: fake test generator {rec.generator!r} "
                    "has no real test records with the same tag"
                )


_RECORD_KEYS = {"id", "path", "label", "sample_type", "generator", "split"}
_TOP_KEYS = {"name", "records", "source_note", "recon_label_override"}


def load_manifest(path: str | Path) -> Manifest:
    """Parse and validate a manifest JSON document.

    Raises FileFormatError for malformed documents and ValidationError for
    invariant violations (each naming the offending record id). Record order
    is preserved.
    """
    p = Path(path)
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"malformed manifest {p}: {exc}") from exc
    if not isinstance(doc, dict):
        raise FileFormatError(f"malformed manifest {p}: top level must be an object")
    extra = set(doc) - _TOP_KEYS
    if extra:
        raise FileFormatError(f"malformed manifest {p}: unknown keys {sorted(extra)}")
    for key in ("name", "records"):
        if key not in doc:
            raise FileFormatError(f"malformed manifest {p}: missing {key!r}")
    if not isinstance(doc["records"], list):
        raise FileFormatError(f"malformed manifest {p}: 'records' must be a list")

    records = []
    for i, raw in enumerate(doc["records"]):
        if not isinstance(raw, dict):
            raise FileFormatError(f"malformed manifest {p}: record #{i} not an object")
        missing = _RECORD_KEYS - set(raw)
        if missing:
            raise FileFormatError(
                f"malformed manifest {p}: record #{i} missing {sorted(missing)}"
            )
        extra = set(raw) - _RECORD_KEYS
        if extra:
            raise FileFormatError(
                f"malformed manifest {p}: record #{i} has unknown keys {sorted(extra)}"
            )
        if not all(isinstance(raw[k], str) for k in _RECORD_KEYS):
            raise FileFormatError(
                f"malformed manifest {p}: record #{i} has non-string fields"
            )
        records.append(SampleRecord(**{k: raw[k] for k in sorted(_RECORD_KEYS)}))

    manifest = Manifest(
        name=str(doc["name"]),
        records=records,
        source_note=str(doc.get("source_note", "")),
        recon_label_override=bool(doc.get("recon_label_override", False)),
        base_dir=p.resolve().parent,
    )
    validate_manifest(manifest)
    return manifest


def save_manifest(manifest: Manifest, path: str | Path) -> None:
    """Write a manifest document; load_manifest(save_manifest(m)) == m."""
    validate_manifest(manifest)
    doc: dict = {
        "name": manifest.name,
        "records": [
            {
                "id": r.id,
                "path": str(PurePosixPath(Path(r.path).as_posix())),
                "label": r.label,
                "sample_type": r.sample_type,
                "generator": r.generator,
                "split": r.split,
            }
            for r in manifest.records
        ],
    }
    if manifest.source_note:
        doc["source_note"] = manifest.source_note
    if manifest.recon_label_override:
        doc["recon_label_override"] = True
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def resolve_path(manifest: Manifest, record: SampleRecord) -> Path:
    """Absolute image path; relative record paths resolve against the manifest dir."""
    p = Path(record.path)
    if p.is_absolute() or manifest.base_dir is None:
        return p
    return manifest.base_dir / p


def split_view(manifest: Manifest, split: str) -> list[SampleRecord]:
    """Records matching the split, in manifest order. Empty list allowed."""
    if split not in SPLITS:
        raise ValidationError(f"unknown split {split!r}")
    return [r for r in manifest.records if r.split == split]


def group_by_generator(records) -> dict[str, tuple[list, list]]:
    """Group labeled records into generator subsets.

    Fakes are grouped by generator tag in first-appearance order; the reals
    sharing each tag are attached. Generators with zero fakes are omitted.
    Works on any record type exposing ``id``, ``label``, ``generator``.
    """
    reals_by_tag: dict[str, list] = {}
    groups: dict[str, tuple[list, list]] = {}
    for rec in records:
        if rec.label == "real":
            reals_by_tag.setdefault(rec.generator, []).append(rec)
    for rec in records:
        if rec.label == "fake":
            if rec.generator not in groups:
                if rec.generator not in reals_by_tag:
                    raise ValidationError(
                        f"record {rec.id!r}: fake group {rec.generator!r} has no reals"
                    )
                groups[rec.generator] = (reals_by_tag[rec.generator], [])
            groups[rec.generator][1].append(rec)
    return groups


def subset_groups(
    manifest: Manifest, split: str
) -> dict[str, tuple[list[SampleRecord], list[SampleRecord]]]:
    """Generator subsets of one split, as ``{generator: (reals, fakes)}``."""
    view = split_view(manifest, split)
    if not view:
        raise ValidationError(f"split {split!r} has no records")
    return group_by_generator(view)
