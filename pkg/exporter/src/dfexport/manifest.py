"""Read-only access to dataset manifest JSON documents.

This is a consumer-side implementation of the manifest interchange schema:
a top-level object with "name" and "records", where each record carries the
six string fields below. Paths are resolved against the manifest's own
directory so corpora stay relocatable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import FileFormatError, ValidationError

LABELS = ("real", "fake")
SAMPLE_TYPES = ("real", "fake", "real_recon", "fake_recon")
SPLITS = ("train", "val", "test")

_RECORD_KEYS = {"id", "path", "label", "sample_type", "generator", "split"}
_TOP_KEYS = {"name", "records", "source_note", "recon_label_override"}


@dataclass(frozen=True)
class SampleRecord:
    id: str
    path: str
    label: str
    sample_type: str
    generator: str
    split: str


@dataclass(frozen=True)
class Manifest:
    name: str
    records: tuple[SampleRecord, ...]
    base_dir: Path

    def split_view(self, split: str) -> tuple[SampleRecord, ...]:
        if split not in SPLITS:
            raise ValidationError(f"unknown split {split!r}")
        return tuple(r for r in self.records if r.split == split)


def load_manifest(path: str | Path) -> Manifest:
    """Parse and validate a manifest document.

    Raises FileFormatError when the document does not match the schema and
    ValidationError when a record carries values that cannot be encoded
    (unknown label, sample type, or split; duplicate or empty ids).
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
        records=tuple(records),
        base_dir=p.resolve().parent,
    )
    _validate(manifest)
    return manifest


def _validate(manifest: Manifest) -> None:
    seen: set[str] = set()
    for rec in manifest.records:
        if not rec.id:
            raise ValidationError("record with empty id")
        if rec.id in seen:
            raise ValidationError(f"duplicate record id {rec.id!r}")
        seen.add(rec.id)
        if not rec.path:
            raise ValidationError(f"record {rec.id!r}: empty path")
        if rec.label not in LABELS:
            raise ValidationError(f"record {rec.id!r}: unknown label {rec.label!r}")
        if rec.sample_type not in SAMPLE_TYPES:
            raise ValidationError(
                f"record {rec.id!r}: unknown sample_type {rec.sample_type!r}"
            )
        if rec.split not in SPLITS:
            raise ValidationError(f"record {rec.id!r}: unknown split {rec.split!r}")


def resolve_path(manifest: Manifest, record: SampleRecord) -> Path:
    """Absolute image path; relative record paths resolve against the manifest dir."""
    p = Path(record.path)
    if p.is_absolute():
        return p
    return manifest.base_dir / p
