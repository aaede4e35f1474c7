"""Drive a frozen backbone over a manifest and write one feature file."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .backbones import BackboneSpec, load_backbone
from .errors import ImageError, ValidationError
from .manifest import load_manifest, resolve_path
from .pcff import write_feature_file


def export_features(
    manifest_path: str | Path,
    backbone: BackboneSpec,
    out_path: str | Path,
    batch_size: int = 16,
    split: str | None = None,
) -> dict:
    """Embed every selected record and write a PCFF file atomically.

    The output file appears only when every record succeeds: decode
    failures are collected across the whole corpus and reported together in
    a single ImageError, and nothing is written in that case. `batch_size`
    bounds how many decoded images are held at once; it has no effect on
    the output bytes.

    Returns a summary dict with the record count, output width, backend
    name, preprocessing note, and output path.
    """
    if batch_size < 1:
        raise ValidationError("batch_size must be at least 1")
    manifest = load_manifest(manifest_path)
    loaded = load_backbone(backbone)
    records = manifest.records if split is None else manifest.split_view(split)

    rows = []
    failures: list[str] = []
    for start in range(0, len(records), batch_size):
        chunk = records[start : start + batch_size]
        flats = []
        for rec in chunk:
            try:
                flats.append(loaded.preprocess(resolve_path(manifest, rec), rec.id))
            except ImageError as exc:
                failures.append(str(exc))
                flats.append(None)
        if failures:
            # Already doomed; keep decoding so the error names every bad
            # record, but skip the projections.
            continue
        for rec, flat in zip(chunk, flats):
            vec = loaded.project(flat)
            if not np.isfinite(vec).all():
                raise ImageError(f"record {rec.id!r}: non-finite feature values")
            rows.append((rec, vec))

    if failures:
        raise ImageError(
            f"{len(failures)} of {len(records)} records failed, nothing written: "
            + "; ".join(failures)
        )

    write_feature_file(backbone.name, loaded.dim, rows, out_path)
    return {
        "out": str(out_path),
        "records": len(rows),
        "dim": loaded.dim,
        "backend": backbone.name,
        "preprocessing": backbone.preprocessing or loaded.note,
    }
