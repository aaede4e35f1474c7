"""Frozen backbone wrappers that turn images into fixed-length vectors.

A backbone is described by a BackboneSpec (what the caller expects) and
realized from a weights archive on disk (what actually runs). Weights are
loaded read-only and never updated; exporting is pure inference, so a rerun
with the same archive and corpus produces identical output bytes.

The built-in family is "linear-gray": decode, convert to 8-bit grayscale,
bilinear-resize to a square of side S recorded in the archive, scale the
pixels to [0, 1], flatten row-major, and multiply by a fixed projection
matrix of shape (dim, S*S). Each image is projected individually with the
same matrix-vector call, so results do not depend on how records are
batched. The archive is a .npz with arrays:

    projection   float64 (dim, S*S)
    input_side   int scalar S
    family       str, must be "linear-gray"
    note         str, human-readable preprocessing and tap description

Deep IQA or contrastive backbones plug in the same way: a new family tag
plus whatever arrays its forward pass needs, with the tap location spelled
out in `note`.
"""

from __future__ import annotations

import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import FileFormatError, ImageError, ValidationError

_LINEAR_FAMILY = "linear-gray"


@dataclass(frozen=True)
class BackboneSpec:
    """Caller-side description of a backbone.

    `name` becomes the backend tag stored in exported feature files, `dim`
    is the output width the weights archive must produce, and
    `preprocessing` is a free-text note recorded in run summaries (the
    archive's own note is used when this is empty).
    """

    name: str
    weights: str | Path
    dim: int
    preprocessing: str = ""

    def __post_init__(self) -> None:
        if not self.name.strip():
            raise ValidationError("backbone name must be non-empty")
        if int(self.dim) <= 0:
            raise ValidationError("backbone dim must be positive")


class LinearBackbone:
    """A fixed random projection over a grayscale thumbnail."""

    def __init__(self, projection: np.ndarray, side: int, note: str) -> None:
        self.projection = np.asarray(projection, dtype=np.float64)
        self.projection.setflags(write=False)
        self.side = int(side)
        self.note = note

    @property
    def dim(self) -> int:
        return int(self.projection.shape[0])

    def preprocess(self, path: Path, record_id: str) -> np.ndarray:
        """Decode and flatten one image; raises ImageError on any failure."""
        try:
            with Image.open(path) as img:
                gray = img.convert("L").resize(
                    (self.side, self.side), Image.Resampling.BILINEAR
                )
                pixels = np.asarray(gray, dtype=np.float64)
        except (UnidentifiedImageError, OSError, ValueError) as exc:
            raise ImageError(f"record {record_id!r}: {exc}") from exc
        return pixels.reshape(-1) / 255.0

    def project(self, flat: np.ndarray) -> np.ndarray:
        out = self.projection @ flat
        return out.astype(np.float32)


def make_stub_weights(
    path: str | Path,
    dim: int = 8,
    side: int = 16,
    seed: int = 0,
    note: str = "",
) -> Path:
    """Write a random frozen projection archive for testing and dry runs.

    Entries are drawn from N(0, 1/sqrt(S*S)) so projected values stay O(1)
    for inputs in [0, 1]. The same seed always yields the same matrix.
    """
    if dim <= 0:
        raise ValidationError("dim must be positive")
    if side <= 0:
        raise ValidationError("side must be positive")
    rng = np.random.default_rng(seed)
    projection = rng.normal(0.0, 1.0 / np.sqrt(side * side), size=(dim, side * side))
    if not note:
        note = (
            f"grayscale, bilinear resize to {side}x{side}, pixels scaled to "
            "[0, 1], tapped at the projection output"
        )
    path = Path(path)
    np.savez(
        path,
        projection=projection,
        input_side=np.int64(side),
        family=np.str_(_LINEAR_FAMILY),
        note=np.str_(note),
    )
    # np.savez appends .npz when the suffix is missing; report the real file.
    return path if path.exists() else path.with_name(path.name + ".npz")


def load_backbone(spec: BackboneSpec) -> LinearBackbone:
    """Realize a spec from its weights archive.

    Raises FileFormatError when the archive is missing, unreadable, or
    structurally wrong, and ValidationError when the archive is healthy but
    produces a different output width than the spec declares.
    """
    weights = Path(spec.weights)
    if not weights.exists():
        raise FileFormatError(f"weights file not found: {weights}")
    try:
        with np.load(weights, allow_pickle=False) as archive:
            missing = {"projection", "input_side", "family", "note"} - set(
                archive.files
            )
            if missing:
                raise FileFormatError(
                    f"corrupt weights archive {weights}: missing {sorted(missing)}"
                )
            family = str(archive["family"])
            projection = np.array(archive["projection"], dtype=np.float64)
            side = int(archive["input_side"])
            note = str(archive["note"])
    except (zipfile.BadZipFile, OSError, ValueError, KeyError) as exc:
        raise FileFormatError(f"corrupt weights archive {weights}: {exc}") from exc
    if family != _LINEAR_FAMILY:
        raise FileFormatError(
            f"corrupt weights archive {weights}: unsupported family {family!r}"
        )
    if projection.ndim != 2 or projection.shape[1] != side * side:
        raise FileFormatError(
            f"corrupt weights archive {weights}: projection shape "
            f"{projection.shape} does not match input side {side}"
        )
    if not np.isfinite(projection).all():
        raise FileFormatError(
            f"corrupt weights archive {weights}: non-finite projection entries"
        )
    if projection.shape[0] != spec.dim:
        raise ValidationError(
            f"backbone {spec.name!r}: weights produce dim {projection.shape[0]}, "
            f"spec declares {spec.dim}"
        )
    return LinearBackbone(projection, side, note)
