"""Feature extraction pipeline and the binary feature cache format.

Features are computed once per record by a pluggable backend, held as float32,
and cached in a compact little-endian container (magic ``PCFF``) with a
trailing CRC32 so a cache can be shipped between machines and trusted on
arrival. The same container carries externally exported deep features, which
is what keeps the classifier backend-agnostic: anything that can fill the
format can feed training.
"""
from __future__ import annotations

import hashlib
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Protocol

import numpy as np

from .errors import FileFormatError, ImageError, ValidationError
from .imaging import (
    AugmentPolicy,
    Degradation,
    ImagePlane,
    apply_degradation,
    apply_policy,
    decode_image,
)
from .manifest import LABELS, SAMPLE_TYPES, SPLITS, Manifest, resolve_path
from .nss import FEATURE_DIM, extract_nss

MAGIC = b"PCFF"
FORMAT_VERSION = 1

_LABEL_CODE = {name: i for i, name in enumerate(LABELS)}
_SAMPLE_TYPE_CODE = {name: i for i, name in enumerate(SAMPLE_TYPES)}
_SPLIT_CODE = {name: i for i, name in enumerate(SPLITS)}


class FeatureBackend(Protocol):
    """Anything that turns a decoded image into a fixed-length vector."""

    @property
    def name(self) -> str: ...

    @property
    def dim(self) -> int: ...

    def extract(self, img: ImagePlane) -> np.ndarray: ...


class NssBackend:
    """Default backend: the 36-dim bandpass statistics extractor."""

    name = "nss36"
    dim = FEATURE_DIM

    def extract(self, img: ImagePlane) -> np.ndarray:
        return extract_nss(img)


@dataclass(frozen=True, eq=False)
class FeatureRecord:
    id: str
    label: str
    sample_type: str
    generator: str
    split: str
    features: np.ndarray  # float32, read-only

    def __post_init__(self):
        vec = np.asarray(self.features, dtype=np.float32)
        if vec.ndim != 1:
            raise ValidationError(f"feature vector for {self.id!r} must be 1-D")
        if not np.isfinite(vec).all():
            raise ValidationError(f"non-finite feature values for {self.id!r}")
        vec = vec.copy()
        vec.setflags(write=False)
        object.__setattr__(self, "features", vec)
        for value, allowed, what in (
            (self.label, LABELS, "label"),
            (self.sample_type, SAMPLE_TYPES, "sample_type"),
            (self.split, SPLITS, "split"),
        ):
            if value not in allowed:
                raise ValidationError(f"record {self.id!r}: unknown {what} {value!r}")

    def __eq__(self, other):
        if not isinstance(other, FeatureRecord):
            return NotImplemented
        return (
            self.id == other.id
            and self.label == other.label
            and self.sample_type == other.sample_type
            and self.generator == other.generator
            and self.split == other.split
            and self.features.tobytes() == other.features.tobytes()
        )

    def __hash__(self):
        return hash((self.id, self.features.tobytes()))


@dataclass
class FeatureSet:
    dim: int
    backend_name: str
    records: list[FeatureRecord] = field(default_factory=list)

    def __post_init__(self):
        if self.dim <= 0:
            raise ValidationError("feature dimension must be positive")
        for rec in self.records:
            if rec.features.shape != (self.dim,):
                raise ValidationError(f"record {rec.id!r} has wrong dimension")
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate feature record ids")

    def split(self, name: str) -> list[FeatureRecord]:
        if name not in SPLITS:
            raise ValidationError(f"unknown split {name!r}")
        return [r for r in self.records if r.split == name]

    def matrix(self, split: str | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Stacked (features, labels) arrays; labels are 0 real / 1 fake."""
        recs = self.records if split is None else self.split(split)
        if not recs:
            raise ValidationError("no records to stack")
        x = np.stack([r.features for r in recs]).astype(np.float32)
        y = np.array([_LABEL_CODE[r.label] for r in recs], dtype=np.int64)
        return x, y


class FileBackend:
    """Serves precomputed vectors from a feature file, joined by record id."""

    def __init__(self, path: str | Path):
        fs = read_feature_file(path)
        self.name = fs.backend_name
        self.dim = fs.dim
        self._by_id = {rec.id: rec.features for rec in fs.records}

    def lookup(self, record_id: str) -> np.ndarray | None:
        return self._by_id.get(record_id)


def resolve_backend(spec: str) -> NssBackend | FileBackend:
    """Map a backend argument (``nss`` or ``file:<path>``) to a backend."""
    if spec == "nss":
        return NssBackend()
    if spec.startswith("file:"):
        return FileBackend(spec[len("file:") :])
    raise ValidationError(f"unknown backend {spec!r}")


def _augment_draw(record_id: str) -> int:
    # Stable across processes; independent of manifest ordering.
    digest = hashlib.blake2s(record_id.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def extract_features(
    manifest: Manifest,
    backend: str | FeatureBackend | FileBackend,
    augment: AugmentPolicy | Degradation | None = None,
    splits: Iterable[str] | None = None,
    progress: Callable[[str], None] | None = None,
) -> FeatureSet:
    """Compute or look up one feature record per manifest record.

    An AugmentPolicy touches training-split images only, so val and test
    reflect the data as stored; a Degradation is robustness mode and hits
    every record. The file backend serves fixed vectors, so it cannot be
    combined with either. Decode failures are collected across the whole
    manifest and reported together. Without augmentation the result is a
    pure function of (manifest, backend).
    """
    if isinstance(backend, str):
        backend = resolve_backend(backend)
    wanted = set(SPLITS) if splits is None else set(splits)
    unknown = wanted - set(SPLITS)
    if unknown:
        raise ValidationError(f"unknown splits: {sorted(unknown)}")
    selected = [rec for rec in manifest.records if rec.split in wanted]

    if isinstance(backend, FileBackend):
        if augment is not None:
            raise ValidationError("file backend serves precomputed features; cannot augment")
        missing = [rec.id for rec in selected if backend.lookup(rec.id) is None]
        if missing:
            raise ValidationError(f"feature file missing ids: {missing}")
        out = [
            FeatureRecord(
                id=rec.id,
                label=rec.label,
                sample_type=rec.sample_type,
                generator=rec.generator,
                split=rec.split,
                features=backend.lookup(rec.id),
            )
            for rec in selected
        ]
        return FeatureSet(dim=backend.dim, backend_name=backend.name, records=out)

    out = []
    failures: list[str] = []
    for rec in selected:
        try:
            img = decode_image(resolve_path(manifest, rec))
            if isinstance(augment, Degradation):
                img = apply_degradation(img, augment)
            elif isinstance(augment, AugmentPolicy) and rec.split == "train":
                img = apply_policy(img, augment, _augment_draw(rec.id))
            vec = np.asarray(backend.extract(img), dtype=np.float32)
        except (ImageError, OSError) as exc:
            failures.append(f"{rec.id}: {exc}")
            continue
        if vec.shape != (backend.dim,):
            raise ValidationError(
                f"backend {backend.name!r} returned shape {vec.shape} for {rec.id!r}"
            )
        out.append(
            FeatureRecord(
                id=rec.id,
                label=rec.label,
                sample_type=rec.sample_type,
                generator=rec.generator,
                split=rec.split,
                features=vec,
            )
        )
        if progress is not None:
            progress(rec.id)
    if failures:
        raise ImageError("failed to extract features:\n" + "\n".join(failures))
    return FeatureSet(dim=backend.dim, backend_name=backend.name, records=out)


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValidationError("string field too long to serialize")
    return struct.pack("<H", len(raw)) + raw


class _Reader:
    """Bounds-checked forward walk over a byte buffer."""

    def __init__(self, buf: bytes, path: Path):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FileFormatError(f"{self.path}: truncated feature file")
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def take_str(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")


def _feature_bytes(fs: FeatureSet) -> bytes:
    parts = [MAGIC, struct.pack("<HIQ", FORMAT_VERSION, fs.dim, len(fs.records))]
    parts.append(_pack_str(fs.backend_name))
    for rec in fs.records:
        parts.append(_pack_str(rec.id))
        parts.append(struct.pack("<BB", _LABEL_CODE[rec.label], _SAMPLE_TYPE_CODE[rec.sample_type]))
        parts.append(_pack_str(rec.generator))
        parts.append(struct.pack("<B", _SPLIT_CODE[rec.split]))
        parts.append(rec.features.astype("<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def featureset_digest(fs: FeatureSet) -> str:
    return hashlib.sha256(_feature_bytes(fs)).hexdigest()


def write_feature_file(fs: FeatureSet, path: str | Path) -> None:
    """Serialize a feature set, atomically replacing any existing file."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(_feature_bytes(fs))
    os.replace(tmp, path)


def read_feature_file(path: str | Path) -> FeatureSet:
    """Parse a feature file; truncation and corruption raise FileFormatError."""
    path = Path(path)
    buf = path.read_bytes()
    r = _Reader(buf, path)
    if r.take(4) != MAGIC:
        raise FileFormatError(f"{path}: not a feature file")
    version, dim, count = r.unpack("<HIQ")
    if version != FORMAT_VERSION:
        raise FileFormatError(f"{path}: unsupported feature file version {version}")
    if dim == 0:
        raise FileFormatError(f"{path}: zero feature dimension")
    backend_name = r.take_str()
    records = []
    for _ in range(count):
        rid = r.take_str()
        label_code, st_code = r.unpack("<BB")
        generator = r.take_str()
        (split_code,) = r.unpack("<B")
        vec = np.frombuffer(r.take(4 * dim), dtype="<f4").astype(np.float32)
        try:
            records.append(
                FeatureRecord(
                    id=rid,
                    label=LABELS[label_code] if label_code < len(LABELS) else "",
                    sample_type=SAMPLE_TYPES[st_code] if st_code < len(SAMPLE_TYPES) else "",
                    generator=generator,
                    split=SPLITS[split_code] if split_code < len(SPLITS) else "",
                    features=vec,
                )
            )
        except ValidationError as exc:
            raise FileFormatError(f"{path}: {exc}") from exc
    (stored_crc,) = r.unpack("<I")
    if r.pos != len(buf):
        raise FileFormatError(f"{path}: trailing bytes after checksum")
    if stored_crc != zlib.crc32(buf[: len(buf) - 4]):
        raise FileFormatError(f"{path}: checksum mismatch")
    try:
        return FeatureSet(dim=dim, backend_name=backend_name, records=records)
    except ValidationError as exc:
        raise FileFormatError(f"{path}: {exc}") from exc
