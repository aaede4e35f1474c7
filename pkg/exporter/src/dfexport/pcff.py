"""Writer for the PCFF feature-file interchange format.

Layout, all little-endian, in order:

    magic   b"PCFF"
    u16     format version (1)
    u32     feature dimension
    u64     record count
    str     backend name
    records ...
    u32     CRC32 of everything before it

where each record is

    str     id
    u8      label code        (real=0, fake=1)
    u8      sample type code  (real=0, fake=1, real_recon=2, fake_recon=3)
    str     generator tag
    u8      split code        (train=0, val=1, test=2)
    f32[dim] feature values

and `str` is a u16 byte length followed by UTF-8 bytes. Files are written
atomically: the bytes land in a sibling temp file that is renamed over the
destination, so readers never observe a partial file.
"""

from __future__ import annotations

import os
import struct
import zlib
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .manifest import LABELS, SAMPLE_TYPES, SPLITS, SampleRecord

MAGIC = b"PCFF"
FORMAT_VERSION = 1

_LABEL_CODE = {name: i for i, name in enumerate(LABELS)}
_SAMPLE_TYPE_CODE = {name: i for i, name in enumerate(SAMPLE_TYPES)}
_SPLIT_CODE = {name: i for i, name in enumerate(SPLITS)}


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValidationError("string field too long to serialize")
    return struct.pack("<H", len(raw)) + raw


def feature_bytes(
    backend_name: str,
    dim: int,
    rows: Sequence[tuple[SampleRecord, np.ndarray]],
) -> bytes:
    """Serialize (record, vector) pairs; row order is preserved."""
    parts = [MAGIC, struct.pack("<HIQ", FORMAT_VERSION, dim, len(rows))]
    parts.append(_pack_str(backend_name))
    for rec, vec in rows:
        flat = np.asarray(vec, dtype=np.float32).reshape(-1)
        if flat.shape[0] != dim:
            raise ValidationError(
                f"record {rec.id!r}: vector has {flat.shape[0]} values, expected {dim}"
            )
        parts.append(_pack_str(rec.id))
        parts.append(
            struct.pack("<BB", _LABEL_CODE[rec.label], _SAMPLE_TYPE_CODE[rec.sample_type])
        )
        parts.append(_pack_str(rec.generator))
        parts.append(struct.pack("<B", _SPLIT_CODE[rec.split]))
        parts.append(flat.astype("<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def write_feature_file(
    backend_name: str,
    dim: int,
    rows: Sequence[tuple[SampleRecord, np.ndarray]],
    path: str | Path,
) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(feature_bytes(backend_name, dim, rows))
    os.replace(tmp, path)
