"""Export frozen-backbone image embeddings to PCFF feature files.

The package reads the same manifest JSON documents the detector pipeline
uses, runs a frozen backbone over every image, and writes the resulting
vectors in the PCFF interchange format so they can be trained on and
evaluated directly. Weights are never updated and output bytes are
deterministic for a given corpus and archive.
"""

from .backbones import BackboneSpec, LinearBackbone, load_backbone, make_stub_weights
from .errors import (
    DfexportError,
    FileFormatError,
    ImageError,
    ValidationError,
)
from .export import export_features
from .manifest import Manifest, SampleRecord, load_manifest, resolve_path
from .pcff import feature_bytes, write_feature_file

__all__ = [
    "BackboneSpec",
    "DfexportError",
    "FileFormatError",
    "ImageError",
    "LinearBackbone",
    "Manifest",
    "SampleRecord",
    "ValidationError",
    "export_features",
    "feature_bytes",
    "load_backbone",
    "load_manifest",
    "make_stub_weights",
    "resolve_path",
    "write_feature_file",
]
