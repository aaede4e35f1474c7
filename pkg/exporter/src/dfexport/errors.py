"""Exception types shared across the package.

The class names deliberately match the detector package so callers driving
both tools can share their error handling.
"""


class DfexportError(Exception):
    """Base class for all package-specific failures."""


class ValidationError(DfexportError):
    """Semantic violation in manifests, backbone specs, or CLI arguments."""


class FileFormatError(DfexportError):
    """Unreadable or corrupt on-disk artifact: manifest JSON or weights archive."""


class ImageError(DfexportError):
    """Image decoding or preprocessing failure."""
