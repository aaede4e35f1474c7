"""Exception types shared across the package."""


class PercepdetError(Exception):
    """Base class for all package-specific failures."""


class ValidationError(PercepdetError):
    """Semantic violation in manifests, feature sets, configs, or evaluation inputs."""


class FileFormatError(PercepdetError):
    """Unreadable or corrupt on-disk artifact: bad magic, version, truncation, checksum."""


class ImageError(PercepdetError):
    """Image decoding or processing failure."""


class NumericalError(PercepdetError):
    """Non-finite values encountered during optimization."""
