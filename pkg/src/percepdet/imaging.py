"""Image decoding, luma conversion, and the augmentation/degradation bank.

All operations are pure: they take an ImagePlane and return a new one with
the same dimensions and values in [0, 255]. Randomized operations are
deterministic given their seeds, so augmented pipelines are reproducible
bit-for-bit.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from .errors import ImageError, ValidationError

MIN_SIDE = 16
_SUPPORTED_FORMATS = {"PNG", "JPEG", "BMP"}
_SEED_MASK = (1 << 64) - 1

# Documented parameter bounds for the augmentation bank.
BLUR_SIGMA_MAX = 32.0
NOISE_SIGMA_MAX = 128.0
ROTATION_MAX_DEG = 180.0
BRIGHTNESS_OFFSET_MAX = 255.0
CONTRAST_GAIN_MAX = 4.0


@dataclass(frozen=True)
class ImagePlane:
    """A decoded image: float64 values in [0, 255].

    ``data`` has shape (height, width) for single-channel luma or
    (height, width, 3) for RGB. The array is frozen read-only so planes can
    be shared across threads.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 3 and arr.shape[2] == 3:
            pass
        elif arr.ndim != 2:
            raise ValidationError(f"unsupported plane shape {arr.shape}")
        if arr.shape[0] < MIN_SIDE or arr.shape[1] < MIN_SIDE:
            raise ValidationError(
                f"plane {arr.shape[1]}x{arr.shape[0]} below minimum {MIN_SIDE}px"
            )
        if not np.isfinite(arr).all():
            raise ValidationError("plane contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 255.0:
            raise ValidationError("plane values outside [0, 255]")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> str:
        return "rgb3" if self.data.ndim == 3 else "luma1"


@dataclass(frozen=True)
class AugmentPolicy:
    """Randomized augmentation bank configuration.

    Each operation is applied independently with probability ``probability``,
    drawing its parameter uniformly from the configured range. The paper-side
    sweep levels (blur sigma up to 5, JPEG quality down to 30) sit inside the
    default ranges.
    """

    probability: float = 0.3
    blur_sigma: tuple[float, float] = (0.1, 3.0)
    jpeg_quality: tuple[int, int] = (30, 95)
    noise_sigma: tuple[float, float] = (0.0, 12.0)
    rotation_degrees: tuple[float, float] = (-10.0, 10.0)
    brightness_offset: tuple[float, float] = (-20.0, 20.0)
    contrast_gain: tuple[float, float] = (0.8, 1.2)
    dropout_ratio: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValidationError("probability must be in [0, 1]")
        _check_range("blur_sigma", self.blur_sigma, 0.0, BLUR_SIGMA_MAX, open_low=True)
        lo, hi = self.jpeg_quality
        if not (isinstance(lo, int) and isinstance(hi, int) and 1 <= lo <= hi <= 100):
            raise ValidationError("jpeg_quality must be integers with 1 <= lo <= hi <= 100")
        _check_range("noise_sigma", self.noise_sigma, 0.0, NOISE_SIGMA_MAX)
        _check_range("rotation_degrees", self.rotation_degrees, -ROTATION_MAX_DEG, ROTATION_MAX_DEG)
        _check_range("brightness_offset", self.brightness_offset, -BRIGHTNESS_OFFSET_MAX, BRIGHTNESS_OFFSET_MAX)
        _check_range("contrast_gain", self.contrast_gain, 0.0, CONTRAST_GAIN_MAX, open_low=True)
        if not 0.0 <= self.dropout_ratio < 1.0:
            raise ValidationError("dropout_ratio must be in [0, 1)")


def _check_range(name, rng, lo_bound, hi_bound, open_low=False):
    lo, hi = float(rng[0]), float(rng[1])
    if lo > hi:
        raise ValidationError(f"{name}: empty range ({lo}, {hi})")
    if (lo <= lo_bound if open_low else lo < lo_bound) or hi > hi_bound:
        raise ValidationError(f"{name}: range ({lo}, {hi}) outside documented bounds")


def policy_to_dict(policy: AugmentPolicy) -> dict:
    return {
        "probability": policy.probability,
        "blur_sigma": list(policy.blur_sigma),
        "jpeg_quality": list(policy.jpeg_quality),
        "noise_sigma": list(policy.noise_sigma),
        "rotation_degrees": list(policy.rotation_degrees),
        "brightness_offset": list(policy.brightness_offset),
        "contrast_gain": list(policy.contrast_gain),
        "dropout_ratio": policy.dropout_ratio,
        "seed": policy.seed,
    }


def policy_from_dict(doc: dict) -> AugmentPolicy:
    known = set(policy_to_dict(AugmentPolicy()))
    extra = set(doc) - known
    if extra:
        raise ValidationError(f"augment policy: unknown keys {sorted(extra)}")
    kwargs = dict(doc)
    for key in ("blur_sigma", "noise_sigma", "rotation_degrees",
                "brightness_offset", "contrast_gain"):
        if key in kwargs:
            kwargs[key] = tuple(float(v) for v in kwargs[key])
    if "jpeg_quality" in kwargs:
        kwargs["jpeg_quality"] = tuple(int(v) for v in kwargs["jpeg_quality"])
    return AugmentPolicy(**kwargs)


def decode_image(path: str | Path) -> ImagePlane:
    """Decode a PNG/JPEG/BMP file into an RGB plane. Deterministic per file."""
    p = Path(path)
    try:
        im = Image.open(p)
    except FileNotFoundError:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ImageError(f"cannot decode {p}: {exc}") from exc
    with im:
        if im.format not in _SUPPORTED_FORMATS:
            raise ImageError(f"{p}: unsupported format {im.format!r}")
        w, h = im.size
        if w < MIN_SIDE or h < MIN_SIDE:
            raise ImageError(f"{p}: image {w}x{h} below minimum {MIN_SIDE}px")
        try:
            rgb = im.convert("RGB")
        except OSError as exc:
            raise ImageError(f"{p}: corrupt stream: {exc}") from exc
        data = np.asarray(rgb, dtype=np.float64)
    return ImagePlane(data)


def to_luma(img: ImagePlane) -> ImagePlane:
    """BT.601 luma: Y = 0.299 R + 0.587 G + 0.114 B, clamped to [0, 255]."""
    if img.channels != "rgb3":
        raise ValidationError("to_luma expects an rgb3 plane")
    y = img.data @ np.array([0.299, 0.587, 0.114])
    return ImagePlane(np.clip(y, 0.0, 255.0))


def _as_luma_array(img: ImagePlane) -> np.ndarray:
    return to_luma(img).data if img.channels == "rgb3" else img.data


def gaussian_kernel1d(sigma: float, radius: int) -> np.ndarray:
    """Sampled Gaussian taps on [-radius, radius], normalized to sum 1."""
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(img: ImagePlane, sigma: float) -> ImagePlane:
    """Separable Gaussian blur, kernel radius ceil(3*sigma), reflect padding."""
    if not sigma > 0:
        raise ValidationError(f"blur sigma must be positive, got {sigma}")
    if sigma > BLUR_SIGMA_MAX:
        raise ValidationError(f"blur sigma {sigma} above bound {BLUR_SIGMA_MAX}")
    kernel = gaussian_kernel1d(sigma, math.ceil(3.0 * sigma))
    out = ndimage.correlate1d(img.data, kernel, axis=0, mode="reflect")
    out = ndimage.correlate1d(out, kernel, axis=1, mode="reflect")
    return ImagePlane(np.clip(out, 0.0, 255.0))


def _to_uint8(data: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(data), 0, 255).astype(np.uint8)


def jpeg_recompress(img: ImagePlane, qf: int) -> ImagePlane:
    """Encode as baseline JPEG (4:2:0 chroma for RGB) at quality qf, decode back."""
    if not (isinstance(qf, (int, np.integer)) and 1 <= qf <= 100):
        raise ValidationError(f"jpeg quality factor must be in 1..100, got {qf!r}")
    raw = _to_uint8(img.data)
    if img.channels == "rgb3":
        pil = Image.fromarray(raw, mode="RGB")
        kwargs = {"subsampling": 2}  # 4:2:0
    else:
        pil = Image.fromarray(raw, mode="L")
        kwargs = {}
    buf = io.BytesIO()
    pil.save(buf, format="JPEG", quality=int(qf), **kwargs)
    buf.seek(0)
    with Image.open(buf) as back:
        decoded = np.asarray(back.convert(pil.mode), dtype=np.float64)
    return ImagePlane(decoded)


def horizontal_flip(img: ImagePlane) -> ImagePlane:
    """Mirror columns left-to-right."""
    return ImagePlane(img.data[:, ::-1].copy())


def gaussian_noise(img: ImagePlane, sigma: float, seed: int) -> ImagePlane:
    """Add i.i.d. zero-mean Gaussian noise, then clamp."""
    if sigma < 0 or sigma > NOISE_SIGMA_MAX:
        raise ValidationError(f"noise sigma {sigma} out of bounds")
    rng = np.random.default_rng(seed & _SEED_MASK)
    noisy = img.data + rng.normal(0.0, sigma, size=img.data.shape)
    return ImagePlane(np.clip(noisy, 0.0, 255.0))


def rotate(img: ImagePlane, degrees: float) -> ImagePlane:
    """Rotate about the center with bilinear sampling; reflect padding keeps
    corners free of constant fill."""
    if abs(degrees) > ROTATION_MAX_DEG:
        raise ValidationError(f"rotation {degrees} out of bounds")
    out = ndimage.rotate(
        img.data, degrees, axes=(0, 1), reshape=False, order=1, mode="reflect"
    )
    return ImagePlane(np.clip(out, 0.0, 255.0))


def brightness_contrast(img: ImagePlane, offset: float, gain: float) -> ImagePlane:
    """clamp(gain * (v - 128) + 128 + offset)."""
    if abs(offset) > BRIGHTNESS_OFFSET_MAX:
        raise ValidationError(f"brightness offset {offset} out of bounds")
    if not 0 < gain <= CONTRAST_GAIN_MAX:
        raise ValidationError(f"contrast gain {gain} out of bounds")
    if offset == 0.0 and gain == 1.0:
        return ImagePlane(img.data)  # exact identity, no float round-off
    out = gain * (img.data - 128.0) + 128.0 + offset
    return ImagePlane(np.clip(out, 0.0, 255.0))


def grid_dropout(img: ImagePlane, ratio: float, seed: int) -> ImagePlane:
    """Zero a regular grid of square cells covering ~ratio of the area.

    The grid pitch is min(height, width)//8 (at least 8 px); the hole offset
    inside the pitch is drawn once from the seed and repeated, so the pattern
    is a regular lattice.
    """
    if not 0.0 <= ratio < 1.0:
        raise ValidationError(f"dropout ratio {ratio} out of bounds")
    if ratio == 0.0:
        return ImagePlane(img.data)
    h, w = img.height, img.width
    pitch = max(8, min(h, w) // 8)
    side = min(pitch, max(1, round(pitch * math.sqrt(ratio))))
    rng = np.random.default_rng(seed & _SEED_MASK)
    oy, ox = (int(v) for v in rng.integers(0, pitch - side + 1, size=2))
    out = img.data.copy()
    for y0 in range(oy, h, pitch):
        for x0 in range(ox, w, pitch):
            out[y0 : y0 + side, x0 : x0 + side] = 0.0
    return ImagePlane(out)


def apply_policy(img: ImagePlane, policy: AugmentPolicy, draw: int) -> ImagePlane:
    """Apply the augmentation bank with per-image randomness.

    Fixed order: flip, rotate, brightness/contrast, blur, noise, grid
    dropout, JPEG. Deterministic for a given (policy.seed, draw) pair.
    """
    rng = np.random.default_rng([policy.seed & _SEED_MASK, draw & _SEED_MASK])
    p = policy.probability
    if rng.random() < p:
        img = horizontal_flip(img)
    if rng.random() < p:
        img = rotate(img, rng.uniform(*policy.rotation_degrees))
    if rng.random() < p:
        offset = rng.uniform(*policy.brightness_offset)
        gain = rng.uniform(*policy.contrast_gain)
        img = brightness_contrast(img, offset, gain)
    if rng.random() < p:
        img = gaussian_blur(img, rng.uniform(*policy.blur_sigma))
    if rng.random() < p:
        img = gaussian_noise(img, rng.uniform(*policy.noise_sigma), int(rng.integers(1 << 63)))
    if rng.random() < p:
        img = grid_dropout(img, policy.dropout_ratio, int(rng.integers(1 << 63)))
    if rng.random() < p:
        lo, hi = policy.jpeg_quality
        img = jpeg_recompress(img, int(rng.integers(lo, hi + 1)))
    return img


@dataclass(frozen=True)
class Degradation:
    """A single named degradation applied at inference time.

    Used by robustness sweeps, where exactly one controlled distortion is
    applied to every evaluated image.
    """

    name: str
    level: float

    def __post_init__(self):
        if self.name not in ("blur", "jpeg"):
            raise ValidationError(f"unknown degradation {self.name!r}")
        if self.name == "blur" and not self.level > 0:
            raise ValidationError("blur level must be positive")
        if self.name == "jpeg":
            if self.level != int(self.level) or not 1 <= self.level <= 100:
                raise ValidationError("jpeg level must be an integer in 1..100")


def apply_degradation(img: ImagePlane, degradation: Degradation) -> ImagePlane:
    if degradation.name == "blur":
        return gaussian_blur(img, float(degradation.level))
    return jpeg_recompress(img, int(degradation.level))


def laplacian_variance(img: ImagePlane) -> float:
    """Variance of the 3x3 Laplacian response; a simple sharpness statistic."""
    arr = _as_luma_array(img)
    kernel = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])
    resp = ndimage.correlate(arr, kernel, mode="reflect")
    return float(resp.var())
