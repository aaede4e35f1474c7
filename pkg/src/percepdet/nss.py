"""Bandpass natural-scene-statistics features.

The extractor normalizes luma locally (mean-subtracted, contrast-normalized
coefficients), fits a symmetric generalized Gaussian to the coefficient
histogram and asymmetric generalized Gaussians to four orientations of
pairwise coefficient products, then repeats at half resolution. The 36
resulting distribution parameters are distortion-sensitive and serve as a
self-contained perceptual feature space: no pretrained backbone required.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ValidationError
from .imaging import ImagePlane, MIN_SIDE, gaussian_kernel1d, to_luma

WINDOW_RADIUS = 3  # 7x7 weighting window
WINDOW_SIGMA = 7.0 / 6.0
STABILIZER = 1.0  # C in (I - mu) / (sigma + C)
ALPHA_LO = 0.05
ALPHA_HI = 10.0
ALPHA_TOL = 1e-6
MIN_FIT_SAMPLES = 64  # guidance for statistically meaningful fits
FEATURE_DIM = 36

_ORIENTATIONS = ("h", "v", "d1", "d2")

FEATURE_NAMES = tuple(
    f"s{scale}_{name}"
    for scale in (1, 2)
    for name in (
        ["mscn_alpha", "mscn_sigma2"]
        + [f"{o}_{p}" for o in _ORIENTATIONS for p in ("alpha", "eta", "beta_l2", "beta_r2")]
    )
)
assert len(FEATURE_NAMES) == FEATURE_DIM


@dataclass(frozen=True)
class GgdFit:
    """Symmetric generalized Gaussian fit: shape alpha and variance sigma2."""

    alpha: float
    sigma2: float
    degenerate: bool = False


@dataclass(frozen=True)
class AggdFit:
    """Asymmetric generalized Gaussian fit.

    beta_l2 / beta_r2 are the mean squares of the negative / positive sides;
    eta is the implied distribution mean.
    """

    alpha: float
    eta: float
    beta_l2: float
    beta_r2: float
    degenerate: bool = False


GGD_SENTINEL = GgdFit(2.0, 0.0, degenerate=True)
AGGD_SENTINEL = AggdFit(2.0, 0.0, 0.0, 0.0, degenerate=True)

_window = gaussian_kernel1d(WINDOW_SIGMA, WINDOW_RADIUS)


def _mscn(arr: np.ndarray) -> np.ndarray:
    # Separable Gaussian-weighted local mean and standard deviation with
    # reflect padding; the unit stabilizer keeps flat patches finite.
    if arr.max() == arr.min():
        # exactly zero for flat input; the filtered path would leave
        # rounding residue in the numerator
        return np.zeros_like(arr)

    def smooth(x):
        out = ndimage.correlate1d(x, _window, axis=0, mode="reflect")
        return ndimage.correlate1d(out, _window, axis=1, mode="reflect")

    mu = smooth(arr)
    var = np.clip(smooth(arr * arr) - mu * mu, 0.0, None)
    return (arr - mu) / (np.sqrt(var) + STABILIZER)


def mscn(img: ImagePlane) -> np.ndarray:
    """Mean-subtracted contrast-normalized coefficients of a luma plane."""
    if img.channels != "luma1":
        raise ValidationError("mscn expects a luma1 plane")
    if img.height < MIN_SIDE or img.width < MIN_SIDE:
        raise ValidationError("mscn input below minimum size")
    return _mscn(img.data)


def _shape_ratio(alpha: float) -> float:
    # Gamma(2/a)^2 / (Gamma(1/a) Gamma(3/a)), increasing in alpha.
    return math.exp(
        2.0 * math.lgamma(2.0 / alpha) - math.lgamma(1.0 / alpha) - math.lgamma(3.0 / alpha)
    )


def _solve_alpha(target: float) -> float:
    """Invert the moment ratio by bisection on [ALPHA_LO, ALPHA_HI]."""
    lo, hi = ALPHA_LO, ALPHA_HI
    if target <= _shape_ratio(lo):
        return lo
    if target >= _shape_ratio(hi):
        return hi
    while hi - lo > 1e-12:
        mid = 0.5 * (lo + hi)
        if _shape_ratio(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def fit_ggd(samples) -> GgdFit:
    """Moment-matching symmetric generalized Gaussian fit.

    The shape is recovered from (E|x|)^2 / E[x^2] by bisection; the variance
    is E[x^2]. Needs at least MIN_FIT_SAMPLES values for a meaningful
    estimate. All-zero input is flagged and returns the (2, 0) sentinel.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 2:
        raise ValidationError("ggd fit needs at least 2 samples")
    mean_sq = float(np.mean(x * x))
    if mean_sq == 0.0:
        warnings.warn("degenerate GGD fit: all-zero samples", stacklevel=2)
        return GGD_SENTINEL
    ratio = float(np.mean(np.abs(x))) ** 2 / mean_sq
    return GgdFit(alpha=_solve_alpha(ratio), sigma2=mean_sq)


def fit_aggd(samples) -> AggdFit:
    """Moment-matching asymmetric generalized Gaussian fit.

    Side scales are the root mean squares of the strictly negative and
    strictly positive values. One-sided input (either side empty) is flagged
    and returns the zero sentinel.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 2:
        raise ValidationError("aggd fit needs at least 2 samples")
    neg = x[x < 0.0]
    pos = x[x > 0.0]
    if neg.size == 0 or pos.size == 0:
        warnings.warn("degenerate AGGD fit: one-sided samples", stacklevel=2)
        return AGGD_SENTINEL
    beta_l = math.sqrt(float(np.mean(neg * neg)))
    beta_r = math.sqrt(float(np.mean(pos * pos)))
    gamma_hat = beta_l / beta_r
    r_hat = float(np.mean(np.abs(x))) ** 2 / float(np.mean(x * x))
    big_r = r_hat * (gamma_hat**3 + 1.0) * (gamma_hat + 1.0) / (gamma_hat**2 + 1.0) ** 2
    alpha = _solve_alpha(big_r)
    eta = (beta_r - beta_l) * math.exp(math.lgamma(2.0 / alpha) - math.lgamma(1.0 / alpha))
    return AggdFit(alpha=alpha, eta=eta, beta_l2=beta_l**2, beta_r2=beta_r**2)


def _paired_products(c: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    h = c[:, :-1] * c[:, 1:]
    v = c[:-1, :] * c[1:, :]
    d1 = c[:-1, :-1] * c[1:, 1:]
    d2 = c[1:, :-1] * c[:-1, 1:]
    return h, v, d1, d2


def _halve(arr: np.ndarray) -> np.ndarray:
    h2, w2 = arr.shape[0] // 2, arr.shape[1] // 2
    return arr[: 2 * h2, : 2 * w2].reshape(h2, 2, w2, 2).mean(axis=(1, 3))


def extract_nss(img: ImagePlane) -> np.ndarray:
    """The 36-value feature vector, in FEATURE_NAMES order.

    Two scales; the second is a 2x2 box-mean downsample of the first. Runs at
    native resolution and is deterministic and pure.
    """
    arr = to_luma(img).data if img.channels == "rgb3" else img.data
    values: list[float] = []
    for _ in range(2):
        c = _mscn(arr)
        g = fit_ggd(c)
        values.extend([g.alpha, g.sigma2])
        for prod in _paired_products(c):
            a = fit_aggd(prod)
            values.extend([a.alpha, a.eta, a.beta_l2, a.beta_r2])
        arr = _halve(arr)
    out = np.array(values, dtype=np.float64)
    if not np.isfinite(out).all():
        raise ValidationError("non-finite feature values")
    return out
