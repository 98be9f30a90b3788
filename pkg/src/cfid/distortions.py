"""The four distortion procedures driving the alpha-sweep experiments.

All four are pure functions of (image, parameters, seed) and are exact
identities at alpha=0. Conventions fixed here so golden tests are possible:

* x is the column index, y the row index, origin top-left; angles via atan2.
* Blends and filters run in float64; results are rounded half away from
  zero and clamped to [0, 255].
* Blur kernels are truncated at radius ceil(4*alpha), renormalized, and
  applied with edge-inclusive reflect padding.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ValidationError
from .imageset import Image, ImageSet, RandomSource

KINDS = ("gaussian_noise", "gaussian_blur", "spiral_warp", "salt_pepper")

DEFAULT_RHO = 25.0


@dataclass(frozen=True)
class DistortionSpec:
    """One point of a distortion sweep: a kind plus its parameters."""

    kind: str
    alpha: float
    rho: float = DEFAULT_RHO
    center: tuple | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown distortion kind {self.kind!r}; expected one of {KINDS}")
        if self.alpha < 0:
            raise ValidationError(f"alpha must be >= 0, got {self.alpha}")
        if self.kind in ("gaussian_noise", "salt_pepper") and self.alpha > 1:
            raise ValidationError(f"{self.kind} requires alpha in [0, 1], got {self.alpha}")
        if self.kind == "spiral_warp" and self.rho <= 0:
            raise ValidationError(f"spiral_warp requires rho > 0, got {self.rho}")


@dataclass(frozen=True)
class SweepGrid:
    kind: str
    alphas: tuple

    def __post_init__(self):
        if not self.alphas or self.alphas[0] != 0:
            raise ValidationError("sweep grid must start at alpha=0")
        if any(b <= a for a, b in zip(self.alphas, self.alphas[1:])):
            raise ValidationError("sweep alphas must be strictly increasing")


#: Default sweep grid per distortion kind.
DEFAULT_GRIDS = {
    "gaussian_noise": SweepGrid("gaussian_noise", (0.0, 0.05, 0.1, 0.2)),
    "gaussian_blur": SweepGrid("gaussian_blur", (0.0, 1.0, 2.0, 4.0)),
    "spiral_warp": SweepGrid("spiral_warp", (0.0, 1.0, 2.0, 4.0)),
    "salt_pepper": SweepGrid("salt_pepper", (0.0, 0.1, 0.2, 0.3)),
}


def quantize(values: np.ndarray) -> np.ndarray:
    """Round half away from zero and clamp to [0, 255]."""
    rounded = np.where(values >= 0, np.floor(values + 0.5), np.ceil(values - 0.5))
    return np.clip(rounded, 0, 255).astype(np.uint8)


def noise_raster(shape: tuple, rng: RandomSource) -> np.ndarray:
    """I.i.d. standard-normal draws min-max rescaled to exactly [0, 255]."""
    z = rng.generator().standard_normal(shape)
    lo, hi = z.min(), z.max()
    if hi == lo:
        return np.zeros(shape)
    return (z - lo) / (hi - lo) * 255.0


def blend_with_raster(pixels: np.ndarray, raster: np.ndarray, alpha: float) -> np.ndarray:
    """Quantized convex blend (1-alpha)*X + alpha*N."""
    return quantize((1.0 - alpha) * pixels.astype(np.float64) + alpha * raster)


def gaussian_noise(img: Image, alpha: float, rng: RandomSource) -> Image:
    """Blend the image with a full-range Gaussian noise raster.

    The raster is drawn per call from ``rng``; alpha=1 yields the raster
    itself, alpha=0 the unchanged image.
    """
    _check_unit_alpha(alpha)
    if alpha == 0:
        return img
    raster = noise_raster(img.pixels.shape, rng)
    return Image(blend_with_raster(img.pixels, raster, alpha))


def gaussian_blur(img: Image, alpha: float) -> Image:
    """Convolve each channel with a normalized Gaussian of std ``alpha``."""
    if alpha < 0:
        raise ValidationError(f"alpha must be >= 0, got {alpha}")
    if alpha == 0:
        return img
    kernel = _gaussian_kernel(alpha)
    channels = img.pixels.astype(np.float64)
    out = np.empty_like(channels)
    for c in range(3):
        tmp = ndimage.correlate1d(channels[:, :, c], kernel, axis=0, mode="reflect")
        out[:, :, c] = ndimage.correlate1d(tmp, kernel, axis=1, mode="reflect")
    return Image(quantize(out))


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(4.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def swirl_source_coords(x, y, alpha: float, rho: float, center: tuple):
    """Reverse-mapping of the swirl: where output pixel (x, y) samples from.

    theta' = theta + alpha * exp(-5 r / (rho ln 2)); the effective decay
    radius is rho ln2 / 5. Accepts scalars or arrays.
    """
    x0, y0 = center
    dx = np.asarray(x, dtype=np.float64) - x0
    dy = np.asarray(y, dtype=np.float64) - y0
    r = np.sqrt(dx * dx + dy * dy)
    theta = np.arctan2(dy, dx)
    theta_p = theta + alpha * np.exp(-5.0 * r / (rho * math.log(2.0)))
    return x0 + r * np.cos(theta_p), y0 + r * np.sin(theta_p)


def _bilinear_sample(pixels: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample an (H, W, 3) raster at float coordinates, edge-clamped."""
    h, w = pixels.shape[:2]
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xs - x0)[..., None]
    fy = (ys - y0)[..., None]
    p = pixels.astype(np.float64)
    return (
        p[y0, x0] * (1 - fy) * (1 - fx)
        + p[y0, x1] * (1 - fy) * fx
        + p[y1, x0] * fy * (1 - fx)
        + p[y1, x1] * fy * fx
    )


def spiral_warp(
    img: Image, alpha: float, rho: float = DEFAULT_RHO, center: tuple | None = None
) -> Image:
    """Whirlpool warp around ``center`` (defaults to the pixel-grid center).

    Pure resampling: every output channel value is a convex combination of
    input values, so outputs stay inside the input range.
    """
    if alpha < 0:
        raise ValidationError(f"alpha must be >= 0, got {alpha}")
    if rho <= 0:
        raise ValidationError(f"rho must be > 0, got {rho}")
    if alpha == 0:
        return img
    h, w = img.height, img.width
    if center is None:
        center = ((w - 1) / 2.0, (h - 1) / 2.0)
    xx, yy = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    src_x, src_y = swirl_source_coords(xx, yy, alpha, rho, center)
    return Image(quantize(_bilinear_sample(img.pixels, src_x, src_y)))


def salt_pepper(img: Image, alpha: float, rng: RandomSource) -> Image:
    """Set each pixel channel, independently with probability alpha, to 0 or
    255 with equal probability."""
    _check_unit_alpha(alpha)
    if alpha == 0:
        return img
    g = rng.generator()
    shape = img.pixels.shape
    selected = g.random(shape) < alpha
    extremes = np.where(g.random(shape) < 0.5, 0, 255).astype(np.uint8)
    return Image(np.where(selected, extremes, img.pixels))


def _check_unit_alpha(alpha: float):
    if not 0 <= alpha <= 1:
        raise ValidationError(f"alpha must be in [0, 1], got {alpha}")


def apply_distortion(img: Image, spec: DistortionSpec, rng: RandomSource | None = None) -> Image:
    """Apply one distortion; stochastic kinds draw from ``rng`` (default: spec.seed)."""
    if rng is None:
        rng = RandomSource(spec.seed)
    if spec.kind == "gaussian_noise":
        return gaussian_noise(img, spec.alpha, rng)
    if spec.kind == "gaussian_blur":
        return gaussian_blur(img, spec.alpha)
    if spec.kind == "spiral_warp":
        return spiral_warp(img, spec.alpha, spec.rho, spec.center)
    return salt_pepper(img, spec.alpha, rng)


def distort_set(image_set: ImageSet, spec: DistortionSpec) -> ImageSet:
    """Distort every image with a per-image stream derived from (spec.seed, i).

    Output order, cardinality, and names match the input; reapplying the
    same spec reproduces the output bitwise.
    """
    base = RandomSource(spec.seed)
    images = tuple(
        apply_distortion(img, spec, base.derive(i)) for i, img in enumerate(image_set)
    )
    source_id = f"{image_set.source_id}|{spec.kind}:alpha={spec.alpha:g}"
    return ImageSet(images=images, source_id=source_id, names=image_set.names)
