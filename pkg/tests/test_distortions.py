import math

import numpy as np
import pytest

from cfid.distortions import (
    DEFAULT_GRIDS,
    KINDS,
    DistortionSpec,
    SweepGrid,
    apply_distortion,
    blend_with_raster,
    distort_set,
    gaussian_blur,
    gaussian_noise,
    noise_raster,
    quantize,
    salt_pepper,
    spiral_warp,
    swirl_source_coords,
)
from cfid.errors import ValidationError
from cfid.imageset import Image, RandomSource

from conftest import synthetic_photo_image, synthetic_photo_set


class TestQuantize:
    def test_rounds_half_away_from_zero(self):
        v = np.array([0.5, 1.5, 2.5, 3.49, 3.51])
        np.testing.assert_array_equal(quantize(v), [1, 2, 3, 3, 4])

    def test_clamps_to_byte_range(self):
        v = np.array([-10.0, -0.4, 254.5, 255.49, 300.0])
        np.testing.assert_array_equal(quantize(v), [0, 0, 255, 255, 255])

    def test_integers_are_fixed_points(self):
        v = np.arange(256, dtype=np.float64)
        np.testing.assert_array_equal(quantize(v), np.arange(256, dtype=np.uint8))


class TestNoiseRaster:
    def test_spans_full_range_exactly(self):
        r = noise_raster((16, 16, 3), RandomSource(5))
        assert r.min() == 0.0
        assert r.max() == 255.0

    def test_deterministic(self):
        a = noise_raster((8, 8, 3), RandomSource(5))
        b = noise_raster((8, 8, 3), RandomSource(5))
        np.testing.assert_array_equal(a, b)

    def test_matches_direct_stream_derivation(self):
        # Re-derive from the generator contract: Philox keyed by the seed,
        # standard normal draws, min-max rescale.
        seed = 31337
        shape = (6, 7, 3)
        z = np.random.Generator(np.random.Philox(key=seed)).standard_normal(shape)
        expected = (z - z.min()) / (z.max() - z.min()) * 255.0
        np.testing.assert_array_equal(noise_raster(shape, RandomSource(seed)), expected)


class TestGaussianNoise:
    def test_alpha_zero_is_bitwise_identity(self):
        img = synthetic_photo_image(1, side=16)
        out = gaussian_noise(img, 0.0, RandomSource(9))
        np.testing.assert_array_equal(out.pixels, img.pixels)

    def test_alpha_one_is_the_raster(self):
        img = synthetic_photo_image(1, side=16)
        out = gaussian_noise(img, 1.0, RandomSource(9))
        expected = quantize(noise_raster(img.pixels.shape, RandomSource(9)))
        np.testing.assert_array_equal(out.pixels, expected)

    def test_blend_formula(self):
        img = synthetic_photo_image(2, side=16)
        alpha = 0.3
        raster = noise_raster(img.pixels.shape, RandomSource(42))
        expected = quantize((1 - alpha) * img.pixels.astype(np.float64) + alpha * raster)
        out = gaussian_noise(img, alpha, RandomSource(42))
        np.testing.assert_array_equal(out.pixels, expected)

    def test_deterministic(self):
        img = synthetic_photo_image(3, side=16)
        a = gaussian_noise(img, 0.2, RandomSource(1))
        b = gaussian_noise(img, 0.2, RandomSource(1))
        assert a == b

    def test_alpha_out_of_range_rejected(self):
        img = synthetic_photo_image(0, side=8)
        with pytest.raises(ValidationError):
            gaussian_noise(img, 1.5, RandomSource(0))


def _blur_oracle(pixels: np.ndarray, sigma: float) -> np.ndarray:
    """Direct-summation 2-D Gaussian filtering with edge-inclusive reflection.

    Independent of the production path: builds the separable kernel as an
    explicit 2-D outer product and loops over output pixels.
    """
    radius = math.ceil(4.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k1 = np.exp(-(x * x) / (2.0 * sigma * sigma))
    k1 /= k1.sum()
    k2 = np.outer(k1, k1)
    h, w = pixels.shape[:2]

    def reflect(i, n):
        # (d c b a | a b c d | d c b a)
        while i < 0 or i >= n:
            if i < 0:
                i = -i - 1
            else:
                i = 2 * n - i - 1
        return i

    out = np.zeros_like(pixels, dtype=np.float64)
    for yy in range(h):
        for xx in range(w):
            for dy in range(-radius, radius + 1):
                for dx in range(-radius, radius + 1):
                    sy = reflect(yy + dy, h)
                    sx = reflect(xx + dx, w)
                    out[yy, xx] += k2[dy + radius, dx + radius] * pixels[sy, sx].astype(np.float64)
    return out


class TestGaussianBlur:
    def test_alpha_zero_is_bitwise_identity(self):
        img = synthetic_photo_image(4, side=16)
        np.testing.assert_array_equal(gaussian_blur(img, 0.0).pixels, img.pixels)

    def test_constant_image_unchanged(self):
        img = Image(np.full((10, 12, 3), 77, dtype=np.uint8))
        np.testing.assert_array_equal(gaussian_blur(img, 2.0).pixels, img.pixels)

    def test_matches_direct_summation_oracle(self):
        img = synthetic_photo_image(5, side=12)
        for sigma in (0.6, 1.0):
            expected = quantize(_blur_oracle(img.pixels, sigma))
            np.testing.assert_array_equal(gaussian_blur(img, sigma).pixels, expected)

    def test_mass_preserved_on_interior(self):
        # A unit impulse away from edges spreads but keeps its total mass
        # (kernel is renormalized after truncation at radius ceil(4 sigma)).
        arr = np.zeros((21, 21, 3), dtype=np.uint8)
        arr[10, 10, :] = 255
        sigma = 1.0
        radius = math.ceil(4.0 * sigma)
        x = np.arange(-radius, radius + 1, dtype=np.float64)
        k1 = np.exp(-(x * x) / (2.0 * sigma * sigma))
        k1 /= k1.sum()
        expected = quantize(255.0 * np.outer(k1, k1))
        out = gaussian_blur(Image(arr), sigma)
        np.testing.assert_array_equal(
            out.pixels[10 - radius : 10 + radius + 1, 10 - radius : 10 + radius + 1, 0],
            expected,
        )

    def test_negative_alpha_rejected(self):
        img = synthetic_photo_image(0, side=8)
        with pytest.raises(ValidationError):
            gaussian_blur(img, -0.5)


class TestSpiralWarp:
    def test_alpha_zero_is_bitwise_identity(self):
        img = synthetic_photo_image(6, side=16)
        np.testing.assert_array_equal(spiral_warp(img, 0.0).pixels, img.pixels)

    def test_source_coords_golden_point(self):
        # Scalar evaluation at output pixel (60, 50), center (50, 50),
        # rho=25, alpha=1: r=10, theta=0,
        # theta' = exp(-50 / (25 ln 2)) = 0.055833005849862345.
        sx, sy = swirl_source_coords(60.0, 50.0, 1.0, 25.0, (50.0, 50.0))
        assert abs(float(sx) - 59.98441742591492) < 1e-6
        assert abs(float(sy) - 50.558040021043688) < 1e-6

    def test_source_coords_center_is_fixed_point(self):
        sx, sy = swirl_source_coords(50.0, 50.0, 3.0, 25.0, (50.0, 50.0))
        assert float(sx) == 50.0 and float(sy) == 50.0

    def test_rotation_angle_decays_with_radius(self):
        rho = 25.0
        decay = rho * math.log(2.0) / 5.0
        for r in (decay, 2 * decay):
            sx, sy = swirl_source_coords(50.0 + r, 50.0, 1.0, rho, (50.0, 50.0))
            angle = math.atan2(float(sy) - 50.0, float(sx) - 50.0)
            assert abs(angle - math.exp(-r / decay)) < 1e-12

    def test_center_pixel_value_unchanged(self):
        img = synthetic_photo_image(7, side=33)  # odd side: lattice-point center
        out = spiral_warp(img, 2.0)
        np.testing.assert_array_equal(out.pixels[16, 16], img.pixels[16, 16])

    def test_far_corners_unchanged(self):
        # At the corners of a 101x101 image r ~ 70; the rotation angle is
        # ~2e-9 rad, displacing the sample by well under a quantization step.
        img = synthetic_photo_image(8, side=101)
        out = spiral_warp(img, 1.0)
        for y, x in ((0, 0), (0, 100), (100, 0), (100, 100)):
            np.testing.assert_array_equal(out.pixels[y, x], img.pixels[y, x])

    def test_output_stays_in_input_range(self):
        arr = np.random.Generator(np.random.Philox(key=3)).integers(
            40, 200, size=(32, 32, 3)
        ).astype(np.uint8)
        out = spiral_warp(Image(arr), 3.0)
        assert out.pixels.min() >= 40
        assert out.pixels.max() <= 199

    def test_custom_center_respected(self):
        img = synthetic_photo_image(9, side=32)
        a = spiral_warp(img, 1.5, center=(5.0, 5.0))
        b = spiral_warp(img, 1.5)
        assert a != b
        np.testing.assert_array_equal(a.pixels[5, 5], img.pixels[5, 5])

    def test_matches_explicit_resampling_oracle(self):
        # Re-derive a handful of output pixels by scalar math + manual
        # bilinear interpolation.
        img = synthetic_photo_image(10, side=24)
        alpha, rho = 1.0, 25.0
        cx = cy = (24 - 1) / 2.0
        out = spiral_warp(img, alpha, rho)
        p = img.pixels.astype(np.float64)
        for y, x in ((3, 17), (12, 4), (20, 20), (11, 12)):
            dx, dy = x - cx, y - cy
            r = math.hypot(dx, dy)
            th = math.atan2(dy, dx) + alpha * math.exp(-5.0 * r / (rho * math.log(2.0)))
            sx, sy = cx + r * math.cos(th), cy + r * math.sin(th)
            x0, y0 = int(math.floor(sx)), int(math.floor(sy))
            fx, fy = sx - x0, sy - y0
            x1, y1 = min(x0 + 1, 23), min(y0 + 1, 23)
            val = (
                p[y0, x0] * (1 - fy) * (1 - fx)
                + p[y0, x1] * (1 - fy) * fx
                + p[y1, x0] * fy * (1 - fx)
                + p[y1, x1] * fy * fx
            )
            np.testing.assert_array_equal(out.pixels[y, x], quantize(val))


class TestSaltPepper:
    def test_alpha_zero_is_bitwise_identity(self):
        img = synthetic_photo_image(11, side=16)
        out = salt_pepper(img, 0.0, RandomSource(4))
        np.testing.assert_array_equal(out.pixels, img.pixels)

    def test_alpha_one_is_all_extremes(self):
        img = synthetic_photo_image(12, side=16)
        out = salt_pepper(img, 1.0, RandomSource(4))
        assert set(np.unique(out.pixels)) <= {0, 255}

    def test_changed_values_are_extremes_only(self):
        img = Image(np.full((32, 32, 3), 128, dtype=np.uint8))
        out = salt_pepper(img, 0.25, RandomSource(8))
        changed = out.pixels[out.pixels != 128]
        assert set(np.unique(changed)) <= {0, 255}

    def test_hit_rate_within_binomial_bounds(self):
        # Mid-gray input: every selected channel is visibly changed. The
        # empirical hit rate over n=3*128^2 draws stays within 5 sigma.
        img = Image(np.full((128, 128, 3), 128, dtype=np.uint8))
        alpha = 0.2
        out = salt_pepper(img, alpha, RandomSource(21))
        n = img.pixels.size
        hits = int(np.count_nonzero(out.pixels != 128))
        sigma = math.sqrt(alpha * (1 - alpha) / n)
        assert abs(hits / n - alpha) < 5 * sigma

    def test_salt_and_pepper_balanced(self):
        img = Image(np.full((128, 128, 3), 128, dtype=np.uint8))
        out = salt_pepper(img, 0.3, RandomSource(22))
        salt = int(np.count_nonzero(out.pixels == 255))
        pepper = int(np.count_nonzero(out.pixels == 0))
        total = salt + pepper
        sigma = math.sqrt(0.25 / total)
        assert abs(salt / total - 0.5) < 5 * sigma

    def test_deterministic(self):
        img = synthetic_photo_image(13, side=16)
        a = salt_pepper(img, 0.4, RandomSource(7))
        b = salt_pepper(img, 0.4, RandomSource(7))
        assert a == b


class TestSpecAndGrids:
    def test_kinds_list(self):
        assert KINDS == ("gaussian_noise", "gaussian_blur", "spiral_warp", "salt_pepper")

    def test_default_grids(self):
        assert DEFAULT_GRIDS["gaussian_noise"].alphas == (0.0, 0.05, 0.1, 0.2)
        assert DEFAULT_GRIDS["gaussian_blur"].alphas == (0.0, 1.0, 2.0, 4.0)
        assert DEFAULT_GRIDS["spiral_warp"].alphas == (0.0, 1.0, 2.0, 4.0)
        assert DEFAULT_GRIDS["salt_pepper"].alphas == (0.0, 0.1, 0.2, 0.3)

    def test_grid_must_start_at_zero_and_increase(self):
        with pytest.raises(ValidationError):
            SweepGrid("gaussian_noise", (0.1, 0.2))
        with pytest.raises(ValidationError):
            SweepGrid("gaussian_noise", (0.0, 0.2, 0.2))
        with pytest.raises(ValidationError):
            SweepGrid("gaussian_noise", ())

    def test_spec_validation(self):
        with pytest.raises(ValidationError):
            DistortionSpec("melt", 0.5)
        with pytest.raises(ValidationError):
            DistortionSpec("gaussian_noise", -0.1)
        with pytest.raises(ValidationError):
            DistortionSpec("salt_pepper", 1.2)
        with pytest.raises(ValidationError):
            DistortionSpec("spiral_warp", 1.0, rho=0.0)
        # Blur and warp alphas above 1 are legal.
        DistortionSpec("gaussian_blur", 4.0)
        DistortionSpec("spiral_warp", 4.0)


class TestDistortSet:
    def test_preserves_names_and_cardinality(self):
        s = synthetic_photo_set(4, side=16, seed=3)
        out = distort_set(s, DistortionSpec("gaussian_noise", 0.2, seed=5))
        assert out.names == s.names
        assert len(out) == len(s)

    def test_source_id_records_kind_and_alpha(self):
        s = synthetic_photo_set(2, side=16, seed=3, source_id="base")
        out = distort_set(s, DistortionSpec("salt_pepper", 0.1, seed=5))
        assert out.source_id == "base|salt_pepper:alpha=0.1"

    def test_bitwise_reproducible(self):
        s = synthetic_photo_set(3, side=16, seed=3)
        spec = DistortionSpec("gaussian_noise", 0.3, seed=17)
        a = distort_set(s, spec)
        b = distort_set(s, spec)
        for x, y in zip(a, b):
            assert x == y

    def test_per_image_streams_are_positional(self):
        # The i-th output depends on (seed, i, image) only, so a prefix of
        # the set distorts to the prefix of the distorted set.
        s = synthetic_photo_set(4, side=16, seed=3)
        prefix = type(s)(images=s.images[:2], source_id=s.source_id, names=s.names[:2])
        spec = DistortionSpec("salt_pepper", 0.3, seed=17)
        full = distort_set(s, spec)
        part = distort_set(prefix, spec)
        assert full[0] == part[0]
        assert full[1] == part[1]

    def test_images_get_independent_noise(self):
        # Two identical inputs must receive different noise rasters.
        img = synthetic_photo_image(14, side=16)
        s = type(synthetic_photo_set(1))(images=(img, img), source_id="twin")
        out = distort_set(s, DistortionSpec("gaussian_noise", 0.5, seed=9))
        assert out[0] != out[1]

    def test_alpha_zero_sweep_point_is_identity(self):
        s = synthetic_photo_set(3, side=16, seed=3)
        for kind in KINDS:
            out = distort_set(s, DistortionSpec(kind, 0.0, seed=1))
            for x, y in zip(out, s):
                assert x == y

    def test_apply_distortion_dispatches_all_kinds(self):
        img = synthetic_photo_image(15, side=16)
        for kind, alpha in (("gaussian_noise", 0.2), ("gaussian_blur", 1.0),
                            ("spiral_warp", 1.0), ("salt_pepper", 0.2)):
            out = apply_distortion(img, DistortionSpec(kind, alpha, seed=2))
            assert out.pixels.shape == img.pixels.shape

    def test_blend_with_raster_matches_formula(self):
        pix = np.array([[[10, 20, 30]]], dtype=np.uint8)
        raster = np.array([[[255.0, 0.0, 100.0]]])
        out = blend_with_raster(pix, raster, 0.5)
        np.testing.assert_array_equal(out, quantize(np.array([[[132.5, 10.0, 65.0]]])))
