import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from logicalad.imaging import (DEFAULT_SSIM, LUMA_WEIGHTS, InvalidInputError, SSIMConfig, as_edge_map,
                               as_image, as_region_mask, blur_matrix, clamp01, read_gray, read_image,
                               ssim_map, to_grayscale, write_gray, write_image)

from oracles import ssim_gaussian_filter

unit = st.floats(0.0, 1.0, allow_nan=False, width=32)


def _ssim_constant(a: float, b: float, cfg: SSIMConfig = DEFAULT_SSIM) -> float:
    # constant patches: zero variance and covariance, only the luminance term survives
    return (2 * a * b + cfg.c1) * cfg.c2 / ((a * a + b * b + cfg.c1) * cfg.c2)


class TestSSIM:
    def test_identity_is_one(self, rng):
        x = rng.random((40, 40))
        np.testing.assert_allclose(ssim_map(x, x), 1.0, atol=1e-6)

    def test_constant_images_closed_form(self):
        a = np.full((32, 32), 0.2)
        b = np.full((32, 32), 0.8)
        expected = _ssim_constant(0.2, 0.8)
        np.testing.assert_allclose(ssim_map(a, b), expected, atol=1e-6)
        assert expected == pytest.approx(0.3201 / 0.6801, abs=1e-12)

    def test_inverted_binary_patch_negative(self, rng):
        a = (rng.random((11, 11)) > 0.5).astype(float)
        assert ssim_map(a, 1 - a).mean() < 0

    def test_matches_scipy_gaussian_filter(self, rng):
        a, b = rng.random((24, 30)), rng.random((24, 30))
        np.testing.assert_allclose(ssim_map(a, b), ssim_gaussian_filter(a, b), atol=1e-10)

    def test_blur_matrix_rows_sum_to_one(self):
        for n in (1, 3, 4, 11, 40):
            np.testing.assert_allclose(blur_matrix(n, 11, 1.5).sum(axis=1), 1.0, atol=1e-12)

    def test_color_is_channel_mean(self, rng):
        a, b = rng.random((32, 32, 3)), rng.random((32, 32, 3))
        expected = np.mean([ssim_map(a[..., c], b[..., c]) for c in range(3)], axis=0)
        np.testing.assert_allclose(ssim_map(a, b), expected, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            ssim_map(np.zeros((4, 4)), np.zeros((4, 5)))

    @pytest.mark.parametrize("kwargs", [dict(window_size=4), dict(window_size=1), dict(k1=0.0), dict(k2=-1.0)])
    def test_config_invariants(self, kwargs):
        with pytest.raises(ValueError):
            SSIMConfig(**kwargs)

    @given(arrays(np.float64, (6, 7), elements=unit), arrays(np.float64, (6, 7), elements=unit))
    def test_symmetric_and_bounded(self, a, b):
        s = ssim_map(a, b)
        np.testing.assert_allclose(s, ssim_map(b, a), atol=1e-6)
        assert np.all(s <= 1 + 1e-9) and np.all(s >= -1 - 1e-9)

    @given(arrays(np.float64, (5, 9), elements=unit))
    def test_self_similarity(self, x):
        np.testing.assert_allclose(ssim_map(x, x), 1.0, atol=1e-6)


class TestGrayscaleAndClamp:
    def test_black_white(self):
        assert np.all(to_grayscale(np.zeros((32, 32, 3))) == 0)
        np.testing.assert_allclose(to_grayscale(np.ones((32, 32, 3))), 1.0, atol=1e-6)

    def test_pure_red(self):
        img = np.zeros((32, 32, 3))
        img[..., 0] = 1
        np.testing.assert_allclose(to_grayscale(img), LUMA_WEIGHTS[0], atol=1e-7)
        assert LUMA_WEIGHTS[0] == 0.299

    @pytest.mark.parametrize("x,y", [(0.5, 0.5), (-0.5, 0.0), (1.7, 1.0)])
    def test_clamp_examples(self, x, y):
        assert clamp01(np.array(x)) == y

    def test_clamp_rejects_nonfinite(self):
        with pytest.raises(InvalidInputError):
            clamp01(np.array([0.1, np.nan]))

    @given(arrays(np.float64, 10, elements=st.floats(-5, 5)))
    def test_clamp_idempotent(self, x):
        once = clamp01(x)
        np.testing.assert_array_equal(clamp01(once), once)
        assert once.min() >= 0 and once.max() <= 1


class TestValidators:
    @given(st.floats(allow_nan=True, allow_infinity=True).filter(lambda v: not 0 <= v <= 1))
    def test_edge_map_rejects_out_of_range(self, v):
        e = np.ones((4, 4))
        e[1, 2] = v
        with pytest.raises(InvalidInputError):
            as_edge_map(e)

    @given(st.integers(2, 255))
    def test_region_mask_rejects_nonbinary(self, v):
        m = np.zeros((4, 4), np.int64)
        m[0, 0] = v
        with pytest.raises(InvalidInputError):
            as_region_mask(m)

    def test_region_mask_empty_only_when_allowed(self):
        assert as_region_mask(np.zeros((3, 3))).sum() == 0
        with pytest.raises(InvalidInputError):
            as_region_mask(np.zeros((3, 3)), allow_empty=False)

    def test_image_min_side(self):
        with pytest.raises(InvalidInputError):
            as_image(np.zeros((31, 40, 3)))
        as_image(np.zeros((32, 32, 3)))


class TestPNG:
    def test_gray_round_trip_is_round_255(self, tmp_path, rng):
        x = rng.random((32, 32))
        write_gray(tmp_path / "e.png", x)
        np.testing.assert_array_equal(np.round(read_gray(tmp_path / "e.png") * 255), np.round(x * 255))

    def test_image_round_trip(self, tmp_path, rng):
        x = rng.random((32, 40, 3))
        write_image(tmp_path / "i.png", x)
        back = read_image(tmp_path / "i.png")
        assert back.shape == (32, 40, 3)
        assert np.abs(back - x).max() <= 0.5 / 255 + 1e-6
