import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

import oracles
from welane.demo import bundled_scene
from welane.errors import ConfigError
from welane.preprocess import (EnhanceConfig, Exposure, ExposureReport, adaptive_gamma, analyze_histogram,
                               clahe, clahe_lut, enhance, gamma_lut, guided_filter, luminance)


def test_histogram_all_zero():
    rep = analyze_histogram(np.zeros((4, 4), dtype=np.uint8))
    assert rep.mean_luminance == 0.0
    assert rep.underexposed_fraction == 1.0
    assert rep.flag is Exposure.UNDER


def test_histogram_all_white():
    rep = analyze_histogram(np.full((4, 4), 255, dtype=np.uint8))
    assert rep.mean_luminance == 1.0
    assert rep.flag is Exposure.OVER


def test_histogram_half_and_half():
    img = np.zeros((4, 4), dtype=np.uint8)
    img[:2] = 255
    rep = analyze_histogram(img)
    # Counted directly: 8 dark pixels, 8 bright ones.
    assert rep.mean_luminance == pytest.approx(8 * 255 / (16 * 255))
    assert rep.underexposed_fraction == 8 / 16
    assert rep.overexposed_fraction == 8 / 16
    assert rep.flag is Exposure.NORMAL


def test_histogram_colour_uses_luma_weights():
    img = np.zeros((1, 1, 3), dtype=np.uint8)
    img[..., 1] = 200
    assert analyze_histogram(img).mean_luminance == pytest.approx(oracles.half_up(0.587 * 200) / 255)


def test_gamma_identity_at_target(rng):
    img = rng.integers(0, 256, size=(8, 8), dtype=np.uint8)
    rep = ExposureReport(0.5, 0.0, 0.0, Exposure.UNDER)
    assert np.array_equal(adaptive_gamma(img, rep), img)


def test_gamma_formula_example():
    rep = ExposureReport(0.25, 0.0, 0.0, Exposure.UNDER)
    g = math.log(0.5) / math.log(0.25)
    assert g == pytest.approx(0.5)
    out = adaptive_gamma(np.array([[64]], dtype=np.uint8), rep)
    assert out[0, 0] == oracles.half_up(255 * (64 / 255) ** 0.5) == 128


def test_gamma_normal_flag_is_byte_identical(rng):
    img = rng.integers(0, 256, size=(5, 7, 3), dtype=np.uint8)
    rep = ExposureReport(0.1, 0.0, 0.0, Exposure.NORMAL)
    assert adaptive_gamma(img, rep).tobytes() == img.tobytes()


def test_gamma_white_image_does_not_divide_by_zero():
    img = np.full((3, 3), 255, dtype=np.uint8)
    out = adaptive_gamma(img, analyze_histogram(img))
    assert out.dtype == np.uint8


@settings(max_examples=50, deadline=None)
@given(st.floats(0.05, 20.0))
def test_gamma_preserves_order(g):
    assert np.all(np.diff(gamma_lut(g).astype(int)) >= 0)


def test_clahe_single_tile_unbounded_clip_is_global_he(rng):
    gray = rng.integers(0, 256, size=(24, 20), dtype=np.uint8)
    cfg = EnhanceConfig(clahe_tiles=1, clahe_clip=256.0)
    assert np.array_equal(clahe(gray, cfg), oracles.global_he(gray))


def test_clahe_two_tone_hand_oracle():
    img = np.zeros((8, 8), dtype=np.uint8)
    img[:, 4:] = 255
    # 64 pixels, uniform bin height 64/256 = 0.25, limit 2 * 0.25 = 0.5.
    # Both occupied bins hold 32 and shed 31.5 each; 63 / 256 goes back to every bin.
    # cdf at 0 = 0.5 + 63/256, mapped to 255 * cdf / 64; cdf at 255 = 64.
    low = oracles.half_up(255 * (0.5 + 63 / 256) / 64)
    assert low == 3
    out = clahe(img, EnhanceConfig(clahe_tiles=1, clahe_clip=2.0))
    assert np.all(out[:, :4] == low)
    assert np.all(out[:, 4:] == 255)


def test_clahe_small_image_rejected():
    with pytest.raises(ConfigError):
        clahe(np.zeros((4, 16), dtype=np.uint8), EnhanceConfig(clahe_tiles=8))


def test_clahe_colour_keeps_shape(rng):
    img = rng.integers(0, 256, size=(32, 40, 3), dtype=np.uint8)
    out = clahe(img)
    assert out.shape == img.shape and out.dtype == np.uint8


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.uint8, st.tuples(st.integers(1, 12), st.integers(1, 12))), st.floats(1.0, 300.0))
def test_clahe_tile_transfer_is_monotone(tile, clip):
    lut = clahe_lut(tile, clip)
    assert np.all(np.diff(lut) >= -1e-9)
    assert lut[-1] == pytest.approx(255.0)


def test_clahe_output_range_and_single_tile_monotone(rng):
    img = rng.integers(0, 256, size=(40, 40), dtype=np.uint8)
    out = clahe(img, EnhanceConfig(clahe_tiles=4))
    assert out.min() >= 0 and out.max() <= 255
    grad = np.tile(np.arange(256, dtype=np.uint8), (4, 1))
    assert np.all(np.diff(clahe(grad, EnhanceConfig(clahe_tiles=1)).astype(int), axis=1) >= 0)


def test_guided_constant_image():
    img = np.full((12, 12), 93, dtype=np.uint8)
    assert np.array_equal(guided_filter(img, img), img)


def test_guided_small_epsilon_is_identity(rng):
    img = rng.integers(0, 256, size=(20, 20), dtype=np.uint8)
    out = guided_filter(img, img, EnhanceConfig(guided_radius=2, guided_epsilon=1e-12))
    assert np.abs(out.astype(int) - img.astype(int)).max() <= 1


def test_guided_matches_sliding_window_oracle(rng):
    img = rng.integers(0, 256, size=(16, 16), dtype=np.uint8)
    guide = rng.integers(0, 256, size=(16, 16), dtype=np.uint8)
    cfg = EnhanceConfig(guided_radius=2, guided_epsilon=1e-2)
    ref = oracles.guided(img / 255.0, guide / 255.0, 2, 1e-2)
    assert np.abs(guided_filter(img, guide, cfg).astype(int) - ref).max() <= 1


def test_guided_dim_mismatch():
    with pytest.raises(ConfigError):
        guided_filter(np.zeros((4, 4), np.uint8), np.zeros((4, 5), np.uint8))


def test_guided_twice_is_bounded(rng):
    cfg = EnhanceConfig(guided_radius=3, guided_epsilon=1e-3)
    for _ in range(5):
        img = rng.integers(0, 256, size=(24, 24), dtype=np.uint8)
        guide = rng.integers(0, 256, size=(24, 24), dtype=np.uint8)
        once = guided_filter(img, guide, cfg)
        twice = guided_filter(once, guide, cfg)
        dev1 = np.abs(once.astype(int) - guide).max()
        dev2 = np.abs(twice.astype(int) - guide).max()
        assert dev2 <= dev1 + 1


def test_enhance_matches_stagewise_composition(rng):
    img = (rng.integers(0, 60, size=(32, 32))).astype(np.uint8)
    cfg = EnhanceConfig(clahe_tiles=4, guided_radius=2)
    rep = analyze_histogram(img, cfg)
    g = adaptive_gamma(img, rep, cfg)
    expected = guided_filter(clahe(g, cfg), g, cfg)
    assert np.array_equal(enhance(img, cfg), expected)


def test_enhance_normal_exposure_skips_gamma(rng):
    img = rng.integers(60, 200, size=(32, 32, 3), dtype=np.uint8)
    assert analyze_histogram(img).flag is Exposure.NORMAL
    assert np.array_equal(enhance(img), guided_filter(clahe(img), img))


def test_dark_fixture_gets_brighter():
    img, _ = bundled_scene()
    assert analyze_histogram(img).flag is Exposure.UNDER
    assert luminance(enhance(img)).mean() > luminance(img).mean()


def test_enhance_deterministic(rng):
    img = rng.integers(0, 256, size=(30, 30, 3), dtype=np.uint8)
    assert enhance(img).tobytes() == enhance(img.copy()).tobytes()


def test_config_validation():
    for kw in ({"clahe_tiles": 0}, {"clahe_clip": 0.5}, {"guided_radius": 0}, {"guided_epsilon": 0.0},
               {"under_thresh": 0.7, "over_thresh": 0.6}):
        with pytest.raises(ConfigError):
            EnhanceConfig(**kw)
