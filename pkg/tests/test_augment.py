import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dcen import augment as A
from dcen.augment import (AugmentationSpec, AugOp, TABLE2_ROWS, apply_pipeline, color_jitter,
                          color_ops, crop_resize, default_spec, gaussian_blur, gaussian_kernel1d,
                          horizontal_flip, patch_swap, preset, random_resized_crop, rotate,
                          sample_crop_box, to_gray, two_views)

imgs = arrays(np.float64, st.tuples(st.integers(4, 12), st.integers(4, 12), st.just(3)),
              elements=st.floats(0, 1))


def _img(seed=0, size=32):
    return np.random.default_rng(seed).random((size, size, 3))


# --- crop -------------------------------------------------------------------

def test_full_area_crop_is_identity():
    img = _img()
    out = random_resized_crop(img, (1.0, 1.0), 32, np.random.default_rng(0))
    assert np.max(np.abs(out - img)) < 1e-6


@pytest.mark.parametrize("seed", range(20))
def test_crop_output_shape(seed):
    out = random_resized_crop(_img(seed), (0.2, 1.0), 32, np.random.default_rng(seed))
    assert out.shape == (32, 32, 3)


@pytest.mark.parametrize("seed", range(50))
def test_crop_area_in_range(seed):
    top, left, h, w = sample_crop_box(32, 32, (0.2, 1.0), np.random.default_rng(seed))
    assert 0.2 - 1e-9 <= h * w / 1024 <= 1.0 + 1e-9
    assert top >= 0 and left >= 0 and top + h <= 32 + 1e-9 and left + w <= 32 + 1e-9


def test_crop_is_reproducible():
    a = sample_crop_box(32, 32, (0.2, 1.0), np.random.default_rng(5))
    b = sample_crop_box(32, 32, (0.2, 1.0), np.random.default_rng(5))
    assert a == b


def test_crop_rejects_bad_ranges():
    with pytest.raises(ValueError):
        sample_crop_box(32, 32, (0.6, 0.4), np.random.default_rng(0))
    with pytest.raises(ValueError, match="1 pixel"):
        sample_crop_box(4, 4, (0.01, 0.02), np.random.default_rng(0))


# --- flip -------------------------------------------------------------------

@settings(max_examples=30)
@given(imgs)
def test_flip_is_an_involution(img):
    assert np.array_equal(horizontal_flip(horizontal_flip(img)), img)


def test_flip_half_white_image():
    img = np.zeros((4, 6, 3))
    img[:, :3] = 1.0
    out = horizontal_flip(img)
    assert np.all(out[:, 3:] == 1.0) and np.all(out[:, :3] == 0.0)


def test_flip_leaves_symmetric_image():
    row = np.array([0.1, 0.5, 0.9, 0.9, 0.5, 0.1])
    img = np.broadcast_to(row[None, :, None], (5, 6, 3)).copy()
    assert np.array_equal(horizontal_flip(img), img)


# --- blur -------------------------------------------------------------------

def test_blur_of_constant_image():
    img = np.full((16, 16, 3), 0.37)
    assert np.max(np.abs(gaussian_blur(img, 1.3) - img)) < 1e-6


def test_blur_conserves_mass_of_delta():
    img = np.zeros((15, 15, 3))
    img[7, 7] = 1.0
    assert abs(gaussian_blur(img, 0.1).sum() - 3.0) < 1e-3


def test_blur_impulse_center_matches_separable_kernel():
    img = np.zeros((21, 21, 1))
    img[10, 10] = 1.0
    k = gaussian_kernel1d(1.0)
    assert len(k) == 2 * math.ceil(3.0) + 1
    oracle = np.outer(k, k)
    out = gaussian_blur(img, 1.0)[..., 0]
    assert out[10, 10] == pytest.approx(oracle[3, 3], abs=1e-12)
    assert np.allclose(out[7:14, 7:14], oracle, atol=1e-12)


def test_blur_preserves_mean_of_interior_dominated_image():
    img = np.zeros((40, 40, 3))
    img[10:30, 10:30] = np.random.default_rng(1).random((20, 20, 3))
    assert abs(gaussian_blur(img, 1.5).mean() - img.mean()) < 1e-3


def test_blur_rejects_non_positive_sigma():
    with pytest.raises(ValueError):
        gaussian_blur(_img(), 0.0)


# --- rotation ---------------------------------------------------------------

def test_rotation_by_zero_is_identity():
    img = _img()
    assert np.array_equal(rotate(img, 0.0), img)


def test_rotation_round_trip_on_interior():
    yy, xx = np.mgrid[0:32, 0:32] / 31.0
    img = np.stack([yy, xx, 0.5 * (yy + xx)], axis=2)  # smooth, so interpolation error is small
    back = rotate(rotate(img, 20.0), -20.0)
    interior = (slice(10, 22), slice(10, 22))
    assert np.mean(np.abs(back[interior] - img[interior])) < 2e-2


@pytest.mark.parametrize("angle", [-30.0, -12.5, 7.0, 30.0])
def test_rotation_leaves_disk_unchanged(angle):
    yy, xx = np.mgrid[0:32, 0:32]
    r = np.hypot(yy - 15.5, xx - 15.5)
    img = np.repeat(np.clip((10.0 - r) / 3.0, 0, 1)[..., None], 3, axis=2)  # disk, 3px anti-aliased rim
    out = rotate(img, angle)
    interior = (slice(6, 26), slice(6, 26))
    assert np.mean(np.abs(out[interior] - img[interior])) < 2e-2


def test_rotation_beyond_max_is_rejected():
    with pytest.raises(ValueError, match="exceeds"):
        rotate(_img(), 31.0, max_angle=30.0)


def test_rotation_shape_and_range():
    out = rotate(_img(), 25.0)
    assert out.shape == (32, 32, 3)
    assert out.min() >= 0.0 and out.max() <= 1.0


# --- patch swap -------------------------------------------------------------

def test_identity_permutation_is_identity():
    img = _img()
    assert np.array_equal(patch_swap(img, 4, perm=np.arange(16)), img)


@settings(max_examples=40, deadline=None)
@given(img=imgs, n=st.integers(2, 4), seed=st.integers(0, 10_000))
def test_swap_preserves_pixel_multiset(img, n, seed):
    if min(img.shape[:2]) < n:
        return
    out = patch_swap(img, n, np.random.default_rng(seed))
    assert np.array_equal(np.sort(out, axis=None), np.sort(img, axis=None))


def test_swap_preserves_tile_multiset():
    img = _img(3, size=30)
    out = patch_swap(img, 3, np.random.default_rng(0))

    def tiles(x):
        return sorted(x[i * 10:(i + 1) * 10, j * 10:(j + 1) * 10].tobytes() for i in range(3) for j in range(3))

    assert tiles(out) == tiles(img)


def test_swap_quadrants_pairwise():
    colors = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 0]], dtype=float)
    img = np.zeros((8, 8, 3))
    img[:4, :4], img[:4, 4:], img[4:, :4], img[4:, 4:] = colors
    out = patch_swap(img, 2, perm=[1, 0, 3, 2])
    assert np.all(out[:4, :4] == colors[1]) and np.all(out[:4, 4:] == colors[0])
    assert np.all(out[4:, :4] == colors[3]) and np.all(out[4:, 4:] == colors[2])


def test_swap_rejects_grid_below_two():
    with pytest.raises(ValueError):
        patch_swap(_img(), 1, np.random.default_rng(0))


def test_swap_leaves_border_of_non_divisible_image():
    img = _img(size=32)
    out = patch_swap(img, 3, np.random.default_rng(4))  # 30x30 centered region, 1px border
    assert np.array_equal(out[0], img[0]) and np.array_equal(out[:, -1], img[:, -1])


# --- color ------------------------------------------------------------------

def test_gray_channels_are_equal():
    g = to_gray(_img())
    assert np.array_equal(g[..., 0], g[..., 1]) and np.array_equal(g[..., 1], g[..., 2])


def test_gray_is_idempotent():
    g = to_gray(_img())
    assert np.max(np.abs(to_gray(g) - g)) < 1e-6


def test_zero_jitter_is_identity():
    img = _img()
    out = color_ops(img, "jitter", (0, 0, 0, 0), np.random.default_rng(0))
    assert np.max(np.abs(out - img)) < 1e-12
    assert np.max(np.abs(color_jitter(img, (1.0, 1.0, 1.0, 0.0)) - img)) < 1e-12


def test_hue_strength_above_one_is_rejected():
    with pytest.raises(ValueError, match="hue"):
        color_ops(_img(), "jitter", (0.4, 0.4, 0.4, 1.5), np.random.default_rng(0))


@pytest.mark.parametrize("version", ["v1", "v2", "v3"])
def test_jitter_presets_stay_in_range(version):
    out = color_ops(_img(), "jitter", version, np.random.default_rng(0))
    assert out.min() >= 0 and out.max() <= 1


def test_hsv_round_trip():
    img = _img(7)
    assert np.allclose(A._hsv_to_rgb(A._rgb_to_hsv(img)), img, atol=1e-12)


# --- spec and pipeline ------------------------------------------------------

def test_default_spec_is_the_retained_row():
    ops = {o.name: o for o in default_spec().ops}
    assert set(ops) == {"crop", "flip", "blur", "rotation", "swap"}
    assert ops["crop"].p == 1.0 and ops["flip"].p == 0.5 and ops["blur"].p == 0.5
    assert ops["rotation"].p == 0.5 and ops["rotation"].params["max_angle"] == 30.0
    assert ops["swap"].p == 0.2 and ops["swap"].params["grid_n"] == 3


def test_spec_rejects_bad_probability_and_name_and_order():
    with pytest.raises(ValueError):
        AugOp("flip", 1.5)
    with pytest.raises(ValueError):
        AugOp("sharpen", 0.5)
    with pytest.raises(ValueError, match="order"):
        AugmentationSpec(ops=(AugOp("flip", 0.5), AugOp("crop", 1.0)))


@pytest.mark.parametrize("name", sorted(TABLE2_ROWS))
def test_presets_round_trip_through_dicts(name):
    spec = preset(name)
    assert AugmentationSpec.from_dict(spec.to_dict()) == spec


def test_degenerate_pipeline_gives_identical_resized_views():
    spec = AugmentationSpec(ops=(AugOp("crop", 1.0, {"scale": [1.0, 1.0]}), AugOp("flip", 0.0),
                                 AugOp("blur", 0.0), AugOp("rotation", 0.0), AugOp("swap", 0.0)),
                            out_size=16)
    img = _img()
    v1, v2 = two_views(img, spec, np.random.default_rng(0))
    resized = crop_resize(img, (0.0, 0.0, 32.0, 32.0), 16)
    assert np.array_equal(v1, v2)
    assert np.array_equal(v1, resized)


def test_two_views_are_replayable():
    img = _img()
    a = two_views(img, default_spec(), np.random.default_rng(9))
    b = two_views(img, default_spec(), np.random.default_rng(9))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert a[0].shape == a[1].shape == (32, 32, 3)


@pytest.mark.parametrize("name", sorted(TABLE2_ROWS))
def test_every_row_maps_unit_range_to_unit_range(name):
    rng = np.random.default_rng(1)
    for _ in range(5):
        out = apply_pipeline(_img(int(rng.integers(100))), preset(name), rng)
        assert out.shape == (32, 32, 3)
        assert out.min() >= 0.0 and out.max() <= 1.0


def test_firing_rates_within_binomial_bounds():
    rng = np.random.default_rng(2024)
    img = _img(size=32)
    counts = {"flip": 0, "swap": 0}
    n = 1000
    for _ in range(n):
        fired: list[str] = []
        apply_pipeline(img, default_spec(), rng, fired=fired)
        for k in counts:
            counts[k] += k in fired
    assert abs(counts["flip"] / n - 0.5) <= 0.04
    assert abs(counts["swap"] / n - 0.2) <= 0.04
