import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roadcotrain.augment import AugmentParams, augment, color_jitter, random_rotate, rotation_source, sample_augmentation
from roadcotrain.data import TwoViewExample
from roadcotrain.synthetic import synth_scene


@pytest.fixture
def ex():
    return synth_scene(2)


def test_zero_angle_identity(ex):
    out = random_rotate(ex, 0.0)
    assert out.camera.tobytes() == ex.camera.tobytes() and out.lidar.tobytes() == ex.lidar.tobytes()
    assert np.array_equal(out.label.classes, ex.label.classes)


def test_rotation_keeps_shape(ex):
    out = random_rotate(ex, 13.0)
    assert out.camera.shape == ex.camera.shape and out.label.shape == ex.label.shape


def test_rotation_corners_invalid_and_zero(ex):
    out = random_rotate(ex, 20.0)
    _, _, inside = rotation_source(*ex.size, 20.0)
    assert not inside.all()
    assert not out.label.valid[~inside].any()
    assert np.all(out.camera[:, ~inside] == 0) and np.all(out.lidar[:, ~inside] == 0)


def test_rotation_round_trip_labels(ex):
    h, w = ex.size
    there = random_rotate(ex, 10.0)
    back = random_rotate(there, -10.0)
    assert back.label.valid.sum() < ex.label.valid.sum()
    # every surviving label is the original label at the composed nearest-neighbour source
    ry1, rx1, _ = rotation_source(h, w, 10.0)
    ry2, rx2, _ = rotation_source(h, w, -10.0)
    src_r, src_c = ry1[ry2, rx2], rx1[ry2, rx2]
    v = back.label.valid
    assert np.array_equal(back.label.classes[v], ex.label.classes[src_r, src_c][v])
    # and the composed source is the pixel itself or a neighbour
    assert np.abs(src_r - np.arange(h)[:, None])[v].max() <= 1
    assert np.abs(src_c - np.arange(w)[None, :])[v].max() <= 1
    agree = (back.label.classes == ex.label.classes)[v].mean()
    assert agree > 0.95


def test_lidar_values_only_move(ex):
    out = random_rotate(ex, 7.0)
    originals = {tuple(p) for p in ex.lidar.reshape(3, -1).T}
    moved = {tuple(p) for p in out.lidar.reshape(3, -1).T}
    assert moved - {(0.0, 0.0, 0.0)} <= originals


def test_jitter_identity(ex):
    np.testing.assert_allclose(color_jitter(ex.camera, (1, 1, 1, 0)), ex.camera, atol=1e-9)


def test_jitter_hue_full_turn_identity(gen):
    img = gen.random((3, 5, 5))
    np.testing.assert_allclose(color_jitter(img, (1, 1, 1, 1.0)), img, atol=1e-9)


def test_jitter_zero_brightness(ex):
    assert np.all(color_jitter(ex.camera, (0, 1, 1, 0)) == 0)


def test_jitter_saturation_fixed_point_on_gray(gen):
    gray = np.repeat(gen.random((1, 6, 6)), 3, axis=0)
    np.testing.assert_allclose(color_jitter(gray, (1, 1, 0.3, 0)), gray, atol=1e-12)
    np.testing.assert_allclose(color_jitter(gray, (1, 1, 1.25, 0)), gray, atol=1e-12)


def test_contrast_zero_gives_mean_luminance(gen):
    img = gen.random((3, 4, 4))
    out = color_jitter(img, (1, 0, 1, 0))
    lum = np.tensordot([0.299, 0.587, 0.114], img, axes=(0, 0)).mean()
    np.testing.assert_allclose(out, lum, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 2), st.floats(0, 2), st.floats(0, 2), st.floats(-0.5, 0.5), st.integers(0, 1000))
def test_jitter_stays_in_unit_range(b, c, s, h, seed):
    img = np.random.default_rng(seed).random((3, 4, 5))
    out = color_jitter(img, (b, c, s, h))
    assert out.min() >= 0 and out.max() <= 1


def test_augment_reproducible_and_lidar_untouched_by_color(ex):
    p = AugmentParams()
    a = augment(ex, np.random.default_rng(1), p)
    b = augment(ex, np.random.default_rng(1), p)
    assert a.camera.tobytes() == b.camera.tobytes()
    angle, _ = sample_augmentation(np.random.default_rng(1), p)
    assert a.lidar.tobytes() == random_rotate(ex, angle).lidar.tobytes()
    assert np.array_equal(a.label.valid, random_rotate(ex, angle).label.valid)


def test_sampling_within_ranges():
    gen = np.random.default_rng(0)
    p = AugmentParams()
    for _ in range(200):
        angle, (b, c, s, h) = sample_augmentation(gen, p)
        assert -20 <= angle <= 20 and 0.8 <= b <= 1.25 and 0.8 <= c <= 1.25 and 0.8 <= s <= 1.25
        assert -0.05 <= h <= 0.05


def test_disabled_is_identity(ex):
    assert augment(ex, np.random.default_rng(0), AugmentParams(enabled=False)) is ex


def test_params_validation():
    with pytest.raises(ValueError):
        AugmentParams(rotation_range_deg=(5, -5))
    with pytest.raises(ValueError):
        AugmentParams(brightness=(-1, 1))
    assert AugmentParams.from_dict(AugmentParams().to_dict()) == AugmentParams()


def test_unlabeled_example_rotates():
    ex = TwoViewExample(np.zeros((3, 6, 6)), np.ones((3, 6, 6)), None, "s", 0, "UM")
    assert random_rotate(ex, 15.0).label is None
