import math

import numpy as np
import pytest
from PIL import Image
from scipy.ndimage import median_filter

from parkourpy.errors import ConfigurationError, InputError
from parkourpy.perception import (
    BasePose,
    CameraExtrinsics,
    DepthImage,
    DepthNoise,
    ScandotLayout,
    downsample_depth,
    dump_depth_png,
    preprocess_real_depth,
    render_depth,
    sample_scandots,
    sample_scandots_batch,
    simulate_depth_noise,
)
from parkourpy.terrain import HeightField, height_at

NEAR, FAR = 0.2, 3.0
SMALL = (24, 32)
QUIET = DepthNoise(pixel_std=0.0, frame_std=0.0, max_artifacts=0)


def test_scandots_flat_ground(flat_field):
    grid = sample_scandots(flat_field, BasePose((1.0, 1.0, 1.0)))
    assert grid.values.shape == (11, 19)
    assert grid.flatten().size == 209
    assert np.all(grid.values == -1.0)


def test_scandots_split_at_step():
    heights = np.zeros((120, 41))
    heights[28:] = 0.42
    field = HeightField(heights, 0.05)
    values = sample_scandots(field, BasePose((1.0, 1.0, 0.8))).values
    levels = np.unique(np.round(values, 9))
    assert levels.size == 2
    assert levels[1] - levels[0] == pytest.approx(0.42)


def test_scandots_yaw_pi_on_symmetric_terrain():
    heights = np.fromfunction(lambda i, j: np.cos(0.3 * (i - 40)) + np.cos(0.3 * (j - 20)), (81, 41))
    field = HeightField(heights, 0.05)
    layout = ScandotLayout(lateral=5, forward=5, forward_start=-0.3)
    a = sample_scandots(field, BasePose((2.0, 1.0, 0.5), (0.0, 0.0, 0.0)), layout).values
    b = sample_scandots(field, BasePose((2.0, 1.0, 0.5), (0.0, 0.0, math.pi)), layout).values
    assert np.allclose(np.sort(a, axis=None), np.sort(b, axis=None))


def test_scandots_match_brute_force(rng):
    field = HeightField(rng.normal(scale=0.2, size=(100, 60)), 0.05)
    layout = ScandotLayout()
    offsets = layout.offsets()
    for _ in range(100):
        x, y, z, yaw = rng.uniform(0, 5), rng.uniform(0, 3), rng.uniform(0.5, 1.0), rng.uniform(-np.pi, np.pi)
        values = sample_scandots(field, BasePose((x, y, z), (0.0, 0.0, yaw)), layout).values
        expected = np.empty_like(values)
        for r in range(layout.lateral):
            for f in range(layout.forward):
                ox, oy = offsets[r, f]
                wx = x + math.cos(yaw) * ox - math.sin(yaw) * oy
                wy = y + math.sin(yaw) * ox + math.cos(yaw) * oy
                expected[r, f] = height_at(field, wx, wy) - z
        assert np.allclose(values, expected, rtol=0, atol=1e-12)


def test_scandots_batch_matches_single(rng, flat_field):
    positions = np.column_stack([rng.uniform(0, 3, 4), rng.uniform(0, 2, 4), np.full(4, 0.9)])
    yaws = rng.uniform(-1, 1, 4)
    batch = sample_scandots_batch(flat_field, positions, yaws)
    for k in range(4):
        single = sample_scandots(flat_field, BasePose(tuple(positions[k]), (0.0, 0.0, yaws[k])))
        assert np.array_equal(batch[k], single.values)


def test_render_straight_down(flat_field):
    cam = CameraExtrinsics((0.0, 0.0, 0.0), (0.0, math.pi / 2, 0.0), fov=60.0)
    img = render_depth(flat_field, cam, BasePose((2.0, 1.0, 1.0)), SMALL, NEAR, FAR)
    assert img.shape == SMALL
    assert np.allclose(img.pixels, 1.0, atol=1e-3)


def test_render_sky(flat_field):
    cam = CameraExtrinsics((0.0, 0.0, 0.0), (0.0, -0.5, 0.0), fov=60.0)
    img = render_depth(flat_field, cam, BasePose((2.0, 1.0, 0.5)), SMALL, NEAR, FAR)
    assert np.all(img.pixels == FAR)


def test_render_camera_below_terrain(flat_field):
    img = render_depth(flat_field, CameraExtrinsics(), BasePose((2.0, 1.0, -1.0)), SMALL, NEAR, FAR)
    assert np.all(img.pixels == NEAR)


def test_render_pitched_plane_closed_form(flat_field):
    pitch, fov, height = 0.88, 87.0, 0.5
    rows, cols = SMALL
    cam = CameraExtrinsics((0.0, 0.0, 0.0), (0.0, pitch, 0.0), fov)
    img = render_depth(flat_field, cam, BasePose((0.2, 1.0, height)), SMALL, NEAR, FAR)

    focal = 0.5 * cols / math.tan(0.5 * math.radians(fov))
    v = (np.arange(rows) + 0.5 - 0.5 * rows) / focal
    down = math.sin(pitch) + v * math.cos(pitch)
    with np.errstate(divide="ignore"):
        depth = np.where(down > 0, height / down, np.inf)
    expected = np.clip(np.where(depth > FAR, FAR, depth), NEAR, FAR)
    assert np.max(np.abs(img.pixels - expected[:, None])) < 1e-3


def test_render_translation_consistent(rng):
    field = HeightField(rng.normal(scale=0.1, size=(81, 61)), 0.05)
    pose = BasePose((0.5, 1.5, 0.7), (0.0, 0.0, 0.1))
    a = render_depth(field, CameraExtrinsics(), pose, SMALL, NEAR, FAR)
    moved = BasePose((3.5, -0.5, 0.7), (0.0, 0.0, 0.1))
    b = render_depth(field.translated(3.0, -2.0), CameraExtrinsics(), moved, SMALL, NEAR, FAR)
    assert np.allclose(a.pixels, b.pixels, atol=1e-4)


def test_render_deterministic(rng):
    field = HeightField(rng.normal(scale=0.1, size=(81, 61)), 0.05)
    pose = BasePose((0.5, 1.5, 0.7))
    a = render_depth(field, CameraExtrinsics(), pose, SMALL)
    b = render_depth(field, CameraExtrinsics(), pose, SMALL)
    assert np.array_equal(a.pixels, b.pixels)


def test_noise_identity_and_clipping():
    pixels = np.full((8, 8), 1.7)
    pixels[0, 0] = FAR + 1.0
    out = simulate_depth_noise(DepthImage(pixels, NEAR, FAR), seed=3, noise=QUIET)
    expected = pixels.copy()
    expected[0, 0] = FAR
    assert np.array_equal(out.pixels, expected)


def test_noise_deterministic_per_seed():
    img = DepthImage(np.full((48, 64), 1.0), NEAR, FAR)
    assert np.array_equal(simulate_depth_noise(img, 5).pixels, simulate_depth_noise(img, 5).pixels)
    assert not np.array_equal(simulate_depth_noise(img, 5).pixels, simulate_depth_noise(img, 6).pixels)


def test_noise_mean():
    img = DepthImage(np.full((100, 100), 2.0), NEAR, FAR)
    noise = DepthNoise(pixel_std=0.02, frame_std=0.0, max_artifacts=0)
    out = simulate_depth_noise(img, seed=0, noise=noise)
    assert abs(out.pixels.mean() - 2.0) <= 3 * 0.02 / 100


def test_pipelines_preserve_clip_range(rng):
    for k in range(1000):
        pixels = rng.uniform(NEAR, FAR, size=(12, 16))
        noisy = simulate_depth_noise(DepthImage(pixels, NEAR, FAR), seed=k)
        assert noisy.pixels.min() >= NEAR and noisy.pixels.max() <= FAR
        holes = pixels.copy()
        holes[rng.uniform(size=holes.shape) < 0.1] = 0.0
        clean = preprocess_real_depth(DepthImage(holes, NEAR, FAR), prev=noisy)
        assert clean.pixels.min() >= NEAR and clean.pixels.max() <= FAR


def test_preprocess_spatial_only(rng):
    pixels = rng.uniform(NEAR, FAR, size=(12, 16))
    out = preprocess_real_depth(DepthImage(pixels, NEAR, FAR), alpha=1.0)
    assert np.array_equal(out.pixels, median_filter(pixels, size=3, mode="nearest"))


def test_preprocess_fills_single_hole():
    pixels = np.full((5, 5), 1.5)
    pixels[2, 2] = 0.0
    out = preprocess_real_depth(DepthImage(pixels, NEAR, FAR))
    assert np.all(out.pixels == 1.5)


def test_preprocess_fills_empty_rows():
    pixels = np.full((4, 6), 0.0)
    pixels[1] = 2.0
    out = preprocess_real_depth(DepthImage(pixels, NEAR, FAR))
    assert np.all(out.pixels == 2.0)


def test_preprocess_temporal_blend():
    cur = DepthImage(np.full((6, 6), 2.0), NEAR, FAR)
    prev = DepthImage(np.full((6, 6), 1.0), NEAR, FAR)
    assert np.allclose(preprocess_real_depth(cur, prev, alpha=0.5).pixels, 1.5)


def test_preprocess_all_holes():
    empty = DepthImage(np.zeros((4, 4)), NEAR, FAR, timestamp=0.3)
    with pytest.raises(InputError, match="no valid pixels"):
        preprocess_real_depth(empty)
    prev = DepthImage(np.full((4, 4), 1.2), NEAR, FAR, timestamp=0.2)
    held = preprocess_real_depth(empty, prev)
    assert np.array_equal(held.pixels, prev.pixels)
    assert held.timestamp == 0.3


def test_downsample_constant_and_min():
    img = DepthImage(np.full((480, 640), 2.0), NEAR, FAR)
    assert np.all(downsample_depth(img).pixels == 2.0)
    pixels = np.full((480, 640), 2.0)
    pixels[123, 456] = 0.5
    out = downsample_depth(DepthImage(pixels, NEAR, FAR)).pixels
    assert out.shape == (48, 64)
    assert out[12, 45] == 0.5
    assert np.count_nonzero(out == 0.5) == 1


def test_downsample_matches_brute_force(rng):
    pixels = rng.uniform(NEAR, FAR, size=(480, 640))
    out = downsample_depth(DepthImage(pixels, NEAR, FAR)).pixels
    for r in range(48):
        for c in range(64):
            assert out[r, c] == pixels[10 * r : 10 * r + 10, 10 * c : 10 * c + 10].min()


def test_downsample_not_divisible():
    with pytest.raises(ConfigurationError, match="not a multiple"):
        downsample_depth(DepthImage(np.ones((50, 64)), NEAR, FAR))


def test_dump_depth_png(tmp_path):
    path = tmp_path / "depth.png"
    dump_depth_png(path, DepthImage(np.full((4, 6), 1.234), NEAR, FAR))
    with Image.open(path) as image:
        assert image.size == (6, 4)
        assert np.all(np.asarray(image) == 1234)
