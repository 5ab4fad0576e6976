import numpy as np
import pytest

from realgait.manifest import BoundingBox, VideoRecord
from realgait.silhouette import (CANVAS, CENTER_COLUMN, EmptyMaskError, GMMParams, InputVariant, SilhouetteError,
                                 SilhouetteFrame, SilhouetteSequence, compose_variant, crop, expand_box,
                                 extract_video, gmm_subtract, interpolate_boxes, median_column,
                                 normalize_silhouette, quantize, to_grayscale)
from realgait.synthetic import Walker, draw_walker, keyframes_from_boxes, pedestrian_video


def _keys():
    return [BoundingBox(100.0, 50.0, 20.0, 40.0, 0), BoundingBox(110.0, 60.0, 30.0, 40.0, 5)]


def test_interpolation_endpoints_and_midpoints():
    keys = _keys()
    assert interpolate_boxes(keys, 0).x_center == 100.0
    assert interpolate_boxes(keys, 5).x_center == 110.0
    b = interpolate_boxes(keys, 2)
    assert b.x_center == pytest.approx(104.0) and b.y_center == pytest.approx(54.0)
    assert b.width == pytest.approx(24.0) and b.frame_index == 2


def test_interpolation_outside_span():
    with pytest.raises(SilhouetteError, match="outside span"):
        interpolate_boxes(_keys(), 7)


def test_expand_box():
    b = expand_box(BoundingBox(0.0, 0.0, 40.0, 110.0))
    assert (b.width, b.height) == (pytest.approx(54.0), pytest.approx(121.0))


def test_crop_inside_and_padding(rng):
    img = rng.integers(0, 255, (100, 80), dtype=np.uint8)
    out = crop(img, BoundingBox(40.0, 50.0, 20.0, 30.0))
    np.testing.assert_array_equal(out, img[35:65, 30:50])
    # box top at y=-10
    out = crop(img, BoundingBox(40.0, 10.0, 20.0, 40.0))
    assert out.shape == (40, 20)
    assert not out[:10].any()
    np.testing.assert_array_equal(out[10:], img[0:30, 30:50])
    rgb = rng.integers(0, 255, (100, 80, 3), dtype=np.uint8)
    assert crop(rgb, BoundingBox(0.0, 0.0, 10.0, 10.0)).shape == (10, 10, 3)


def test_crop_outside_frame():
    with pytest.raises(SilhouetteError):
        crop(np.ones((50, 50), np.uint8), BoundingBox(200.0, 200.0, 10.0, 10.0))


def test_normalize_rectangle():
    mask = np.zeros((80, 60), np.uint8)
    mask[15:65, 20:40] = 1  # 50 tall, 20 wide
    grid = normalize_silhouette(mask).grid
    assert grid.shape == (CANVAS, CANVAS)
    rows = np.flatnonzero(grid.any(axis=1))
    cols = np.flatnonzero(grid.any(axis=0))
    assert (rows[0], rows[-1]) == (0, CANVAS - 1)
    assert len(cols) in (89, 90)
    # every occupied column is full height: still a rectangle
    assert grid[:, cols].all()
    assert abs(median_column(grid) - CENTER_COLUMN) <= 1


def test_normalize_is_idempotent():
    w = Walker()
    mask = np.zeros((120, 90), np.uint8)
    sub = draw_walker(w, 3, 100)
    mask[10:110, :90] = sub[:, 5:95]
    once = normalize_silhouette(mask).grid
    twice = normalize_silhouette(once).grid
    assert np.mean(once != twice) < 0.01


def test_normalize_empty_mask():
    with pytest.raises(EmptyMaskError):
        normalize_silhouette(np.zeros((30, 30), np.uint8))


def test_quantize_levels():
    q = quantize(np.array([10, 200]), 2)
    assert q[0] != q[1] and set(q.tolist()) == {64, 192}
    values = np.arange(256)
    np.testing.assert_array_equal(quantize(quantize(values, 8), 8), quantize(values, 8))
    assert len(np.unique(quantize(values, 16))) == 16


def test_grayscale_weights():
    px = np.array([[[255, 0, 0], [0, 255, 0], [0, 0, 255]]], np.uint8)
    np.testing.assert_allclose(to_grayscale(px)[0], [0.299 * 255, 0.587 * 255, 0.114 * 255])


def test_compose_variants(rng):
    color = rng.integers(0, 256, (12, 10, 3), dtype=np.uint8)
    mask = (rng.random((12, 10)) > 0.5).astype(np.uint8)
    m3 = mask[..., None] > 0
    np.testing.assert_array_equal(compose_variant(color, mask, InputVariant("binary", "subtracted")), mask)
    np.testing.assert_array_equal(compose_variant(color, mask, InputVariant("color", "color")), color)
    np.testing.assert_array_equal(compose_variant(color, mask, InputVariant("color", "subtracted")),
                                  np.where(m3, color, 0))
    np.testing.assert_array_equal(compose_variant(color, mask, InputVariant("binary", "color")),
                                  np.where(m3, 255, color))
    g = compose_variant(color, mask, InputVariant("grayscale_quantized", "subtracted", bins=4))
    assert not g[mask == 0].any()
    assert set(np.unique(g[mask > 0])) <= {32, 96, 160, 224}


def test_variant_validation():
    with pytest.raises(SilhouetteError):
        InputVariant("grayscale_quantized", "subtracted", bins=1)
    with pytest.raises(SilhouetteError):
        InputVariant("grayscale_quantized", "color", bins=4)
    with pytest.raises(SilhouetteError):
        InputVariant("sepia")
    assert InputVariant("color", "subtracted").channels == 3
    assert InputVariant().channels == 1


def test_static_video_has_no_foreground(rng):
    bg = rng.integers(0, 256, (60, 80, 3), dtype=np.uint8)
    frames = [np.clip(bg + rng.normal(0, 1.0, bg.shape), 0, 255).astype(np.uint8) for _ in range(80)]
    masks = gmm_subtract(frames, GMMParams())
    assert all(m.mean() < 0.01 for m in masks[30:])


def test_single_frame_and_bad_shapes():
    frame = np.zeros((10, 10, 3), np.uint8)
    assert len(gmm_subtract([frame])) == 1
    with pytest.raises(SilhouetteError):
        gmm_subtract([])
    with pytest.raises(SilhouetteError):
        gmm_subtract([frame, np.zeros((11, 10, 3), np.uint8)])


def test_sequence_invariants():
    g = np.zeros((4, 4), np.uint8)
    with pytest.raises(SilhouetteError):
        SilhouetteSequence([])
    with pytest.raises(SilhouetteError):
        SilhouetteSequence([SilhouetteFrame(g, 3, (0, 0)), SilhouetteFrame(g, 3, (0, 0))])


def test_extract_video_end_to_end():
    frames, boxes = pedestrian_video(Walker(), n_frames=30, seed=3)
    keys = keyframes_from_boxes(boxes)
    record = VideoRecord("A", 1, "v", (0, len(frames) - 1), keys)
    out = extract_video(frames, range(len(frames)), record)
    seq = out.sequence
    assert seq is not None and len(seq) + len(out.dropped) == len(boxes)
    assert [f.frame_index for f in seq.frames][0] >= keys[0].frame_index
    for f in seq.frames:
        assert f.grid.shape == (CANVAS, CANVAS) and set(np.unique(f.grid)) <= {0, 1}
        rows = np.flatnonzero(f.grid.any(axis=1))
        assert rows[0] == 0 and rows[-1] == CANVAS - 1
    # frames before the first keyframe only warm the background model
    assert min(f.frame_index for f in seq.frames) >= 20

    color = extract_video(frames, range(len(frames)), record, variant=InputVariant("color", "subtracted"))
    assert color.images[0].shape == (CANVAS, CANVAS, 3)
