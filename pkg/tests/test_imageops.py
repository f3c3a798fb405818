import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from crosspaint.imageops import (
    ARM_DILATION,
    GRIPPER_DILATION,
    MissingDepthError,
    adjust_luminance,
    composite_overlay,
    dilate_mask,
    fill_from_plate,
    inpaint_fast_marching,
    load_mask,
    save_mask,
    shift_mask,
)
from crosspaint.raster import FrameSet

masks = arrays(bool, (24, 24), elements=st.booleans())


def single_pixel(n=84, y=42, x=42):
    m = np.zeros((n, n), bool)
    m[y, x] = True
    return m


def square_extent(m):
    ys, xs = np.nonzero(m)
    return ys.max() - ys.min() + 1, xs.max() - xs.min() + 1


def test_dilate_empty():
    assert not dilate_mask(np.zeros((10, 10), bool), 20).any()


@pytest.mark.parametrize("iters,side", [(ARM_DILATION, 41), (GRIPPER_DILATION, 21)])
def test_dilate_single_pixel_square(iters, side):
    out = dilate_mask(single_pixel(), iters)
    assert square_extent(out) == (side, side)
    assert out.sum() == side * side


def test_dilate_clips_at_border():
    out = dilate_mask(single_pixel(y=0, x=0), 20)
    assert out.sum() == 21 * 21


def test_dilate_rejects_negative():
    with pytest.raises(ValueError):
        dilate_mask(single_pixel(), -1)


@settings(max_examples=100, deadline=None)
@given(masks, st.integers(0, 5))
def test_dilation_extensive(m, k):
    a, b = dilate_mask(m, k), dilate_mask(m, k + 1)
    assert np.all(a[m])
    assert np.all(b[a])


def test_shift_mask():
    s = shift_mask(single_pixel(10, 2, 3), 4, -1)
    assert s[1, 7] and s.sum() == 1
    assert not shift_mask(single_pixel(10, 5, 5), 20, 0).any()


def test_mask_png_round_trip(tmp_path):
    m = dilate_mask(single_pixel(20, 5, 5), 2)
    save_mask(m, tmp_path / "m.png")
    assert np.array_equal(load_mask(tmp_path / "m.png"), m)


def test_inpaint_no_holes_identity():
    img = np.random.default_rng(0).integers(0, 256, (20, 20, 3), dtype=np.uint8)
    assert np.array_equal(inpaint_fast_marching(img, np.zeros((20, 20), bool)), img)


def test_inpaint_constant_image():
    img = np.empty((84, 84, 3), np.uint8)
    img[:] = (37, 120, 201)
    hole = np.zeros((84, 84), bool)
    hole[30:40, 50:60] = True
    out = inpaint_fast_marching(img, hole, 3)
    assert np.abs(out.astype(int) - img).max() <= 1


def two_tone():
    img = np.zeros((84, 84, 3), np.uint8)
    img[:, 42:] = 255
    hole = np.zeros((84, 84), bool)
    hole[30:54, 30:54] = True
    return img, hole


def test_inpaint_two_tone_bounded_and_monotone():
    img, hole = two_tone()
    out = inpaint_fast_marching(img, hole, 3).astype(int)
    assert out.min() >= 0 and out.max() <= 255
    assert np.all(np.diff(out[30:54, 30:54, 0], axis=1) >= -5)


def test_inpaint_two_tone_matches_reference_telea():
    cv2 = pytest.importorskip("cv2")
    img, hole = two_tone()
    out = inpaint_fast_marching(img, hole, 3)
    ref = cv2.inpaint(img, hole.astype(np.uint8), 3, cv2.INPAINT_TELEA)
    assert np.abs(out.astype(int) - ref.astype(int)).max() <= 5


def test_inpaint_all_hole_fallback():
    img = np.zeros((8, 8, 3), np.uint8)
    out, flagged = inpaint_fast_marching(img, np.ones((8, 8), bool), return_flag=True)
    assert flagged and np.all(out == 128)


def test_inpaint_rejects_bad_args():
    img = np.zeros((8, 8, 3), np.uint8)
    with pytest.raises(ValueError):
        inpaint_fast_marching(img, np.zeros((8, 8), bool), 0)
    with pytest.raises(ValueError):
        inpaint_fast_marching(img, np.zeros((7, 8), bool))


@settings(max_examples=40, deadline=None)
@given(arrays(np.uint8, (16, 16, 3)), masks.map(lambda m: m[:16, :16]))
def test_inpaint_never_touches_known_pixels(img, hole):
    out = inpaint_fast_marching(img, hole, 3)
    assert np.array_equal(out[~hole], img[~hole])


def test_inpaint_deterministic():
    rng = np.random.default_rng(3)
    img = rng.integers(0, 256, (40, 40, 3), dtype=np.uint8)
    hole = rng.random((40, 40)) < 0.3
    a, b = inpaint_fast_marching(img, hole), inpaint_fast_marching(img, hole)
    assert a.tobytes() == b.tobytes()


def test_plate_fill():
    img = np.zeros((4, 4, 3), np.uint8)
    plate = np.full((4, 4, 3), 9, np.uint8)
    hole = single_pixel(4, 1, 2)
    out = fill_from_plate(img, hole, plate)
    assert out[1, 2, 0] == 9 and out.sum() == 27


def frames(depth_base, depth_layer, label=5):
    base = FrameSet(np.full((6, 6, 3), 10, np.uint8), np.full((6, 6), depth_base))
    seg = np.zeros((6, 6), np.int32)
    seg[2:4, 2:4] = label
    ldepth = np.where(seg > 0, depth_layer, np.inf)
    layer = FrameSet(np.repeat(np.where(seg[..., None] > 0, 200, 0), 3, axis=2).astype(np.uint8), ldepth, seg)
    return base, layer


def test_composite_layer_behind():
    base, layer = frames(1.0, 2.0)
    assert np.array_equal(composite_overlay(base, layer, True).rgb, base.rgb)


def test_composite_layer_in_front():
    base, layer = frames(2.0, 1.0)
    out = composite_overlay(base, layer, True)
    assert np.all(out.rgb[2:4, 2:4] == 200)
    assert np.all(out.rgb[0] == 10)


def test_composite_no_depth_draws_on_top():
    base, layer = frames(1.0, 2.0)
    out = composite_overlay(base, layer, False)
    assert np.all(out.rgb[2:4, 2:4] == 200)


def test_composite_errors():
    base, layer = frames(1.0, 2.0)
    with pytest.raises(MissingDepthError):
        composite_overlay(FrameSet(base.rgb), layer, True)
    with pytest.raises(ValueError):
        composite_overlay(FrameSet(np.zeros((5, 6, 3), np.uint8)), layer, False)


def test_composite_empty_layer_is_identity():
    base, layer = frames(1.0, 2.0, label=0)
    assert np.array_equal(composite_overlay(base, layer, False).rgb, base.rgb)


def test_luminance_examples():
    img = np.full((3, 3, 3), 250, np.uint8)
    mask = np.ones((3, 3), bool)
    assert np.array_equal(adjust_luminance(img, mask, 0), img)
    assert np.all(adjust_luminance(img, mask, 50) == 255)
    part = single_pixel(3, 1, 1)
    out = adjust_luminance(np.full((3, 3, 3), 100, np.uint8), part, -30)
    assert out[1, 1, 0] == 70 and out[0, 0, 0] == 100


@settings(max_examples=60, deadline=None)
@given(arrays(np.uint8, (8, 8, 3), elements=st.integers(50, 205)), arrays(bool, (8, 8)))
def test_luminance_round_trip_without_clamping(img, mask):
    assert np.array_equal(adjust_luminance(adjust_luminance(img, mask, 50), mask, -50), img)
