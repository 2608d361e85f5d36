import sys
import os

sys.path.append(os.path.join(os.path.dirname(__file__), os.pardir))

import numpy as np
import pytest

from vidmask.custom_exception import BoxOutOfBoundsError, ConfigError, ShapeError, SpecMismatchError
from vidmask.mask_builder import (
    BBox,
    FrameKind,
    GridSpec,
    Heatmap,
    MaskSchedule,
    RegionMask,
    accumulate_heatmap,
    build_frame_mask,
    build_static_mask,
    combined_mask,
    dynamic_mask,
    pad_frame,
    region_scores,
    schedule_frame,
    static_mask,
)


def random_box(rng, height, width):
    x1 = int(rng.integers(0, width))
    y1 = int(rng.integers(0, height))
    return BBox(x1, y1, int(rng.integers(x1 + 1, width + 1)), int(rng.integers(y1 + 1, height + 1)))


def test_single_box_heatmap():
    spec = GridSpec((4, 4), region_size=2)
    h = accumulate_heatmap([(0, [BBox(0, 0, 2, 2)])], spec)
    expected = np.zeros((4, 4), dtype=np.int64)
    expected[:2, :2] = 1
    assert np.array_equal(h.values, expected)


def test_identical_boxes_add_up():
    spec = GridSpec((4, 4), region_size=2)
    h = accumulate_heatmap([(0, [BBox(0, 0, 2, 2)]), (1, [BBox(0, 0, 2, 2)])], spec)
    assert h.values[:2, :2].tolist() == [[2, 2], [2, 2]]
    assert h.values.sum() == 8


def test_heatmap_matches_per_pixel_counting():
    """
    Each pixel's count equals the number of boxes covering it, checked by looping over every pixel and box.
    """
    rng = np.random.default_rng(7)
    for case in range(100):
        height, width = 16 * int(rng.integers(1, 4)), 16 * int(rng.integers(1, 4))
        spec = GridSpec((height, width), 16)
        boxes = [random_box(rng, height, width) for _ in range(int(rng.integers(0, 20)))]
        frames = [(i, boxes[i::3]) for i in range(3)]
        h = accumulate_heatmap(frames, spec)
        oracle = np.zeros((height, width), dtype=np.int64)
        for y in range(height):
            for x in range(width):
                oracle[y, x] = sum(b.x1 <= x < b.x2 and b.y1 <= y < b.y2 for b in boxes)
        assert np.array_equal(h.values, oracle), f"case {case}"


def test_heatmap_rejects_out_of_bounds_box_with_index():
    spec = GridSpec((32, 32), 16)
    with pytest.raises(BoxOutOfBoundsError) as e:
        accumulate_heatmap([(0, [BBox(0, 0, 4, 4)]), (1, [BBox(1, 1, 2, 2), BBox(30, 0, 33, 4)])], spec)
    assert e.value.index == 2


def test_heatmap_rejects_empty_box():
    spec = GridSpec((32, 32), 16)
    with pytest.raises(BoxOutOfBoundsError):
        accumulate_heatmap([(0, [BBox(5, 5, 5, 9)])], spec)


def test_region_scores_uniform_field():
    spec = GridSpec((32, 32), 16)
    scores = region_scores(Heatmap(np.ones((32, 32), dtype=np.int64)), spec)
    assert scores.shape == (2, 2)
    assert np.all(scores == 256)


def test_region_scores_zero_field():
    spec = GridSpec((32, 48), 16)
    assert np.all(region_scores(Heatmap(np.zeros((32, 48), dtype=np.int64)), spec) == 0)


def test_region_scores_match_nested_loops():
    rng = np.random.default_rng(3)
    spec = GridSpec((48, 64), 16)
    values = rng.integers(0, 10, size=(48, 64))
    scores = region_scores(Heatmap(values), spec)
    for r in range(spec.rows):
        for c in range(spec.cols):
            assert scores[r, c] == values[r * 16:(r + 1) * 16, c * 16:(c + 1) * 16].sum()


def test_region_scores_shape_mismatch():
    with pytest.raises(ShapeError):
        region_scores(Heatmap(np.zeros((16, 16))), GridSpec((32, 32), 16))


def test_static_mask_cardinality_reference_grid():
    spec = GridSpec((672, 672), 16)
    mask = static_mask(np.random.default_rng(0).random((42, 42)), 0.3, spec)
    assert spec.num_tokens == 1764
    assert mask.keep_count == 529


def test_static_mask_tie_break_prefers_smaller_index():
    spec = GridSpec((32, 32), 16)
    mask = static_mask(np.ones((2, 2)), 0.5, spec)
    assert mask.grid.tolist() == [[True, True], [False, False]]


def test_static_mask_matches_sort_oracle():
    rng = np.random.default_rng(11)
    for _ in range(50):
        rows, cols = int(rng.integers(1, 8)), int(rng.integers(1, 8))
        spec = GridSpec((rows * 16, cols * 16), 16)
        scores = rng.integers(0, 5, size=(rows, cols)).astype(float)
        k_s = float(rng.random())
        k = int(np.floor(k_s * rows * cols))
        ranked = sorted(range(rows * cols), key=lambda i: (-scores.ravel()[i], i))
        mask = static_mask(scores, k_s, spec)
        assert mask.keep_count == k
        assert sorted(mask.locations().tolist()) == sorted(ranked[:k])


def test_static_mask_extremes():
    spec = GridSpec((64, 64), 16)
    scores = np.arange(16).reshape(4, 4)
    assert static_mask(scores, 0.0, spec).keep_count == 0
    assert static_mask(scores, 1.0, spec).keep_count == 16


def test_static_mask_rejects_bad_rate():
    with pytest.raises(ConfigError):
        static_mask(np.ones((2, 2)), 1.5, GridSpec((32, 32), 16))


def test_dynamic_mask_crosses_region_boundary():
    spec = GridSpec((672, 672), 16)
    mask = dynamic_mask([BBox(0, 0, 17, 17)], spec)
    assert set(mask.locations().tolist()) == {0, 1, 42, 43}


def test_dynamic_mask_empty_boxes():
    spec = GridSpec((64, 64), 16)
    assert dynamic_mask([], spec).keep_count == 0


def test_dynamic_mask_matches_overlap_oracle():
    rng = np.random.default_rng(5)
    spec = GridSpec((96, 128), 16)
    for _ in range(50):
        boxes = [random_box(rng, 96, 128) for _ in range(int(rng.integers(0, 5)))]
        mask = dynamic_mask(boxes, spec)
        for r in range(spec.rows):
            for c in range(spec.cols):
                region = spec.region_box(r * spec.cols + c)
                overlaps = any(
                    b.x1 < region.x2 and region.x1 < b.x2 and b.y1 < region.y2 and region.y1 < b.y2 for b in boxes
                )
                assert mask.grid[r, c] == overlaps


def test_dynamic_mask_dilation_is_chebyshev():
    spec = GridSpec((112, 112), 16)
    mask = dynamic_mask([BBox(48, 48, 64, 64)], spec, dilation=2)
    rows, cols = np.nonzero(mask.grid)
    assert mask.keep_count == 25
    assert rows.min() == 1 and rows.max() == 5 and cols.min() == 1 and cols.max() == 5


def test_dynamic_mask_of_union_is_union_of_masks():
    rng = np.random.default_rng(9)
    spec = GridSpec((128, 128), 16)
    for dilation in (0, 1, 2):
        a = [random_box(rng, 128, 128) for _ in range(3)]
        b = [random_box(rng, 128, 128) for _ in range(2)]
        assert dynamic_mask(a + b, spec, dilation) == dynamic_mask(a, spec, dilation) | dynamic_mask(b, spec, dilation)


def test_combined_mask_disjoint_keep_rates_add():
    spec = GridSpec((320, 320), 16)
    static = RegionMask.from_locations(range(120), spec)
    dynamic = RegionMask.from_locations(range(380, 400), spec)
    assert static.keep_rate == pytest.approx(0.30)
    assert dynamic.keep_rate == pytest.approx(0.05)
    assert combined_mask(static, dynamic).keep_rate == pytest.approx(0.35)


def test_combined_mask_union_properties():
    rng = np.random.default_rng(1)
    spec = GridSpec((64, 96), 16)
    for _ in range(30):
        a = RegionMask(rng.random((4, 6)) < 0.4, spec)
        b = RegionMask(rng.random((4, 6)) < 0.4, spec)
        union = combined_mask(a, b)
        assert np.all(union.grid >= a.grid) and np.all(union.grid >= b.grid)
        assert union.keep_count == len(set(a.locations().tolist()) | set(b.locations().tolist()))
        assert union == combined_mask(b, a)
        assert combined_mask(union, union) == union
    assert combined_mask(a, RegionMask.empty(spec)) == a


def test_combined_mask_spec_mismatch():
    with pytest.raises(SpecMismatchError):
        combined_mask(RegionMask.empty(GridSpec((32, 32), 16)), RegionMask.empty(GridSpec((64, 32), 16)))


def test_schedule_frame():
    sched = MaskSchedule(period=8, static_keep_rate=0.3)
    kinds = [schedule_frame(t, sched) for t in range(17)]
    assert [t for t, k in enumerate(kinds) if k is FrameKind.FULL] == [0, 8, 16]
    assert all(schedule_frame(t, MaskSchedule(1, 0.3)) is FrameKind.FULL for t in range(10))
    assert schedule_frame(15, MaskSchedule(16, 0.3)) is FrameKind.MASKED
    assert schedule_frame(16, MaskSchedule(16, 0.3)) is FrameKind.FULL


@pytest.mark.parametrize("kwargs", [{"period": 0, "static_keep_rate": 0.3}, {"period": 4, "static_keep_rate": -0.1}, {"period": 4, "static_keep_rate": 0.3, "dilation": -1}])
def test_schedule_validation(kwargs):
    with pytest.raises(ConfigError):
        MaskSchedule(**kwargs)


def test_grid_requires_padded_frame():
    with pytest.raises(ConfigError):
        GridSpec((100, 128), 16)
    assert GridSpec.padded((100, 120), 16).frame_size == (112, 128)


def test_pad_frame_bottom_right():
    frame = np.full((20, 30, 3), 7, dtype=np.uint8)
    padded = pad_frame(frame, 16)
    assert padded.shape == (32, 32, 3)
    assert np.all(padded[:20, :30] == 7)
    assert np.all(padded[20:] == 0) and np.all(padded[:, 30:] == 0)


def test_build_static_and_frame_mask():
    spec = GridSpec((64, 64), 16)
    annotations = [(0, [BBox(0, 0, 16, 16)]), (1, [BBox(0, 0, 32, 16)])]
    static = build_static_mask(annotations, spec, 2 / 16)
    assert static.locations().tolist() == [0, 1]
    mask = build_frame_mask(static, [BBox(48, 48, 64, 64)], MaskSchedule(4, 2 / 16))
    assert mask.locations().tolist() == [0, 1, 15]
