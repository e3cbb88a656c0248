import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from annorefine.geometry import (
    ALL_VIEWS,
    Box,
    ImageDims,
    ScaleFactors,
    TransformKind,
    average_boxes,
    from_view,
    iou,
    merge_extents,
    to_view,
)

DIMS = ImageDims(100, 100)


# boxes on a 1/256 pixel grid are exactly representable, so flip arithmetic
# (subtractions of grid-aligned values) round-trips without rounding error
@st.composite
def grid_boxes(draw, width=100, height=100, grid=256):
    x0 = draw(st.integers(0, width * grid - 1))
    x1 = draw(st.integers(x0 + 1, width * grid))
    y0 = draw(st.integers(0, height * grid - 1))
    y1 = draw(st.integers(y0 + 1, height * grid))
    return Box(x0 / grid, y0 / grid, x1 / grid, y1 / grid)


def test_box_rejects_degenerate_and_nonfinite():
    with pytest.raises(ValueError):
        Box(0, 0, 0, 10)
    with pytest.raises(ValueError):
        Box(5, 5, 4, 10)
    with pytest.raises(ValueError):
        Box(0, 0, math.inf, 10)
    with pytest.raises(ValueError):
        Box(0, 0, math.nan, 10)


def test_iou_identical_boxes():
    b = Box(3, 4, 10, 12)
    assert iou(b, b) == 1.0


def test_iou_disjoint_boxes():
    assert iou(Box(0, 0, 10, 10), Box(20, 20, 30, 30)) == 0.0


def test_iou_half_overlap_example():
    a = Box(0, 0, 10, 10)
    b = Box(5, 0, 15, 10)
    assert iou(a, b) == pytest.approx(50 / 150, abs=1e-12)


def test_iou_edge_contact_is_zero():
    assert iou(Box(0, 0, 10, 10), Box(10, 0, 20, 10)) == 0.0


@given(grid_boxes(), grid_boxes())
def test_iou_symmetric_and_bounded(a, b):
    assert iou(a, b) == pytest.approx(iou(b, a), abs=1e-12)
    assert 0.0 <= iou(a, b) <= 1.0


def test_to_view_identity_unchanged():
    b = Box(10, 20, 40, 60)
    assert to_view(b, TransformKind.IDENTITY, DIMS) == b


def test_to_view_hflip_example():
    assert to_view(Box(10, 20, 40, 60), TransformKind.HFLIP, DIMS) == Box(60, 20, 90, 60)


def test_to_view_upscale_hflip_composition():
    # scale 1.5 first: (15, 30, 60, 90) in a 150x150 frame, then mirror x
    got = to_view(Box(10, 20, 40, 60), TransformKind.UPSCALE_HFLIP, DIMS)
    assert got == Box(90, 30, 135, 90)


def test_to_view_rejects_box_outside_image():
    with pytest.raises(ValueError):
        to_view(Box(50, 50, 120, 80), TransformKind.HFLIP, DIMS)


@given(grid_boxes())
def test_flips_are_exact_involutions(box):
    for kind in (TransformKind.HFLIP, TransformKind.VFLIP):
        assert to_view(to_view(box, kind, DIMS), kind, DIMS) == box
        assert from_view(to_view(box, kind, DIMS), kind, DIMS) == box


def test_from_view_identity_unchanged():
    b = Box(1.25, 2.5, 3.75, 4.5)
    assert from_view(b, TransformKind.IDENTITY, DIMS) == b


def test_scale_round_trip_1000_random_boxes():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        x0, y0 = rng.uniform(0, 90, size=2)
        w, h = rng.uniform(0.5, 9.9, size=2)
        box = Box(x0, y0, x0 + w, y0 + h)
        for kind in (TransformKind.DOWNSCALE, TransformKind.UPSCALE_HFLIP, TransformKind.UPSCALE_VFLIP):
            back = from_view(to_view(box, kind, DIMS), kind, DIMS)
            for orig, rec in zip(box.as_tuple(), back.as_tuple()):
                assert abs(orig - rec) < 1e-9


@given(grid_boxes(), grid_boxes())
@settings(max_examples=200)
def test_iou_transform_equivariance(a, b):
    base = iou(a, b)
    for kind in ALL_VIEWS:
        assert iou(to_view(a, kind, DIMS), to_view(b, kind, DIMS)) == pytest.approx(
            base, abs=1e-9
        )


def test_custom_scale_factors():
    factors = ScaleFactors(up=2.0, down=0.5)
    got = to_view(Box(10, 20, 40, 60), TransformKind.DOWNSCALE, DIMS, factors)
    assert got == Box(5, 10, 20, 30)
    assert from_view(got, TransformKind.DOWNSCALE, DIMS, factors) == Box(10, 20, 40, 60)


def test_scale_factor_validation():
    with pytest.raises(ValueError):
        ScaleFactors(up=1.0)
    with pytest.raises(ValueError):
        ScaleFactors(down=1.5)


def test_average_boxes_single_is_identity():
    b = Box(2, 3, 4, 5)
    assert average_boxes([b]) == b


def test_average_boxes_pair():
    assert average_boxes([Box(0, 0, 10, 10), Box(2, 2, 12, 12)]) == Box(1, 1, 11, 11)


def test_average_boxes_matches_independent_mean():
    rng = np.random.default_rng(11)
    boxes = []
    for _ in range(5):
        x0, y0 = rng.uniform(0, 50, size=2)
        boxes.append(Box(x0, y0, x0 + rng.uniform(1, 20), y0 + rng.uniform(1, 20)))
    got = average_boxes(boxes)
    arr = np.array([b.as_tuple() for b in boxes]).mean(axis=0)
    assert got.as_tuple() == pytest.approx(tuple(arr), abs=1e-12)


def test_average_boxes_empty_errors():
    with pytest.raises(ValueError):
        average_boxes([])


def test_merge_extents_single_and_pair():
    b = Box(1, 1, 2, 2)
    assert merge_extents([b]) == b
    assert merge_extents([Box(0, 0, 10, 10), Box(5, 5, 20, 20)]) == Box(0, 0, 20, 20)


def test_merge_extents_nested_gives_outer():
    outer = Box(0, 0, 50, 50)
    inner = Box(10, 10, 20, 20)
    assert merge_extents([outer, inner]) == outer


def test_merge_extents_empty_errors():
    with pytest.raises(ValueError):
        merge_extents([])


@given(st.lists(grid_boxes(), min_size=1, max_size=6))
def test_merge_contains_all_and_average_inside_merge(boxes):
    merged = merge_extents(boxes)
    for b in boxes:
        assert merged.x_min <= b.x_min and merged.y_min <= b.y_min
        assert merged.x_max >= b.x_max and merged.y_max >= b.y_max
    avg = average_boxes(boxes)
    assert merged.x_min <= avg.x_min and avg.x_max <= merged.x_max
    assert merged.y_min <= avg.y_min and avg.y_max <= merged.y_max
