from __future__ import annotations

import itertools
import logging
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cxrforge.errors import FormatError, InputError
from cxrforge.geometry import (
    BBox,
    NormalizedBBox,
    RleMask,
    circle_to_bbox,
    denormalize,
    invalid_box_candidates,
    iou,
    mask_to_bboxes,
    merge_overlapping,
    normalize,
    overlap_fraction,
    parse_bboxes_from_text,
    render_bbox,
)

# ---------------------------------------------------------------- oracles


def raster_iou(a, b, size=1000) -> float:
    """Count covered pixel cells on a size x size grid."""
    ga = np.zeros((size, size), dtype=bool)
    gb = np.zeros((size, size), dtype=bool)
    ga[int(a.y1) : int(a.y2), int(a.x1) : int(a.x2)] = True
    gb[int(b.y1) : int(b.y2), int(b.x1) : int(b.x2)] = True
    union = np.count_nonzero(ga | gb)
    return np.count_nonzero(ga & gb) / union if union else 0.0


def separable_iou(a, b) -> float:
    """Same count as raster_iou, one axis at a time (cells are products of intervals)."""

    def cells(lo, hi):
        return set(range(int(lo), int(hi)))

    ax, ay = cells(a.x1, a.x2), cells(a.y1, a.y2)
    bx, by = cells(b.x1, b.x2), cells(b.y1, b.y2)
    inter = len(ax & bx) * len(ay & by)
    union = len(ax) * len(ay) + len(bx) * len(by) - inter
    return inter / union if union else 0.0


def random_box(rng: random.Random, size=1000) -> BBox:
    x1, x2 = sorted(rng.randint(0, size) for _ in range(2))
    y1, y2 = sorted(rng.randint(0, size) for _ in range(2))
    return BBox(x1, y1, x2, y2)


def scan_bboxes(mask: np.ndarray) -> list[BBox]:
    """4-connected flood fill by hand, one box per component."""
    h, w = mask.shape
    seen = np.zeros_like(mask)
    out = []
    for y, x in itertools.product(range(h), range(w)):
        if not mask[y, x] or seen[y, x]:
            continue
        stack = [(y, x)]
        seen[y, x] = True
        ys, xs = [], []
        while stack:
            cy, cx = stack.pop()
            ys.append(cy)
            xs.append(cx)
            for ny, nx in ((cy + 1, cx), (cy - 1, cx), (cy, cx + 1), (cy, cx - 1)):
                if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not seen[ny, nx]:
                    seen[ny, nx] = True
                    stack.append((ny, nx))
        out.append(BBox(min(xs), min(ys), max(xs) + 1, max(ys) + 1))
    return sorted(out)


# ---------------------------------------------------------------- iou / overlap


def test_iou_examples():
    a = BBox(0, 0, 10, 10)
    assert iou(a, a) == 1.0
    assert iou(a, BBox(20, 20, 30, 30)) == 0.0
    assert iou(a, BBox(5, 0, 15, 10)) == pytest.approx(1 / 3)
    assert iou(BBox(3, 3, 3, 3), BBox(3, 3, 3, 3)) == 0.0


def test_invalid_box_rejected():
    with pytest.raises(InputError):
        BBox(10, 0, 5, 10)
    with pytest.raises(InputError):
        NormalizedBBox(0, 0, 101, 10)


def test_overlap_fraction_examples():
    a = BBox(0, 0, 10, 10)
    assert overlap_fraction(a, a) == 1.0
    assert overlap_fraction(BBox(2, 2, 4, 4), a) == 1.0
    assert overlap_fraction(a, BBox(5, 0, 15, 10)) == 0.5


def test_iou_matches_raster_oracle_on_full_grid():
    rng = random.Random(3)
    for _ in range(200):
        a, b = random_box(rng), random_box(rng)
        assert abs(iou(a, b) - raster_iou(a, b)) < 1e-3


def test_separable_oracle_agrees_with_raster():
    rng = random.Random(4)
    for _ in range(50):
        a, b = random_box(rng), random_box(rng)
        assert separable_iou(a, b) == pytest.approx(raster_iou(a, b), abs=1e-12)


boxes = st.tuples(st.integers(0, 200), st.integers(0, 200), st.integers(0, 200), st.integers(0, 200)).map(
    lambda t: BBox(min(t[0], t[2]), min(t[1], t[3]), max(t[0], t[2]), max(t[1], t[3]))
)


@given(boxes, boxes)
def test_iou_properties(a, b):
    v = iou(a, b)
    assert 0.0 <= v <= 1.0
    assert v == iou(b, a)
    assert overlap_fraction(a, b) >= v - 1e-12
    if a.area > 0:
        assert iou(a, a) == 1.0


# ---------------------------------------------------------------- merging


def test_merge_examples():
    a = BBox(0, 0, 10, 10)
    assert merge_overlapping([a, a]) == [a]
    far = BBox(50, 50, 60, 60)
    assert merge_overlapping([far, a]) == [a, far]
    assert merge_overlapping([a, BBox(4, 0, 14, 10)]) == [BBox(0, 0, 14, 10)]
    # exactly half: not merged
    assert merge_overlapping([a, BBox(5, 0, 15, 10)]) == [a, BBox(5, 0, 15, 10)]


def test_merge_chains_to_fixed_point():
    a, b = BBox(0, 0, 10, 10), BBox(6, 0, 16, 10)
    assert merge_overlapping([a, b]) == [a, b]  # 0.4 on its own
    # the bridge merges with a first; the result then overlaps b by 0.6
    assert merge_overlapping([a, b, BBox(4, 0, 12, 10)]) == [BBox(0, 0, 16, 10)]


@settings(max_examples=200)
@given(st.lists(boxes, max_size=8), st.randoms(use_true_random=False))
def test_merge_idempotent_and_order_free(bs, rnd):
    once = merge_overlapping(bs)
    assert merge_overlapping(once) == once
    shuffled = list(bs)
    rnd.shuffle(shuffled)
    assert merge_overlapping(shuffled) == once


# ---------------------------------------------------------------- normalization


def test_normalize_examples(caplog):
    assert normalize(BBox(0, 0, 512, 512), 512, 512).as_tuple() == (0, 0, 100, 100)
    assert normalize(BBox(128, 128, 384, 384), 512, 512).as_tuple() == (25, 25, 75, 75)
    with caplog.at_level(logging.WARNING, logger="cxrforge.geometry"):
        assert normalize(BBox(0, 0, 1, 1), 1000, 1000).as_tuple() == (0, 0, 0, 0)
    assert "degenerate" in caplog.text
    with pytest.raises(InputError):
        normalize(BBox(0, 0, 1, 1), 0, 10)


def test_normalize_rounds_half_away_from_zero():
    # 5/1000 * 100 = 0.5 exactly, 15/1000 * 100 = 1.5
    assert normalize(BBox(5, 15, 25, 35), 1000, 1000).as_tuple() == (1, 2, 3, 4)


def test_normalize_clamps_out_of_bounds():
    assert normalize(BBox(0, 0, 700, 512), 512, 512).as_tuple() == (0, 0, 100, 100)


@given(
    st.integers(1, 4096),
    st.integers(1, 4096),
    st.floats(0, 1),
    st.floats(0, 1),
    st.floats(0, 1),
    st.floats(0, 1),
)
def test_normalize_denormalize_error_bound(w, h, a, b, c, d):
    box = BBox(min(a, c) * w, min(b, d) * h, max(a, c) * w, max(b, d) * h)
    n = normalize(box, w, h)
    back = denormalize(n, w, h)
    for v, dim in zip(n.as_tuple(), (w, h, w, h)):
        assert isinstance(v, int) and 0 <= v <= 100
    for orig, rec, dim in zip(box.as_tuple(), back.as_tuple(), (w, h, w, h)):
        assert abs(orig - rec) <= dim / 200 + 1


@given(st.integers(0, 100), st.integers(0, 100), st.integers(0, 100), st.integers(0, 100))
def test_render_parse_round_trip(a, b, c, d):
    box = NormalizedBBox(min(a, c), min(b, d), max(a, c), max(b, d))
    assert parse_bboxes_from_text(f"see {render_bbox(box)} here") == [box]


# ---------------------------------------------------------------- circles and masks


def test_circle_examples():
    assert circle_to_bbox(50, 50, 10) == BBox(40, 40, 60, 60)
    assert circle_to_bbox(50, 50, 0) == BBox(50, 50, 50, 50)
    assert circle_to_bbox(5, 5, 10) == BBox(0, 0, 15, 15)
    with pytest.raises(InputError):
        circle_to_bbox(5, 5, -1)


def test_mask_examples():
    empty = np.zeros((12, 10), dtype=bool)
    assert mask_to_bboxes(RleMask.encode(empty)) == []
    m = empty.copy()
    m[3:10, 2:8] = True  # rows 3..9, cols 2..7 filled
    assert mask_to_bboxes(RleMask.encode(m)) == [BBox(2, 3, 8, 10)]
    m[0:2, 0:2] = True
    assert len(mask_to_bboxes(RleMask.encode(m))) == 2


def test_mask_diagonal_touch_is_two_components():
    m = np.zeros((4, 4), dtype=bool)
    m[0, 0] = m[1, 1] = True
    assert mask_to_bboxes(RleMask.encode(m)) == [BBox(0, 0, 1, 1), BBox(1, 1, 2, 2)]


def test_rle_parse_and_sum_mismatch():
    mask = RleMask.parse(3, 2, "1 2 3")
    assert mask.decode().tolist() == [[False, True, True], [False, False, False]]
    with pytest.raises(FormatError):
        RleMask.parse(3, 2, "1 2")


def test_mask_components_match_scan_oracle():
    rng = np.random.default_rng(5)
    for _ in range(40):
        m = rng.random((14, 17)) < 0.3
        rle = RleMask.encode(m)
        assert np.array_equal(rle.decode(), m)
        assert mask_to_bboxes(rle) == scan_bboxes(m)


# ---------------------------------------------------------------- parsing


def test_parse_examples():
    assert parse_bboxes_from_text("Pneumothorax at [25, 10, 60, 45].") == [NormalizedBBox(25, 10, 60, 45)]
    assert parse_bboxes_from_text("no box here") == []
    assert parse_bboxes_from_text("[10,10,5,5] and [0,0,50,50]") == [NormalizedBBox(0, 0, 50, 50)]
    assert invalid_box_candidates("[10,10,5,5] and [0,0,50,50] [0, 0, 0, 120]") == ["[10,10,5,5]", "[0, 0, 0, 120]"]
