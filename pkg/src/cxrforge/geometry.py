"""Bounding-box algebra for grounding tasks.

Pixel boxes use the half-open edge convention: ``(x1, y1)`` is the top-left
corner and ``(x2, y2)`` is exclusive, so ``area = (x2 - x1) * (y2 - y1)``.
Normalized boxes are integers on a 0-100 grid and render as
``"[x1, y1, x2, y2]"``.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Protocol, Sequence

import numpy as np
from scipy import ndimage

from .errors import FormatError, InputError

log = logging.getLogger(__name__)

NORMALIZED_SCALE = 100


class _Rect(Protocol):
    x1: float
    y1: float
    x2: float
    y2: float


@dataclass(frozen=True, order=True)
class BBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise InputError(f"non-finite box coordinate: {coords}")
        if min(coords) < 0:
            raise InputError(f"negative box coordinate: {coords}")
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise InputError(f"box corners out of order: {coords}")

    @property
    def area(self) -> float:
        return area(self)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    @classmethod
    def from_inclusive(cls, x1: float, y1: float, x2: float, y2: float) -> "BBox":
        """Build from inclusive far-edge pixel corners (adds 1 to x2, y2)."""
        return cls(x1, y1, x2 + 1, y2 + 1)


@dataclass(frozen=True, order=True)
class NormalizedBBox:
    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self) -> None:
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(isinstance(c, int) and not isinstance(c, bool) for c in coords):
            raise InputError(f"normalized box needs integer coordinates: {coords}")
        if not (0 <= self.x1 <= self.x2 <= NORMALIZED_SCALE and 0 <= self.y1 <= self.y2 <= NORMALIZED_SCALE):
            raise InputError(f"normalized box out of range or unordered: {coords}")

    @property
    def area(self) -> int:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x1, self.y1, self.x2, self.y2)

    def render(self) -> str:
        return render_bbox(self)


@dataclass(frozen=True)
class RleMask:
    """Binary mask as alternating run lengths over row-major pixels.

    The first run counts background pixels (it may be zero).
    """

    width: int
    height: int
    runs: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise FormatError(f"mask dimensions must be positive, got {self.width}x{self.height}")
        if any(r < 0 for r in self.runs):
            raise FormatError("run counts must be non-negative")
        total = sum(self.runs)
        if total != self.width * self.height:
            raise FormatError(
                f"run-length sum {total} does not match mask size {self.width}x{self.height}"
            )

    @classmethod
    def parse(cls, width: int, height: int, text: str) -> "RleMask":
        try:
            runs = tuple(int(tok) for tok in text.split())
        except ValueError as exc:
            raise FormatError(f"bad run-length string: {exc}") from None
        return cls(width, height, runs)

    def decode(self) -> np.ndarray:
        values = np.zeros(len(self.runs), dtype=bool)
        values[1::2] = True
        flat = np.repeat(values, self.runs)
        return flat.reshape(self.height, self.width)

    @classmethod
    def encode(cls, mask: np.ndarray) -> "RleMask":
        mask = np.asarray(mask, dtype=bool)
        h, w = mask.shape
        flat = np.concatenate([[False], mask.ravel()])
        edges = np.flatnonzero(flat[1:] != flat[:-1]) + 1
        bounds = np.concatenate([[1], edges, [flat.size]])
        runs = np.diff(bounds).tolist()
        return cls(w, h, tuple(int(r) for r in runs))


def area(b: _Rect) -> float:
    return (b.x2 - b.x1) * (b.y2 - b.y1)


def _check(b: _Rect) -> None:
    if b.x2 < b.x1 or b.y2 < b.y1:
        raise InputError(f"invalid box: x2<x1 or y2<y1 in {(b.x1, b.y1, b.x2, b.y2)}")


def intersection_area(a: _Rect, b: _Rect) -> float:
    w = min(a.x2, b.x2) - max(a.x1, b.x1)
    h = min(a.y2, b.y2) - max(a.y1, b.y1)
    if w <= 0 or h <= 0:
        return 0
    return w * h


def iou(a: _Rect, b: _Rect) -> float:
    """Intersection over union; 0.0 when the union is empty."""
    _check(a)
    _check(b)
    inter = intersection_area(a, b)
    union = area(a) + area(b) - inter
    if union <= 0:
        return 0.0
    return float(inter / union)


def overlap_fraction(a: _Rect, b: _Rect) -> float:
    """Intersection divided by the smaller of the two areas."""
    _check(a)
    _check(b)
    smaller = min(area(a), area(b))
    if smaller <= 0:
        return 0.0
    return float(intersection_area(a, b) / smaller)


def enclosing(a: BBox, b: BBox) -> BBox:
    return BBox(min(a.x1, b.x1), min(a.y1, b.y1), max(a.x2, b.x2), max(a.y2, b.y2))


def merge_overlapping(boxes: Iterable[BBox], threshold: float = 0.5) -> list[BBox]:
    """Merge any pair overlapping by *more than* ``threshold`` into its enclosing box.

    Repeats until no pair qualifies. Output is sorted by (x1, y1, x2, y2).
    """
    if not 0 <= threshold <= 1:
        raise InputError(f"threshold must lie in [0, 1], got {threshold}")
    current = sorted(boxes)
    for b in current:
        _check(b)
    changed = True
    while changed:
        changed = False
        n = len(current)
        for i in range(n):
            for j in range(i + 1, n):
                if overlap_fraction(current[i], current[j]) > threshold:
                    merged = enclosing(current[i], current[j])
                    rest = [b for k, b in enumerate(current) if k not in (i, j)]
                    current = sorted(rest + [merged])
                    changed = True
                    break
            if changed:
                break
    # exact duplicates of a zero-area box never satisfy the overlap test
    deduped: list[BBox] = []
    for b in current:
        if not deduped or deduped[-1] != b:
            deduped.append(b)
    return deduped


def _round_half_away(value: Fraction) -> int:
    if value >= 0:
        return math.floor(value + Fraction(1, 2))
    return -math.floor(-value + Fraction(1, 2))


def normalize(b: BBox, image_w: float, image_h: float) -> NormalizedBBox:
    """Scale a pixel box to the 0-100 integer grid."""
    if image_w <= 0 or image_h <= 0:
        raise InputError(f"image dimensions must be positive, got {image_w}x{image_h}")
    if b.x2 > image_w or b.y2 > image_h:
        log.warning("box %s exceeds image bounds %sx%s; clamping", b.as_tuple(), image_w, image_h)
    w = Fraction(image_w)
    h = Fraction(image_h)

    def scale(v: float, dim: Fraction) -> int:
        n = _round_half_away(Fraction(v) * NORMALIZED_SCALE / dim)
        return min(max(n, 0), NORMALIZED_SCALE)

    out = NormalizedBBox(scale(b.x1, w), scale(b.y1, h), scale(b.x2, w), scale(b.y2, h))
    if out.area == 0:
        log.warning("degenerate normalized box %s from %s", out.as_tuple(), b.as_tuple())
    return out


def denormalize(b: NormalizedBBox, image_w: float, image_h: float) -> BBox:
    return BBox(
        b.x1 * image_w / NORMALIZED_SCALE,
        b.y1 * image_h / NORMALIZED_SCALE,
        b.x2 * image_w / NORMALIZED_SCALE,
        b.y2 * image_h / NORMALIZED_SCALE,
    )


def circle_to_bbox(cx: float, cy: float, r: float) -> BBox:
    if r < 0:
        raise InputError(f"negative radius: {r}")
    return BBox(max(cx - r, 0), max(cy - r, 0), max(cx + r, 0), max(cy + r, 0))


def mask_to_bboxes(m: RleMask) -> list[BBox]:
    """One minimal enclosing box per 4-connected foreground component."""
    grid = m.decode()
    labeled, count = ndimage.label(grid)  # default structure is 4-connected in 2D
    boxes = []
    for sl in ndimage.find_objects(labeled):
        if sl is None:
            continue
        ys, xs = sl
        boxes.append(BBox(xs.start, ys.start, xs.stop, ys.stop))
    return sorted(boxes)


def render_bbox(b: NormalizedBBox) -> str:
    return f"[{b.x1}, {b.y1}, {b.x2}, {b.y2}]"


def render_bboxes(boxes: Sequence[NormalizedBBox]) -> str:
    return ", ".join(render_bbox(b) for b in boxes)


BOX_PATTERN = re.compile(r"\[\s*(-?\d+)\s*,\s*(-?\d+)\s*,\s*(-?\d+)\s*,\s*(-?\d+)\s*\]")


def parse_bboxes_from_text(text: str) -> list[NormalizedBBox]:
    """Pull every valid ``[x1, y1, x2, y2]`` box out of free text, in order.

    Candidates with values outside 0-100 or unordered corners are skipped.
    """
    found = []
    for m in BOX_PATTERN.finditer(text):
        x1, y1, x2, y2 = (int(g) for g in m.groups())
        try:
            found.append(NormalizedBBox(x1, y1, x2, y2))
        except InputError:
            continue
    return found


def invalid_box_candidates(text: str) -> list[str]:
    """Bracketed 4-int groups in ``text`` that fail NormalizedBBox validation."""
    bad = []
    for m in BOX_PATTERN.finditer(text):
        try:
            NormalizedBBox(*(int(g) for g in m.groups()))
        except InputError:
            bad.append(m.group(0))
    return bad
