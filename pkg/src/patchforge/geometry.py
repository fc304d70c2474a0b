"""Boxes, IoU, anchor tiling, patch placement and NMS.

Coordinate convention: continuous pixel coordinates, origin at the
top-left corner, y pointing down. Boxes are stored in center form
(cx, cy, w, h).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, InvalidBoxError

POSITIVE = 1
NEGATIVE = -1
IGNORE = 0


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned rectangle in center form, pixel units."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise InvalidBoxError(f"box needs positive extent, got w={self.w} h={self.h}")

    @property
    def x1(self) -> float:
        return self.cx - self.w / 2

    @property
    def y1(self) -> float:
        return self.cy - self.h / 2

    @property
    def x2(self) -> float:
        return self.cx + self.w / 2

    @property
    def y2(self) -> float:
        return self.cy + self.h / 2

    @property
    def area(self) -> float:
        return self.w * self.h

    def corners(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    @staticmethod
    def from_corners(x1: float, y1: float, x2: float, y2: float) -> "BoundingBox":
        return BoundingBox((x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1)


class Placement(enum.Enum):
    """Vertical anchor points for patch placement, top to bottom."""

    TOP = "top"
    TOP_MID = "top-mid"
    CENTER = "center"
    BOTTOM_MID = "bottom-mid"
    BOTTOM = "bottom"


@dataclass(frozen=True)
class PatchPlacement:
    """Where the patch goes relative to a target box.

    The resized patch is a square of side alpha * sqrt(w * h). The offset
    is measured from the target box's top-left corner to the patch center.
    """

    alpha: float = 0.5
    anchor_point: Placement = Placement.TOP

    def __post_init__(self):
        if not (0 < self.alpha < 1):
            raise ConfigError(f"alpha must be in (0,1), got {self.alpha}")

    def offset(self, gt: BoundingBox) -> tuple[float, float]:
        side = self.alpha * math.sqrt(gt.w * gt.h)
        dx = gt.w / 2
        top_dy = side / 2
        center_dy = gt.h / 2
        bottom_dy = gt.h - side / 2
        if self.anchor_point is Placement.TOP:
            return dx, top_dy
        if self.anchor_point is Placement.TOP_MID:
            return dx, (top_dy + center_dy) / 2
        if self.anchor_point is Placement.CENTER:
            return dx, center_dy
        if self.anchor_point is Placement.BOTTOM_MID:
            return dx, (center_dy + bottom_dy) / 2
        return dx, bottom_dy


@dataclass(frozen=True)
class AnchorGrid:
    """Square anchors tiled on a feature map. Aspect ratio is fixed at 1."""

    feature_height: int
    feature_width: int
    stride: int = 4
    scales: tuple[float, ...] = (16.0, 32.0, 64.0, 128.0)
    aspect_ratio: float = field(default=1.0, init=False)

    def __post_init__(self):
        if self.feature_height < 1 or self.feature_width < 1:
            raise ConfigError("feature dims must be >= 1")
        if len(self.scales) == 0:
            raise ConfigError("anchor scales must be non-empty")

    @property
    def count(self) -> int:
        return self.feature_height * self.feature_width * len(self.scales)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes; 0 for disjoint boxes."""
    ix1 = max(a.x1, b.x1)
    iy1 = max(a.y1, b.y1)
    ix2 = min(a.x2, b.x2)
    iy2 = min(a.y2, b.y2)
    iw = max(0.0, ix2 - ix1)
    ih = max(0.0, iy2 - iy1)
    inter = iw * ih
    union = a.area + b.area - inter
    return inter / union


def iou_matrix(boxes_a: Sequence[BoundingBox], boxes_b: Sequence[BoundingBox]) -> np.ndarray:
    """Pairwise IoU, shape (len(boxes_a), len(boxes_b)), float64."""
    if len(boxes_a) == 0 or len(boxes_b) == 0:
        return np.zeros((len(boxes_a), len(boxes_b)))
    a = boxes_to_array(boxes_a)
    b = boxes_to_array(boxes_b)
    return iou_matrix_arrays(a, b)


def iou_matrix_arrays(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU for (N,4) and (M,4) center-form arrays."""
    ax1, ay1, ax2, ay2 = _corners_cols(a)
    bx1, by1, bx2, by2 = _corners_cols(b)
    iw = np.clip(np.minimum(ax2[:, None], bx2[None, :]) - np.maximum(ax1[:, None], bx1[None, :]), 0, None)
    ih = np.clip(np.minimum(ay2[:, None], by2[None, :]) - np.maximum(ay1[:, None], by1[None, :]), 0, None)
    inter = iw * ih
    area_a = (a[:, 2] * a[:, 3])[:, None]
    area_b = (b[:, 2] * b[:, 3])[None, :]
    return inter / (area_a + area_b - inter)


def _corners_cols(boxes: np.ndarray):
    cx, cy, w, h = boxes[:, 0], boxes[:, 1], boxes[:, 2], boxes[:, 3]
    return cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2


def boxes_to_array(boxes: Iterable[BoundingBox]) -> np.ndarray:
    return np.array([(b.cx, b.cy, b.w, b.h) for b in boxes], dtype=np.float64).reshape(-1, 4)


def array_to_boxes(arr: np.ndarray) -> list[BoundingBox]:
    return [BoundingBox(float(r[0]), float(r[1]), float(r[2]), float(r[3])) for r in arr]


def tile_anchors(grid: AnchorGrid) -> list[BoundingBox]:
    """All anchors in cell-major order (row, column), then scale-ascending.

    Anchor index = (i * feature_width + j) * n_scales + s.
    """
    return array_to_boxes(tile_anchors_array(grid))


def tile_anchors_array(grid: AnchorGrid) -> np.ndarray:
    """Anchors as an (N, 4) center-form array, same ordering as tile_anchors."""
    s = grid.stride
    ys = (np.arange(grid.feature_height) * s + s / 2).astype(np.float64)
    xs = (np.arange(grid.feature_width) * s + s / 2).astype(np.float64)
    scales = np.asarray(grid.scales, dtype=np.float64)
    cy, cx, sc = np.meshgrid(ys, xs, scales, indexing="ij")
    out = np.stack([cx.ravel(), cy.ravel(), sc.ravel(), sc.ravel()], axis=1)
    return out


def match_anchors(
    anchors: Sequence[BoundingBox],
    gt: Sequence[BoundingBox],
    pos_thresh: float = 0.6,
    neg_thresh: float = 0.4,
) -> tuple[np.ndarray, np.ndarray]:
    """Label each anchor as positive/negative/ignore against ground truth.

    Returns (labels, assigned) where labels[i] is POSITIVE/NEGATIVE/IGNORE
    and assigned[i] is the matched gt index for positives (-1 otherwise).
    An anchor is positive iff its max IoU over gt exceeds pos_thresh
    (ties broken toward the lowest gt index), negative iff the max IoU is
    below neg_thresh, ignored in between. No gt boxes: all negative.
    """
    if not (0 <= neg_thresh < pos_thresh <= 1):
        raise ConfigError(f"need 0 <= neg < pos <= 1, got neg={neg_thresh} pos={pos_thresh}")
    n = len(anchors)
    labels = np.full(n, NEGATIVE, dtype=np.int64)
    assigned = np.full(n, -1, dtype=np.int64)
    if len(gt) == 0 or n == 0:
        return labels, assigned
    mat = iou_matrix(anchors, gt)
    best = mat.max(axis=1)
    best_idx = mat.argmax(axis=1)  # argmax returns the lowest index on ties
    pos = best > pos_thresh
    ign = (~pos) & (best >= neg_thresh)
    labels[pos] = POSITIVE
    labels[ign] = IGNORE
    assigned[pos] = best_idx[pos]
    return labels, assigned


def place_patch(
    gt: BoundingBox,
    placement: PatchPlacement,
    scale_fraction: float = 1.0,
) -> BoundingBox:
    """Square region where the patch lands for a given target box.

    The side is scale_fraction * alpha * sqrt(w*h); the center is the
    placement offset added to the box's top-left corner (independent of
    scale_fraction). The region may extend past image bounds; it is
    clipped later when pasting.
    """
    if not (0 < placement.alpha * scale_fraction < 1):
        raise ConfigError(
            f"alpha*scale_fraction must be in (0,1), got {placement.alpha * scale_fraction}"
        )
    side = scale_fraction * placement.alpha * math.sqrt(gt.w * gt.h)
    dx, dy = placement.offset(gt)
    return BoundingBox(gt.x1 + dx, gt.y1 + dy, side, side)


def nms(detections: Sequence[tuple[BoundingBox, float]], iou_thresh: float) -> list[int]:
    """Greedy non-maximum suppression; returns kept indices.

    Processing order is descending score with ties broken by input index.
    A box is suppressed iff its IoU with an already kept, higher-scored
    box exceeds iou_thresh.
    """
    for _, score in detections:
        if not math.isfinite(score):
            raise ConfigError(f"non-finite score {score}")
    order = sorted(range(len(detections)), key=lambda i: (-detections[i][1], i))
    kept: list[int] = []
    for i in order:
        box = detections[i][0]
        if all(iou(box, detections[j][0]) <= iou_thresh for j in kept):
            kept.append(i)
    return kept
