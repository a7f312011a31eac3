"""Axis-aligned boxes in normalized center (cx, cy, w, h) form.

Plain-float helpers back the ground-truth model, matching costs and the
evaluator; the ``t_``-prefixed variants build autograd graphs for loss
terms.  Conversions between center and corner form are affine, so the
tensor versions are single matmuls with constant matrices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor


@dataclass(frozen=True)
class BBox:
    cx: float
    cy: float
    w: float
    h: float

    def to_xyxy(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2.0, self.cy - self.h / 2.0,
                self.cx + self.w / 2.0, self.cy + self.h / 2.0)

    @classmethod
    def from_xyxy(cls, x1: float, y1: float, x2: float, y2: float) -> "BBox":
        return cls((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1)

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_list(self) -> list[float]:
        return [self.cx, self.cy, self.w, self.h]


def outer_box(a: BBox, b: BBox) -> BBox:
    """Smallest axis-aligned box containing both inputs."""
    ax1, ay1, ax2, ay2 = a.to_xyxy()
    bx1, by1, bx2, by2 = b.to_xyxy()
    return BBox.from_xyxy(min(ax1, bx1), min(ay1, by1), max(ax2, bx2), max(ay2, by2))


def iou_xyxy(a: tuple, b: tuple) -> float:
    ix1, iy1 = max(a[0], b[0]), max(a[1], b[1])
    ix2, iy2 = min(a[2], b[2]), min(a[3], b[3])
    inter = max(0.0, ix2 - ix1) * max(0.0, iy2 - iy1)
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    union = area_a + area_b - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def iou(a: BBox, b: BBox) -> float:
    return iou_xyxy(a.to_xyxy(), b.to_xyxy())


def giou_xyxy(a: tuple, b: tuple) -> float:
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    inter = max(0.0, min(a[2], b[2]) - max(a[0], b[0])) * \
        max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    union = area_a + area_b - inter
    enclose = (max(a[2], b[2]) - min(a[0], b[0])) * (max(a[3], b[3]) - min(a[1], b[1]))
    if union <= 0.0 or enclose <= 0.0:
        return 0.0
    return inter / union - (enclose - union) / enclose


def boxes_to_array(boxes: list[BBox]) -> np.ndarray:
    if not boxes:
        return np.zeros((0, 4))
    return np.array([[b.cx, b.cy, b.w, b.h] for b in boxes], dtype=np.float64)


def array_to_boxes(arr: np.ndarray) -> list[BBox]:
    return [BBox(*map(float, row)) for row in np.asarray(arr).reshape(-1, 4)]


# ---- vectorized pairwise forms for matching costs -------------------------------


def _split_xyxy(arr: np.ndarray) -> np.ndarray:
    cx, cy, w, h = arr[..., 0], arr[..., 1], arr[..., 2], arr[..., 3]
    return np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=-1)


def pairwise_l1(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Sum of coordinate |differences|; a [Q,4], b [G,4] -> [Q,G]."""
    return np.abs(a[:, None, :] - b[None, :, :]).sum(axis=-1)


def pairwise_giou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """GIoU between every pair of cxcywh boxes; a [Q,4], b [G,4] -> [Q,G]."""
    ax = _split_xyxy(a)[:, None, :]
    bx = _split_xyxy(b)[None, :, :]
    iw = np.clip(np.minimum(ax[..., 2], bx[..., 2]) - np.maximum(ax[..., 0], bx[..., 0]), 0, None)
    ih = np.clip(np.minimum(ax[..., 3], bx[..., 3]) - np.maximum(ax[..., 1], bx[..., 1]), 0, None)
    inter = iw * ih
    area_a = (ax[..., 2] - ax[..., 0]) * (ax[..., 3] - ax[..., 1])
    area_b = (bx[..., 2] - bx[..., 0]) * (bx[..., 3] - bx[..., 1])
    union = area_a + area_b - inter
    ew = np.maximum(ax[..., 2], bx[..., 2]) - np.minimum(ax[..., 0], bx[..., 0])
    eh = np.maximum(ax[..., 3], bx[..., 3]) - np.minimum(ax[..., 1], bx[..., 1])
    enclose = ew * eh
    eps = 1e-12
    return inter / (union + eps) - (enclose - union) / (enclose + eps)


# ---- differentiable forms ---------------------------------------------------------

# columns of the output are linear in the input coordinates
_CCWH_TO_XYXY = np.array([
    [1.0, 0.0, 1.0, 0.0],
    [0.0, 1.0, 0.0, 1.0],
    [-0.5, 0.0, 0.5, 0.0],
    [0.0, -0.5, 0.0, 0.5],
])
_XYXY_TO_CCWH = np.array([
    [0.5, 0.0, -1.0, 0.0],
    [0.0, 0.5, 0.0, -1.0],
    [0.5, 0.0, 1.0, 0.0],
    [0.0, 0.5, 0.0, 1.0],
])


def t_cxcywh_to_xyxy(boxes: Tensor) -> Tensor:
    return ag.matmul(boxes, Tensor(_CCWH_TO_XYXY))


def t_xyxy_to_cxcywh(boxes: Tensor) -> Tensor:
    return ag.matmul(boxes, Tensor(_XYXY_TO_CCWH))


def t_outer_box(a: Tensor, b: Tensor) -> Tensor:
    """Differentiable outer box of row-aligned cxcywh boxes [N,4] -> [N,4]."""
    ax = t_cxcywh_to_xyxy(a)
    bx = t_cxcywh_to_xyxy(b)
    lo = ag.minimum(ax[:, 0:2], bx[:, 0:2])
    hi = ag.maximum(ax[:, 2:4], bx[:, 2:4])
    return t_xyxy_to_cxcywh(ag.concat([lo, hi], axis=1))


def t_giou(a: Tensor, b: Tensor, eps: float = 1e-12) -> Tensor:
    """Differentiable GIoU of row-aligned cxcywh boxes [N,4] -> [N,1]."""
    ax = t_cxcywh_to_xyxy(a)
    bx = t_cxcywh_to_xyxy(b)
    iw = ag.relu(ag.minimum(ax[:, 2:3], bx[:, 2:3]) - ag.maximum(ax[:, 0:1], bx[:, 0:1]))
    ih = ag.relu(ag.minimum(ax[:, 3:4], bx[:, 3:4]) - ag.maximum(ax[:, 1:2], bx[:, 1:2]))
    inter = iw * ih
    area_a = (ax[:, 2:3] - ax[:, 0:1]) * (ax[:, 3:4] - ax[:, 1:2])
    area_b = (bx[:, 2:3] - bx[:, 0:1]) * (bx[:, 3:4] - bx[:, 1:2])
    union = area_a + area_b - inter
    ew = ag.maximum(ax[:, 2:3], bx[:, 2:3]) - ag.minimum(ax[:, 0:1], bx[:, 0:1])
    eh = ag.maximum(ax[:, 3:4], bx[:, 3:4]) - ag.minimum(ax[:, 1:2], bx[:, 1:2])
    enclose = ew * eh
    return inter / (union + eps) - (enclose - union) / (enclose + eps)
