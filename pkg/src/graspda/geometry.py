"""Planar grasp rectangles, axis-aligned boxes, IoU and NMS."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

JAW_HEIGHT = 6.0


@dataclass
class GraspRect:
    """A planar parallel-jaw grasp in pixel coordinates.

    ``theta`` is the direction of the closing axis, measured from +x towards
    +y (image rows), and is kept in [0, pi).  ``width`` is the jaw opening.
    """

    cx: float
    cy: float
    theta: float
    width: float
    grasp_depth: float = 0.0
    quality: float = 1.0
    object_id: int = 0

    def __post_init__(self):
        self.theta = float(self.theta) % math.pi
        if self.width <= 0:
            raise ValueError(f"grasp width must be positive, got {self.width}")

    def corners(self, jaw_height: float = JAW_HEIGHT) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        u = np.array([c, s]) * self.width / 2
        v = np.array([-s, c]) * jaw_height / 2
        centre = np.array([self.cx, self.cy])
        return np.array([centre - u - v, centre + u - v, centre + u + v, centre - u + v])

    def box(self, jaw_height: float = JAW_HEIGHT) -> np.ndarray:
        """Axis-aligned bounding box (x0, y0, x1, y1) of the closing rectangle."""
        pts = self.corners(jaw_height)
        return np.array([pts[:, 0].min(), pts[:, 1].min(), pts[:, 0].max(), pts[:, 1].max()])

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GraspRect":
        return cls(**d)


def bin_of(theta, n_bins: int = 12):
    """Angle bin index floor((theta mod pi) * L / pi); works on scalars and arrays."""
    t = np.mod(np.asarray(theta, dtype=np.float64), math.pi)
    b = np.floor(t * n_bins / math.pi).astype(np.int64)
    b = np.minimum(b, n_bins - 1)
    return int(b) if b.ndim == 0 else b


def bin_center(index, n_bins: int = 12):
    return (np.asarray(index) + 0.5) * math.pi / n_bins


def angle_diff(a, b):
    """Smallest difference between two axis angles modulo pi."""
    d = np.mod(np.asarray(a) - np.asarray(b), math.pi)
    return np.minimum(d, math.pi - d)


def box_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between (N, 4) and (M, 4) boxes in (x0, y0, x1, y1) form."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ix = np.clip(np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0]), 0, None)
    iy = np.clip(np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1]), 0, None)
    inter = ix * iy
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def nms(boxes: np.ndarray, scores: np.ndarray, iou_thresh: float, top_k: int | None = None) -> np.ndarray:
    """Greedy non-maximum suppression; ties in score keep the lower index."""
    order = np.lexsort((np.arange(len(scores)), -np.asarray(scores)))
    iou = box_iou(boxes[order], boxes[order])
    alive = np.ones(len(order), dtype=bool)
    keep = []
    for r in range(len(order)):
        if not alive[r]:
            continue
        keep.append(order[r])
        if top_k is not None and len(keep) >= top_k:
            break
        alive &= iou[r] <= iou_thresh
    return np.array(keep, dtype=np.int64)


def encode_boxes(anchors: np.ndarray, boxes: np.ndarray) -> np.ndarray:
    """Regression targets (dx, dy, dw, dh) of ``boxes`` relative to ``anchors``."""
    aw, ah = anchors[:, 2] - anchors[:, 0], anchors[:, 3] - anchors[:, 1]
    ax, ay = anchors[:, 0] + aw / 2, anchors[:, 1] + ah / 2
    bw, bh = boxes[:, 2] - boxes[:, 0], boxes[:, 3] - boxes[:, 1]
    bx, by = boxes[:, 0] + bw / 2, boxes[:, 1] + bh / 2
    return np.stack([(bx - ax) / aw, (by - ay) / ah, np.log(bw / aw), np.log(bh / ah)], axis=1)


def decode_boxes(anchors: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    aw, ah = anchors[:, 2] - anchors[:, 0], anchors[:, 3] - anchors[:, 1]
    ax, ay = anchors[:, 0] + aw / 2, anchors[:, 1] + ah / 2
    d = np.clip(deltas, -4.0, 4.0)
    cx, cy = ax + d[:, 0] * aw, ay + d[:, 1] * ah
    w, h = aw * np.exp(d[:, 2]), ah * np.exp(d[:, 3])
    return np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=1)
