"""Rectangle-metric average precision on toy scenes."""
from __future__ import annotations

import math

import numpy as np

from .geometry import GraspRect, angle_diff, box_iou

IOU_THRESH = 0.25
ANGLE_THRESH = math.radians(30.0)


def match_predictions(preds: list[GraspRect], labels: list[GraspRect], jaw_height: float = 6.0,
                      iou_thresh: float = IOU_THRESH, angle_thresh: float = ANGLE_THRESH):
    """Greedy matching for one scene in descending quality order.

    Returns (scores, hit flags) in the processing order.  A prediction hits when
    some still-unmatched label has box IoU > ``iou_thresh`` and an axis-angle
    difference < ``angle_thresh``; the best-IoU such label is consumed.
    """
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].quality, i))
    scores = np.array([preds[i].quality for i in order])
    hits = np.zeros(len(order), dtype=bool)
    if not labels or not preds:
        return scores, hits
    pb = np.array([preds[i].box(jaw_height) for i in order])
    lb = np.array([g.box(jaw_height) for g in labels])
    iou = box_iou(pb, lb)
    ok = angle_diff(np.array([preds[i].theta for i in order])[:, None],
                    np.array([g.theta for g in labels])[None, :]) < angle_thresh
    cand = np.where(ok & (iou > iou_thresh), iou, -1.0)
    used = np.zeros(len(labels), dtype=bool)
    for r in range(len(order)):
        row = np.where(used, -1.0, cand[r])
        j = int(row.argmax())
        if row[j] > 0:
            used[j] = True
            hits[r] = True
    return scores, hits


def toy_ap(predictions: list[list[GraspRect]], labels: list[list[GraspRect]], jaw_height: float = 6.0) -> float:
    """Average precision over a split: area under the monotone PR envelope.

    Predictions from all scenes are ranked jointly by quality.
    """
    n_labels = sum(len(lab) for lab in labels)
    if n_labels == 0:
        return 0.0
    all_scores, all_hits = [], []
    for preds, labs in zip(predictions, labels):
        s, h = match_predictions(preds, labs, jaw_height)
        all_scores.append(s)
        all_hits.append(h)
    scores = np.concatenate(all_scores) if all_scores else np.zeros(0)
    hits = np.concatenate(all_hits) if all_hits else np.zeros(0, dtype=bool)
    if scores.size == 0:
        return 0.0
    order = np.argsort(-scores, kind="stable")
    tp = np.cumsum(hits[order])
    precision = tp / np.arange(1, len(tp) + 1)
    recall = tp / n_labels
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev) * envelope))
