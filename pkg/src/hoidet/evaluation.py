"""HICO-style mean average precision with Full / Rare / Non-Rare splits.

A detection is a true positive when its HOI category matches a not-yet-
consumed ground truth and min(IoU over human boxes, IoU over object
boxes) clears the threshold; the relation box never participates in
matching.  AP is the all-points interpolated area under the
precision-recall curve.  The rare split holds categories with fewer than
``rare_threshold`` training instances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .boxes import iou
from .data import GroundTruthHOI
from .errors import ConfigError, DataError
from .inference import Detection


@dataclass
class EvalConfig:
    iou_threshold: float = 0.5
    rare_threshold: int = 10

    def validate(self) -> None:
        if not 0.0 < self.iou_threshold < 1.0:
            raise ConfigError(f"iou_threshold must be in (0, 1), got {self.iou_threshold}")
        if self.rare_threshold < 0:
            raise ConfigError("rare_threshold must be >= 0")


@dataclass
class APResult:
    per_category: dict[tuple[int, int], float | None]
    map_full: float
    map_rare: float
    map_nonrare: float
    num_full: int
    num_rare: int
    num_nonrare: int

    def to_dict(self) -> dict:
        return {
            "map_full": self.map_full,
            "map_rare": self.map_rare,
            "map_nonrare": self.map_nonrare,
            "num_categories_full": self.num_full,
            "num_categories_rare": self.num_rare,
            "num_categories_nonrare": self.num_nonrare,
            "per_category": [
                {"object_class": oc, "relation_class": rc, "ap": ap}
                for (oc, rc), ap in sorted(self.per_category.items())
            ],
        }


def match_detections(dets: list[Detection], gts: list[GroundTruthHOI],
                     iou_threshold: float) -> tuple[list[bool], list[int | None]]:
    """TP/FP flags for same-category detections of one image.

    Greedy by descending score; each ground truth is consumed at most
    once; the overlap criterion is min(human IoU, object IoU) >= threshold
    against the best available ground truth.
    """
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, dets[i].query_index))
    flags: list[bool] = [False] * len(dets)
    matched: list[int | None] = [None] * len(dets)
    used = [False] * len(gts)
    for i in order:
        det = dets[i]
        best_overlap, best_gt = 0.0, None
        for j, gt in enumerate(gts):
            if used[j]:
                continue
            overlap = min(iou(det.human_box, gt.human_box),
                          iou(det.object_box, gt.object_box))
            if overlap > best_overlap:
                best_overlap, best_gt = overlap, j
        if best_gt is not None and best_overlap >= iou_threshold:
            flags[i] = True
            matched[i] = best_gt
            used[best_gt] = True
    return flags, matched


def average_precision(flags: list[bool], scores: list[float], num_gt: int) -> float:
    """All-points interpolated AP; caller supplies aligned flags/scores."""
    if num_gt < 0:
        raise DataError("num_gt must be >= 0")
    if num_gt == 0:
        raise DataError("AP undefined for a category with zero ground truth")
    if not flags:
        return 0.0
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    tp = np.cumsum([1.0 if flags[i] else 0.0 for i in order])
    fp = np.cumsum([0.0 if flags[i] else 1.0 for i in order])
    recall = tp / num_gt
    precision = tp / (tp + fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev_recall) * envelope))


def _category_detections(dets: list[Detection], oc: int, rc: int) -> list[Detection]:
    return [d for d in dets if d.object_class == oc and d.relation_class == rc]


def _category_gts(gts: list[GroundTruthHOI], oc: int, rc: int) -> list[GroundTruthHOI]:
    return [g for g in gts if g.object_class == oc and rc in g.relation_classes]


def mean_ap(detections: dict[int, list[Detection]],
            ground_truths: dict[int, list[GroundTruthHOI]],
            categories: list[tuple[int, int]], train_frequencies: list[int],
            cfg: EvalConfig) -> APResult:
    """Full/Rare/Non-Rare mAP over HOI categories with at least one GT."""
    cfg.validate()
    if len(categories) != len(train_frequencies):
        raise DataError("categories and train_frequencies lengths differ")
    if all(not gts for gts in ground_truths.values()):
        raise DataError("evaluation requires at least one ground truth")
    image_ids = sorted(ground_truths.keys())
    per_category: dict[tuple[int, int], float | None] = {}
    full, rare, nonrare = [], [], []
    for idx, (oc, rc) in enumerate(categories):
        num_gt = 0
        pooled: list[tuple[float, int, int, bool]] = []
        for image_id in image_ids:
            gts = _category_gts(ground_truths.get(image_id, []), oc, rc)
            dets = _category_detections(detections.get(image_id, []), oc, rc)
            num_gt += len(gts)
            if dets:
                flags, _ = match_detections(dets, gts, cfg.iou_threshold)
                for rank, (det, flag) in enumerate(zip(dets, flags)):
                    pooled.append((det.score, image_id, rank, flag))
        if num_gt == 0:
            per_category[(oc, rc)] = None
            continue
        pooled.sort(key=lambda item: (-item[0], item[1], item[2]))
        ap = average_precision([p[3] for p in pooled], [p[0] for p in pooled], num_gt)
        per_category[(oc, rc)] = ap
        full.append(ap)
        if train_frequencies[idx] < cfg.rare_threshold:
            rare.append(ap)
        else:
            nonrare.append(ap)
    if not full:
        raise DataError("no category had ground truth to evaluate")
    return APResult(
        per_category=per_category,
        map_full=float(np.mean(full)),
        map_rare=float(np.mean(rare)) if rare else 0.0,
        map_nonrare=float(np.mean(nonrare)) if nonrare else 0.0,
        num_full=len(full), num_rare=len(rare), num_nonrare=len(nonrare),
    )
