"""Joint bipartite matching between query slots and ground-truth HOIs.

One assignment covers both output streams: query i of the instance
decoder and query i of the relation decoder describe the same candidate,
so the cost of assigning a query to a ground truth mixes instance terms
(box L1, GIoU, object-class probability) with relation terms (relation
box L1 and the mean sigmoid score over the positive relation labels).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .boxes import boxes_to_array, pairwise_giou, pairwise_l1
from .data import GroundTruthHOI
from .errors import DataError
from .losses import LossWeights


@dataclass
class MatchResult:
    pairs: list[tuple[int, int]]     # (query_index, gt_index), sorted by query
    unmatched_queries: list[int]

    @property
    def num_matched(self) -> int:
        return len(self.pairs)


def solve_assignment(cost: np.ndarray) -> list[tuple[int, int]]:
    """Minimum-cost assignment of columns to rows; rows >= columns.

    Deterministic for a fixed cost matrix; pairs come back sorted by row
    index so downstream consumers see a stable order.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise DataError(f"cost matrix must be 2-D, got shape {cost.shape}")
    rows, cols = linear_sum_assignment(cost)
    pairs = sorted(zip(rows.tolist(), cols.tolist()))
    return [(int(r), int(c)) for r, c in pairs]


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[pos == False])  # noqa: E712
    out[pos == False] = ex / (1.0 + ex)  # noqa: E712
    return out


def _stable_softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def assignment_cost_matrix(human_boxes: np.ndarray, object_boxes: np.ndarray,
                           object_logits: np.ndarray, relation_boxes: np.ndarray,
                           relation_logits: np.ndarray,
                           gts: list[GroundTruthHOI], weights: LossWeights) -> np.ndarray:
    """Cost of assigning each query (row) to each ground truth (column)."""
    gt_h = boxes_to_array([gt.human_box for gt in gts])
    gt_o = boxes_to_array([gt.object_box for gt in gts])
    gt_u = boxes_to_array([gt.relation_box for gt in gts])
    gt_cls = np.array([gt.object_class for gt in gts], dtype=np.intp)

    l1 = pairwise_l1(human_boxes, gt_h) + pairwise_l1(object_boxes, gt_o) \
        + pairwise_l1(relation_boxes, gt_u)
    giou_term = (1.0 - pairwise_giou(human_boxes, gt_h)) \
        + (1.0 - pairwise_giou(object_boxes, gt_o))
    probs = _stable_softmax(object_logits)
    class_term = probs[:, gt_cls]
    sig = _stable_sigmoid(relation_logits)
    rel_term = np.stack([sig[:, list(gt.relation_classes)].mean(axis=1) for gt in gts],
                        axis=1)
    return (weights.w_box_l1 * l1
            + weights.w_giou * giou_term
            - weights.w_obj_class * class_term
            - weights.w_rel_class * rel_term)


def hungarian_match(human_boxes: np.ndarray, object_boxes: np.ndarray,
                    object_logits: np.ndarray, relation_boxes: np.ndarray,
                    relation_logits: np.ndarray, gts: list[GroundTruthHOI],
                    weights: LossWeights) -> MatchResult:
    """One-to-one assignment; every ground truth gets exactly one query."""
    num_queries = human_boxes.shape[0]
    if len(gts) > num_queries:
        raise DataError(f"{len(gts)} ground truths exceed {num_queries} queries")
    if not gts:
        return MatchResult(pairs=[], unmatched_queries=list(range(num_queries)))
    cost = assignment_cost_matrix(human_boxes, object_boxes, object_logits,
                                  relation_boxes, relation_logits, gts, weights)
    pairs = solve_assignment(cost)
    matched = {q for q, _ in pairs}
    unmatched = [q for q in range(num_queries) if q not in matched]
    return MatchResult(pairs=pairs, unmatched_queries=unmatched)
