"""Instance-level and relation-level training losses.

Box regressions average over matched pairs; the object-class cross
entropy runs over every query with unmatched slots supervised as
no-object (down-weighted).  The relation-box consistency term ties the
predicted relation box to the outer box of the predicted human/object
boxes, with gradients flowing into all three unless the stop-gradient
switch is set.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .boxes import boxes_to_array, t_giou, t_outer_box
from .data import GroundTruthHOI
from .errors import ConfigError


@dataclass
class LossWeights:
    w_box_l1: float = 2.5
    w_giou: float = 1.0
    w_obj_class: float = 1.0
    w_rel_class: float = 1.0
    w_consistency: float = 0.5
    no_object_coef: float = 0.1
    # behavior switches (not part of the weighted sum)
    consistency_stop_gradient: bool = False
    relation_class_average: str = "matched"  # or "queries"
    giou_on_relation: bool = False
    aux_loss: bool = True

    def validate(self) -> None:
        problems = []
        for name in ("w_box_l1", "w_giou", "w_obj_class", "w_rel_class",
                     "w_consistency", "no_object_coef"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be >= 0")
        if self.relation_class_average not in ("matched", "queries"):
            problems.append("relation_class_average must be 'matched' or 'queries'")
        if problems:
            raise ConfigError("invalid loss weights:\n  " + "\n  ".join(problems))


@dataclass
class LossBreakdown:
    l_hr: float = 0.0
    l_or: float = 0.0
    l_oc: float = 0.0
    l_giou_h: float = 0.0
    l_giou_o: float = 0.0
    l_ur: float = 0.0
    l_uc: float = 0.0
    l_ac: float = 0.0
    l_il: float = 0.0
    l_rl: float = 0.0
    total: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


_ZERO_KEYS_INSTANCE = ("l_hr", "l_or", "l_oc", "l_giou_h", "l_giou_o")
_ZERO_KEYS_RELATION = ("l_ur", "l_uc", "l_ac")


def _zero() -> Tensor:
    return Tensor(0.0)


def _gather_matched_boxes(boxes: Tensor, matches, image_index: int) -> Tensor | None:
    idx = np.array([q for q, _ in matches.pairs], dtype=np.intp)
    if idx.size == 0:
        return None
    per_image = boxes[image_index] if boxes.ndim == 3 else boxes
    return per_image[idx]


def _concat_or_none(parts: list[Tensor]) -> Tensor | None:
    if not parts:
        return None
    if len(parts) == 1:
        return parts[0]
    return ag.concat(parts, axis=0)


def instance_loss(instance, matches_per_image, gts_per_image: list[list[GroundTruthHOI]],
                  weights: LossWeights) -> dict[str, Tensor]:
    """Per-term instance losses for one supervised output set."""
    batch = len(gts_per_image)
    pred_h_parts, pred_o_parts = [], []
    tgt_h_rows, tgt_o_rows = [], []
    num_queries = instance.object_logits.shape[-2]
    num_slots = instance.object_logits.shape[-1]
    no_object = num_slots - 1
    targets = np.full(batch * num_queries, no_object, dtype=np.intp)
    total_matched = 0
    for b in range(batch):
        match = matches_per_image[b]
        gts = gts_per_image[b]
        total_matched += match.num_matched
        ph = _gather_matched_boxes(instance.human_boxes, match, b)
        if ph is not None:
            pred_h_parts.append(ph)
            pred_o_parts.append(_gather_matched_boxes(instance.object_boxes, match, b))
            tgt_h_rows.append(boxes_to_array([gts[g].human_box for _, g in match.pairs]))
            tgt_o_rows.append(boxes_to_array([gts[g].object_box for _, g in match.pairs]))
        for q, g in match.pairs:
            targets[b * num_queries + q] = gts[g].object_class

    terms: dict[str, Tensor] = {k: _zero() for k in _ZERO_KEYS_INSTANCE}
    n = max(total_matched, 1)
    pred_h = _concat_or_none(pred_h_parts)
    if pred_h is not None:
        pred_o = _concat_or_none(pred_o_parts)
        tgt_h = Tensor(np.concatenate(tgt_h_rows, axis=0))
        tgt_o = Tensor(np.concatenate(tgt_o_rows, axis=0))
        terms["l_hr"] = ag.l1_loss(pred_h, tgt_h, reduction="sum") * (1.0 / n)
        terms["l_or"] = ag.l1_loss(pred_o, tgt_o, reduction="sum") * (1.0 / n)
        terms["l_giou_h"] = (1.0 - t_giou(pred_h, tgt_h)).sum() * (1.0 / n)
        terms["l_giou_o"] = (1.0 - t_giou(pred_o, tgt_o)).sum() * (1.0 / n)

    logits = instance.object_logits.reshape(batch * num_queries, num_slots)
    class_weights = np.ones(num_slots)
    class_weights[no_object] = weights.no_object_coef
    terms["l_oc"] = ag.cross_entropy(logits, targets, class_weights)
    return terms


def relation_loss(relation, instance, matches_per_image,
                  gts_per_image: list[list[GroundTruthHOI]],
                  weights: LossWeights) -> dict[str, Tensor]:
    """Per-term relation losses for one supervised output set."""
    batch = len(gts_per_image)
    num_queries = relation.relation_logits.shape[-2]
    num_rel = relation.relation_logits.shape[-1]
    pred_u_parts, tgt_u_rows = [], []
    pred_h_parts, pred_o_parts = [], []
    rel_targets = np.zeros((batch * num_queries, num_rel))
    total_matched = 0
    for b in range(batch):
        match = matches_per_image[b]
        gts = gts_per_image[b]
        total_matched += match.num_matched
        pu = _gather_matched_boxes(relation.relation_boxes, match, b)
        if pu is not None:
            pred_u_parts.append(pu)
            tgt_u_rows.append(boxes_to_array([gts[g].relation_box for _, g in match.pairs]))
            pred_h_parts.append(_gather_matched_boxes(instance.human_boxes, match, b))
            pred_o_parts.append(_gather_matched_boxes(instance.object_boxes, match, b))
        for q, g in match.pairs:
            for r in gts[g].relation_classes:
                rel_targets[b * num_queries + q, r] = 1.0

    terms: dict[str, Tensor] = {k: _zero() for k in _ZERO_KEYS_RELATION}
    n = max(total_matched, 1)
    pred_u = _concat_or_none(pred_u_parts)
    if pred_u is not None:
        tgt_u = Tensor(np.concatenate(tgt_u_rows, axis=0))
        terms["l_ur"] = ag.l1_loss(pred_u, tgt_u, reduction="sum") * (1.0 / n)
        if weights.giou_on_relation:
            terms["l_giou_u"] = (1.0 - t_giou(pred_u, tgt_u)).sum() * (1.0 / n)
        if weights.w_consistency > 0:
            pseudo = t_outer_box(_concat_or_none(pred_h_parts),
                                 _concat_or_none(pred_o_parts))
            if weights.consistency_stop_gradient:
                pseudo = pseudo.detach()
            terms["l_uc"] = ag.l1_loss(pred_u, pseudo, reduction="sum") * (1.0 / n)

    logits = relation.relation_logits.reshape(batch * num_queries, num_rel)
    bce = ag.sigmoid_bce(logits, Tensor(rel_targets))
    if weights.relation_class_average == "matched":
        terms["l_ac"] = bce.sum() * (1.0 / (num_rel * n))
    else:
        terms["l_ac"] = bce.mean()
    return terms


def _merge_terms(accum: dict[str, Tensor], new: dict[str, Tensor]) -> None:
    for key, value in new.items():
        accum[key] = accum[key] + value if key in accum else value


def total_loss(terms: dict[str, Tensor], weights: LossWeights
               ) -> tuple[Tensor, LossBreakdown]:
    """Combine per-term tensors into the weighted total and its breakdown."""
    zero = _zero()
    l_hr = terms.get("l_hr", zero)
    l_or = terms.get("l_or", zero)
    l_oc = terms.get("l_oc", zero)
    l_giou_h = terms.get("l_giou_h", zero)
    l_giou_o = terms.get("l_giou_o", zero)
    l_ur = terms.get("l_ur", zero)
    l_uc = terms.get("l_uc", zero)
    l_ac = terms.get("l_ac", zero)
    l_giou_u = terms.get("l_giou_u", zero)

    l_il = weights.w_box_l1 * (l_hr + l_or) \
        + weights.w_obj_class * l_oc \
        + weights.w_giou * (l_giou_h + l_giou_o)
    l_rl = weights.w_box_l1 * l_ur \
        + weights.w_consistency * l_uc \
        + weights.w_rel_class * l_ac \
        + weights.w_giou * l_giou_u
    total = l_il + l_rl
    breakdown = LossBreakdown(
        l_hr=l_hr.item(), l_or=l_or.item(), l_oc=l_oc.item(),
        l_giou_h=l_giou_h.item(), l_giou_o=l_giou_o.item(),
        l_ur=l_ur.item(), l_uc=l_uc.item(), l_ac=l_ac.item(),
        l_il=l_il.item(), l_rl=l_rl.item(), total=total.item(),
    )
    return total, breakdown


def compute_loss(outputs, gts_per_image: list[list[GroundTruthHOI]],
                 weights: LossWeights):
    """Match, compute all terms over the final (and auxiliary) outputs, combine.

    Returns (total tensor, breakdown, final-layer matches per image).
    Auxiliary decoder layers contribute the same terms additively, each
    with its own matching.
    """
    from .matching import hungarian_match  # local import to avoid a cycle

    supervised = [(outputs.instance, outputs.relation)]
    if weights.aux_loss:
        supervised = list(outputs.aux) + supervised

    def match_set(instance, relation):
        matches = []
        for b, gts in enumerate(gts_per_image):
            matches.append(hungarian_match(
                instance.human_boxes.data[b], instance.object_boxes.data[b],
                instance.object_logits.data[b], relation.relation_boxes.data[b],
                relation.relation_logits.data[b], gts, weights))
        return matches

    accum: dict[str, Tensor] = {}
    final_matches = None
    for instance, relation in supervised:
        matches = match_set(instance, relation)
        _merge_terms(accum, instance_loss(instance, matches, gts_per_image, weights))
        _merge_terms(accum, relation_loss(relation, instance, matches,
                                          gts_per_image, weights))
        final_matches = matches
    total, breakdown = total_loss(accum, weights)
    return total, breakdown, final_matches
