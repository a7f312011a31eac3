"""From raw dual-decoder outputs to scored, de-duplicated HOI detections.

The composed score of query i for relation class k is
``max-over-real-classes softmax(object_logits_i) * sigmoid(relation_logits_i)[k]``.
Queries whose most likely object class is the no-object slot are dropped.
Suppression groups detections by HOI category (object class, relation
class) and greedily removes any detection whose weighted triple IoU
against an already-kept one exceeds the threshold.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autograd import no_grad
from .boxes import BBox, iou
from .errors import ConfigError, DataError
from .fileio import atomic_write_json
from .model import HOIModel, InstanceOutputs, RelationOutputs


@dataclass
class HOIPrediction:
    human_box: BBox
    object_box: BBox
    relation_box: BBox
    object_class: int
    object_score: float
    relation_scores: np.ndarray
    hoi_scores: np.ndarray
    query_index: int


@dataclass
class Detection:
    """One (prediction, relation class) pair, the unit of NMS and eval."""
    human_box: BBox
    object_box: BBox
    relation_box: BBox
    object_class: int
    relation_class: int
    score: float
    query_index: int


@dataclass
class TridentNMSConfig:
    mode: str = "product"
    w_h: float = 1.0
    w_o: float = 0.5
    w_rel: float = 0.5
    threshold: float = 0.5

    def validate(self) -> None:
        problems = []
        if self.mode not in ("product", "sum"):
            problems.append(f"mode must be 'product' or 'sum', got {self.mode!r}")
        if min(self.w_h, self.w_o, self.w_rel) < 0:
            problems.append("weights must be >= 0")
        if not 0.0 < self.threshold <= 1.0:
            problems.append("threshold must be in (0, 1]")
        if problems:
            raise ConfigError("invalid NMS config:\n  " + "\n  ".join(problems))


def _stable_softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def compose_predictions(instance: InstanceOutputs, relation: RelationOutputs,
                        image_index: int = 0) -> list[HOIPrediction]:
    """Pair outputs index-by-index and compose HOI scores."""
    def pick(tensor):
        data = tensor.data
        return data[image_index] if data.ndim == 3 else data

    h_boxes = pick(instance.human_boxes)
    o_boxes = pick(instance.object_boxes)
    logits = pick(instance.object_logits)
    u_boxes = pick(relation.relation_boxes)
    rel_logits = pick(relation.relation_logits)

    probs = _stable_softmax(logits)
    rel_scores = _stable_sigmoid(rel_logits)
    no_object = logits.shape[-1] - 1
    predictions = []
    for i in range(h_boxes.shape[0]):
        if int(np.argmax(probs[i])) == no_object:
            continue
        object_class = int(np.argmax(probs[i, :no_object]))
        object_score = float(probs[i, :no_object].max())
        predictions.append(HOIPrediction(
            human_box=BBox(*h_boxes[i]),
            object_box=BBox(*o_boxes[i]),
            relation_box=BBox(*u_boxes[i]),
            object_class=object_class,
            object_score=object_score,
            relation_scores=rel_scores[i].copy(),
            hoi_scores=object_score * rel_scores[i],
            query_index=i,
        ))
    return predictions


def top_k(predictions: list[HOIPrediction], k: int = 100) -> list[Detection]:
    """Flatten (prediction, relation class) pairs, keep the k best scores.

    Ties break toward the lower query index, then the lower class index.
    """
    flat: list[Detection] = []
    for p in predictions:
        for cls, score in enumerate(p.hoi_scores):
            flat.append(Detection(
                human_box=p.human_box, object_box=p.object_box,
                relation_box=p.relation_box, object_class=p.object_class,
                relation_class=cls, score=float(score), query_index=p.query_index))
    flat.sort(key=lambda d: (-d.score, d.query_index, d.relation_class))
    return flat[:k]


def tri_iou(a: Detection, b: Detection, cfg: TridentNMSConfig) -> float:
    """Weighted triple IoU over human, object, and relation boxes."""
    ious = (iou(a.human_box, b.human_box),
            iou(a.object_box, b.object_box),
            iou(a.relation_box, b.relation_box))
    ws = (cfg.w_h, cfg.w_o, cfg.w_rel)
    if cfg.mode == "sum":
        return float(sum(w * v for w, v in zip(ws, ious)))
    out = 1.0
    for v, w in zip(ious, ws):
        if w == 0.0:
            continue  # 0^0 := 1, zero weight disables this box entirely
        out *= 0.0 if v == 0.0 else v ** w
    return float(out)


def trident_nms(detections: list[Detection], cfg: TridentNMSConfig) -> list[Detection]:
    """Greedy per-HOI-category suppression; strict > threshold comparison."""
    cfg.validate()
    groups: dict[tuple[int, int], list[Detection]] = {}
    for det in detections:
        groups.setdefault((det.object_class, det.relation_class), []).append(det)
    kept: list[Detection] = []
    for key in sorted(groups):
        members = sorted(groups[key], key=lambda d: (-d.score, d.query_index))
        chosen: list[Detection] = []
        for det in members:
            if all(tri_iou(keeper, det, cfg) <= cfg.threshold for keeper in chosen):
                chosen.append(det)
        kept.extend(chosen)
    kept.sort(key=lambda d: (-d.score, d.query_index, d.relation_class))
    return kept


# ---- whole-image convenience + dump I/O ---------------------------------------


def predict_image(model: HOIModel, image: np.ndarray, k: int = 100
                  ) -> list[Detection]:
    """Eval-mode forward -> composed predictions -> top-k detections (no NMS)."""
    model.eval()
    with no_grad():
        outputs = model.forward(image)
    preds = compose_predictions(outputs.instance, outputs.relation, image_index=0)
    return top_k(preds, k=k)


def _det_to_json(det: Detection) -> dict:
    return {
        "human_box": det.human_box.as_list(),
        "object_box": det.object_box.as_list(),
        "relation_box": det.relation_box.as_list(),
        "object_class": det.object_class,
        "relation_class": det.relation_class,
        "score": det.score,
        "query_index": det.query_index,
    }


def _det_from_json(obj: dict) -> Detection:
    try:
        return Detection(
            human_box=BBox(*obj["human_box"]),
            object_box=BBox(*obj["object_box"]),
            relation_box=BBox(*obj["relation_box"]),
            object_class=int(obj["object_class"]),
            relation_class=int(obj["relation_class"]),
            score=float(obj["score"]),
            query_index=int(obj.get("query_index", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed detection entry: {exc}")


def save_predictions(path: str | Path,
                     per_image: dict[int, list[Detection]]) -> None:
    payload = {
        "format_version": 1,
        "images": [{"id": image_id, "detections": [_det_to_json(d) for d in dets]}
                   for image_id, dets in sorted(per_image.items())],
    }
    atomic_write_json(path, payload)


def load_predictions(path: str | Path) -> dict[int, list[Detection]]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read predictions {path}: {exc}")
    if "images" not in payload:
        raise DataError(f"prediction dump {path} missing 'images'")
    return {int(entry["id"]): [_det_from_json(d) for d in entry["detections"]]
            for entry in payload["images"]}
