"""Synthetic HOI scenes small enough to train on a single core.

A scene is a dark canvas with stick-figure "humans" and shape-coded
"objects" (square / disk / triangle / cross, one color per class).  The
relation classes are a deterministic function of spatial arrangement:

* exactly one of ``left_of`` / ``right_of`` / ``above`` / ``below``,
  chosen by the dominant axis of the object-center offset relative to
  the human (image y grows downward, so ``above`` means the object
  center sits above the human center);
* plus ``near`` when the two centers are closer than ``NEAR_DISTANCE``.

Because the rules only depend on visible geometry, a correct model can
reach mAP 1.0, which gives evaluation a sharp target.  Duplicate
injection appends a rendered near-copy of an HOI (both glyphs shifted by
a common small offset, sizes jittered) so post-processing studies have
genuinely overlapping same-category ground truths to work with.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .boxes import BBox, iou, outer_box
from .data import DatasetCategories, GroundTruthHOI, SceneSample, save_dataset
from .errors import ConfigError
from .rng import derive_rng

SHAPE_NAMES = ("square", "disk", "triangle", "cross")
RELATION_NAMES = ("left_of", "right_of", "above", "below", "near")
DIRECTIONS = ("left_of", "right_of", "above", "below")
NEAR_DISTANCE = 0.30

_HUMAN_COLOR = (0.92, 0.92, 0.88)
_BACKGROUND = (0.08, 0.08, 0.10)
_PALETTE = (
    (0.85, 0.20, 0.20),   # square: red
    (0.20, 0.80, 0.25),   # disk: green
    (0.25, 0.40, 0.90),   # triangle: blue
    (0.90, 0.85, 0.20),   # cross: yellow
)


@dataclass
class SynthSceneSpec:
    seed: int = 0
    canvas_size: int = 64
    object_classes: tuple[str, ...] = SHAPE_NAMES
    relation_classes: tuple[str, ...] = RELATION_NAMES
    train_scenes: int = 200
    test_scenes: int = 50
    min_hois: int = 1
    max_hois: int = 2
    duplicate_rate: float = 0.0
    jitter: float = 0.12

    def validate(self) -> None:
        problems = []
        if self.canvas_size < 16:
            problems.append("canvas_size must be >= 16")
        unknown = [c for c in self.object_classes if c not in SHAPE_NAMES]
        if unknown or not self.object_classes:
            problems.append(f"object_classes must be a non-empty subset of {SHAPE_NAMES}, "
                            f"unknown: {unknown}")
        if any(r not in RELATION_NAMES for r in self.relation_classes):
            problems.append(f"relation_classes must be a subset of {RELATION_NAMES}")
        if not all(d in self.relation_classes for d in DIRECTIONS):
            problems.append("relation_classes must include all four directional labels")
        if not 1 <= self.min_hois <= self.max_hois:
            problems.append("need 1 <= min_hois <= max_hois")
        if not 0.0 <= self.duplicate_rate <= 1.0:
            problems.append("duplicate_rate must be in [0, 1]")
        if not 0.0 < self.jitter < 0.5:
            problems.append("jitter must be in (0, 0.5)")
        if self.train_scenes < 1 or self.test_scenes < 1:
            problems.append("scene counts must be >= 1")
        if problems:
            raise ConfigError("invalid synthetic spec:\n  " + "\n  ".join(problems))

    def relation_index(self, name: str) -> int:
        return self.relation_classes.index(name)


def relation_labels(human: BBox, obj: BBox, spec: SynthSceneSpec) -> tuple[int, ...]:
    """Relation-class indices implied by the spatial arrangement."""
    dx = obj.cx - human.cx
    dy = obj.cy - human.cy
    if abs(dx) >= abs(dy):
        direction = "right_of" if dx > 0 else "left_of"
    else:
        direction = "below" if dy > 0 else "above"
    labels = [spec.relation_index(direction)]
    if "near" in spec.relation_classes and math.hypot(dx, dy) < NEAR_DISTANCE:
        labels.append(spec.relation_index("near"))
    return tuple(sorted(labels))


def _sample_box(rng, w_range, h_range, margin=0.02) -> BBox:
    w = rng.uniform(*w_range)
    h = rng.uniform(*h_range)
    cx = rng.uniform(margin + w / 2, 1.0 - margin - w / 2)
    cy = rng.uniform(margin + h / 2, 1.0 - margin - h / 2)
    return BBox(cx, cy, w, h)


def _inside_canvas(b: BBox, margin=0.005) -> bool:
    x1, y1, x2, y2 = b.to_xyxy()
    return x1 >= margin and y1 >= margin and x2 <= 1 - margin and y2 <= 1 - margin


def _triple_overlap(a: GroundTruthHOI, b: GroundTruthHOI) -> float:
    return iou(a.human_box, b.human_box) * iou(a.object_box, b.object_box) \
        * iou(a.relation_box, b.relation_box)


def _mutual_nearest(gts: list[GroundTruthHOI]) -> bool:
    """The annotated pairing must equal nearest-neighbor pairing so the
    task stays well-posed for a pixel-only model."""
    humans = [g.human_box for g in gts]
    objects = [g.object_box for g in gts]
    for i, h in enumerate(humans):
        dists = [math.hypot(o.cx - h.cx, o.cy - h.cy) for o in objects]
        if int(np.argmin(dists)) != i:
            return False
    for j, o in enumerate(objects):
        dists = [math.hypot(o.cx - h.cx, o.cy - h.cy) for h in humans]
        if int(np.argmin(dists)) != j:
            return False
    return True


def _sample_base_hois(rng, spec: SynthSceneSpec) -> list[GroundTruthHOI]:
    for _ in range(300):
        k = int(rng.integers(spec.min_hois, spec.max_hois + 1))
        gts: list[GroundTruthHOI] = []
        ok = True
        for _ in range(k):
            human = _sample_box(rng, (0.24, 0.42), (0.28, 0.46))
            placed = False
            for _ in range(40):
                w = rng.uniform(0.18, 0.34)
                h = rng.uniform(0.18, 0.34)
                angle = rng.uniform(0, 2 * math.pi)
                dist = rng.uniform(0.16, 0.42)
                obj = BBox(human.cx + dist * math.cos(angle),
                           human.cy + dist * math.sin(angle), w, h)
                if _inside_canvas(obj):
                    placed = True
                    break
            if not placed:
                ok = False
                break
            cls = int(rng.integers(len(spec.object_classes)))
            labels = relation_labels(human, obj, spec)
            gts.append(GroundTruthHOI(human_box=human, object_box=obj,
                                      object_class=cls, relation_classes=labels))
        if not ok or not gts:
            continue
        if not _mutual_nearest(gts):
            continue
        collision = False
        for i in range(len(gts)):
            for j in range(i + 1, len(gts)):
                if gts[i].object_class == gts[j].object_class and \
                        _triple_overlap(gts[i], gts[j]) > 0.5:
                    collision = True
        if collision:
            continue
        return gts
    raise ConfigError("synthetic generator failed to place a scene; "
                      "constraints too tight for the given spec")


def _jittered_copy(rng, gt: GroundTruthHOI, spec: SynthSceneSpec
                   ) -> GroundTruthHOI | None:
    for _ in range(40):
        angle = rng.uniform(0, 2 * math.pi)
        mag = rng.uniform(0.6, 1.2) * spec.jitter
        dx, dy = mag * math.cos(angle), mag * math.sin(angle)
        scale_h = 1.0 + rng.uniform(-0.1, 0.1)
        scale_o = 1.0 + rng.uniform(-0.1, 0.1)
        human = BBox(gt.human_box.cx + dx, gt.human_box.cy + dy,
                     gt.human_box.w * scale_h, gt.human_box.h * scale_h)
        obj = BBox(gt.object_box.cx + dx, gt.object_box.cy + dy,
                   gt.object_box.w * scale_o, gt.object_box.h * scale_o)
        if _inside_canvas(human) and _inside_canvas(obj):
            labels = relation_labels(human, obj, spec)
            return GroundTruthHOI(human_box=human, object_box=obj,
                                  object_class=gt.object_class,
                                  relation_classes=labels)
    return None


def sample_scene(rng, spec: SynthSceneSpec) -> list[GroundTruthHOI]:
    gts = _sample_base_hois(rng, spec)
    if spec.duplicate_rate > 0:
        extra = []
        for gt in gts:
            if rng.random() < spec.duplicate_rate:
                copy = _jittered_copy(rng, gt, spec)
                if copy is not None:
                    extra.append(copy)
        gts = gts + extra
    return gts


# ---- rendering ----------------------------------------------------------------


def _grids(size: int) -> tuple[np.ndarray, np.ndarray]:
    ys, xs = np.mgrid[0:size, 0:size]
    return (xs + 0.5) / size, (ys + 0.5) / size


def _segment_mask(xs, ys, p0, p1, thickness) -> np.ndarray:
    vx, vy = p1[0] - p0[0], p1[1] - p0[1]
    length_sq = vx * vx + vy * vy
    if length_sq == 0:
        dist = np.hypot(xs - p0[0], ys - p0[1])
    else:
        t = np.clip(((xs - p0[0]) * vx + (ys - p0[1]) * vy) / length_sq, 0.0, 1.0)
        dist = np.hypot(xs - (p0[0] + t * vx), ys - (p0[1] + t * vy))
    return dist <= thickness


def _human_mask(xs, ys, box: BBox, size: int) -> np.ndarray:
    x1, y1, x2, y2 = box.to_xyxy()
    w, h, cx = box.w, box.h, box.cx
    t = max(1.5 / size, 0.055 * min(w, h))
    head = (((xs - cx) / (0.16 * w + 1e-9)) ** 2
            + ((ys - (y1 + 0.14 * h)) / (0.12 * h + 1e-9)) ** 2) <= 1.0
    torso = _segment_mask(xs, ys, (cx, y1 + 0.24 * h), (cx, y1 + 0.62 * h), t)
    arms = _segment_mask(xs, ys, (x1 + 0.06 * w, y1 + 0.36 * h),
                         (x2 - 0.06 * w, y1 + 0.36 * h), t)
    leg_l = _segment_mask(xs, ys, (cx, y1 + 0.62 * h), (x1 + 0.12 * w, y2 - 0.02 * h), t)
    leg_r = _segment_mask(xs, ys, (cx, y1 + 0.62 * h), (x2 - 0.12 * w, y2 - 0.02 * h), t)
    return head | torso | arms | leg_l | leg_r


def _object_mask(xs, ys, box: BBox, shape: str) -> np.ndarray:
    x1, y1, x2, y2 = box.to_xyxy()
    inside = (xs >= x1) & (xs <= x2) & (ys >= y1) & (ys <= y2)
    if shape == "square":
        return inside
    if shape == "disk":
        return (((xs - box.cx) / (box.w / 2)) ** 2
                + ((ys - box.cy) / (box.h / 2)) ** 2) <= 1.0
    if shape == "triangle":
        half = np.clip((ys - y1) / box.h, 0.0, 1.0) * (box.w / 2)
        return inside & (np.abs(xs - box.cx) <= half)
    if shape == "cross":
        vert = np.abs(xs - box.cx) <= 0.18 * box.w
        horiz = np.abs(ys - box.cy) <= 0.18 * box.h
        return inside & (vert | horiz)
    raise ConfigError(f"unknown shape {shape!r}")


def render_scene(gts: list[GroundTruthHOI], spec: SynthSceneSpec) -> np.ndarray:
    size = spec.canvas_size
    xs, ys = _grids(size)
    img = np.empty((3, size, size))
    for c, value in enumerate(_BACKGROUND):
        img[c].fill(value)

    def paint(mask, color):
        for c in range(3):
            img[c][mask] = color[c]

    for gt in gts:
        paint(_human_mask(xs, ys, gt.human_box, size), _HUMAN_COLOR)
    for gt in gts:
        shape = spec.object_classes[gt.object_class]
        color = _PALETTE[SHAPE_NAMES.index(shape)]
        paint(_object_mask(xs, ys, gt.object_box, shape), color)
    # match the 8-bit quantization of the on-disk PNG path exactly
    return np.round(img * 255.0) / 255.0


# ---- dataset assembly ------------------------------------------------------------


def generate_split(spec: SynthSceneSpec, split: str, count: int) -> list[SceneSample]:
    rng = derive_rng(spec.seed, "synthetic", split)
    samples = []
    for image_id in range(count):
        gts = sample_scene(rng, spec)
        samples.append(SceneSample(image_id=image_id,
                                   image=render_scene(gts, spec), gts=gts))
    return samples


def categories_from_train(spec: SynthSceneSpec,
                          train: list[SceneSample]) -> DatasetCategories:
    pairs = [(o, r) for o in range(len(spec.object_classes))
             for r in range(len(spec.relation_classes))]
    index = {p: i for i, p in enumerate(pairs)}
    freqs = [0] * len(pairs)
    for sample in train:
        for gt in sample.gts:
            for r in gt.relation_classes:
                freqs[index[(gt.object_class, r)]] += 1
    return DatasetCategories(objects=list(spec.object_classes),
                             relations=list(spec.relation_classes),
                             hoi_pairs=pairs, train_frequencies=freqs)


def generate_dataset_samples(spec: SynthSceneSpec
                             ) -> tuple[list[SceneSample], list[SceneSample],
                                        DatasetCategories]:
    spec.validate()
    train = generate_split(spec, "train", spec.train_scenes)
    test = generate_split(spec, "test", spec.test_scenes)
    return train, test, categories_from_train(spec, train)


def generate_synthetic_dataset(spec: SynthSceneSpec, out_dir: str | Path
                               ) -> tuple[Path, Path]:
    """Write train.json / test.json plus rendered PNGs under out_dir."""
    out_dir = Path(out_dir)
    train, test, categories = generate_dataset_samples(spec)
    train_path = out_dir / "train.json"
    test_path = out_dir / "test.json"
    save_dataset(train_path, out_dir / "images", train, categories, "train")
    save_dataset(test_path, out_dir / "images", test, categories, "test")
    return train_path, test_path
