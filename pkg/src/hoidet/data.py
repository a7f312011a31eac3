"""Ground-truth model and the dataset JSON schema.

Dataset files are single JSON documents:

    {"images": [{"id", "width", "height", "file"}],
     "annotations": [{"image_id", "human_box", "object_box",
                      "object_class", "relation_classes"}],
     "categories": {"objects": [...], "relations": [...],
                    "hoi_pairs": [[obj, rel], ...],
                    "train_frequencies": [...]}}

Boxes are normalized cxcywh.  The relation box is never stored: it is
always derived as the exact outer box of the human and object boxes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .boxes import BBox, outer_box
from .errors import DataError
from .fileio import atomic_write_json, read_json


@dataclass
class GroundTruthHOI:
    human_box: BBox
    object_box: BBox
    object_class: int
    relation_classes: tuple[int, ...]
    relation_box: BBox = field(init=False)

    def __post_init__(self):
        self.relation_classes = tuple(sorted(set(int(r) for r in self.relation_classes)))
        if not self.relation_classes:
            raise DataError("ground-truth HOI needs at least one relation class")
        self.relation_box = outer_box(self.human_box, self.object_box)


@dataclass
class SceneSample:
    image_id: int
    image: np.ndarray  # [3, H, W] float64 in [0, 1]
    gts: list[GroundTruthHOI]


@dataclass
class DatasetCategories:
    objects: list[str]
    relations: list[str]
    hoi_pairs: list[tuple[int, int]]
    train_frequencies: list[int]

    def __post_init__(self):
        self.hoi_pairs = [tuple(p) for p in self.hoi_pairs]
        if len(self.hoi_pairs) != len(self.train_frequencies):
            raise DataError("hoi_pairs and train_frequencies lengths differ")


def image_to_uint8(image: np.ndarray) -> np.ndarray:
    """[3,H,W] float in [0,1] -> [H,W,3] uint8."""
    return np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)


def uint8_to_image(pixels: np.ndarray) -> np.ndarray:
    return pixels.astype(np.float64).transpose(2, 0, 1) / 255.0


def save_image_png(path: str | Path, image: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(image_to_uint8(image), mode="RGB").save(path, format="PNG")


def load_image_png(path: str | Path) -> np.ndarray:
    with Image.open(path) as img:
        return uint8_to_image(np.asarray(img.convert("RGB")))


def _box_to_list(b: BBox) -> list[float]:
    return [b.cx, b.cy, b.w, b.h]


def _box_from_list(values) -> BBox:
    if len(values) != 4:
        raise DataError(f"box must have 4 values, got {values!r}")
    return BBox(*(float(v) for v in values))


def save_dataset(json_path: str | Path, images_dir: str | Path,
                 samples: list[SceneSample], categories: DatasetCategories,
                 file_prefix: str) -> None:
    json_path = Path(json_path)
    images_dir = Path(images_dir)
    images, annotations = [], []
    for sample in samples:
        _, h, w = sample.image.shape
        fname = f"{file_prefix}_{sample.image_id:05d}.png"
        save_image_png(images_dir / fname, sample.image)
        rel = (images_dir / fname).relative_to(json_path.parent)
        images.append({"id": sample.image_id, "width": w, "height": h, "file": str(rel)})
        for gt in sample.gts:
            annotations.append({
                "image_id": sample.image_id,
                "human_box": _box_to_list(gt.human_box),
                "object_box": _box_to_list(gt.object_box),
                "object_class": gt.object_class,
                "relation_classes": list(gt.relation_classes),
            })
    payload = {
        "images": images,
        "annotations": annotations,
        "categories": {
            "objects": categories.objects,
            "relations": categories.relations,
            "hoi_pairs": [list(p) for p in categories.hoi_pairs],
            "train_frequencies": categories.train_frequencies,
        },
    }
    atomic_write_json(json_path, payload)


def load_dataset(json_path: str | Path) -> tuple[list[SceneSample], DatasetCategories]:
    json_path = Path(json_path)
    try:
        payload = read_json(json_path)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read dataset {json_path}: {exc}")
    for key in ("images", "annotations", "categories"):
        if key not in payload:
            raise DataError(f"dataset {json_path} missing key {key!r}")
    cats = payload["categories"]
    categories = DatasetCategories(
        objects=list(cats["objects"]),
        relations=list(cats["relations"]),
        hoi_pairs=[tuple(p) for p in cats["hoi_pairs"]],
        train_frequencies=[int(f) for f in cats["train_frequencies"]],
    )
    by_image: dict[int, list[GroundTruthHOI]] = {}
    for ann in payload["annotations"]:
        gt = GroundTruthHOI(
            human_box=_box_from_list(ann["human_box"]),
            object_box=_box_from_list(ann["object_box"]),
            object_class=int(ann["object_class"]),
            relation_classes=tuple(ann["relation_classes"]),
        )
        if gt.object_class < 0 or gt.object_class >= len(categories.objects):
            raise DataError(f"object class {gt.object_class} out of range")
        if any(r < 0 or r >= len(categories.relations) for r in gt.relation_classes):
            raise DataError(f"relation class out of range in {ann}")
        by_image.setdefault(int(ann["image_id"]), []).append(gt)
    samples = []
    for entry in payload["images"]:
        image_id = int(entry["id"])
        image_path = json_path.parent / entry["file"]
        if not image_path.exists():
            raise DataError(f"image file missing: {image_path}")
        image = load_image_png(image_path)
        samples.append(SceneSample(image_id=image_id, image=image,
                                   gts=by_image.get(image_id, [])))
    samples.sort(key=lambda s: s.image_id)
    return samples, categories
