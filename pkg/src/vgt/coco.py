"""MSCOCO detection-format reading/writing.

Internally boxes are (x0, y0, x1, y1); COCO files carry (x, y, w, h).
Category ids are remapped to contiguous [0, K) in ascending original-id
order; the mapping is kept for round-tripping.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field


@dataclass
class CocoImage:
    image_id: int
    file_name: str
    width: int
    height: int
    # (class_id, (x0, y0, x1, y1)) with contiguous class ids
    annotations: list[tuple[int, tuple[float, float, float, float]]] = field(default_factory=list)


@dataclass
class CocoDataset:
    images: list[CocoImage]
    class_names: list[str]            # index = contiguous class id
    original_ids: list[int]           # contiguous id -> original category id

    def num_classes(self) -> int:
        return len(self.class_names)


def xywh_to_xyxy(bbox) -> tuple[float, float, float, float]:
    x, y, w, h = bbox
    return (float(x), float(y), float(x + w), float(y + h))


def xyxy_to_xywh(box) -> list[float]:
    x0, y0, x1, y1 = box
    return [float(x0), float(y0), float(x1 - x0), float(y1 - y0)]


def load_coco(path: str) -> CocoDataset:
    with open(path, encoding="utf-8") as f:
        raw = json.load(f)
    for key in ("images", "annotations", "categories"):
        if key not in raw:
            raise ValueError(f"{path}: missing COCO field {key!r}")
    cats = sorted(raw["categories"], key=lambda c: c["id"])
    original_ids = [c["id"] for c in cats]
    remap = {orig: i for i, orig in enumerate(original_ids)}
    class_names = [str(c.get("name", c["id"])) for c in cats]
    images = {}
    for im in raw["images"]:
        images[im["id"]] = CocoImage(
            image_id=im["id"], file_name=im.get("file_name", ""),
            width=int(im["width"]), height=int(im["height"]))
    for ann in raw["annotations"]:
        img_id = ann["image_id"]
        if img_id not in images:
            raise ValueError(f"{path}: annotation {ann.get('id')} references "
                             f"unknown image {img_id}")
        if ann["category_id"] not in remap:
            raise ValueError(f"{path}: annotation {ann.get('id')} references "
                             f"unknown category {ann['category_id']}")
        images[img_id].annotations.append(
            (remap[ann["category_id"]], xywh_to_xyxy(ann["bbox"])))
    return CocoDataset(images=[images[k] for k in sorted(images)],
                       class_names=class_names, original_ids=original_ids)


def save_coco(path: str, dataset: CocoDataset) -> None:
    raw = {
        "images": [{"id": im.image_id, "file_name": im.file_name,
                    "width": im.width, "height": im.height} for im in dataset.images],
        "categories": [{"id": oid, "name": name}
                       for oid, name in zip(dataset.original_ids, dataset.class_names)],
        "annotations": [],
    }
    ann_id = 1
    for im in dataset.images:
        for class_id, box in im.annotations:
            raw["annotations"].append({
                "id": ann_id, "image_id": im.image_id,
                "category_id": dataset.original_ids[class_id],
                "bbox": xyxy_to_xywh(box),
                "area": (box[2] - box[0]) * (box[3] - box[1]),
                "iscrowd": 0,
            })
            ann_id += 1
    with open(path, "w", encoding="utf-8") as f:
        json.dump(raw, f, indent=1, sort_keys=True)
        f.write("\n")


def save_results(path: str, results: list[dict], original_ids: list[int]) -> None:
    """Write detections as a COCO results JSON.

    results entries: {"image_id", "class_id", "box" (xyxy), "score"}.
    """
    out = [{"image_id": r["image_id"],
            "category_id": original_ids[r["class_id"]],
            "bbox": xyxy_to_xywh(r["box"]),
            "score": round(float(r["score"]), 6)} for r in results]
    with open(path, "w", encoding="utf-8") as f:
        json.dump(out, f, indent=1, sort_keys=True)
        f.write("\n")
