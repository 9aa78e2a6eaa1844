"""COCO-schema dataset index: parsing, validation, serialization."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType

import numpy as np

from ..detector.boxes import BoxSet
from .ppm import read_ppm, write_ppm


class CocoParseError(ValueError):
    def __init__(self, msg: str, offset: int):
        super().__init__(f"{msg} (byte offset {offset})")
        self.offset = offset


class IntegrityError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetIndex:
    images: tuple[dict, ...]
    annotations: tuple[dict, ...]
    categories: tuple[dict, ...]
    pixels: MappingProxyType = field(default_factory=lambda: MappingProxyType({}),
                                     compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "images", tuple(self.images))
        object.__setattr__(self, "annotations", tuple(self.annotations))
        object.__setattr__(self, "categories", tuple(self.categories))
        if not isinstance(self.pixels, MappingProxyType):
            object.__setattr__(self, "pixels", MappingProxyType(dict(self.pixels)))
        validate(self)
        by_image: dict[int, list[dict]] = {im["id"]: [] for im in self.images}
        for ann in self.annotations:
            by_image[ann["image_id"]].append(ann)
        object.__setattr__(self, "_by_image", by_image)
        object.__setattr__(self, "_images", {im["id"]: im for im in self.images})

    # -- lookups --------------------------------------------------------------
    @property
    def image_ids(self) -> list[int]:
        return [im["id"] for im in self.images]

    @property
    def category_ids(self) -> list[int]:
        return sorted(c["id"] for c in self.categories)

    def class_index(self) -> dict[int, int]:
        """Category id -> contiguous class index (ascending id order)."""
        return {cid: i for i, cid in enumerate(self.category_ids)}

    def image(self, image_id: int) -> dict:
        return self._images[image_id]

    def annotations_for(self, image_id: int) -> list[dict]:
        return self._by_image[image_id]

    def classes_in(self, image_id: int) -> set[int]:
        return {a["category_id"] for a in self._by_image[image_id]}

    def pixels_for(self, image_id: int) -> np.ndarray:
        return self.pixels[image_id]

    def boxset(self, image_id: int) -> BoxSet:
        """Ground truth of one image as normalized (cx, cy, w, h) with class indices."""
        im = self._images[image_id]
        anns = self._by_image[image_id]
        cidx = self.class_index()
        if not anns:
            return BoxSet.empty()
        b = np.array([a["bbox"] for a in anns], dtype=np.float64)
        scale = np.array([im["width"], im["height"], im["width"], im["height"]], dtype=np.float64)
        cxcywh = np.concatenate([b[:, :2] + b[:, 2:] / 2, b[:, 2:]], axis=1) / scale
        return BoxSet(cxcywh, [cidx[a["category_id"]] for a in anns])

    def subset(self, image_ids) -> "DatasetIndex":
        keep = set(image_ids)
        missing = keep - set(self._images)
        if missing:
            raise KeyError(f"unknown image ids {sorted(missing)}")
        return DatasetIndex(
            images=[im for im in self.images if im["id"] in keep],
            annotations=[a for a in self.annotations if a["image_id"] in keep],
            categories=self.categories,
            pixels={i: p for i, p in self.pixels.items() if i in keep},
        )

    def to_coco(self) -> dict:
        return {
            "images": [{k: im[k] for k in ("id", "width", "height", "file_name") if k in im}
                       for im in self.images],
            "annotations": [dict(a) for a in self.annotations],
            "categories": [dict(c) for c in self.categories],
        }


def validate(ds: DatasetIndex) -> None:
    image_ids = set()
    for im in ds.images:
        for key in ("id", "width", "height"):
            if key not in im:
                raise IntegrityError(f"image entry missing {key!r}: {im}")
        if im["id"] in image_ids:
            raise IntegrityError(f"duplicate image id {im['id']}")
        image_ids.add(im["id"])
    cat_ids = set()
    for c in ds.categories:
        if "id" not in c:
            raise IntegrityError(f"category entry missing 'id': {c}")
        if c["id"] in cat_ids:
            raise IntegrityError(f"duplicate category id {c['id']}")
        cat_ids.add(c["id"])
    images = {im["id"]: im for im in ds.images}
    ann_ids = set()
    for a in ds.annotations:
        aid = a.get("id")
        if aid in ann_ids:
            raise IntegrityError(f"duplicate annotation id {aid}")
        ann_ids.add(aid)
        if a.get("image_id") not in images:
            raise IntegrityError(f"annotation {aid} references missing image_id {a.get('image_id')}")
        if a.get("category_id") not in cat_ids:
            raise IntegrityError(
                f"annotation {aid} references missing category_id {a.get('category_id')}")
        bbox = a.get("bbox")
        if bbox is None or len(bbox) != 4:
            raise IntegrityError(f"annotation {aid} has malformed bbox {bbox}")
        x, y, w, h = bbox
        im = images[a["image_id"]]
        eps = 1e-6
        if w <= 0 or h <= 0 or x < -eps or y < -eps or x + w > im["width"] + eps \
                or y + h > im["height"] + eps:
            raise IntegrityError(f"annotation {aid} bbox {bbox} outside image {im['id']} bounds")


def load_coco_json(blob: bytes | str, pixels: dict | None = None) -> DatasetIndex:
    text = blob.decode("utf-8") if isinstance(blob, (bytes, bytearray)) else blob
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CocoParseError(exc.msg, len(text[:exc.pos].encode("utf-8"))) from exc
    if not isinstance(doc, dict):
        raise CocoParseError("top level must be an object", 0)
    for key in ("images", "annotations", "categories"):
        if not isinstance(doc.get(key), list):
            raise CocoParseError(f"missing top-level array {key!r}", 0)
    images = [{k: im[k] for k in ("id", "width", "height", "file_name") if k in im}
              for im in doc["images"]]
    anns = []
    for a in doc["annotations"]:
        bbox = [float(v) for v in a.get("bbox", [])]
        entry = {"id": a.get("id"), "image_id": a.get("image_id"),
                 "category_id": a.get("category_id"), "bbox": bbox,
                 "area": float(a.get("area", bbox[2] * bbox[3] if len(bbox) == 4 else 0.0)),
                 "iscrowd": int(a.get("iscrowd", 0))}
        anns.append(entry)
    cats = [{"id": c.get("id"), "name": c.get("name", str(c.get("id")))} for c in doc["categories"]]
    return DatasetIndex(images, anns, cats, pixels or {})


def dump_coco_json(ds: DatasetIndex) -> bytes:
    return json.dumps(ds.to_coco(), indent=1).encode("utf-8")


def save_dataset(ds: DatasetIndex, directory) -> Path:
    """Write annotations.json plus one P6 file per in-memory image."""
    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    for im in ds.images:
        if im["id"] in ds.pixels:
            write_ppm(directory / im["file_name"], ds.pixels[im["id"]])
    path = directory / "annotations.json"
    path.write_bytes(dump_coco_json(ds))
    return path


def load_dataset(directory) -> DatasetIndex:
    directory = Path(directory)
    blob = (directory / "annotations.json").read_bytes()
    ds = load_coco_json(blob)
    pixels = {}
    for im in ds.images:
        f = directory / im.get("file_name", "")
        if im.get("file_name") and f.suffix.lower() == ".ppm" and f.exists():
            pixels[im["id"]] = read_ppm(f)
    return DatasetIndex(ds.images, ds.annotations, ds.categories, pixels)
