"""Synthetic top-down scenes: coloured shapes on a textured ground plane."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .coco import DatasetIndex

SHAPES = ("rectangle", "ellipse", "triangle", "cross", "ring", "diamond")

# Channel values stay <= 0.65 so a brightness shift up to +0.35 never clips.
PALETTE = np.array([
    [0.65, 0.12, 0.10],
    [0.10, 0.55, 0.15],
    [0.12, 0.20, 0.65],
    [0.62, 0.58, 0.08],
    [0.55, 0.10, 0.55],
    [0.08, 0.55, 0.58],
])


@dataclass(frozen=True)
class SynthConfig:
    n_images: int = 200
    objects_per_image: tuple[int, int] = (1, 3)
    object_scale: tuple[float, float] = (0.2, 0.4)
    n_classes: int = 4
    brightness_shift: float = 0.0
    density_profile: str = "sparse"  # or "dense"
    seed: int = 0
    image_size: int = 64
    color_jitter: float = 0.0  # per-object colour noise, a secondary domain knob
    first_image_id: int = 1

    def __post_init__(self):
        lo, hi = self.objects_per_image
        slo, shi = self.object_scale
        if lo < 0 or lo > hi:
            raise ValueError("objects_per_image must satisfy 0 <= min <= max")
        if not (0 < slo <= shi <= 0.5):
            raise ValueError("object_scale must lie in (0, 0.5] with min <= max")
        if self.density_profile not in ("sparse", "dense"):
            raise ValueError("density_profile must be 'sparse' or 'dense'")
        if not 1 <= self.n_classes <= len(SHAPES):
            raise ValueError(f"n_classes must be in [1, {len(SHAPES)}]")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        names = {f.name for f in fields(cls)}
        d = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items() if k in names}
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def source_profile(**overrides) -> SynthConfig:
    """Sparse, large objects, neutral lighting."""
    base = dict(n_images=240, objects_per_image=(1, 3), object_scale=(0.2, 0.4),
                brightness_shift=0.0, density_profile="sparse", seed=1000)
    base.update(overrides)
    return SynthConfig(**base)


def target_profile(**overrides) -> SynthConfig:
    """Dense clusters of small objects under brighter, noisier lighting."""
    base = dict(n_images=200, objects_per_image=(4, 8), object_scale=(0.1, 0.2),
                brightness_shift=0.25, density_profile="dense", seed=2000, color_jitter=0.05)
    base.update(overrides)
    return SynthConfig(**base)


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    level = rng.uniform(0.18, 0.32)
    coarse = rng.uniform(-0.06, 0.06, size=(size // 8, size // 8, 1))
    texture = np.kron(coarse, np.ones((8, 8, 1)))
    tint = rng.uniform(-0.02, 0.02, size=3)
    grain = rng.uniform(-0.02, 0.02, size=(size, size, 3))
    return level + texture + tint + grain


def _mask(shape: str, w: int, h: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    u = (xx + 0.5) / w * 2 - 1
    v = (yy + 0.5) / h * 2 - 1
    if shape == "rectangle":
        m = np.ones((h, w), bool)
    elif shape == "ellipse":
        m = u ** 2 + v ** 2 <= 1.0
    elif shape == "triangle":
        m = np.abs(u) <= (v + 1) / 2
    elif shape == "cross":
        m = (np.abs(u) <= 0.34) | (np.abs(v) <= 0.34)
    elif shape == "ring":
        m = (np.abs(u) >= 0.5) | (np.abs(v) >= 0.5)
    else:  # diamond
        m = np.abs(u) + np.abs(v) <= 1.0
    return m


def _place(rng, cfg: SynthConfig, size: int, n: int) -> list[tuple[int, int, int, int]]:
    lo, hi = cfg.object_scale
    boxes: list[tuple[int, int, int, int]] = []
    centers = rng.uniform(0.25, 0.75, size=(2, 2)) * size
    for _ in range(n):
        for _attempt in range(50):
            w = max(2, int(round(rng.uniform(lo, hi) * size)))
            h = max(2, int(round(rng.uniform(lo, hi) * size)))
            if cfg.density_profile == "dense":
                c = centers[rng.integers(len(centers))]
                cx = c[0] + rng.normal(0, size * 0.18)
                cy = c[1] + rng.normal(0, size * 0.18)
                x = int(np.clip(round(cx - w / 2), 0, size - w))
                y = int(np.clip(round(cy - h / 2), 0, size - h))
            else:
                x = int(rng.integers(0, size - w + 1))
                y = int(rng.integers(0, size - h + 1))
            if all(_overlap((x, y, w, h), b) < 0.15 for b in boxes):
                boxes.append((x, y, w, h))
                break
        else:
            # crowded scene: fall back to any position
            boxes.append((x, y, w, h))
    return boxes


def _overlap(a, b) -> float:
    ix = max(0, min(a[0] + a[2], b[0] + b[2]) - max(a[0], b[0]))
    iy = max(0, min(a[1] + a[3], b[1] + b[3]) - max(a[1], b[1]))
    inter = ix * iy
    return inter / (a[2] * a[3] + b[2] * b[3] - inter)


def synth_generate(cfg: SynthConfig) -> DatasetIndex:
    rng = np.random.default_rng(cfg.seed)
    size = cfg.image_size
    categories = [{"id": i + 1, "name": SHAPES[i]} for i in range(cfg.n_classes)]
    images, anns, pixels = [], [], {}
    ann_id = 1
    lo, hi = cfg.objects_per_image
    for k in range(cfg.n_images):
        image_id = cfg.first_image_id + k
        img = _background(rng, size)
        n = int(rng.integers(lo, hi + 1))
        for (x, y, w, h) in _place(rng, cfg, size, n):
            cls = int(rng.integers(cfg.n_classes))
            color = PALETTE[cls] + rng.uniform(-cfg.color_jitter, cfg.color_jitter, size=3)
            m = _mask(SHAPES[cls], w, h)
            img[y:y + h, x:x + w][m] = np.clip(color, 0.0, 0.65)
            anns.append({"id": ann_id, "image_id": image_id, "category_id": cls + 1,
                         "bbox": [float(x), float(y), float(w), float(h)],
                         "area": float(w * h), "iscrowd": 0})
            ann_id += 1
        img = np.clip(img, 0.0, 0.65)
        img = np.clip(img + cfg.brightness_shift, 0.0, 1.0).astype(np.float32)
        images.append({"id": image_id, "width": size, "height": size,
                       "file_name": f"images/{image_id:06d}.ppm"})
        pixels[image_id] = img
    return DatasetIndex(images, anns, categories, pixels)
