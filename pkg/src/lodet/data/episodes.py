"""Seeded k-shot episodes and image-level train/val splits."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .coco import DatasetIndex


class CoverageError(ValueError):
    pass


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class EpisodeSpec:
    k: int
    seed: int
    class_ids: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        object.__setattr__(self, "class_ids", tuple(self.class_ids))


def sample_k_shot(ds: DatasetIndex, spec: EpisodeSpec) -> DatasetIndex:
    """Greedy per-class sampling: k images containing each class.

    Classes are visited in ascending id order; an image counts toward every
    class it contains, and selected images keep all their annotations.
    """
    class_ids = sorted(spec.class_ids or ds.category_ids)
    known = set(ds.category_ids)
    if not class_ids or not set(class_ids) <= known:
        raise ValueError(f"class ids {class_ids} not all present in dataset")
    holders: dict[int, list[int]] = {c: [] for c in class_ids}
    for image_id in sorted(ds.image_ids):
        for c in ds.classes_in(image_id):
            if c in holders:
                holders[c].append(image_id)
    rng = np.random.default_rng(spec.seed)
    chosen: list[int] = []
    picked: set[int] = set()
    counts: Counter = Counter()
    for c in class_ids:
        if len(holders[c]) < spec.k:
            raise CoverageError(f"class {c} appears in only {len(holders[c])} images, need {spec.k}")
        for image_id in rng.permutation(holders[c]):
            if counts[c] >= spec.k:
                break
            image_id = int(image_id)
            if image_id in picked:
                continue
            picked.add(image_id)
            chosen.append(image_id)
            counts.update(ds.classes_in(image_id))
    return ds.subset(chosen)


def split(ds: DatasetIndex, fraction: float, seed: int) -> dict[str, DatasetIndex]:
    """Seeded image-level split; ``fraction`` of the images go to ``val``.

    Tries to leave every category present on both sides.
    """
    if not 0 < fraction < 1:
        raise SplitError("fraction must lie strictly between 0 and 1")
    ids = sorted(ds.image_ids)
    n_val = int(round(fraction * len(ids)))
    if n_val == 0 or n_val == len(ids):
        raise SplitError(f"fraction {fraction} of {len(ids)} images leaves an empty side")
    rng = np.random.default_rng(seed)
    order = [int(i) for i in rng.permutation(ids)]
    val: list[int] = []
    for c in ds.category_ids:
        if len(val) >= n_val or any(c in ds.classes_in(i) for i in val):
            continue
        holders = [i for i in order if i not in val and c in ds.classes_in(i)]
        # leave at least one holder for train
        if len(holders) >= 2:
            val.append(holders[0])
    for i in order:
        if len(val) >= n_val:
            break
        if i not in val:
            val.append(i)
    val_set = set(val)
    train = [i for i in order if i not in val_set]
    _rebalance(ds, train, val)
    return {"train": ds.subset(train), "val": ds.subset(val)}


def _rebalance(ds: DatasetIndex, train: list[int], val: list[int]) -> None:
    """Swap image pairs while that raises the number of (side, class) coverages."""
    def cov(side):
        return set().union(*(ds.classes_in(i) for i in side)) if side else set()

    for c in ds.category_ids:
        if c in cov(train):
            continue
        score = len(cov(train)) + len(cov(val))
        swapped = False
        for vi, img in enumerate(val):
            if c not in ds.classes_in(img):
                continue
            for ti, other in enumerate(train):
                new_train = train[:ti] + [img] + train[ti + 1:]
                new_val = val[:vi] + [other] + val[vi + 1:]
                if len(cov(new_train)) + len(cov(new_val)) > score:
                    train[ti], val[vi] = img, other
                    swapped = True
                    break
            if swapped:
                break
