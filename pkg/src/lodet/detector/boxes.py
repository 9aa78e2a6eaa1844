"""Box containers and geometry. Boxes are normalized (cx, cy, w, h) unless noted."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..tensor import Tensor, maximum, minimum, relu

MIN_SIZE = 1e-4


@dataclass
class BoxSet:
    boxes: np.ndarray  # (N, 4) cx, cy, w, h in [0, 1]
    classes: np.ndarray  # (N,) int
    scores: np.ndarray | None = None  # (N,) on predictions only

    def __post_init__(self):
        self.boxes = np.asarray(self.boxes, dtype=np.float32).reshape(-1, 4)
        self.classes = np.asarray(self.classes, dtype=np.int64).reshape(-1)
        if len(self.boxes) != len(self.classes):
            raise ValueError("boxes and classes differ in length")
        if self.scores is not None:
            self.scores = np.asarray(self.scores, dtype=np.float32).reshape(-1)

    def __len__(self) -> int:
        return len(self.boxes)

    @classmethod
    def empty(cls, with_scores: bool = False) -> "BoxSet":
        return cls(np.zeros((0, 4)), np.zeros(0), np.zeros(0) if with_scores else None)


def clamp_boxes(b: np.ndarray) -> np.ndarray:
    b = np.array(b, dtype=np.float32, copy=True)
    b[..., :2] = np.clip(b[..., :2], 0.0, 1.0)
    b[..., 2:] = np.clip(b[..., 2:], MIN_SIZE, 1.0)
    return b


def cxcywh_to_xyxy(b: np.ndarray) -> np.ndarray:
    b = np.asarray(b)
    half = b[..., 2:] / 2
    return np.concatenate([b[..., :2] - half, b[..., :2] + half], axis=-1)


def xyxy_to_cxcywh(b: np.ndarray) -> np.ndarray:
    b = np.asarray(b)
    return np.concatenate([(b[..., :2] + b[..., 2:]) / 2, b[..., 2:] - b[..., :2]], axis=-1)


def pairwise_giou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """GIoU between every box in ``a`` (N, 4) and ``b`` (M, 4), cxcywh input."""
    a = np.asarray(a, dtype=np.float64).copy()
    b = np.asarray(b, dtype=np.float64).copy()
    a[:, 2:] = np.maximum(a[:, 2:], MIN_SIZE)
    b[:, 2:] = np.maximum(b[:, 2:], MIN_SIZE)
    ax, bx = cxcywh_to_xyxy(a)[:, None, :], cxcywh_to_xyxy(b)[None, :, :]
    lo = np.maximum(ax[..., :2], bx[..., :2])
    hi = np.minimum(ax[..., 2:], bx[..., 2:])
    inter = np.prod(np.clip(hi - lo, 0, None), axis=-1)
    area_a = a[:, 2] * a[:, 3]
    area_b = b[:, 2] * b[:, 3]
    union = area_a[:, None] + area_b[None, :] - inter
    enc = np.prod(np.maximum(ax[..., 2:], bx[..., 2:]) - np.minimum(ax[..., :2], bx[..., :2]), axis=-1)
    return inter / union - (enc - union) / enc


def giou_tensor(pred: Tensor, target: np.ndarray) -> Tensor:
    """Row-wise GIoU between predicted boxes (Tensor, cxcywh) and fixed targets."""
    target = np.asarray(target, dtype=np.float64)
    cx, cy = pred[:, 0], pred[:, 1]
    w = maximum(pred[:, 2], MIN_SIZE)
    h = maximum(pred[:, 3], MIN_SIZE)
    px1, px2 = cx - w * 0.5, cx + w * 0.5
    py1, py2 = cy - h * 0.5, cy + h * 0.5
    tw = np.maximum(target[:, 2], MIN_SIZE)
    th = np.maximum(target[:, 3], MIN_SIZE)
    tx1, tx2 = target[:, 0] - tw / 2, target[:, 0] + tw / 2
    ty1, ty2 = target[:, 1] - th / 2, target[:, 1] + th / 2
    iw = relu(minimum(px2, tx2) - maximum(px1, tx1))
    ih = relu(minimum(py2, ty2) - maximum(py1, ty1))
    inter = iw * ih
    union = w * h + tw * th - inter
    ew = maximum(px2, tx2) - minimum(px1, tx1)
    eh = maximum(py2, ty2) - minimum(py1, ty1)
    enc = ew * eh
    return inter / union - (enc - union) / enc
