"""Set-prediction loss over a one-to-one assignment of proposals to ground truth."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..tensor import Tensor, absolute, cross_entropy
from .boxes import BoxSet, giou_tensor, pairwise_giou
from .matching import hungarian_match


@dataclass(frozen=True)
class LossWeights:
    cls: float = 2.0
    l1: float = 5.0
    giou: float = 2.0
    background: float = 0.1  # class weight of unmatched proposals


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def match_cost(boxes: np.ndarray, logits: np.ndarray, gt: BoxSet, w: LossWeights) -> np.ndarray:
    """(n_pred, n_gt) cost used for the assignment."""
    prob = _softmax(np.asarray(logits, dtype=np.float64))
    cls_cost = -np.log(np.maximum(prob[:, gt.classes], 1e-12))
    l1 = np.abs(np.asarray(boxes, dtype=np.float64)[:, None, :] - gt.boxes[None, :, :]).sum(-1)
    giou = pairwise_giou(boxes, gt.boxes)
    return w.cls * cls_cost + w.l1 * l1 + w.giou * (1.0 - giou)


def set_loss_batch(boxes: Tensor, logits: Tensor, gts: list[BoxSet], n_prop: int,
                   w: LossWeights = LossWeights()) -> tuple[Tensor, dict]:
    """Loss for a batch laid out as len(gts) blocks of ``n_prop`` rows.

    Matched rows take the ground-truth class plus L1 and GIoU box terms; the rest
    are pushed to background (the last logit). Box terms average over matched pairs.
    """
    n_rows, n_logits = logits.shape
    if boxes.shape != (n_rows, 4) or n_rows != n_prop * len(gts):
        raise ValueError(f"inconsistent shapes: boxes {boxes.shape}, logits {logits.shape}, "
                         f"{len(gts)} images x {n_prop} proposals")
    background = n_logits - 1
    targets = np.full(n_rows, background, dtype=np.int64)
    weights = np.full(n_rows, w.background)
    rows, gt_boxes = [], []
    for i, gt in enumerate(gts):
        if len(gt) == 0:
            continue
        lo = i * n_prop
        cost = match_cost(boxes.data[lo:lo + n_prop], logits.data[lo:lo + n_prop], gt, w)
        for r, c in hungarian_match(cost):
            targets[lo + r] = gt.classes[c]
            weights[lo + r] = 1.0
            rows.append(lo + r)
            gt_boxes.append(gt.boxes[c])
    loss_cls = cross_entropy(logits, targets, weights)
    loss = loss_cls * w.cls
    stats = {"cls": float(loss_cls.data), "l1": 0.0, "giou": 0.0, "matched": len(rows)}
    if rows:
        idx = np.asarray(rows)
        pred = boxes[idx]
        tgt = np.asarray(gt_boxes, dtype=np.float64)
        loss_l1 = absolute(pred - tgt).sum() * (1.0 / len(rows))
        loss_giou = (1.0 - giou_tensor(pred, tgt)).sum() * (1.0 / len(rows))
        loss = loss + loss_l1 * w.l1 + loss_giou * w.giou
        stats["l1"] = float(loss_l1.data)
        stats["giou"] = float(loss_giou.data)
    stats["total"] = float(loss.data)
    return loss, stats


def set_loss(pred: dict, gt: BoxSet, w: LossWeights = LossWeights()) -> Tensor:
    """Single-image loss; ``pred`` holds ``boxes`` (N, 4) and ``logits`` (N, C + 1) tensors."""
    boxes, logits = pred["boxes"], pred["logits"]
    loss, _ = set_loss_batch(boxes, logits, [gt], boxes.shape[0], w)
    return loss
