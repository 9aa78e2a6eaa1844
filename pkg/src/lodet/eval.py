"""Detection metrics: IoU, greedy score-ordered matching, 101-point AP, mAP@0.5."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .detector.boxes import BoxSet, cxcywh_to_xyxy

# k / 100 is correctly rounded; linspace overshoots ten of these points by one ulp
RECALL_GRID = np.arange(101) / 100.0


def iou(a, b) -> float:
    """IoU of two (x1, y1, x2, y2) boxes."""
    ax1, ay1, ax2, ay2 = (float(v) for v in a)
    bx1, by1, bx2, by2 = (float(v) for v in b)
    if ax2 <= ax1 or ay2 <= ay1 or bx2 <= bx1 or by2 <= by1:
        raise ValueError(f"degenerate box in iou({a}, {b})")
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    return inter / ((ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    lo = np.maximum(a[:, None, :2], b[None, :, :2])
    hi = np.minimum(a[:, None, 2:], b[None, :, 2:])
    inter = np.prod(np.clip(hi - lo, 0, None), axis=-1)
    area_a = np.prod(a[:, 2:] - a[:, :2], axis=1)
    area_b = np.prod(b[:, 2:] - b[:, :2], axis=1)
    return inter / (area_a[:, None] + area_b[None, :] - inter)


def match_detections(dets: BoxSet, gts: BoxSet, iou_thr: float = 0.5,
                     max_dets: int = 300) -> np.ndarray:
    """TP flags for the top ``max_dets`` detections of one image.

    Each detection, in score order, takes the unmatched same-class ground truth
    with the highest IoU if that IoU reaches ``iou_thr``.
    """
    scores = dets.scores if dets.scores is not None else np.ones(len(dets), dtype=np.float32)
    if np.any(np.diff(scores) > 0):
        raise ValueError("detections must be sorted by descending score")
    n = min(len(dets), max_dets)
    tp = np.zeros(n, dtype=bool)
    if n == 0 or len(gts) == 0:
        return tp
    ious = iou_matrix(cxcywh_to_xyxy(dets.boxes[:n]), cxcywh_to_xyxy(gts.boxes))
    taken = np.zeros(len(gts), dtype=bool)
    for d in range(n):
        ok = (gts.classes == dets.classes[d]) & ~taken
        if not ok.any():
            continue
        cand = np.where(ok, ious[d], -1.0)
        g = int(np.argmax(cand))
        if cand[g] >= iou_thr:
            taken[g] = True
            tp[d] = True
    return tp


def average_precision(tp, scores, n_gt: int) -> float | None:
    """101-point interpolated AP; None when the class has neither gt nor detections."""
    tp = np.asarray(tp, dtype=bool)
    scores = np.asarray(scores, dtype=np.float64)
    if n_gt == 0:
        return None if len(tp) == 0 else 0.0
    if len(tp) == 0:
        return 0.0
    order = np.argsort(-scores, kind="mergesort")
    tp = tp[order]
    ctp = np.cumsum(tp)
    cfp = np.cumsum(~tp)
    recall = ctp / n_gt
    precision = ctp / (ctp + cfp)
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_GRID, side="left")
    q = np.where(idx < len(precision), precision[np.minimum(idx, len(precision) - 1)], 0.0)
    return float(q.mean())


@dataclass
class EvalResult:
    per_class_ap: dict[int, float]
    map50: float
    n_images: int
    n_gt: int
    n_det: int
    excluded: list[int] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({
            "per_class_ap": {str(k): v for k, v in sorted(self.per_class_ap.items())},
            "map50": self.map50,
            "counts": {"images": self.n_images, "gt": self.n_gt, "det": self.n_det},
        }, indent=1)


def evaluate(dets: dict, gts: dict, classes, iou_thr: float = 0.5,
             max_dets: int = 300) -> EvalResult:
    """mAP@iou_thr over ``classes``; both dicts map image id -> BoxSet."""
    if set(dets) != set(gts):
        raise ValueError("detections and ground truth cover different image ids")
    flags = {c: [] for c in classes}
    conf = {c: [] for c in classes}
    n_gt = {c: 0 for c in classes}
    n_det = 0
    for image_id in gts:
        d, g = dets[image_id], gts[image_id]
        tp = match_detections(d, g, iou_thr, max_dets)
        n = len(tp)
        n_det += n
        scores = d.scores[:n] if d.scores is not None else np.ones(n)
        for c in classes:
            sel = d.classes[:n] == c
            flags[c].append(tp[sel])
            conf[c].append(scores[sel])
            n_gt[c] += int((g.classes == c).sum())
    per_class, excluded = {}, []
    for c in classes:
        ap = average_precision(np.concatenate(flags[c]) if flags[c] else [],
                               np.concatenate(conf[c]) if conf[c] else [], n_gt[c])
        if ap is None:
            excluded.append(c)
            continue
        per_class[c] = ap
    present = [per_class[c] for c in classes if n_gt[c] > 0]
    m = float(np.mean(present)) if present else 0.0
    return EvalResult(per_class, m, len(gts), int(sum(n_gt.values())), n_det, excluded)


# -- COCO results-style records ---------------------------------------------------

def detections_to_records(dets: dict, ds) -> list[dict]:
    """Image id -> BoxSet into COCO results records with pixel [x, y, w, h] boxes."""
    cat_ids = ds.category_ids
    out = []
    for image_id, d in dets.items():
        im = ds.image(image_id)
        scale = np.array([im["width"], im["height"], im["width"], im["height"]], dtype=np.float64)
        xyxy = cxcywh_to_xyxy(d.boxes.astype(np.float64)) * scale
        for box, cls, score in zip(xyxy, d.classes, d.scores):
            out.append({"image_id": int(image_id), "category_id": int(cat_ids[int(cls)]),
                        "bbox": [float(box[0]), float(box[1]), float(box[2] - box[0]),
                                 float(box[3] - box[1])],
                        "score": float(score)})
    return out


def records_to_detections(records: list[dict], ds) -> dict:
    cidx = ds.class_index()
    per_image: dict[int, list[dict]] = {i: [] for i in ds.image_ids}
    for r in records:
        if r["image_id"] not in per_image:
            raise ValueError(f"result for unknown image {r['image_id']}")
        per_image[r["image_id"]].append(r)
    out = {}
    for image_id, recs in per_image.items():
        recs = sorted(recs, key=lambda r: -r["score"])
        im = ds.image(image_id)
        if not recs:
            out[image_id] = BoxSet.empty(with_scores=True)
            continue
        b = np.array([r["bbox"] for r in recs], dtype=np.float64)
        scale = np.array([im["width"], im["height"], im["width"], im["height"]])
        cxcywh = np.concatenate([b[:, :2] + b[:, 2:] / 2, b[:, 2:]], axis=1) / scale
        out[image_id] = BoxSet(cxcywh, [cidx[r["category_id"]] for r in recs],
                               [r["score"] for r in recs])
    return out


def evaluate_records(records: list[dict], ds, iou_thr: float = 0.5,
                     max_dets: int = 300) -> EvalResult:
    dets = records_to_detections(records, ds)
    gts = {i: ds.boxset(i) for i in ds.image_ids}
    return evaluate(dets, gts, list(range(len(ds.categories))), iou_thr, max_dets)
