"""Image-level pedestrian detection on top of the window classifier.

An image pyramid brings larger people down to the 64x128 window size, every
window is scored by the classifier, survivors above the score floor are
mapped back to source coordinates and cleaned up with greedy NMS.  Evaluation
follows the usual one-detection-per-ground-truth matching at IoU 0.5 with
all-points interpolated average precision.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import resize_bilinear
from .errors import SpecMismatchError
from .models import ModelWeights, predict

WINDOW_SIZE = (128, 64)  # (height, width) of the classifier window


@dataclass(frozen=True)
class BBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box extents must be positive, got w={self.w} h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass(frozen=True)
class Detection:
    bbox: BBox
    score: float


@dataclass(frozen=True)
class PRPoint:
    threshold: float
    precision: float | None
    recall: float


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    ix = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    iy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def image_pyramid(image: np.ndarray, scale_factor: float = 1.2,
                  min_size: tuple[int, int] = WINDOW_SIZE) -> list[tuple[float, np.ndarray]]:
    """Progressively downscaled copies of a (1,H,W) image.

    Level k measures floor(H/scale_factor^k) x floor(W/scale_factor^k); the
    pyramid stops before either dimension drops below min_size.  Returns
    (scale, level) pairs where multiplying level coordinates by scale maps
    back to the source image.
    """
    if scale_factor <= 1:
        raise ValueError(f"scale_factor must be > 1, got {scale_factor}")
    _, h, w = image.shape
    levels = []
    k = 0
    while True:
        scale = scale_factor**k
        lh, lw = int(h / scale), int(w / scale)
        if lh < min_size[0] or lw < min_size[1]:
            break
        levels.append((scale, resize_bilinear(image, (lh, lw))))
        k += 1
    return levels


def sliding_windows(level: np.ndarray, window: tuple[int, int] = WINDOW_SIZE,
                    stride_px: int = 16) -> list[tuple[BBox, np.ndarray]]:
    """All fully contained windows over a (1,H,W) level, row-major order."""
    if stride_px < 1:
        raise ValueError(f"stride must be >= 1, got {stride_px}")
    _, h, w = level.shape
    wh, ww = window
    if h < wh or w < ww:
        return []
    out = []
    for y in range(0, h - wh + 1, stride_px):
        for x in range(0, w - ww + 1, stride_px):
            out.append((BBox(x, y, ww, wh), level[:, y : y + wh, x : x + ww]))
    return out


def nms(detections: list[Detection], iou_threshold: float) -> list[Detection]:
    """Greedy non-maximum suppression; score ties keep the earlier input index."""
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].score, i))
    kept: list[Detection] = []
    for i in order:
        candidate = detections[i]
        if all(iou(candidate.bbox, k.bbox) <= iou_threshold for k in kept):
            kept.append(candidate)
    return kept


def detect(weights: ModelWeights, image: np.ndarray, score_floor: float = 0.5,
           nms_iou: float = 0.5, scale_factor: float = 1.2,
           stride_px: int = 16) -> list[Detection]:
    """Scored boxes for every person-like window in a (1,H,W) image.

    Classifies all pyramid windows, keeps positive scores above score_floor,
    maps boxes back through the level scale, and suppresses overlaps.  The
    result is sorted by descending score.
    """
    if weights.spec.name != "pedestrian":
        raise SpecMismatchError(
            f"detect needs a 'pedestrian' model, got {weights.spec.name!r}"
        )
    raw: list[Detection] = []
    for scale, level in image_pyramid(image, scale_factor=scale_factor):
        for bbox, window in sliding_windows(level, stride_px=stride_px):
            score = float(predict(weights, window)[1])
            if score > score_floor:
                raw.append(
                    Detection(
                        BBox(bbox.x * scale, bbox.y * scale, bbox.w * scale, bbox.h * scale),
                        score,
                    )
                )
    return nms(raw, nms_iou)


def frame_score(detections: list[Detection]) -> float:
    """Single pedestrian score for a frame: best surviving detection, 0 if none."""
    return max((d.score for d in detections), default=0.0)


def average_precision(detections: dict[str, list[Detection]],
                      ground_truth: dict[str, list[BBox]],
                      match_iou: float = 0.5) -> tuple[float, list[PRPoint]]:
    """All-points interpolated AP over ranked detections from many images.

    Detections are ranked globally by descending score (ties keep input
    order).  Each one matches the highest-IoU not-yet-matched ground-truth
    box in its image when that IoU reaches match_iou; matched ground truth is
    consumed.  AP sums delta-recall times interpolated precision (the maximum
    precision at any recall at or beyond the point).
    """
    flat = [(img, det) for img, dets in detections.items() for det in dets]
    flat.sort(key=lambda pair: -pair[1].score)
    npos = sum(len(boxes) for boxes in ground_truth.values())

    matched: dict[str, list[bool]] = {img: [False] * len(b) for img, b in ground_truth.items()}
    is_tp = []
    for img, det in flat:
        boxes = ground_truth.get(img, [])
        best_iou, best_j = 0.0, -1
        for j, gt in enumerate(boxes):
            if matched[img][j]:
                continue
            overlap = iou(det.bbox, gt)
            if overlap > best_iou:
                best_iou, best_j = overlap, j
        if best_j >= 0 and best_iou >= match_iou:
            matched[img][best_j] = True
            is_tp.append(True)
        else:
            is_tp.append(False)

    points: list[PRPoint] = []
    tp = fp = 0
    precisions = []
    recalls = []
    for (img, det), hit in zip(flat, is_tp):
        if hit:
            tp += 1
        else:
            fp += 1
        precisions.append(tp / (tp + fp))
        recalls.append(tp / npos if npos else 0.0)
        points.append(PRPoint(det.score, precisions[-1], recalls[-1]))

    # interpolate: precision at rank k becomes the max precision at any later rank
    interpolated = list(precisions)
    for k in range(len(interpolated) - 2, -1, -1):
        interpolated[k] = max(interpolated[k], interpolated[k + 1])

    ap = 0.0
    prev_recall = 0.0
    for k, hit in enumerate(is_tp):
        if hit:
            ap += (recalls[k] - prev_recall) * interpolated[k]
            prev_recall = recalls[k]
    return ap, points


# --- dump formats ----------------------------------------------------------

def detections_to_jsonl(per_image: dict[str, list[Detection]]) -> str:
    """One record per image: {"image": ..., "boxes": [{x,y,w,h,score}, ...]}."""
    lines = []
    for img, dets in per_image.items():
        boxes = [
            {"x": d.bbox.x, "y": d.bbox.y, "w": d.bbox.w, "h": d.bbox.h, "score": d.score}
            for d in dets
        ]
        lines.append(json.dumps({"image": img, "boxes": boxes}))
    return "\n".join(lines) + ("\n" if lines else "")


def ground_truth_from_jsonl(text: str) -> dict[str, list[BBox]]:
    """Parse the detection dump schema without scores into ground-truth boxes."""
    result: dict[str, list[BBox]] = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        result[record["image"]] = [
            BBox(b["x"], b["y"], b["w"], b["h"]) for b in record["boxes"]
        ]
    return result


def pr_curve_csv(points: list[PRPoint]) -> str:
    lines = ["threshold,precision,recall"]
    for p in points:
        precision = "" if p.precision is None else repr(p.precision)
        lines.append(f"{p.threshold!r},{precision},{p.recall!r}")
    return "\n".join(lines) + "\n"
