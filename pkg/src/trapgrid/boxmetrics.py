"""Box overlap measures and greedy non-maximum suppression.

Boxes may be given as :class:`~trapgrid.ingest.BoundingBox` instances or as
plain ``(x_min, y_min, x_max, y_max)`` sequences; the geometry here does not
need the image frame, so boxes partly outside it are fine.
"""

from __future__ import annotations

import math
from typing import Sequence, Union

from .ingest import BoundingBox, DetectionRecord, ValidationError

BoxLike = Union[BoundingBox, Sequence[float]]

_ASPECT_SCALE = 4.0 / math.pi**2


def _corners(box: BoxLike) -> tuple[float, float, float, float]:
    if isinstance(box, BoundingBox):
        x0, y0, x1, y1 = box.corners
    else:
        x0, y0, x1, y1 = (float(v) for v in box)
    if not (x1 > x0 and y1 > y0):
        raise ValidationError(f"degenerate box {(x0, y0, x1, y1)}: zero or negative area")
    return x0, y0, x1, y1


def _overlap(a, b):
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    inter = iw * ih if iw > 0 and ih > 0 else 0.0
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter, union


def iou(a: BoxLike, b: BoxLike) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    inter, union = _overlap(_corners(a), _corners(b))
    return inter / union


def ciou(a: BoxLike, b: BoxLike) -> float:
    """Complete IoU: IoU minus a center-distance and an aspect-ratio penalty.

    ``ciou = iou - rho^2 / c^2 - alpha * v`` where ``rho`` is the distance
    between box centers, ``c`` the diagonal of the smallest enclosing box,
    ``v = 4/pi^2 (atan(w_a/h_a) - atan(w_b/h_b))^2`` and
    ``alpha = v / ((1 - iou) + v)``. At ``iou == 1`` and ``v == 0`` the
    weight ``alpha`` is taken as 0.
    """
    ca, cb = _corners(a), _corners(b)
    inter, union = _overlap(ca, cb)
    overlap = inter / union

    rho2 = ((ca[0] + ca[2]) / 2 - (cb[0] + cb[2]) / 2) ** 2 + (
        (ca[1] + ca[3]) / 2 - (cb[1] + cb[3]) / 2
    ) ** 2
    c2 = (max(ca[2], cb[2]) - min(ca[0], cb[0])) ** 2 + (max(ca[3], cb[3]) - min(ca[1], cb[1])) ** 2

    v = _ASPECT_SCALE * (
        math.atan((ca[2] - ca[0]) / (ca[3] - ca[1])) - math.atan((cb[2] - cb[0]) / (cb[3] - cb[1]))
    ) ** 2
    denom = (1.0 - overlap) + v
    alpha = v / denom if denom > 0 else 0.0
    return overlap - rho2 / c2 - alpha * v


def nms(
    detections: Sequence[DetectionRecord],
    iou_threshold: float = 0.5,
    class_agnostic: bool = False,
) -> list[DetectionRecord]:
    """Greedy non-maximum suppression for the detections of one image.

    Detections are visited by descending confidence (equal confidences keep
    input order). A detection survives if its IoU with every survivor of the
    same class, or of any class when ``class_agnostic``, is at most
    ``iou_threshold``. Survivors come back in visiting order.
    """
    if not (0.0 < iou_threshold <= 1.0):
        raise ValidationError(f"iou_threshold must lie in (0, 1], got {iou_threshold}")
    if len({d.image_id for d in detections}) > 1:
        raise ValidationError("nms expects detections from a single image")

    order = sorted(range(len(detections)), key=lambda i: (-detections[i].confidence, i))
    kept: list[DetectionRecord] = []
    for i in order:
        det = detections[i]
        if all(
            iou(det.box, k.box) <= iou_threshold
            for k in kept
            if class_agnostic or k.label == det.label
        ):
            kept.append(det)
    return kept
