"""Detection-quality metrics: matching, precision/recall, AP and mAP."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .boxmetrics import iou
from .ingest import DetectionRecord, GroundTruthRecord, ValidationError

IOU_THRESHOLDS: tuple[float, ...] = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))
RECALL_GRID: tuple[float, ...] = tuple(k / 100 for k in range(101))


def threshold_key(t: float) -> str:
    return f"{t:.2f}"


def _check_threshold(iou_threshold: float) -> None:
    if not (0.0 < iou_threshold <= 1.0):
        raise ValidationError(f"iou_threshold must lie in (0, 1], got {iou_threshold}")


def _ranked(detections: Sequence[DetectionRecord]) -> list[int]:
    # descending confidence, input order among equals
    return sorted(range(len(detections)), key=lambda i: (-detections[i].confidence, i))


@dataclass
class MatchOutcome:
    detection_tp: list[bool]
    gt_matched: list[bool]

    @property
    def tp(self) -> int:
        return sum(self.detection_tp)

    @property
    def fp(self) -> int:
        return len(self.detection_tp) - self.tp

    @property
    def fn(self) -> int:
        return len(self.gt_matched) - sum(self.gt_matched)


def match_detections(
    detections: Sequence[DetectionRecord],
    ground_truths: Sequence[GroundTruthRecord],
    iou_threshold: float = 0.5,
) -> MatchOutcome:
    """One-to-one greedy matching within each (image, class) group.

    Detections are taken by descending confidence; each claims the unmatched
    ground truth of its image and class with the highest IoU, provided that
    IoU reaches ``iou_threshold``. Among equal IoUs the earlier ground truth wins.
    """
    _check_threshold(iou_threshold)
    groups: dict[tuple[str, str], list[int]] = defaultdict(list)
    for j, gt in enumerate(ground_truths):
        groups[(gt.image_id, gt.label)].append(j)

    det_tp = [False] * len(detections)
    gt_matched = [False] * len(ground_truths)
    for i in _ranked(detections):
        det = detections[i]
        best_j, best_iou = -1, -1.0
        for j in groups.get((det.image_id, det.label), ()):
            if gt_matched[j]:
                continue
            overlap = iou(det.box, ground_truths[j].box)
            if overlap > best_iou:
                best_j, best_iou = j, overlap
        if best_j >= 0 and best_iou >= iou_threshold:
            det_tp[i] = True
            gt_matched[best_j] = True
    return MatchOutcome(det_tp, gt_matched)


@dataclass(frozen=True)
class PrecisionRecall:
    precision: float
    recall: float
    precision_undefined: bool = False
    recall_undefined: bool = False


def precision_recall(outcome: MatchOutcome) -> PrecisionRecall:
    return precision_recall_counts(outcome.tp, outcome.fp, outcome.fn)


def precision_recall_counts(tp: int, fp: int, fn: int) -> PrecisionRecall:
    """Precision TP/(TP+FP) and recall TP/(TP+FN); a zero denominator yields 0, flagged."""
    p_den, r_den = tp + fp, tp + fn
    return PrecisionRecall(
        precision=tp / p_den if p_den else 0.0,
        recall=tp / r_den if r_den else 0.0,
        precision_undefined=p_den == 0,
        recall_undefined=r_den == 0,
    )


@dataclass
class PRCurve:
    """Raw (recall, precision) points, one per distinct confidence level."""

    recall: list[float]
    precision: list[float]

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.recall, self.precision))

    def envelope(self) -> list[float]:
        """Precision made nonincreasing in recall: max precision at any recall >= r_i."""
        env = list(self.precision)
        for i in range(len(env) - 2, -1, -1):
            env[i] = max(env[i], env[i + 1])
        return env

    def envelope_at(self, r: float) -> float:
        best = 0.0
        for rec, prec in zip(self.recall, self.precision):
            if rec >= r and prec > best:
                best = prec
        return best


def curve_from_ranked(
    tp_flags: Sequence[bool], n_gt: int, confidences: Sequence[float] | None = None
) -> PRCurve:
    """Sweep ranked outcomes into a PR curve.

    With ``confidences`` given (nonincreasing), tied detections are emitted as
    a single point, which is what thresholding on confidence can produce.
    """
    if n_gt <= 0:
        raise ValidationError("AP undefined for absent class")
    recall, precision = [], []
    tp = 0
    n = len(tp_flags)
    for k, flag in enumerate(tp_flags):
        tp += bool(flag)
        if confidences is not None and k + 1 < n and confidences[k + 1] == confidences[k]:
            continue
        recall.append(tp / n_gt)
        precision.append(tp / (k + 1))
    return PRCurve(recall, precision)


def pr_curve(
    detections: Sequence[DetectionRecord],
    ground_truths: Sequence[GroundTruthRecord],
    iou_threshold: float = 0.5,
) -> PRCurve:
    """PR curve over all given detections; callers pass a single class."""
    if not ground_truths:
        raise ValidationError("AP undefined for absent class")
    outcome = match_detections(detections, ground_truths, iou_threshold)
    order = _ranked(detections)
    return curve_from_ranked(
        [outcome.detection_tp[i] for i in order],
        len(ground_truths),
        [detections[i].confidence for i in order],
    )


def average_precision(curve: PRCurve) -> float:
    """101-point interpolated AP: mean envelope precision at recall 0.00, 0.01, ..., 1.00."""
    env = curve.envelope()
    total = 0.0
    i = 0
    # RECALL_GRID ascends, so a single forward pointer finds the first point with recall >= r
    for r in RECALL_GRID:
        while i < len(curve.recall) and curve.recall[i] < r:
            i += 1
        if i < len(curve.recall):
            total += env[i]
    return total / len(RECALL_GRID)


def _by_class(records: Iterable) -> dict[str, list]:
    out: dict[str, list] = defaultdict(list)
    for r in records:
        out[r.label].append(r)
    return out


def per_class_ap(detections, ground_truths, iou_threshold: float = 0.5) -> dict[str, float]:
    """AP for each class that has at least one ground truth, in sorted class order."""
    _check_threshold(iou_threshold)
    dets, gts = _by_class(detections), _by_class(ground_truths)
    return {
        label: average_precision(pr_curve(dets.get(label, []), gts[label], iou_threshold))
        for label in sorted(gts)
    }


def map_at(detections, ground_truths, iou_threshold: float = 0.5) -> float:
    aps = per_class_ap(detections, ground_truths, iou_threshold)
    if not aps:
        raise ValidationError("mAP undefined: no class has ground truth")
    return sum(aps.values()) / len(aps)


def map_range(detections, ground_truths, thresholds: Sequence[float] = IOU_THRESHOLDS) -> float:
    """mAP averaged over IoU thresholds 0.50, 0.55, ..., 0.95."""
    return sum(map_at(detections, ground_truths, t) for t in thresholds) / len(thresholds)


@dataclass
class ClassMetrics:
    ap: dict[str, float]
    precision: float
    recall: float
    precision_undefined: bool
    recall_undefined: bool
    tp: int
    fp: int
    fn: int
    n_detections: int
    n_ground_truths: int

    def to_dict(self) -> dict:
        return {
            "ap": dict(self.ap),
            "precision": self.precision,
            "recall": self.recall,
            "precision_undefined": self.precision_undefined,
            "recall_undefined": self.recall_undefined,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "n_detections": self.n_detections,
            "n_ground_truths": self.n_ground_truths,
        }


@dataclass
class MetricsReport:
    precision: float
    recall: float
    map50: float
    map50_95: float
    precision_undefined: bool = False
    recall_undefined: bool = False
    per_class: dict[str, ClassMetrics] = field(default_factory=dict)
    n_images: int = 0
    n_detections: int = 0
    n_ground_truths: int = 0
    iou_threshold: float = 0.5
    confidence_floor: float = 0.5
    model: str | None = None

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "config": {"iou_threshold": self.iou_threshold, "confidence_floor": self.confidence_floor},
            "counts": {
                "images": self.n_images,
                "detections": self.n_detections,
                "ground_truths": self.n_ground_truths,
            },
            "precision": self.precision,
            "recall": self.recall,
            "precision_undefined": self.precision_undefined,
            "recall_undefined": self.recall_undefined,
            "mAP50": self.map50,
            "mAP50_95": self.map50_95,
            "per_class": {name: m.to_dict() for name, m in self.per_class.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, obj: dict) -> "MetricsReport":
        """Rebuild a report; only the four headline numbers are required."""
        try:
            config = obj.get("config", {})
            counts = obj.get("counts", {})
            report = cls(
                precision=float(obj["precision"]),
                recall=float(obj["recall"]),
                map50=float(obj["mAP50"]),
                map50_95=float(obj["mAP50_95"]),
                precision_undefined=bool(obj.get("precision_undefined", False)),
                recall_undefined=bool(obj.get("recall_undefined", False)),
                per_class={
                    name: ClassMetrics(**m) for name, m in obj.get("per_class", {}).items()
                },
                n_images=int(counts.get("images", 0)),
                n_detections=int(counts.get("detections", 0)),
                n_ground_truths=int(counts.get("ground_truths", 0)),
                iou_threshold=float(config.get("iou_threshold", 0.5)),
                confidence_floor=float(config.get("confidence_floor", 0.5)),
                model=obj.get("model"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed metrics report: {exc}") from exc
        for name in ("precision", "recall", "map50", "map50_95"):
            if not 0.0 <= getattr(report, name) <= 1.0:
                raise ValidationError(f"metrics report {name} outside [0, 1]")
        return report

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls.from_dict(json.loads(text))


def evaluate_run(
    detections: Sequence[DetectionRecord],
    ground_truths: Sequence[GroundTruthRecord],
    iou_threshold: float = 0.5,
    confidence_floor: float = 0.5,
    model: str | None = None,
) -> MetricsReport:
    """Full metrics report for one detector run.

    Operating-point precision and recall use only detections at or above
    ``confidence_floor``; AP and mAP use every detection. Aggregates are
    unweighted means over classes that have ground truth.
    """
    _check_threshold(iou_threshold)
    dets, gts = _by_class(detections), _by_class(ground_truths)
    if not gts:
        raise ValidationError("mAP undefined: no class has ground truth")

    ap_table = {t: per_class_ap(detections, ground_truths, t) for t in IOU_THRESHOLDS}
    per_class = {}
    for label in sorted(set(dets) | set(gts)):
        kept = [d for d in dets.get(label, []) if d.confidence >= confidence_floor]
        outcome = match_detections(kept, gts.get(label, []), iou_threshold)
        pr = precision_recall(outcome)
        per_class[label] = ClassMetrics(
            ap={threshold_key(t): ap_table[t][label] for t in IOU_THRESHOLDS} if label in gts else {},
            precision=pr.precision,
            recall=pr.recall,
            precision_undefined=pr.precision_undefined,
            recall_undefined=pr.recall_undefined,
            tp=outcome.tp,
            fp=outcome.fp,
            fn=outcome.fn,
            n_detections=len(dets.get(label, [])),
            n_ground_truths=len(gts.get(label, [])),
        )

    scored = [per_class[label] for label in sorted(gts)]
    map50 = sum(ap_table[0.5].values()) / len(gts)
    map50_95 = sum(sum(ap_table[t].values()) / len(gts) for t in IOU_THRESHOLDS) / len(IOU_THRESHOLDS)
    return MetricsReport(
        precision=sum(m.precision for m in scored) / len(scored),
        recall=sum(m.recall for m in scored) / len(scored),
        map50=map50,
        map50_95=map50_95,
        precision_undefined=all(m.precision_undefined for m in scored),
        recall_undefined=all(m.recall_undefined for m in scored),
        per_class=per_class,
        n_images=len({r.image_id for r in detections} | {r.image_id for r in ground_truths}),
        n_detections=len(detections),
        n_ground_truths=len(ground_truths),
        iou_threshold=iou_threshold,
        confidence_floor=confidence_floor,
        model=model,
    )
