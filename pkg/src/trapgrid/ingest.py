"""Parsing and validation of detection logs, annotations and site registries."""

from __future__ import annotations

import csv
import io
import json
import math
import random
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Mapping, Sequence

CAMERA_TRAP = "camera_trap"
DRONE_THERMAL = "drone_thermal"
SOURCES = (CAMERA_TRAP, DRONE_THERMAL)

# Camera-trap classes in dataset order, plus the drone-thermal "deer" class.
DEFAULT_CLASSES: tuple[str, ...] = (
    "domestic_goat",
    "tiger",
    "rhino",
    "rhesus_macaque",
    "elephant",
    "sambar_deer",
    "spotted_deer",
    "human",
    "deer",
)

ZONES = ("national_park", "buffer_zone", "corridor_forest", "community_forest", "other")

SITE_HEADER = ["site_id", "lat", "lon", "zone", "active_from", "active_to"]


class ValidationError(ValueError):
    """Raised when input data violates a schema or value constraint."""


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in pixel corner coordinates, tied to its image size."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float
    image_width: int
    image_height: int

    def __post_init__(self):
        if self.image_width <= 0 or self.image_height <= 0:
            raise ValidationError(
                f"image size must be positive, got {self.image_width}x{self.image_height}"
            )
        if not (0 <= self.x_min < self.x_max <= self.image_width):
            raise ValidationError(
                f"box x-range [{self.x_min}, {self.x_max}] invalid for width {self.image_width}"
            )
        if not (0 <= self.y_min < self.y_max <= self.image_height):
            raise ValidationError(
                f"box y-range [{self.y_min}, {self.y_max}] invalid for height {self.image_height}"
            )

    @property
    def corners(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def to_normalized(self) -> tuple[float, float, float, float]:
        """Return ``(cx, cy, w, h)`` as fractions of the image size."""
        w, h = self.image_width, self.image_height
        return (
            (self.x_min + self.x_max) / 2 / w,
            (self.y_min + self.y_max) / 2 / h,
            self.width / w,
            self.height / h,
        )


@dataclass(frozen=True)
class DetectionRecord:
    """One detector output.

    ``site_id`` is optional here so that evaluation-only logs parse; the site
    aggregations reject camera-trap records without one.
    """

    image_id: str
    label: str
    confidence: float
    box: BoundingBox
    site_id: str | None = None
    timestamp: datetime | None = None
    source: str = CAMERA_TRAP

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise ValidationError(f"confidence out of range: {self.confidence}")
        if self.source not in SOURCES:
            raise ValidationError(f"unknown source {self.source!r}")


@dataclass(frozen=True)
class GroundTruthRecord:
    image_id: str
    label: str
    box: BoundingBox


@dataclass(frozen=True)
class SiteRecord:
    site_id: str
    lat: float
    lon: float
    zone: str
    active_from: datetime
    active_to: datetime

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0):
            raise ValidationError(f"latitude out of range: {self.lat}")
        if not (-180.0 <= self.lon <= 180.0):
            raise ValidationError(f"longitude out of range: {self.lon}")
        if self.zone not in ZONES:
            raise ValidationError(f"unknown zone {self.zone!r}")
        if not self.active_from < self.active_to:
            raise ValidationError(f"site {self.site_id}: active_from must precede active_to")


@dataclass
class DatasetSummary:
    image_count: dict[str, int] = field(default_factory=dict)
    annotation_count: dict[str, int] = field(default_factory=dict)

    @property
    def total_images(self) -> int:
        return sum(self.image_count.values())

    @property
    def total_annotations(self) -> int:
        return sum(self.annotation_count.values())

    def to_dict(self) -> dict:
        return {
            "classes": {
                name: {"images": self.image_count[name], "annotations": self.annotation_count[name]}
                for name in self.image_count
            },
            "total_images": self.total_images,
            "total_annotations": self.total_annotations,
        }


def parse_timestamp(text: str) -> datetime:
    """Parse an RFC-3339 instant and normalise it to UTC."""
    value = text.strip()
    if value.endswith(("Z", "z")):
        value = value[:-1] + "+00:00"
    try:
        ts = datetime.fromisoformat(value)
    except ValueError as exc:
        raise ValidationError(f"bad RFC-3339 timestamp {text!r}") from exc
    if ts.tzinfo is None:
        raise ValidationError(f"timestamp {text!r} lacks a UTC offset")
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    text = ts.astimezone(timezone.utc).isoformat()
    return text.replace("+00:00", "Z")


def _check_label(label, classes: Sequence[str]) -> str:
    if not isinstance(label, str) or label not in classes:
        raise ValidationError(f"unknown class {label!r}")
    return label


def parse_detection_log(text: str, classes: Sequence[str] = DEFAULT_CLASSES) -> list[DetectionRecord]:
    """Parse a JSON-lines detection log.

    Blank lines are skipped. Every error message carries the 1-based line number.
    """
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"line {lineno}: malformed JSON ({exc.msg})") from exc
        if not isinstance(obj, dict):
            raise ValidationError(f"line {lineno}: expected a JSON object")
        try:
            records.append(_detection_from_obj(obj, classes))
        except ValidationError as exc:
            raise ValidationError(f"line {lineno}: {exc}") from exc
    return records


def _detection_from_obj(obj: Mapping, classes: Sequence[str]) -> DetectionRecord:
    for key in ("image_id", "class", "confidence", "bbox", "image_size"):
        if key not in obj:
            raise ValidationError(f"missing key {key!r}")
    label = _check_label(obj["class"], classes)
    bbox, size = obj["bbox"], obj["image_size"]
    if not (isinstance(bbox, list) and len(bbox) == 4):
        raise ValidationError("bbox must be [x_min, y_min, x_max, y_max]")
    if not (isinstance(size, list) and len(size) == 2):
        raise ValidationError("image_size must be [width, height]")
    conf = obj["confidence"]
    if isinstance(conf, bool) or not isinstance(conf, (int, float)):
        raise ValidationError(f"confidence must be a number, got {conf!r}")
    try:
        box = BoundingBox(*(float(v) for v in bbox), int(size[0]), int(size[1]))
    except ValidationError as exc:
        raise ValidationError(f"image {obj['image_id']!r} class {label!r}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"image {obj['image_id']!r}: non-numeric box or size") from exc
    ts = obj.get("timestamp")
    return DetectionRecord(
        image_id=str(obj["image_id"]),
        label=label,
        confidence=float(conf),
        box=box,
        site_id=obj.get("site_id"),
        timestamp=parse_timestamp(ts) if ts is not None else None,
        source=obj.get("source", CAMERA_TRAP),
    )


def detection_to_dict(rec: DetectionRecord) -> dict:
    obj = {
        "image_id": rec.image_id,
        "class": rec.label,
        "confidence": rec.confidence,
        "bbox": list(rec.box.corners),
        "image_size": [rec.box.image_width, rec.box.image_height],
        "source": rec.source,
    }
    if rec.site_id is not None:
        obj["site_id"] = rec.site_id
    if rec.timestamp is not None:
        obj["timestamp"] = format_timestamp(rec.timestamp)
    return obj


def dump_detection_log(records: Iterable[DetectionRecord]) -> str:
    return "".join(json.dumps(detection_to_dict(r)) + "\n" for r in records)


def parse_class_map(text: str) -> dict[int, str]:
    """Read an ``index,name`` CSV (header optional) into an index -> name table."""
    table: dict[int, str] = {}
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or not "".join(row).strip():
            continue
        if len(row) != 2:
            raise ValidationError(f"class map line {lineno}: expected 'index,name'")
        idx, name = row[0].strip(), row[1].strip()
        if lineno == 1 and not idx.lstrip("-").isdigit():
            continue
        try:
            key = int(idx)
        except ValueError as exc:
            raise ValidationError(f"class map line {lineno}: bad index {idx!r}") from exc
        if key in table:
            raise ValidationError(f"class map line {lineno}: duplicate index {key}")
        table[key] = name
    return table


_NORM_FIELDS = ("center x", "center y", "width", "height")


def parse_annotations(
    text: str,
    image_width: int,
    image_height: int,
    class_map: Mapping[int, str],
    image_id: str = "",
) -> list[GroundTruthRecord]:
    """Convert normalized ``class cx cy w h`` lines to pixel-corner ground truths.

    Corners are clamped to the image after conversion, which absorbs the
    sub-pixel overflow typical of exported annotations.
    """
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 5:
            raise ValidationError(f"{image_id}:{lineno}: expected 5 fields, got {len(parts)}")
        try:
            idx = int(parts[0])
            cx, cy, w, h = (float(p) for p in parts[1:])
        except ValueError as exc:
            raise ValidationError(f"{image_id}:{lineno}: non-numeric field") from exc
        if idx not in class_map:
            raise ValidationError(f"{image_id}:{lineno}: unknown class index {idx}")
        for name, value in zip(_NORM_FIELDS, (cx, cy, w, h)):
            if not (0.0 <= value <= 1.0):
                raise ValidationError(f"{image_id}:{lineno}: {name} out of range: {value}")
        x0 = min(max((cx - w / 2) * image_width, 0.0), image_width)
        x1 = min(max((cx + w / 2) * image_width, 0.0), image_width)
        y0 = min(max((cy - h / 2) * image_height, 0.0), image_height)
        y1 = min(max((cy + h / 2) * image_height, 0.0), image_height)
        try:
            box = BoundingBox(x0, y0, x1, y1, image_width, image_height)
        except ValidationError as exc:
            raise ValidationError(f"{image_id}:{lineno}: {exc}") from exc
        out.append(GroundTruthRecord(image_id, class_map[idx], box))
    return out


def parse_sites(text: str) -> list[SiteRecord]:
    """Parse the site registry CSV. Unrecognised zone names map to ``other``."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise ValidationError("sites file is empty; header required") from None
    if header != SITE_HEADER:
        raise ValidationError(f"sites header must be {','.join(SITE_HEADER)}")
    sites = []
    seen = set()
    for lineno, row in enumerate(reader, start=2):
        if not row or not "".join(row).strip():
            continue
        if len(row) != len(SITE_HEADER):
            raise ValidationError(f"sites line {lineno}: expected {len(SITE_HEADER)} columns")
        site_id, lat, lon, zone, start, end = (c.strip() for c in row)
        if site_id in seen:
            raise ValidationError(f"sites line {lineno}: duplicate site_id {site_id!r}")
        seen.add(site_id)
        try:
            lat_f, lon_f = float(lat), float(lon)
        except ValueError as exc:
            raise ValidationError(f"sites line {lineno}: lat/lon must be numeric") from exc
        zone = zone if zone in ZONES else "other"
        try:
            sites.append(
                SiteRecord(site_id, lat_f, lon_f, zone, parse_timestamp(start), parse_timestamp(end))
            )
        except ValidationError as exc:
            raise ValidationError(f"sites line {lineno}: {exc}") from exc
    return sites


def dump_sites(sites: Iterable[SiteRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SITE_HEADER)
    for s in sites:
        writer.writerow(
            [s.site_id, repr(s.lat), repr(s.lon), s.zone,
             format_timestamp(s.active_from), format_timestamp(s.active_to)]
        )
    return buf.getvalue()


def summarize_dataset(
    ground_truths: Iterable[GroundTruthRecord], classes: Sequence[str] = DEFAULT_CLASSES
) -> DatasetSummary:
    images: dict[str, set] = {c: set() for c in classes}
    annotations: Counter = Counter()
    for gt in ground_truths:
        images.setdefault(gt.label, set()).add(gt.image_id)
        annotations[gt.label] += 1
    return DatasetSummary(
        image_count={c: len(ids) for c, ids in images.items()},
        annotation_count={c: annotations[c] for c in images},
    )


def split_dataset(
    image_ids: Sequence[str],
    ratios: tuple[float, float, float] = (0.7, 0.2, 0.1),
    seed: int = 0,
) -> tuple[list[str], list[str], list[str]]:
    """Shuffle ids deterministically and cut them into train/val/test lists.

    Each part gets ``floor(n * ratio)`` ids; the leftover (at most two) is
    handed out one at a time starting with train.
    """
    if len(ratios) != 3 or any(r < 0 or not math.isfinite(r) for r in ratios):
        raise ValidationError(f"ratios must be three nonnegative numbers, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValidationError(f"ratios must sum to 1, got {sum(ratios)}")
    ids = list(image_ids)
    if len(set(ids)) != len(ids):
        dupes = sorted(k for k, v in Counter(ids).items() if v > 1)
        raise ValidationError(f"duplicate image ids: {dupes[:5]}")
    n = len(ids)
    # the epsilon keeps e.g. 100 * 0.29 = 28.999999999999996 from flooring to 28
    sizes = [math.floor(n * r + 1e-9) for r in ratios]
    for i in range(n - sum(sizes)):
        sizes[i % 3] += 1
    while sum(sizes) > n:
        sizes[max(range(3), key=lambda i: (sizes[i] > 0, i))] -= 1
    random.Random(seed).shuffle(ids)
    a, b = sizes[0], sizes[0] + sizes[1]
    return ids[:a], ids[a:b], ids[b:]
