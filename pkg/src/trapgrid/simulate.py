"""Seeded synthetic camera-trap scenarios with planted activity archetypes."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from datetime import timedelta

import numpy as np

from .ingest import (
    DEFAULT_CLASSES,
    ZONES,
    BoundingBox,
    DetectionRecord,
    SiteRecord,
    ValidationError,
    parse_timestamp,
)
from .spatial import LocalProjection

ARCHETYPES = ("human", "wildlife", "conflict", "other")
SAMPLING = ("multinomial", "fixed")


@dataclass
class ClusterSpec:
    name: str
    center: tuple[float, float]
    spread_m: float
    count: int
    mix: dict[str, float]
    n_sites: int = 1
    archetype: str = "other"
    zone: str = "other"

    def validate(self, classes=DEFAULT_CLASSES) -> None:
        if not self.name:
            raise ValidationError("cluster needs a name")
        if not (self.spread_m > 0 and math.isfinite(self.spread_m)):
            raise ValidationError(f"cluster {self.name}: spread_m must be positive")
        if self.count <= 0 or self.n_sites <= 0:
            raise ValidationError(f"cluster {self.name}: count and n_sites must be positive")
        if self.archetype not in ARCHETYPES:
            raise ValidationError(f"cluster {self.name}: unknown archetype {self.archetype!r}")
        if self.zone not in ZONES:
            raise ValidationError(f"cluster {self.name}: unknown zone {self.zone!r}")
        if not self.mix:
            raise ValidationError(f"cluster {self.name}: empty class mix")
        for label, share in self.mix.items():
            if label not in classes:
                raise ValidationError(f"cluster {self.name}: unknown class {label!r}")
            if not (share >= 0 and math.isfinite(share)):
                raise ValidationError(f"cluster {self.name}: bad share for {label}")
        if sum(self.mix.values()) <= 0:
            raise ValidationError(f"cluster {self.name}: class mix sums to zero")
        lat, lon = self.center
        if not (-90 <= lat <= 90 and -180 <= lon <= 180):
            raise ValidationError(f"cluster {self.name}: center out of range")


@dataclass
class SyntheticScenario:
    clusters: list[ClusterSpec] = field(default_factory=list)
    seed: int = 0
    conflict_region: dict | None = None
    confidence_range: tuple[float, float] = (0.5, 1.0)
    sampling: str = "multinomial"
    start: str = "2022-02-01T00:00:00Z"
    end: str = "2022-07-31T00:00:00Z"
    image_size: tuple[int, int] = (640, 640)

    @classmethod
    def from_dict(cls, obj: dict) -> "SyntheticScenario":
        try:
            clusters = [
                ClusterSpec(
                    name=str(c["name"]),
                    center=(float(c["center"][0]), float(c["center"][1])),
                    spread_m=float(c["spread_m"]),
                    count=int(c["count"]),
                    mix={str(k): float(v) for k, v in c["mix"].items()},
                    n_sites=int(c.get("n_sites", 1)),
                    archetype=c.get("archetype", "other"),
                    zone=c.get("zone", "other"),
                )
                for c in obj.get("clusters", [])
            ]
            scenario = cls(
                clusters=clusters,
                seed=int(obj.get("seed", 0)),
                conflict_region=obj.get("conflict_region"),
                confidence_range=tuple(float(v) for v in obj.get("confidence_range", (0.5, 1.0))),
                sampling=obj.get("sampling", "multinomial"),
                start=obj.get("start", cls.start),
                end=obj.get("end", cls.end),
                image_size=tuple(int(v) for v in obj.get("image_size", (640, 640))),
            )
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise ValidationError(f"invalid scenario: {exc}") from exc
        scenario.validate()
        return scenario

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "sampling": self.sampling,
            "confidence_range": list(self.confidence_range),
            "start": self.start,
            "end": self.end,
            "image_size": list(self.image_size),
            "conflict_region": self.conflict_region,
            "clusters": [
                {
                    "name": c.name,
                    "archetype": c.archetype,
                    "center": list(c.center),
                    "spread_m": c.spread_m,
                    "n_sites": c.n_sites,
                    "count": c.count,
                    "mix": dict(c.mix),
                    "zone": c.zone,
                }
                for c in self.clusters
            ],
        }

    def validate(self) -> None:
        names = [c.name for c in self.clusters]
        if len(set(names)) != len(names):
            raise ValidationError("cluster names must be unique")
        for c in self.clusters:
            c.validate()
        lo, hi = self.confidence_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValidationError(f"confidence_range must satisfy 0 <= lo <= hi <= 1, got {self.confidence_range}")
        if self.sampling not in SAMPLING:
            raise ValidationError(f"sampling must be one of {SAMPLING}")
        if not parse_timestamp(self.start) < parse_timestamp(self.end):
            raise ValidationError("scenario start must precede end")
        w, h = self.image_size
        if w < 8 or h < 8:
            raise ValidationError("image_size too small")


def allocate_counts(total: int, mix: dict[str, float]) -> dict[str, int]:
    """Largest-remainder split of ``total`` across the mix, ties to mix order."""
    weight = sum(mix.values())
    raw = {k: total * v / weight for k, v in mix.items()}
    out = {k: math.floor(v) for k, v in raw.items()}
    order = sorted(mix, key=lambda k: -(raw[k] - out[k]))
    for k in order[: total - sum(out.values())]:
        out[k] += 1
    return out


@dataclass
class SimulationResult:
    detections: list[DetectionRecord]
    sites: list[SiteRecord]
    manifest: dict


def simulate(scenario: SyntheticScenario) -> SimulationResult:
    """Draw site locations and detections for every cluster in the scenario.

    Sites scatter around their cluster center with an isotropic normal of
    standard deviation ``spread_m``. Each site gets ``count`` detections whose
    class counts follow the mix, exactly (``fixed``) or by multinomial draw.
    """
    scenario.validate()
    rng = np.random.default_rng(scenario.seed)
    start, end = parse_timestamp(scenario.start), parse_timestamp(scenario.end)
    span = int((end - start).total_seconds())
    width, height = scenario.image_size
    lo, hi = scenario.confidence_range

    sites: list[SiteRecord] = []
    detections: list[DetectionRecord] = []
    site_truth: dict[str, dict] = {}
    for spec in scenario.clusters:
        proj = LocalProjection(*spec.center)
        labels = list(spec.mix)
        probs = np.array([spec.mix[k] for k in labels], dtype=float)
        probs /= probs.sum()
        for k in range(spec.n_sites):
            site_id = f"{spec.name}{k + 1:02d}"
            dx, dy = rng.normal(0.0, spec.spread_m, size=2)
            lon, lat = proj.inverse(float(dx), float(dy))
            lat, lon = round(lat, 7), round(lon, 7)
            sites.append(SiteRecord(site_id, lat, lon, spec.zone, start, end))
            site_truth[site_id] = {"cluster": spec.name, "archetype": spec.archetype, "lat": lat, "lon": lon}

            if scenario.sampling == "fixed":
                counts = allocate_counts(spec.count, spec.mix)
            else:
                counts = dict(zip(labels, (int(v) for v in rng.multinomial(spec.count, probs))))
            seq = [label for label in labels for _ in range(counts[label])]
            seq = [seq[i] for i in rng.permutation(len(seq))]
            offsets = np.sort(rng.integers(0, span, size=len(seq)))
            for n, (label, offset) in enumerate(zip(seq, offsets)):
                bw = float(rng.uniform(0.05, 0.5) * width)
                bh = float(rng.uniform(0.05, 0.5) * height)
                x0 = float(rng.uniform(0, width - bw))
                y0 = float(rng.uniform(0, height - bh))
                box = BoundingBox(round(x0, 2), round(y0, 2), round(x0 + bw, 2), round(y0 + bh, 2), width, height)
                detections.append(
                    DetectionRecord(
                        image_id=f"{site_id}_{n + 1:05d}.jpg",
                        label=label,
                        confidence=round(float(rng.uniform(lo, hi)), 4),
                        box=box,
                        site_id=site_id,
                        timestamp=start + timedelta(seconds=int(offset)),
                    )
                )

    manifest = {
        "scenario": scenario.to_dict(),
        "sites": site_truth,
        "planted": {
            "archetype_centroids": _archetype_centroids(scenario),
            "conflict_centroid": _conflict_centroid(scenario),
        },
        "counts": {"sites": len(sites), "detections": len(detections)},
    }
    return SimulationResult(detections, sites, manifest)


def _archetype_centroids(scenario: SyntheticScenario) -> dict:
    out = {}
    for archetype in ARCHETYPES:
        centers = [c.center for c in scenario.clusters if c.archetype == archetype]
        if centers:
            out[archetype] = {
                "lat": sum(c[0] for c in centers) / len(centers),
                "lon": sum(c[1] for c in centers) / len(centers),
            }
    return out


def _conflict_centroid(scenario: SyntheticScenario) -> dict | None:
    region = scenario.conflict_region
    if region and "center" in region:
        return {"lat": float(region["center"][0]), "lon": float(region["center"][1])}
    return _archetype_centroids(scenario).get("conflict")


_PRESETS = {
    # three archetypes about 10 km apart; the mixed cluster carries as much
    # wildlife and human activity as the pure clusters, so it is a hotspot of both
    "archetypes": {
        "seed": 11,
        "clusters": [
            {"name": "HUM", "archetype": "human", "center": [27.66, 84.42], "spread_m": 700,
             "n_sites": 10, "count": 40, "mix": {"human": 0.6, "domestic_goat": 0.4},
             "zone": "community_forest"},
            {"name": "WLD", "archetype": "wildlife", "center": [27.48, 84.42], "spread_m": 700,
             "n_sites": 10, "count": 40, "mix": {"tiger": 0.5, "rhino": 0.5},
             "zone": "national_park"},
            {"name": "MIX", "archetype": "conflict", "center": [27.57, 84.52], "spread_m": 700,
             "n_sites": 10, "count": 80,
             "mix": {"human": 0.3, "domestic_goat": 0.2, "tiger": 0.25, "rhino": 0.25},
             "zone": "buffer_zone"},
        ],
    },
    # control: human and wildlife activity 20 km apart with no shared sites
    "disjoint": {
        "seed": 5,
        "clusters": [
            {"name": "HUM", "archetype": "human", "center": [27.66, 84.42], "spread_m": 700,
             "n_sites": 8, "count": 40, "mix": {"human": 0.6, "domestic_goat": 0.4},
             "zone": "community_forest"},
            {"name": "WLD", "archetype": "wildlife", "center": [27.48, 84.42], "spread_m": 700,
             "n_sites": 8, "count": 40, "mix": {"tiger": 0.5, "rhino": 0.5},
             "zone": "national_park"},
        ],
    },
}

PRESETS = tuple(_PRESETS)


def preset(name: str) -> dict:
    if name not in _PRESETS:
        raise ValidationError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return copy.deepcopy(_PRESETS[name])
