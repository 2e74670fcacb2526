"""Weighted density surfaces, hotspot masks, conflict zones and their exports.

Grids are stored south-up: row 0 is the southernmost row, and cell (i, j)
has its center at ``(origin_x + (j + 0.5) * cell_size, origin_y + (i + 0.5) * cell_size)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .ingest import ValidationError

EARTH_RADIUS_M = 6_371_000.0
NODATA = -9999

# quartic (biweight) kernel normalisation; integrates to 1 over the disc of radius h
_QUARTIC_NORM = 3.0 / math.pi
# sqrt(1 / ln 2), scales the median distance in the bandwidth rule
_MEDIAN_SCALE = math.sqrt(1.0 / math.log(2.0))


@dataclass(frozen=True)
class ProjectedPoint:
    x: float
    y: float
    weight: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValidationError(f"non-finite coordinates ({self.x}, {self.y})")
        if not (self.weight >= 0 and math.isfinite(self.weight)):
            raise ValidationError(f"weight must be finite and nonnegative, got {self.weight}")


@dataclass(frozen=True)
class LocalProjection:
    """Equirectangular projection about a reference point, in meters."""

    ref_lat: float
    ref_lon: float

    def __post_init__(self):
        _check_latlon(self.ref_lat, self.ref_lon)

    @property
    def crs_note(self) -> str:
        return f"local equirectangular, R={EARTH_RADIUS_M:.0f} m, ref lat={self.ref_lat!r} lon={self.ref_lon!r}"

    def forward(self, lat: float, lon: float) -> tuple[float, float]:
        _check_latlon(lat, lon)
        x = EARTH_RADIUS_M * math.radians(lon - self.ref_lon) * math.cos(math.radians(self.ref_lat))
        y = EARTH_RADIUS_M * math.radians(lat - self.ref_lat)
        return x, y

    def inverse(self, x: float, y: float) -> tuple[float, float]:
        """Return ``(lon, lat)`` in GeoJSON axis order."""
        lat = self.ref_lat + math.degrees(y / EARTH_RADIUS_M)
        lon = self.ref_lon + math.degrees(x / (EARTH_RADIUS_M * math.cos(math.radians(self.ref_lat))))
        return lon, lat

    @classmethod
    def about_centroid(cls, coords: Sequence[tuple[float, float]]) -> "LocalProjection":
        if not coords:
            raise ValidationError("cannot center a projection on zero points")
        lats, lons = zip(*coords)
        return cls(sum(lats) / len(lats), sum(lons) / len(lons))


def _check_latlon(lat: float, lon: float) -> None:
    if not -90.0 <= lat <= 90.0:
        raise ValidationError(f"latitude out of range: {lat}")
    if not -180.0 <= lon <= 180.0:
        raise ValidationError(f"longitude out of range: {lon}")


def project(lat: float, lon: float, ref_lat: float, ref_lon: float, weight: float = 1.0) -> ProjectedPoint:
    x, y = LocalProjection(ref_lat, ref_lon).forward(lat, lon)
    return ProjectedPoint(x, y, weight)


@dataclass(frozen=True)
class GridSpec:
    origin_x: float
    origin_y: float
    cell_size: float
    n_rows: int
    n_cols: int

    def __post_init__(self):
        if not self.cell_size > 0:
            raise ValidationError(f"cell_size must be positive, got {self.cell_size}")
        if self.n_rows < 1 or self.n_cols < 1:
            raise ValidationError(f"grid must have at least one cell, got {self.n_rows}x{self.n_cols}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def cell_area(self) -> float:
        return self.cell_size * self.cell_size

    def col_centers(self) -> np.ndarray:
        return self.origin_x + (np.arange(self.n_cols) + 0.5) * self.cell_size

    def row_centers(self) -> np.ndarray:
        return self.origin_y + (np.arange(self.n_rows) + 0.5) * self.cell_size

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        """(row, col) of the cell containing a point; may fall outside the grid."""
        return (
            math.floor((y - self.origin_y) / self.cell_size),
            math.floor((x - self.origin_x) / self.cell_size),
        )

    @classmethod
    def covering(cls, points: Sequence[ProjectedPoint], cell_size: float, margin: float) -> "GridSpec":
        """Smallest grid, snapped to whole cells, that covers all points plus ``margin``."""
        if not points:
            raise ValidationError("cannot size a grid for zero points")
        xs = [p.x for p in points]
        ys = [p.y for p in points]
        x0, y0 = min(xs) - margin, min(ys) - margin
        n_cols = max(1, math.ceil((max(xs) + margin - x0) / cell_size))
        n_rows = max(1, math.ceil((max(ys) + margin - y0) / cell_size))
        return cls(x0, y0, cell_size, n_rows, n_cols)


@dataclass
class DensitySurface:
    grid: GridSpec
    values: np.ndarray
    bandwidth: float
    total_weight: float
    crs_note: str = "local planar meters"

    def mass(self) -> float:
        return float(self.values.sum() * self.grid.cell_area)


@dataclass
class ZoneMask:
    grid: GridSpec
    bits: np.ndarray
    threshold_used: float

    @property
    def cell_count(self) -> int:
        return int(self.bits.sum())

    @property
    def area(self) -> float:
        return self.cell_count * self.grid.cell_area


def _window(grid: GridSpec, centers: np.ndarray, origin: float, lo: float, hi: float) -> slice:
    # index range of cell centers that can lie within [lo, hi]; one cell of slack each side
    n = len(centers)
    a = max(0, math.floor((lo - origin) / grid.cell_size) - 1)
    b = min(n, math.ceil((hi - origin) / grid.cell_size) + 1)
    return slice(a, max(a, b))


def _accumulate(points, grid: GridSpec, radius: float, contribution) -> np.ndarray:
    """Sum per-point contributions in input order; each cell sees points in that order."""
    values = np.zeros(grid.shape)
    xs, ys = grid.col_centers(), grid.row_centers()
    for p in points:
        rows = _window(grid, ys, grid.origin_y, p.y - radius, p.y + radius)
        cols = _window(grid, xs, grid.origin_x, p.x - radius, p.x + radius)
        if rows.start >= rows.stop or cols.start >= cols.stop:
            continue
        dx = xs[cols] - p.x
        dy = ys[rows] - p.y
        d2 = dy[:, None] ** 2 + dx[None, :] ** 2
        values[rows, cols] += contribution(p.weight, d2)
    return values


def kde_surface(points: Sequence[ProjectedPoint], bandwidth: float, grid: GridSpec) -> DensitySurface:
    """Weighted quartic-kernel density evaluated at every cell center.

    ``density(c) = sum_i w_i * 3/(pi h^2) * (1 - (d_i/h)^2)^2`` over points
    closer than ``h`` to ``c``; units are weight per square meter.
    """
    if not (bandwidth > 0 and math.isfinite(bandwidth)):
        raise ValidationError(f"bandwidth must be positive, got {bandwidth}")
    h2 = bandwidth * bandwidth
    scale = _QUARTIC_NORM / h2

    def quartic(w, d2):
        u = 1.0 - d2 / h2
        return np.where(d2 < h2, w * scale * u * u, 0.0)

    values = _accumulate(points, grid, bandwidth, quartic)
    return DensitySurface(grid, values, bandwidth, float(sum(p.weight for p in points)))


def point_density(points: Sequence[ProjectedPoint], grid: GridSpec, radius: float) -> DensitySurface:
    """Weight of points within ``radius`` of each cell center, per square meter."""
    if not (radius > 0 and math.isfinite(radius)):
        raise ValidationError(f"radius must be positive, got {radius}")
    r2 = radius * radius
    area = math.pi * r2

    def disc(w, d2):
        return np.where(d2 <= r2, w / area, 0.0)

    values = _accumulate(points, grid, radius, disc)
    return DensitySurface(grid, values, radius, float(sum(p.weight for p in points)))


def default_bandwidth(points: Sequence[ProjectedPoint]) -> float:
    """Weighted spatial-Silverman search radius.

    ``h = 0.9 * min(SD, sqrt(1/ln 2) * Dm) * n_eff ** -0.2`` where ``SD`` is
    the weighted standard distance (root-mean-square distance to the weighted
    mean center), ``Dm`` the weighted median of those distances and
    ``n_eff = (sum w)^2 / sum w^2``.
    """
    pts = [p for p in points if p.weight > 0]
    if len(pts) < 2:
        raise ValidationError("default bandwidth needs at least two positively weighted points")
    w = np.array([p.weight for p in pts])
    x = np.array([p.x for p in pts])
    y = np.array([p.y for p in pts])
    total = w.sum()
    mx, my = (w * x).sum() / total, (w * y).sum() / total
    d = np.hypot(x - mx, y - my)
    sd = math.sqrt(float((w * d * d).sum() / total))

    order = np.argsort(d, kind="stable")
    cum = np.cumsum(w[order])
    # lower weighted median: first distance whose cumulative weight reaches half
    dm = float(d[order][np.searchsorted(cum, total / 2.0)])

    spread = min(sd, _MEDIAN_SCALE * dm)
    if not spread > 0:
        raise ValidationError("zero dispersion; supply bandwidth explicitly")
    n_eff = total * total / float((w * w).sum())
    return 0.9 * spread * n_eff ** -0.2


def hotspot_mask(surface: DensitySurface, percentile: float = 75.0) -> ZoneMask:
    """Cells strictly above the given percentile of the positive cell values.

    The percentile uses linear interpolation. Because the comparison is
    strict, a surface with a single positive value (or a uniform one) yields
    an empty mask.
    """
    if not 0.0 < percentile < 100.0:
        raise ValidationError(f"percentile must lie in (0, 100), got {percentile}")
    positive = surface.values[surface.values > 0]
    if positive.size == 0:
        raise ValidationError("no activity to threshold")
    t = float(np.percentile(positive, percentile))
    return ZoneMask(surface.grid, surface.values > t, t)


def conflict_zones(
    wildlife: DensitySurface, human: DensitySurface, percentile: float = 75.0
) -> ZoneMask:
    """Cells that are hotspots of both surfaces."""
    if wildlife.grid != human.grid:
        raise ValidationError("wildlife and human surfaces are on different grids")
    w = hotspot_mask(wildlife, percentile)
    h = hotspot_mask(human, percentile)
    # a cell counts as conflict only above both thresholds; report the larger one
    return ZoneMask(w.grid, w.bits & h.bits, max(w.threshold_used, h.threshold_used))


def _format_value(v: float) -> str:
    text = np.format_float_positional(v, precision=6, unique=False, fractional=False, trim="k")
    return text.rstrip(".") if text.endswith(".") else text


def export_surface(surface: DensitySurface) -> str:
    """ESRI ASCII grid text, northernmost row first, values to 6 significant digits."""
    g = surface.grid
    lines = [
        f"ncols {g.n_cols}",
        f"nrows {g.n_rows}",
        f"xllcorner {g.origin_x!r}",
        f"yllcorner {g.origin_y!r}",
        f"cellsize {g.cell_size!r}",
        f"NODATA_value {NODATA}",
    ]
    for row in surface.values[::-1]:
        lines.append(" ".join(_format_value(float(v)) for v in row))
    return "\n".join(lines) + "\n"


_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


def parse_surface(text: str, bandwidth: float = float("nan")) -> DensitySurface:
    """Read an ESRI ASCII grid written by :func:`export_surface`."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = {}
    for ln in lines[:6]:
        key, _, value = ln.strip().partition(" ")
        header[key.lower()] = value.strip()
    if tuple(header) != _HEADER_KEYS:
        raise ValidationError(f"ASCII grid header must be {', '.join(_HEADER_KEYS)}")
    grid = GridSpec(
        float(header["xllcorner"]),
        float(header["yllcorner"]),
        float(header["cellsize"]),
        int(header["nrows"]),
        int(header["ncols"]),
    )
    rows = [[float(v) for v in ln.split()] for ln in lines[6:]]
    if len(rows) != grid.n_rows or any(len(r) != grid.n_cols for r in rows):
        raise ValidationError("ASCII grid body does not match its header dimensions")
    values = np.array(rows, dtype=float)[::-1].copy()
    values[values == float(header["nodata_value"])] = np.nan
    return DensitySurface(grid, values, bandwidth, float(np.nansum(values) * grid.cell_area))


def label_components(bits: np.ndarray) -> list[list[tuple[int, int]]]:
    """Maximal 4-connected groups of set cells, ordered by their first cell in row-major order."""
    n_rows, n_cols = bits.shape
    seen = np.zeros_like(bits, dtype=bool)
    components = []
    for i in range(n_rows):
        for j in range(n_cols):
            if not bits[i, j] or seen[i, j]:
                continue
            seen[i, j] = True
            stack, cells = [(i, j)], []
            while stack:
                r, c = stack.pop()
                cells.append((r, c))
                for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                    if 0 <= rr < n_rows and 0 <= cc < n_cols and bits[rr, cc] and not seen[rr, cc]:
                        seen[rr, cc] = True
                        stack.append((rr, cc))
            components.append(sorted(cells))
    return components


def _component_rings(cells: Sequence[tuple[int, int]]) -> list[list[tuple[int, int]]]:
    """Trace boundary rings of a cell set in integer vertex coordinates (col, row).

    Edges are oriented with the region on the left, so outer rings come out
    counter-clockwise and holes clockwise. Where two cells touch only at a
    corner the tracer turns right, crossing to the diagonal cell; a hole that
    meets the outline at a corner then becomes its own ring touching the
    exterior at one point instead of a self-touching exterior.
    """
    cellset = set(cells)
    out_edges: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for r, c in cells:
        corners = [(c, r), (c + 1, r), (c + 1, r + 1), (c, r + 1)]
        neighbours = [(r - 1, c), (r, c + 1), (r + 1, c), (r, c - 1)]
        for k in range(4):
            if neighbours[k] not in cellset:
                out_edges.setdefault(corners[k], []).append(corners[(k + 1) % 4])

    rings = []
    remaining = {(a, b) for a, ends in out_edges.items() for b in ends}
    while remaining:
        start = min(remaining)
        ring = [start[0]]
        prev, cur = start
        remaining.discard(start)
        while cur != ring[0]:
            ring.append(cur)
            din = (cur[0] - prev[0], cur[1] - prev[1])
            options = [e for e in out_edges[cur] if (cur, e) in remaining]
            # right turn first; only a corner-touch vertex offers a choice
            def turn(e):
                dout = (e[0] - cur[0], e[1] - cur[1])
                return din[0] * dout[1] - din[1] * dout[0]
            nxt = min(options, key=turn)
            remaining.discard((cur, nxt))
            prev, cur = cur, nxt
        ring.append(ring[0])
        rings.append(_drop_collinear(ring))
    return rings


def _drop_collinear(ring: list[tuple[int, int]]) -> list[tuple[int, int]]:
    pts = ring[:-1]
    n = len(pts)
    keep = []
    for k in range(n):
        a, b, c = pts[k - 1], pts[k], pts[(k + 1) % n]
        if (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]) != 0:
            keep.append(b)
    # start at the lowest-left vertex so output is independent of trace start
    s = keep.index(min(keep))
    keep = keep[s:] + keep[:s]
    return keep + [keep[0]]


def _signed_area(ring: Sequence[tuple[float, float]]) -> float:
    return 0.5 * sum(x0 * y1 - x1 * y0 for (x0, y0), (x1, y1) in zip(ring, ring[1:]))


def mask_to_geojson(
    mask: ZoneMask,
    inverse_projection: Callable[[float, float], tuple[float, float]] | None = None,
    properties: dict | None = None,
) -> dict:
    """One Polygon feature per 4-connected region of the mask.

    ``inverse_projection`` maps planar ``(x, y)`` to ``(lon, lat)``; without it
    coordinates stay in the planar frame.
    """
    g = mask.grid
    features = []
    for k, cells in enumerate(label_components(mask.bits)):
        rings = _component_rings(cells)
        outer = [r for r in rings if _signed_area(r) > 0]
        holes = [r for r in rings if _signed_area(r) < 0]
        outer.sort(key=lambda r: -_signed_area(r))
        polygon = []
        for ring in outer[:1] + holes:
            coords = []
            for col, row in ring:
                x, y = g.origin_x + col * g.cell_size, g.origin_y + row * g.cell_size
                lon, lat = inverse_projection(x, y) if inverse_projection else (x, y)
                coords.append([lon, lat])
            polygon.append(coords)
        props = {
            "region": k,
            "cell_count": len(cells),
            "area_m2": len(cells) * g.cell_area,
            "threshold_used": mask.threshold_used,
        }
        props.update(properties or {})
        features.append(
            {"type": "Feature", "properties": props, "geometry": {"type": "Polygon", "coordinates": polygon}}
        )
    return {"type": "FeatureCollection", "features": features}


def geojson_text(collection: dict) -> str:
    return json.dumps(collection, indent=1) + "\n"
