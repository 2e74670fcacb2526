"""Per-site class profiles and correlation-distance agglomerative clustering."""

from __future__ import annotations

import csv
import io
import json
import math
import re
from dataclasses import dataclass
from decimal import Decimal, localcontext
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .ingest import CAMERA_TRAP, DEFAULT_CLASSES, DetectionRecord, SiteRecord, ValidationError

HUMAN_CLASSES = ("human", "domestic_goat")
WILDLIFE_CLASSES = ("tiger", "rhino")
LINKAGES = ("average", "single", "complete")
LABELS = ("human", "wildlife", "conflict", "unlabeled")

# 1 - r is evaluated from exact rational moments at this many digits, then rounded once to float
_DIGITS = 60


@dataclass(frozen=True)
class SiteProfile:
    site_id: str
    counts: tuple[int, ...]
    classes: tuple[str, ...] = DEFAULT_CLASSES

    @property
    def total(self) -> int:
        return sum(self.counts)

    def count(self, label: str) -> int:
        return self.counts[self.classes.index(label)] if label in self.classes else 0


def build_profiles(
    detections: Iterable[DetectionRecord],
    sites: Sequence[SiteRecord],
    confidence_floor: float = 0.5,
    classes: Sequence[str] = DEFAULT_CLASSES,
    per_image: bool = False,
) -> list[SiteProfile]:
    """Count detections per class at each registered site.

    By default every detection at or above ``confidence_floor`` counts once;
    with ``per_image`` a class counts at most once per image. Drone records
    are ignored. Sites come back in registry order, including those with no
    detections.
    """
    index = {s.site_id: k for k, s in enumerate(sites)}
    counts = np.zeros((len(sites), len(classes)), dtype=np.int64)
    class_index = {c: k for k, c in enumerate(classes)}
    seen = set()
    for det in detections:
        if det.source != CAMERA_TRAP:
            continue
        if det.site_id is None:
            raise ValidationError(f"camera_trap detection on {det.image_id!r} has no site_id")
        if det.site_id not in index:
            raise ValidationError(f"detection on {det.image_id!r} references unknown site {det.site_id!r}")
        if det.confidence < confidence_floor or det.label not in class_index:
            continue
        if per_image:
            key = (det.site_id, det.image_id, det.label)
            if key in seen:
                continue
            seen.add(key)
        counts[index[det.site_id], class_index[det.label]] += 1
    return [
        SiteProfile(s.site_id, tuple(int(v) for v in counts[k]), tuple(classes))
        for k, s in enumerate(sites)
    ]


def _values(p) -> list:
    return list(p.counts) if isinstance(p, SiteProfile) else [v for v in p]


def correlation_distance(p, q) -> float:
    """``1 - pearson(p, q)``, in [0, 2].

    Accepts profiles or numeric sequences. The value is the correctly rounded
    double of the exact result, so it does not depend on summation order.
    Constant vectors have no correlation: two constants are at distance 0,
    a constant and a non-constant vector at distance 1.
    """
    x, y = _values(p), _values(q)
    if len(x) != len(y):
        raise ValidationError(f"profile length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise ValidationError("correlation needs vectors of length >= 2")
    x_const, y_const = min(x) == max(x), min(y) == max(y)
    if x_const and y_const:
        return 0.0
    if x_const or y_const:
        return 1.0

    fx = [Fraction(v) for v in x]
    fy = [Fraction(v) for v in y]
    n = len(fx)
    sx, sy = sum(fx), sum(fy)
    sxy = n * sum(a * b for a, b in zip(fx, fy)) - sx * sy
    sxx = n * sum(a * a for a in fx) - sx * sx
    syy = n * sum(b * b for b in fy) - sy * sy
    r2 = sxy * sxy / (sxx * syy)
    with localcontext() as ctx:
        ctx.prec = _DIGITS
        r = (Decimal(r2.numerator) / Decimal(r2.denominator)).sqrt()
        if sxy < 0:
            r = -r
        d = Decimal(1) - r
    return min(2.0, max(0.0, float(d)))


def euclidean_distance(p, q) -> float:
    x, y = _values(p), _values(q)
    if len(x) != len(y):
        raise ValidationError(f"profile length mismatch: {len(x)} vs {len(y)}")
    return math.sqrt(math.fsum((a - b) ** 2 for a, b in zip(x, y)))


@dataclass
class DistanceMatrix:
    labels: list[str]
    values: np.ndarray
    metric: str = "correlation"

    @property
    def n(self) -> int:
        return len(self.labels)

    def validate(self) -> None:
        v = self.values
        if v.shape != (self.n, self.n):
            raise ValidationError(f"distance matrix shape {v.shape} does not match {self.n} labels")
        if not np.array_equal(v, v.T):
            raise ValidationError("distance matrix is not symmetric")
        if np.any(np.diag(v) != 0):
            raise ValidationError("distance matrix diagonal must be zero")
        if np.any(v < 0) or (self.metric == "correlation" and np.any(v > 2)):
            raise ValidationError("distance matrix entries out of range")


def distance_matrix(profiles: Sequence, metric: str = "correlation") -> DistanceMatrix:
    if len(profiles) < 2:
        raise ValidationError("need at least two profiles to cluster")
    dist = {"correlation": correlation_distance, "euclidean": euclidean_distance}.get(metric)
    if dist is None:
        raise ValidationError(f"unknown metric {metric!r}")
    n = len(profiles)
    values = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            values[i, j] = values[j, i] = dist(profiles[i], profiles[j])
    labels = [getattr(p, "site_id", str(k)) for k, p in enumerate(profiles)]
    return DistanceMatrix(labels, values, metric)


@dataclass(frozen=True)
class Merge:
    left: int
    right: int
    height: float
    node: int


@dataclass
class Dendrogram:
    """Merge list over leaves ``0..n-1``; merge ``k`` creates node ``n + k``."""

    leaves: list[str]
    merges: list[Merge]
    linkage: str = "average"

    @property
    def n_leaves(self) -> int:
        return len(self.leaves)

    def members(self) -> dict[int, list[int]]:
        out = {k: [k] for k in range(self.n_leaves)}
        for m in self.merges:
            out[m.node] = sorted(out[m.left] + out[m.right])
        return out

    def to_dict(self) -> dict:
        return {
            "linkage": self.linkage,
            "leaves": list(self.leaves),
            "merges": [
                {"left": m.left, "right": m.right, "height": m.height, "node": m.node}
                for m in self.merges
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, obj: dict) -> "Dendrogram":
        merges = [Merge(int(m["left"]), int(m["right"]), float(m["height"]), int(m["node"])) for m in obj["merges"]]
        d = cls(list(obj["leaves"]), merges, obj.get("linkage", "average"))
        if len(merges) != max(0, d.n_leaves - 1):
            raise ValidationError(f"dendrogram over {d.n_leaves} leaves needs {d.n_leaves - 1} merges")
        return d

    @classmethod
    def from_json(cls, text: str) -> "Dendrogram":
        return cls.from_dict(json.loads(text))

    def to_newick(self) -> str:
        """Newick text; branch lengths are height differences, internal nodes labelled ``n<id>``."""
        heights = {k: 0.0 for k in range(self.n_leaves)}
        children = {}
        for m in self.merges:
            heights[m.node] = m.height
            children[m.node] = (m.left, m.right)

        def render(node: int, parent_height: float) -> str:
            if node in children:
                a, b = children[node]
                text = f"({render(a, heights[node])},{render(b, heights[node])})n{node}"
            else:
                text = _newick_label(self.leaves[node])
            return f"{text}:{parent_height - heights[node]!r}"

        if not self.merges:
            return ",".join(_newick_label(x) for x in self.leaves) + ";\n"
        root = self.merges[-1].node
        body = render(root, heights[root])
        return body[: body.rindex(":")] + ";\n"


_NEWICK_PLAIN = re.compile(r"^[A-Za-z0-9_.\-]+$")


def _newick_label(name: str) -> str:
    return name if _NEWICK_PLAIN.match(name) else "'" + name.replace("'", "''") + "'"


def parse_newick(text: str, leaves: Sequence[str] | None = None, linkage: str = "average") -> Dendrogram:
    """Inverse of :meth:`Dendrogram.to_newick`; heights are rebuilt from branch lengths.

    Newick does not record leaf order, so pass the original ``leaves`` to
    recover leaf indices; otherwise leaves are numbered in order of appearance.
    """
    s = text.strip()
    if not s.endswith(";"):
        raise ValidationError("Newick text must end with ';'")
    s = s[:-1]
    pos = 0

    def label() -> str:
        nonlocal pos
        if pos < len(s) and s[pos] == "'":
            out = []
            pos += 1
            while True:
                if s[pos] == "'" and pos + 1 < len(s) and s[pos + 1] == "'":
                    out.append("'")
                    pos += 2
                elif s[pos] == "'":
                    pos += 1
                    return "".join(out)
                else:
                    out.append(s[pos])
                    pos += 1
        start = pos
        while pos < len(s) and s[pos] not in ",():;":
            pos += 1
        return s[start:pos]

    def length() -> float:
        nonlocal pos
        if pos < len(s) and s[pos] == ":":
            pos += 1
            start = pos
            while pos < len(s) and s[pos] not in ",()":
                pos += 1
            return float(s[start:pos])
        return 0.0

    def node():
        # returns (tree, branch length); tree is a leaf name or (node_label, child, child)
        nonlocal pos
        if s[pos] == "(":
            pos += 1
            left = node()
            if s[pos] != ",":
                raise ValidationError(f"Newick: expected ',' at {pos}")
            pos += 1
            right = node()
            if s[pos] != ")":
                raise ValidationError(f"Newick: expected ')' at {pos}")
            pos += 1
            return (label(), left, right), length()
        return label(), length()

    if "(" not in s:
        names = [name for name in s.split(",") if name]
        return Dendrogram(list(leaves) if leaves is not None else names, [], linkage)
    tree, _ = node()
    if pos != len(s):
        raise ValidationError(f"Newick: trailing text at {pos}")

    seen: list[str] = []
    internal = []

    def walk(t):
        # (leaf name or internal node id, height above the leaves)
        if isinstance(t, str):
            seen.append(t)
            return t, 0.0
        name, (lt, ll), (rt, rl) = t
        a, ha = walk(lt)
        b, hb = walk(rt)
        nid = int(name.lstrip("n"))
        internal.append((nid, a, b, max(ha + ll, hb + rl)))
        return nid, internal[-1][3]

    walk(tree)
    order = list(leaves) if leaves is not None else seen
    if sorted(order) != sorted(seen):
        raise ValidationError("Newick leaves do not match the given leaf list")
    index = {name: k for k, name in enumerate(order)}

    def ref(x):
        return index[x] if isinstance(x, str) else x

    merges = []
    for nid, a, b, h in sorted(internal):
        ia, ib = ref(a), ref(b)
        merges.append(Merge(min(ia, ib), max(ia, ib), h, nid))
    return Dendrogram(order, merges, linkage)


def hierarchical_cluster(matrix: DistanceMatrix, linkage: str = "average") -> Dendrogram:
    """Agglomerative clustering on a precomputed distance matrix.

    Each step merges the pair of active clusters with the smallest linkage
    distance, breaking ties by the lexicographically smallest node-id pair.
    Average linkage is the size-weighted (UPGMA) mean of member distances.
    """
    if linkage not in LINKAGES:
        raise ValidationError(f"unknown linkage {linkage!r}; choose from {', '.join(LINKAGES)}")
    matrix.validate()
    n = matrix.n
    dist: dict[int, dict[int, float]] = {
        i: {j: float(matrix.values[i, j]) for j in range(n) if j != i} for i in range(n)
    }
    size = {i: 1 for i in range(n)}
    merges = []
    for step in range(n - 1):
        best = None
        for i in sorted(dist):
            for j, d in dist[i].items():
                if j > i and (best is None or (d, i, j) < best):
                    best = (d, i, j)
        d, a, b = best
        new = n + step
        merges.append(Merge(a, b, d, new))
        row = {}
        for k in dist:
            if k in (a, b):
                continue
            da, db = dist[a][k], dist[b][k]
            if linkage == "single":
                row[k] = min(da, db)
            elif linkage == "complete":
                row[k] = max(da, db)
            else:
                # lo + w_hi (hi - lo) / (w_lo + w_hi) never drops below lo in floating point
                (lo, w_lo), (hi, w_hi) = sorted([(da, size[a]), (db, size[b])])
                row[k] = lo + w_hi * (hi - lo) / (w_lo + w_hi)
        for k in (a, b):
            del dist[k]
        for k, v in dist.items():
            v.pop(a)
            v.pop(b)
            v[new] = row[k]
        dist[new] = row
        size[new] = size.pop(a) + size.pop(b)
    return Dendrogram(list(matrix.labels), merges, linkage)


def cut_tree(dendrogram: Dendrogram, k: int) -> list[list[int]]:
    """Leaf-index groups left after undoing the last ``k - 1`` merges, ordered by smallest leaf."""
    n = dendrogram.n_leaves
    if not 1 <= k <= n:
        raise ValidationError(f"k must lie in [1, {n}], got {k}")
    members = dendrogram.members()
    roots = set(range(n))
    for m in dendrogram.merges[: n - k]:
        roots -= {m.left, m.right}
        roots.add(m.node)
    return sorted((members[r] for r in roots), key=lambda g: g[0])


@dataclass
class ClusterAssignment:
    site_cluster: dict[str, int]
    cluster_label: dict[int, str]
    shares: dict[int, tuple[int, int]]

    def label_of(self, site_id: str) -> str:
        return self.cluster_label[self.site_cluster[site_id]]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["site_id", "cluster", "label"])
        for site, c in self.site_cluster.items():
            writer.writerow([site, c, self.cluster_label[c]])
        return buf.getvalue()


def parse_assignment_csv(text: str) -> list[tuple[str, int, str]]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != ["site_id", "cluster", "label"]:
        raise ValidationError("cluster CSV header must be site_id,cluster,label")
    return [(r[0], int(r[1]), r[2]) for r in rows[1:] if r]


def label_clusters(
    partition: Sequence[Sequence[int]],
    profiles: Sequence[SiteProfile],
    human_classes: Sequence[str] = HUMAN_CLASSES,
    wildlife_classes: Sequence[str] = WILDLIFE_CLASSES,
    dominance: float = 0.8,
) -> ClusterAssignment:
    """Name clusters by their human vs wildlife detection share.

    With ``H`` and ``W`` the summed human- and wildlife-class counts of a
    cluster, it is ``human`` if ``H/(H+W) >= dominance``, ``wildlife`` if
    ``W/(H+W) >= dominance``, ``conflict`` otherwise, and ``unlabeled`` when
    ``H + W == 0``.
    """
    covered = sorted(i for group in partition for i in group)
    if covered != list(range(len(profiles))):
        raise ValidationError("partition must cover every profile exactly once")
    site_cluster: dict[str, int] = {}
    labels: dict[int, str] = {}
    shares: dict[int, tuple[int, int]] = {}
    for c, group in enumerate(partition):
        h = sum(profiles[i].count(x) for i in group for x in human_classes)
        w = sum(profiles[i].count(x) for i in group for x in wildlife_classes)
        if h + w == 0:
            labels[c] = "unlabeled"
        elif h / (h + w) >= dominance:
            labels[c] = "human"
        elif w / (h + w) >= dominance:
            labels[c] = "wildlife"
        else:
            labels[c] = "conflict"
        shares[c] = (h, w)
        for i in group:
            site_cluster[profiles[i].site_id] = c
    ordered = {p.site_id: site_cluster[p.site_id] for p in profiles}
    return ClusterAssignment(ordered, labels, shares)
