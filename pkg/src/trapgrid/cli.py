"""``trapgrid`` command-line front end.

Exit codes: 0 success, 2 input or validation error, 3 empty result.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Sequence

from . import cluster as cl
from . import spatial as sp
from .evaluation import MetricsReport, evaluate_run, threshold_key
from .ingest import (
    DEFAULT_CLASSES,
    DetectionRecord,
    GroundTruthRecord,
    SiteRecord,
    ValidationError,
    dump_detection_log,
    dump_sites,
    parse_annotations,
    parse_class_map,
    parse_detection_log,
    parse_sites,
)
from .simulate import PRESETS, SyntheticScenario, preset, simulate

EXIT_OK, EXIT_INPUT, EXIT_EMPTY = 0, 2, 3


class EmptyResult(Exception):
    """An analysis produced nothing to report (exit code 3)."""


@dataclass
class RunConfig:
    detections: str | None = None
    ground_truth: str | None = None
    class_map: str | None = None
    sites: str | None = None
    reference: str | None = None
    scenario: str | None = None
    preset: str | None = None
    image_size: str = "640x640"
    iou_threshold: float = 0.5
    confidence_floor: float = 0.5
    bandwidth: float | None = None
    cell_size: float | None = None
    percentile: float = 75.0
    k: int = 3
    linkage: str = "average"
    metric: str = "correlation"
    dominance: float = 0.8
    classes: str | None = None
    name: str | None = None
    per_image: bool = False
    seed: int | None = None
    out: str = "."

    def class_list(self) -> list[str]:
        if not self.classes:
            return []
        return [c.strip() for c in self.classes.split(",") if c.strip()]

    def image_dims(self) -> tuple[int, int]:
        try:
            w, h = (int(v) for v in self.image_size.lower().split("x"))
        except ValueError:
            raise ValidationError(f"image size must look like 640x640, got {self.image_size!r}") from None
        return w, h

    def validate(self) -> None:
        if not 0 < self.iou_threshold <= 1:
            raise ValidationError(f"--iou must lie in (0, 1], got {self.iou_threshold}")
        if not 0 <= self.confidence_floor <= 1:
            raise ValidationError(f"--conf must lie in [0, 1], got {self.confidence_floor}")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ValidationError(f"--bandwidth must be positive, got {self.bandwidth}")
        if self.cell_size is not None and not self.cell_size > 0:
            raise ValidationError(f"--cell must be positive, got {self.cell_size}")
        if not 0 < self.percentile < 100:
            raise ValidationError(f"--percentile must lie in (0, 100), got {self.percentile}")
        if self.k < 1:
            raise ValidationError(f"--k must be positive, got {self.k}")
        if self.linkage not in cl.LINKAGES:
            raise ValidationError(f"--linkage must be one of {', '.join(cl.LINKAGES)}")
        if self.metric not in ("correlation", "euclidean"):
            raise ValidationError("--metric must be correlation or euclidean")
        if not 0 < self.dominance <= 1:
            raise ValidationError(f"--dominance must lie in (0, 1], got {self.dominance}")


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
# config-file keys may use the short flag spellings too
_ALIASES = {"iou": "iou_threshold", "conf": "confidence_floor", "cell": "cell_size", "gt": "ground_truth"}


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    if "bool" in kind:
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if "int" in kind:
        return int(raw)
    if "float" in kind:
        return float(raw)
    return raw


def read_config_file(path: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc.strerror}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = _ALIASES.get(key.replace("-", "_"), key.replace("-", "_"))
        if key not in _FIELD_TYPES:
            raise ValidationError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            out[key] = _coerce(key, value)
        except ValueError as exc:
            raise ValidationError(f"{path}:{lineno}: bad value for {key}: {value!r}") from exc
    return out


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then ``TRAPGRID_OUT``, then the config file, then explicit flags."""
    values = {}
    if os.environ.get("TRAPGRID_OUT"):
        values["out"] = os.environ["TRAPGRID_OUT"]
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for key in _FIELD_TYPES:
        if hasattr(args, key):
            values[key] = getattr(args, key)
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read(path: str | None, what: str) -> str:
    if not path:
        raise ValidationError(f"no {what} given")
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read {what} {path}: {exc.strerror or exc}") from exc


def _load_detections(cfg: RunConfig) -> list[DetectionRecord]:
    try:
        return parse_detection_log(_read(cfg.detections, "detection log"))
    except ValidationError as exc:
        raise ValidationError(f"{cfg.detections}: {exc}") from exc


def _load_sites(cfg: RunConfig) -> list[SiteRecord]:
    try:
        return parse_sites(_read(cfg.sites, "sites file"))
    except ValidationError as exc:
        raise ValidationError(f"{cfg.sites}: {exc}") from exc


def _load_ground_truth(cfg: RunConfig) -> list[GroundTruthRecord]:
    if not cfg.ground_truth:
        raise ValidationError("no ground-truth directory given (--gt)")
    gt_dir = Path(cfg.ground_truth)
    if not gt_dir.is_dir():
        raise ValidationError(f"ground-truth directory {gt_dir} does not exist")
    class_map = parse_class_map(_read(cfg.class_map or str(gt_dir / "classes.csv"), "class map"))
    unknown = sorted(set(class_map.values()) - set(DEFAULT_CLASSES))
    if unknown:
        raise ValidationError(f"class map names unknown classes: {unknown}")
    width, height = cfg.image_dims()
    records = []
    for path in sorted(gt_dir.glob("*.txt")):
        records.extend(
            parse_annotations(path.read_text(encoding="utf-8"), width, height, class_map, image_id=path.stem)
        )
    return records


def _stem(image_id: str) -> str:
    return Path(image_id).stem


def cmd_eval(cfg: RunConfig) -> dict:
    detections = _load_detections(cfg)
    ground_truths = _load_ground_truth(cfg)
    # annotation files are named by image stem; match detections on the same key
    detections = [
        DetectionRecord(_stem(d.image_id), d.label, d.confidence, d.box, d.site_id, d.timestamp, d.source)
        for d in detections
    ]
    report = evaluate_run(detections, ground_truths, cfg.iou_threshold, cfg.confidence_floor)
    payload = report.to_dict()
    if cfg.reference:
        payload["reference"] = _load_reference(cfg.reference)
    out = Path(cfg.out)
    write_atomic(out / "metrics.json", json.dumps(payload, indent=2) + "\n")
    return payload


def _load_reference(path: str) -> dict:
    """Published per-model results, echoed next to the computed report."""
    try:
        obj = json.loads(_read(path, "reference file"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: malformed JSON ({exc.msg})") from exc
    models = obj.get("models", obj)
    echoed = {}
    for name, entry in models.items():
        rep = MetricsReport.from_dict(entry)
        echoed[name] = {
            "precision": rep.precision,
            "recall": rep.recall,
            "mAP50": rep.map50,
            "mAP50_95": rep.map50_95,
        }
    return {"source": obj.get("source"), "models": echoed}


def _site_points(detections, sites, classes, cfg: RunConfig, proj: sp.LocalProjection):
    profiles = cl.build_profiles(detections, sites, cfg.confidence_floor, classes, per_image=cfg.per_image)
    points = []
    for site, prof in zip(sites, profiles):
        if prof.total > 0:
            x, y = proj.forward(site.lat, site.lon)
            points.append(sp.ProjectedPoint(x, y, float(prof.total)))
    return points


def _grid(sites: Sequence[SiteRecord], proj: sp.LocalProjection, bandwidth: float, cell_size: float | None):
    # the grid spans every registered site, so surfaces for different class sets share it
    cell = cell_size if cell_size is not None else bandwidth / 10.0
    anchors = [sp.ProjectedPoint(*proj.forward(s.lat, s.lon)) for s in sites]
    return sp.GridSpec.covering(anchors, cell, margin=bandwidth + cell)


def _bandwidth(cfg: RunConfig, points) -> float:
    if cfg.bandwidth is not None:
        return cfg.bandwidth
    return sp.default_bandwidth(points)


def _surface_summary(surface: sp.DensitySurface, mask: sp.ZoneMask | None) -> dict:
    return {
        "total_weight": surface.total_weight,
        "max_density": float(surface.values.max()),
        "positive_cells": int((surface.values > 0).sum()),
        "hotspot_threshold": mask.threshold_used if mask else None,
        "hotspot_cells": mask.cell_count if mask else 0,
        "hotspot_area_m2": mask.area if mask else 0.0,
    }


def _grid_summary(grid: sp.GridSpec, proj: sp.LocalProjection) -> dict:
    return {
        "origin_x": grid.origin_x,
        "origin_y": grid.origin_y,
        "cell_size": grid.cell_size,
        "n_rows": grid.n_rows,
        "n_cols": grid.n_cols,
        "crs": proj.crs_note,
    }


def cmd_density(cfg: RunConfig) -> dict:
    classes = cfg.class_list()
    if not classes:
        raise ValidationError("empty class set; pass --classes a,b,c")
    unknown = sorted(set(classes) - set(DEFAULT_CLASSES))
    if unknown:
        raise ValidationError(f"unknown classes {unknown}")
    detections, sites = _load_detections(cfg), _load_sites(cfg)
    if not sites:
        raise EmptyResult("empty surface: no sites registered")
    proj = sp.LocalProjection.about_centroid([(s.lat, s.lon) for s in sites])
    points = _site_points(detections, sites, classes, cfg, proj)
    if not points:
        raise EmptyResult(f"empty surface: no detections of {','.join(classes)}")
    bandwidth = _bandwidth(cfg, points)
    grid = _grid(sites, proj, bandwidth, cfg.cell_size)
    surface = sp.kde_surface(points, bandwidth, grid)
    surface.crs_note = proj.crs_note
    mask = sp.hotspot_mask(surface, cfg.percentile)

    name = cfg.name or "+".join(classes)
    out = Path(cfg.out)
    write_atomic(out / f"density_{name}.asc", sp.export_surface(surface))
    geo = sp.mask_to_geojson(mask, proj.inverse, {"classes": ",".join(classes)})
    write_atomic(out / f"hotspots_{name}.geojson", sp.geojson_text(geo))
    summary = {
        "name": name,
        "classes": classes,
        "bandwidth": bandwidth,
        "percentile": cfg.percentile,
        "grid": _grid_summary(grid, proj),
        "surface": _surface_summary(surface, mask),
        "hotspot_regions": len(geo["features"]),
    }
    write_atomic(out / f"density_{name}.json", json.dumps(summary, indent=2) + "\n")
    return summary


def cmd_conflict(cfg: RunConfig) -> dict:
    detections, sites = _load_detections(cfg), _load_sites(cfg)
    if not sites:
        raise EmptyResult("empty surface: no sites registered")
    proj = sp.LocalProjection.about_centroid([(s.lat, s.lon) for s in sites])
    wild_pts = _site_points(detections, sites, cl.WILDLIFE_CLASSES, cfg, proj)
    human_pts = _site_points(detections, sites, cl.HUMAN_CLASSES, cfg, proj)
    if not wild_pts:
        raise EmptyResult("empty surface: no wildlife detections")
    if not human_pts:
        raise EmptyResult("empty surface: no human-activity detections")
    bandwidth = _bandwidth(cfg, wild_pts + human_pts)
    grid = _grid(sites, proj, bandwidth, cfg.cell_size)
    wildlife = sp.kde_surface(wild_pts, bandwidth, grid)
    human = sp.kde_surface(human_pts, bandwidth, grid)
    w_mask = sp.hotspot_mask(wildlife, cfg.percentile)
    h_mask = sp.hotspot_mask(human, cfg.percentile)
    conflict = sp.conflict_zones(wildlife, human, cfg.percentile)

    out = Path(cfg.out)
    write_atomic(out / "conflict_wildlife.asc", sp.export_surface(wildlife))
    write_atomic(out / "conflict_human.asc", sp.export_surface(human))
    geo = sp.mask_to_geojson(conflict, proj.inverse)
    write_atomic(out / "conflict.geojson", sp.geojson_text(geo))
    summary = {
        "bandwidth": bandwidth,
        "percentile": cfg.percentile,
        "grid": _grid_summary(grid, proj),
        "wildlife": {"classes": list(cl.WILDLIFE_CLASSES), **_surface_summary(wildlife, w_mask)},
        "human": {"classes": list(cl.HUMAN_CLASSES), **_surface_summary(human, h_mask)},
        "conflict": {
            "cells": conflict.cell_count,
            "area_m2": conflict.area,
            "regions": len(geo["features"]),
        },
    }
    write_atomic(out / "conflict_summary.json", json.dumps(summary, indent=2) + "\n")
    return summary


def cmd_cluster(cfg: RunConfig) -> dict:
    detections, sites = _load_detections(cfg), _load_sites(cfg)
    if len(sites) < 2:
        raise ValidationError(f"clustering needs at least two sites, got {len(sites)}")
    profiles = cl.build_profiles(detections, sites, cfg.confidence_floor, per_image=cfg.per_image)
    matrix = cl.distance_matrix(profiles, cfg.metric)
    tree = cl.hierarchical_cluster(matrix, cfg.linkage)
    groups = cl.cut_tree(tree, cfg.k)
    assignment = cl.label_clusters(groups, profiles, dominance=cfg.dominance)

    out = Path(cfg.out)
    write_atomic(out / "clusters.csv", assignment.to_csv())
    write_atomic(out / "dendrogram.json", tree.to_json())
    write_atomic(out / "dendrogram.nwk", tree.to_newick())
    return {
        "k": cfg.k,
        "clusters": {
            c: {"label": assignment.cluster_label[c], "sites": len(g), "human": assignment.shares[c][0],
                "wildlife": assignment.shares[c][1]}
            for c, g in enumerate(groups)
        },
    }


def cmd_simulate(cfg: RunConfig) -> dict:
    if cfg.scenario and cfg.preset:
        raise ValidationError("give either --scenario or --preset, not both")
    if cfg.preset:
        obj = preset(cfg.preset)
    elif cfg.scenario:
        try:
            obj = json.loads(_read(cfg.scenario, "scenario"))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{cfg.scenario}: malformed JSON ({exc.msg})") from exc
    else:
        raise ValidationError("simulate needs --scenario PATH or --preset NAME")
    if cfg.seed is not None:
        obj["seed"] = cfg.seed
    result = simulate(SyntheticScenario.from_dict(obj))
    out = Path(cfg.out)
    write_atomic(out / "detections.jsonl", dump_detection_log(result.detections))
    write_atomic(out / "sites.csv", dump_sites(result.sites))
    write_atomic(out / "scenario_manifest.json", json.dumps(result.manifest, indent=2) + "\n")
    return result.manifest["counts"]


REPORT_INPUTS = ("metrics.json", "conflict_summary.json", "clusters.csv")


def cmd_report(cfg: RunConfig) -> str:
    out = Path(cfg.out)
    missing = [name for name in REPORT_INPUTS if not (out / name).is_file()]
    if missing:
        raise ValidationError(f"missing report inputs in {out}: {', '.join(missing)}")
    metrics = json.loads((out / "metrics.json").read_text(encoding="utf-8"))
    conflict = json.loads((out / "conflict_summary.json").read_text(encoding="utf-8"))
    rows = cl.parse_assignment_csv((out / "clusters.csv").read_text(encoding="utf-8"))
    densities = [
        json.loads(p.read_text(encoding="utf-8")) for p in sorted(out.glob("density_*.json"))
    ]

    lines = ["# trapgrid report", ""]
    lines += ["## Detection metrics", ""]
    cfg_m = metrics.get("config", {})
    lines.append(
        f"IoU threshold {cfg_m.get('iou_threshold')}, confidence floor {cfg_m.get('confidence_floor')}; "
        f"{metrics['counts']['images']} images, {metrics['counts']['detections']} detections, "
        f"{metrics['counts']['ground_truths']} ground truths."
    )
    lines += ["", "| metric | value |", "|---|---|"]
    for key in ("precision", "recall", "mAP50", "mAP50_95"):
        lines.append(f"| {key} | {metrics[key]:.4f} |")
    if metrics.get("per_class"):
        lines += ["", "| class | AP50 | AP50-95 | precision | recall |", "|---|---|---|---|---|"]
        for name, m in metrics["per_class"].items():
            ap = m.get("ap") or {}
            ap50 = ap.get(threshold_key(0.5))
            ap_range = sum(ap.values()) / len(ap) if ap else None
            lines.append(
                f"| {name} | {_fmt(ap50)} | {_fmt(ap_range)} | {m['precision']:.4f} | {m['recall']:.4f} |"
            )
    if metrics.get("reference"):
        lines += ["", "Reference results:", "", "| model | precision | recall | mAP50 | mAP50-95 |",
                  "|---|---|---|---|---|"]
        for name, m in metrics["reference"]["models"].items():
            lines.append(f"| {name} | {m['precision']:.3f} | {m['recall']:.3f} | {m['mAP50']:.3f} | {m['mAP50_95']:.3f} |")

    lines += ["", "## Density surfaces", ""]
    if not densities:
        lines.append("No density runs in this directory.")
    for d in densities:
        s = d["surface"]
        lines.append(
            f"- `{d['name']}`: bandwidth {d['bandwidth']:.1f} m, total weight {s['total_weight']:g}, "
            f"{s['hotspot_cells']} hotspot cells in {d['hotspot_regions']} regions "
            f"(percentile {d['percentile']:g})"
        )

    lines += ["", "## Conflict zones", ""]
    c = conflict["conflict"]
    lines.append(
        f"Bandwidth {conflict['bandwidth']:.1f} m, percentile {conflict['percentile']:g}. "
        f"Wildlife hotspot cells {conflict['wildlife']['hotspot_cells']}, "
        f"human hotspot cells {conflict['human']['hotspot_cells']}, "
        f"conflict cells {c['cells']} in {c['regions']} regions covering {c['area_m2']:.0f} m^2."
    )

    lines += ["", "## Site clusters", ""]
    by_label: dict[str, list[str]] = {}
    for site, _, label in rows:
        by_label.setdefault(label, []).append(site)
    lines += ["| label | sites | members |", "|---|---|---|"]
    for label in cl.LABELS:
        if label in by_label:
            members = by_label[label]
            lines.append(f"| {label} | {len(members)} | {', '.join(members)} |")
    text = "\n".join(lines) + "\n"
    write_atomic(out / "report.md", text)
    return text


def _fmt(v) -> str:
    return "n/a" if v is None else f"{v:.4f}"


COMMANDS = {
    "eval": cmd_eval,
    "density": cmd_density,
    "conflict": cmd_conflict,
    "cluster": cmd_cluster,
    "simulate": cmd_simulate,
    "report": cmd_report,
}


def _add_global(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--config", default=S, help="flat key=value config file")
    p.add_argument("--out", default=S, help="output directory (default $TRAPGRID_OUT or .)")
    p.add_argument("--seed", type=int, default=S, help="random seed (simulate)")


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    parser = argparse.ArgumentParser(prog="trapgrid", description=__doc__.splitlines()[0])
    _add_global(parser)
    sub = parser.add_subparsers(dest="command", required=True)

    def inputs(p, *, gt=False, sites=True):
        p.add_argument("--detections", default=S, help="detection log (JSON lines)")
        if sites:
            p.add_argument("--sites", default=S, help="site registry CSV")
        if gt:
            p.add_argument("--gt", dest="ground_truth", default=S, help="directory of per-image annotation .txt files")
            p.add_argument("--class-map", dest="class_map", default=S, help="index,name CSV (default GT/classes.csv)")
            p.add_argument("--image-size", dest="image_size", default=S, help="WxH, default 640x640")
        p.add_argument("--conf", dest="confidence_floor", type=float, default=S, help="confidence floor (0.5)")
        p.add_argument("--per-image", dest="per_image", action="store_true", default=S,
                       help="count each class once per image instead of per detection")

    p = sub.add_parser("eval", help="detection metrics against ground truth")
    _add_global(p)
    inputs(p, gt=True, sites=False)
    p.add_argument("--iou", dest="iou_threshold", type=float, default=S, help="IoU threshold (0.5)")
    p.add_argument("--reference", default=S, help="published results JSON to echo in metrics.json")

    def spatial_flags(p):
        p.add_argument("--bandwidth", type=float, default=S, help="kernel radius in meters")
        p.add_argument("--cell", dest="cell_size", type=float, default=S, help="cell size in meters")
        p.add_argument("--percentile", type=float, default=S, help="hotspot percentile (75)")

    p = sub.add_parser("density", help="kernel density surface and hotspots for a class set")
    _add_global(p)
    inputs(p)
    spatial_flags(p)
    p.add_argument("--classes", default=S, help="comma-separated class names")
    p.add_argument("--name", default=S, help="output name (default: classes joined by '+')")

    p = sub.add_parser("conflict", help="overlap of wildlife and human-activity hotspots")
    _add_global(p)
    inputs(p)
    spatial_flags(p)

    p = sub.add_parser("cluster", help="correlation-distance clustering of camera sites")
    _add_global(p)
    inputs(p)
    p.add_argument("--k", type=int, default=S, help="number of clusters (3)")
    p.add_argument("--linkage", choices=cl.LINKAGES, default=S)
    p.add_argument("--metric", choices=("correlation", "euclidean"), default=S)
    p.add_argument("--dominance", type=float, default=S, help="share needed for a human/wildlife label (0.8)")

    p = sub.add_parser("simulate", help="generate a synthetic scenario")
    _add_global(p)
    p.add_argument("--scenario", default=S, help="scenario JSON")
    p.add_argument("--preset", choices=PRESETS, default=S)

    p = sub.add_parser("report", help="collate outputs into report.md")
    _add_global(p)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        result = COMMANDS[args.command](cfg)
    except ValidationError as exc:
        print(f"trapgrid {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except EmptyResult as exc:
        print(f"trapgrid {args.command}: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    if isinstance(result, dict):
        print(json.dumps(result, indent=2))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
