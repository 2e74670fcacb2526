"""Detection metrics, activity hotspots, conflict zones and site clustering for camera-trap surveys."""

from .boxmetrics import ciou, iou, nms
from .cluster import (
    build_profiles,
    correlation_distance,
    cut_tree,
    distance_matrix,
    hierarchical_cluster,
    label_clusters,
)
from .evaluation import (
    average_precision,
    evaluate_run,
    map_at,
    map_range,
    match_detections,
    pr_curve,
    precision_recall,
)
from .ingest import (
    BoundingBox,
    DetectionRecord,
    GroundTruthRecord,
    SiteRecord,
    ValidationError,
    parse_annotations,
    parse_detection_log,
    parse_sites,
    split_dataset,
    summarize_dataset,
)
from .spatial import (
    GridSpec,
    ProjectedPoint,
    conflict_zones,
    default_bandwidth,
    export_surface,
    hotspot_mask,
    kde_surface,
    mask_to_geojson,
    point_density,
    project,
)

__version__ = "0.1.0"
