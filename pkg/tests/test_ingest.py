import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trapgrid.ingest import (
    DEFAULT_CLASSES,
    BoundingBox,
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
    parse_timestamp,
    split_dataset,
    summarize_dataset,
)

CLASS_MAP = {0: "tiger", 1: "human"}


def _line(**over):
    obj = {"image_id": "IMG_1.jpg", "class": "tiger", "confidence": 0.9, "bbox": [0, 0, 10, 10],
           "image_size": [640, 640]}
    obj.update(over)
    return json.dumps(obj)


class TestDetectionLog:
    def test_empty_stream(self):
        assert parse_detection_log("") == []

    def test_one_valid_line(self):
        (rec,) = parse_detection_log(_line() + "\n")
        assert rec.image_id == "IMG_1.jpg"
        assert rec.label == "tiger"
        assert rec.confidence == 0.9
        assert rec.box.corners == (0, 0, 10, 10)
        assert (rec.box.image_width, rec.box.image_height) == (640, 640)
        assert rec.source == "camera_trap"

    def test_confidence_out_of_range(self):
        with pytest.raises(ValidationError, match="confidence out of range"):
            parse_detection_log(_line(confidence=1.5))

    def test_malformed_json_names_line(self):
        with pytest.raises(ValidationError, match="line 2"):
            parse_detection_log(_line() + "\n{not json\n")

    def test_unknown_class_names_label(self):
        with pytest.raises(ValidationError, match="leopard"):
            parse_detection_log(_line(**{"class": "leopard"}))

    def test_box_violation_has_context(self):
        with pytest.raises(ValidationError, match=r"line 1: image 'IMG_1.jpg' class 'tiger'"):
            parse_detection_log(_line(bbox=[0, 0, 700, 10]))

    def test_missing_key(self):
        with pytest.raises(ValidationError, match="bbox"):
            parse_detection_log(json.dumps({"image_id": "a", "class": "tiger", "confidence": 0.5,
                                            "image_size": [1, 1]}))

    def test_unknown_source(self):
        with pytest.raises(ValidationError, match="source"):
            parse_detection_log(_line(source="satellite"))

    def test_blank_lines_skipped(self):
        assert len(parse_detection_log("\n" + _line() + "\n\n" + _line() + "\n")) == 2


boxes = st.tuples(
    st.integers(0, 639), st.integers(0, 639), st.integers(1, 640), st.integers(1, 640)
).filter(lambda t: t[0] < t[2] and t[1] < t[3])

records = st.builds(
    lambda b, label, conf, site, ts, src: DetectionRecord(
        f"img_{b[0]}.jpg", label, conf, BoundingBox(*b, 640, 640), site,
        parse_timestamp(f"2022-0{ts % 9 + 1}-1{ts % 10}T0{ts % 10}:00:00Z") if ts >= 0 else None, src,
    ),
    boxes,
    st.sampled_from(DEFAULT_CLASSES),
    st.floats(0, 1, allow_nan=False),
    st.one_of(st.none(), st.text("ABCN0123456789", min_size=1, max_size=6)),
    st.integers(-1, 50),
    st.sampled_from(["camera_trap", "drone_thermal"]),
)


@settings(max_examples=150, deadline=None)
@given(st.lists(records, max_size=8))
def test_detection_log_round_trip(recs):
    assert parse_detection_log(dump_detection_log(recs)) == recs


class TestAnnotations:
    def test_full_image_box(self):
        (gt,) = parse_annotations("0 0.5 0.5 1.0 1.0", 640, 640, CLASS_MAP)
        assert gt.box.corners == (0, 0, 640, 640)
        assert gt.label == "tiger"

    def test_quarter_box(self):
        (gt,) = parse_annotations("0 0.25 0.25 0.5 0.5", 640, 640, CLASS_MAP)
        assert gt.box.corners == (0, 0, 320, 320)

    def test_width_out_of_range(self):
        with pytest.raises(ValidationError, match="width out of range"):
            parse_annotations("0 0.5 0.5 1.2 1.0", 640, 640, CLASS_MAP)

    def test_negative_center(self):
        with pytest.raises(ValidationError, match="center x out of range"):
            parse_annotations("0 -0.1 0.5 0.2 0.2", 640, 640, CLASS_MAP)

    def test_unknown_class_index(self):
        with pytest.raises(ValidationError, match="unknown class index 7"):
            parse_annotations("7 0.5 0.5 0.2 0.2", 640, 640, CLASS_MAP)

    def test_clamps_overflow(self):
        (gt,) = parse_annotations("1 0.95 0.5 0.2 0.2", 640, 640, CLASS_MAP)
        assert gt.box.x_max == 640
        assert gt.box.x_min == pytest.approx(0.85 * 640)

    @settings(max_examples=200, deadline=None)
    @given(
        st.floats(0.2, 0.8), st.floats(0.2, 0.8), st.floats(0.01, 0.4), st.floats(0.01, 0.4),
        st.integers(16, 4000), st.integers(16, 4000),
    )
    def test_renormalization_recovers_input(self, cx, cy, w, h, W, H):
        (gt,) = parse_annotations(f"0 {cx!r} {cy!r} {w!r} {h!r}", W, H, CLASS_MAP)
        for got, want in zip(gt.box.to_normalized(), (cx, cy, w, h)):
            assert abs(got - want) <= 1e-9


def test_class_map_with_header():
    assert parse_class_map("index,name\n0,tiger\n1,human\n") == {0: "tiger", 1: "human"}
    with pytest.raises(ValidationError, match="duplicate"):
        parse_class_map("0,tiger\n0,human\n")


class TestSites:
    HEADER = "site_id,lat,lon,zone,active_from,active_to\n"

    def test_header_only(self):
        assert parse_sites(self.HEADER) == []

    def test_one_row(self):
        (s,) = parse_sites(self.HEADER + "CNP11,27.55,84.45,national_park,2022-02-01T00:00:00Z,2022-07-31T00:00:00Z\n")
        assert s.site_id == "CNP11" and s.zone == "national_park"
        assert (s.lat, s.lon) == (27.55, 84.45)

    def test_latitude_out_of_range(self):
        with pytest.raises(ValidationError, match="latitude out of range"):
            parse_sites(self.HEADER + "X,95,84.45,national_park,2022-02-01T00:00:00Z,2022-07-31T00:00:00Z\n")

    def test_unknown_zone_maps_to_other(self):
        (s,) = parse_sites(self.HEADER + "X,27,84,wetland,2022-02-01T00:00:00Z,2022-07-31T00:00:00Z\n")
        assert s.zone == "other"

    def test_duplicate_site(self):
        row = "X,27,84,other,2022-02-01T00:00:00Z,2022-07-31T00:00:00Z\n"
        with pytest.raises(ValidationError, match="duplicate site_id"):
            parse_sites(self.HEADER + row + row)

    def test_round_trip(self):
        sites = [SiteRecord("A1", 27.123456789, 84.5, "buffer_zone",
                            parse_timestamp("2022-02-01T00:00:00Z"), parse_timestamp("2022-07-31T12:30:00Z"))]
        assert parse_sites(dump_sites(sites)) == sites


class TestSummarize:
    def test_empty(self):
        s = summarize_dataset([])
        assert all(v == 0 for v in s.image_count.values())
        assert s.total_annotations == 0

    def test_two_boxes_one_image(self):
        box = BoundingBox(0, 0, 5, 5, 10, 10)
        s = summarize_dataset([GroundTruthRecord("a", "tiger", box), GroundTruthRecord("a", "tiger", box)])
        assert (s.image_count["tiger"], s.annotation_count["tiger"]) == (1, 2)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.sampled_from("abcdef"), st.sampled_from(DEFAULT_CLASSES)), max_size=40))
    def test_totals_equal_sum(self, pairs):
        box = BoundingBox(0, 0, 5, 5, 10, 10)
        s = summarize_dataset([GroundTruthRecord(i, c, box) for i, c in pairs])
        assert s.total_annotations == sum(s.annotation_count.values()) == len(pairs)
        assert s.total_images == sum(s.image_count.values())


class TestSplit:
    def test_ten_ids(self):
        parts = split_dataset([str(i) for i in range(10)], (0.7, 0.2, 0.1), seed=1)
        assert tuple(len(p) for p in parts) == (7, 2, 1)

    def test_empty(self):
        assert split_dataset([], (0.7, 0.2, 0.1), seed=1) == ([], [], [])

    def test_deterministic(self):
        ids = [f"img{i}" for i in range(37)]
        assert split_dataset(ids, seed=4) == split_dataset(ids, seed=4)

    def test_remainder_train_first(self):
        assert tuple(len(p) for p in split_dataset([str(i) for i in range(11)], (0.7, 0.2, 0.1))) == (8, 2, 1)

    def test_errors(self):
        with pytest.raises(ValidationError, match="duplicate"):
            split_dataset(["a", "a"])
        with pytest.raises(ValidationError, match="sum to 1"):
            split_dataset(["a"], (0.75, 0.15, 0.15))
        with pytest.raises(ValidationError):
            split_dataset(["a"], (1.2, -0.1, -0.1))

    @settings(max_examples=200, deadline=None)
    @given(
        st.integers(0, 300),
        st.tuples(st.integers(0, 20), st.integers(0, 20), st.integers(0, 20)).filter(lambda t: sum(t) > 0),
        st.integers(0, 2**31),
    )
    def test_partition(self, n, weights, seed):
        ratios = tuple(w / sum(weights) for w in weights)
        if abs(sum(ratios) - 1) > 1e-9:
            return
        ids = [f"i{k}" for k in range(n)]
        parts = split_dataset(ids, ratios, seed)
        flat = [x for p in parts for x in p]
        assert sorted(flat) == sorted(ids)
        assert len(set(flat)) == len(flat)
        assert parts == split_dataset(ids, ratios, seed)
