import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from trapgrid.boxmetrics import ciou, iou, nms
from trapgrid.ingest import BoundingBox, DetectionRecord, ValidationError

boxes = st.tuples(
    st.floats(0, 100), st.floats(0, 100), st.floats(0.5, 60), st.floats(0.5, 60)
).map(lambda t: (t[0], t[1], t[0] + t[2], t[1] + t[3]))


class TestIoU:
    def test_identity(self):
        assert iou((0, 0, 2, 2), (0, 0, 2, 2)) == 1.0

    def test_disjoint(self):
        assert iou((0, 0, 1, 1), (5, 5, 6, 6)) == 0.0

    def test_one_seventh(self):
        assert iou((0, 0, 2, 2), (1, 1, 3, 3)) == pytest.approx(1 / 7, abs=1e-12)
        assert oracles.raster_iou((0, 0, 2, 2), (1, 1, 3, 3), subdiv=8) == pytest.approx(1 / 7, abs=1e-12)

    def test_touching_edges(self):
        assert iou((0, 0, 1, 1), (1, 0, 2, 1)) == 0.0

    def test_accepts_bounding_box(self):
        a = BoundingBox(0, 0, 2, 2, 10, 10)
        assert iou(a, (1, 1, 3, 3)) == pytest.approx(1 / 7)

    def test_degenerate(self):
        with pytest.raises(ValidationError, match="degenerate"):
            iou((0, 0, 0, 2), (0, 0, 1, 1))

    @settings(max_examples=300, deadline=None)
    @given(boxes, boxes)
    def test_symmetric_and_bounded(self, a, b):
        v = iou(a, b)
        assert v == iou(b, a)
        assert 0.0 <= v <= 1.0
        assert iou(a, a) == 1.0

    def test_fractional_grid_oracle(self):
        a, b = (0.25, 0.5, 3.75, 2.0), (1.5, 0.25, 4.0, 3.5)
        assert iou(a, b) == pytest.approx(oracles.raster_iou(a, b, subdiv=4), abs=1e-12)


class TestCIoU:
    def test_identity(self):
        assert ciou((3, 4, 10, 20), (3, 4, 10, 20)) == 1.0

    def test_shifted(self):
        ref = oracles.ciou_terms((0, 0, 2, 2), (2, 0, 4, 2))
        assert (ref["iou"], ref["rho2"], ref["c2"], ref["v"]) == (0.0, 4.0, 20.0, 0.0)
        assert ciou((0, 0, 2, 2), (2, 0, 4, 2)) == pytest.approx(-0.2, abs=1e-12)

    def test_aspect_case(self):
        value = ciou((0, 0, 2, 2), (-1, 0.5, 3, 1.5))
        assert value == pytest.approx(0.3155, abs=5e-5)
        assert value == pytest.approx(oracles.ciou_terms((0, 0, 2, 2), (-1, 0.5, 3, 1.5))["ciou"], abs=1e-12)

    @settings(max_examples=300, deadline=None)
    @given(boxes, boxes)
    def test_matches_oracle_and_bounded_by_iou(self, a, b):
        value = ciou(a, b)
        assert value == pytest.approx(oracles.ciou_terms(a, b)["ciou"], abs=1e-9)
        assert value <= iou(a, b) + 1e-12
        # rho^2/c^2 < 1 and alpha*v <= v^2/(1+v) <= 1/2, so the floor is -1.5, not -1
        assert -1.5 < value <= 1.0

    @settings(max_examples=100, deadline=None)
    @given(st.floats(1, 50), st.floats(1, 50), st.floats(0.2, 5))
    def test_equal_iff_same_center_and_shape(self, cx, cy, s):
        a = (cx - s, cy - s, cx + s, cy + s)
        b = (cx - 2 * s, cy - 2 * s, cx + 2 * s, cy + 2 * s)
        assert ciou(a, b) == pytest.approx(iou(a, b), abs=1e-12)
        shifted = (b[0] + 0.5, b[1], b[2] + 0.5, b[3])
        assert ciou(a, shifted) < iou(a, shifted)


def _det(label, conf, box, image="img"):
    return DetectionRecord(image, label, conf, BoundingBox(*box, 100, 100))


class TestNMS:
    def test_single(self):
        d = _det("tiger", 0.4, (0, 0, 10, 10))
        assert nms([d]) == [d]

    def test_full_overlap(self):
        a, b = _det("tiger", 0.8, (0, 0, 10, 10)), _det("tiger", 0.9, (0, 0, 10, 10))
        assert nms([a, b], 0.5) == [b]

    def test_different_classes_kept(self):
        a, b = _det("tiger", 0.8, (0, 0, 10, 10)), _det("rhino", 0.9, (0, 0, 10, 10))
        assert nms([a, b]) == [b, a]
        assert nms([a, b], class_agnostic=True) == [b]

    def test_ties_keep_input_order(self):
        a, b = _det("tiger", 0.9, (0, 0, 10, 10)), _det("tiger", 0.9, (1, 0, 11, 10))
        assert nms([a, b]) == [a]
        assert nms([b, a]) == [b]

    def test_threshold_boundary_keeps(self):
        # IoU exactly 0.5 is not above the threshold
        a, b = _det("tiger", 0.9, (0, 0, 30, 10)), _det("tiger", 0.8, (10, 0, 40, 10))
        assert iou(a.box, b.box) == 0.5
        assert nms([a, b], 0.5) == [a, b]

    def test_errors(self):
        with pytest.raises(ValidationError, match="single image"):
            nms([_det("tiger", 0.9, (0, 0, 1, 1), "a"), _det("tiger", 0.9, (0, 0, 1, 1), "b")])
        with pytest.raises(ValidationError):
            nms([], 0.0)
        with pytest.raises(ValidationError):
            nms([], 1.5)
        assert nms([], 1.0) == []


def test_aspect_term_constant():
    # v for a square against a 4:1 box, evaluated independently
    v = 4 / math.pi**2 * (math.atan(1) - math.atan(4)) ** 2
    assert oracles.ciou_terms((0, 0, 2, 2), (-1, 0.5, 3, 1.5))["v"] == pytest.approx(v, rel=1e-14)
