import gzip
import math
import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from annorefine.errors import ParseError, ValidationError
from annorefine.geometry import Box, TransformKind
from annorefine.interchange import (
    ActivationGrid,
    AnnotationRecord,
    Category,
    ClassifierVerdict,
    CocoDocument,
    Detection,
    ImageInfo,
    OracleLabel,
    TraceSample,
    parse_annotation_document,
    parse_annotations,
    parse_detections,
    parse_grids,
    parse_oracle,
    parse_traces,
    parse_verdicts,
    read_path_bytes,
    scan_detections,
    scan_traces,
    write_annotation_document,
    write_annotations,
    write_detections,
    write_grids,
    write_oracle,
    write_path_bytes,
    write_traces,
    write_verdicts,
)


def coco_doc(annotations="[]", images="[]", categories="[]") -> str:
    return f'{{"images": {images}, "annotations": {annotations}, "categories": {categories}}}'


def test_parse_bbox_xywh_to_corner_form():
    doc = coco_doc(
        annotations='[{"id": 1, "image_id": 1, "category_id": 1, "bbox": [10, 20, 30, 40]}]'
    )
    (record,) = parse_annotations(doc)
    assert record.box == Box(10, 20, 40, 60)
    assert record.area == 1200.0  # defaulted to w*h
    assert record.is_crowd is False


def test_parse_empty_annotations_array():
    assert parse_annotations(coco_doc()) == []


def test_parse_canonical_fixture(canonical):
    doc = parse_annotation_document(read_path_bytes(canonical / "annotations.json"))
    assert [a.id for a in doc.annotations] == [101, 102, 103, 104, 105]
    assert [im.id for im in doc.images] == [1, 2, 3]
    assert doc.annotations[2].is_crowd is True
    assert doc.annotations[1].box == Box(50.5, 60.25, 60.5, 66.0)


def test_round_trip_write_then_parse(canonical):
    raw = read_path_bytes(canonical / "annotations.json")
    doc = parse_annotation_document(raw)
    again = parse_annotation_document(write_annotation_document(doc))
    assert again == doc


def test_write_bbox_inverse_of_parse():
    record = AnnotationRecord(id=1, image_id=1, category_id=1, box=Box(10, 20, 40, 60), area=1200.0)
    payload = json.loads(write_annotations([record]))
    assert payload["annotations"][0]["bbox"] == [10.0, 20.0, 30.0, 40.0]


def test_write_empty_record_list_is_valid_document():
    payload = json.loads(write_annotations([]))
    assert payload["annotations"] == []
    assert parse_annotations(write_annotations([])) == []


def test_malformed_json_reports_byte_offset():
    with pytest.raises(ParseError) as exc:
        parse_annotation_document('{"images": [], "annotations": [}')
    assert "byte offset" in str(exc.value)
    assert exc.value.details["offset"] == 31


def test_missing_top_level_key_rejected():
    with pytest.raises(ValidationError) as exc:
        parse_annotation_document('{"images": [], "annotations": []}')
    assert "categories" in str(exc.value)


def test_nonpositive_bbox_lists_annotation_id():
    doc = coco_doc(
        annotations='[{"id": 77, "image_id": 1, "category_id": 1, "bbox": [5, 5, 0, 4]}]'
    )
    with pytest.raises(ParseError) as exc:
        parse_annotations(doc)
    assert "annotation id 77" in str(exc.value)


def test_annotation_without_bbox_is_skipped():
    doc = coco_doc(
        annotations='[{"id": 1, "image_id": 1, "category_id": 1, "segmentation": [[0, 0, 1, 1]]}]'
    )
    assert parse_annotations(doc) == []


def test_nan_rejected_in_document():
    with pytest.raises(ParseError):
        parse_annotation_document(
            coco_doc(annotations='[{"id": 1, "image_id": 1, "category_id": 1, "bbox": [0, 0, NaN, 4]}]')
        )


def test_ndjson_zero_lines_gives_empty_list():
    assert parse_traces("") == []
    assert parse_detections(b"") == []


def test_detection_score_out_of_range_names_line_and_field():
    line = '{"image_id": 1, "view": "identity", "box": [0, 0, 5, 5], "category_id": 2, "score": 1.3}'
    with pytest.raises(ParseError) as exc:
        parse_detections(line)
    message = str(exc.value)
    assert "line 1" in message and "score" in message and "out of" in message


def test_detection_unknown_view_rejected():
    line = '{"image_id": 1, "view": "rot90", "box": [0, 0, 5, 5], "category_id": 2, "score": 0.5}'
    with pytest.raises(ParseError) as exc:
        parse_detections(line)
    assert "view" in str(exc.value)


def test_detection_fixture_has_six_views_per_object(canonical):
    detections = parse_detections(read_path_bytes(canonical / "detections.ndjson"))
    assert len(detections) == 12
    by_cat = {}
    for d in detections:
        by_cat.setdefault(d.category_id, set()).add(d.view)
    assert by_cat == {1: set(TransformKind), 2: set(TransformKind)}


def test_scan_counts_reconcile():
    lines = "\n".join(
        [
            '{"image_id": 1, "view": "identity", "box": [0, 0, 5, 5], "category_id": 2, "score": 0.5}',
            "not json at all",
            '{"image_id": 1, "view": "identity", "box": [0, 0, 5, 5], "category_id": 2, "score": 7}',
            '{"image_id": 2, "view": "hflip", "box": [1, 1, 4, 4], "category_id": 1, "score": 0.25}',
        ]
    )
    records, errors = scan_detections(lines)
    assert len(records) + len(errors) == 4
    assert [e.line for e in errors] == [2, 3]


def test_trace_nonfinite_rejected():
    base = {
        "image_id": 1, "epoch": 0,
        "loss_rpn_cls": 0.1, "loss_rpn_bbox": 0.1, "loss_cls": 0.1, "loss_bbox": 0.1,
        "grad_rpn_cls": 0.1, "grad_rpn_bbox": 0.1, "grad_cls": 0.1, "grad_bbox": 0.1,
        "n_matched": 1, "n_false_positive": 0, "n_ground_truth": 1, "learning_rate": 0.05,
    }
    # an overflowing literal parses to inf and must fail field validation
    line = json.dumps(base).replace("0.1", "1e999", 1)
    records, errors = scan_traces(line)
    assert not records and len(errors) == 1 and errors[0].field == "loss_rpn_cls"
    # literal Infinity / NaN tokens are rejected at the JSON layer
    with pytest.raises(ParseError):
        parse_traces('{"image_id": 1, "epoch": 0, "loss_rpn_cls": Infinity}')


def test_trace_unknown_fields_ignored(canonical):
    raw = read_path_bytes(canonical / "traces.ndjson").decode()
    first = json.loads(raw.splitlines()[0])
    first["some_adapter_extra"] = {"nested": True}
    assert len(parse_traces(json.dumps(first))) == 1


def test_verdict_top1_must_match_top3():
    line = '{"image_id": 1, "box_ref": "1#0", "top3": [2, 1, 3], "top1": 1, "p_c": 0.5}'
    with pytest.raises(ParseError) as exc:
        parse_verdicts(line)
    assert "top1" in str(exc.value)


def test_grid_length_and_positivity_enforced():
    bad_len = '{"box_ref": "1#0", "width": 2, "height": 2, "values": [1, 2, 3]}'
    with pytest.raises(ParseError):
        parse_grids(bad_len)
    all_zero = '{"box_ref": "1#0", "width": 2, "height": 1, "values": [0, 0]}'
    with pytest.raises(ParseError) as exc:
        parse_grids(all_zero)
    assert "positive" in str(exc.value)


def test_oracle_fixture_parses(canonical):
    labels = parse_oracle(read_path_bytes(canonical / "oracle.ndjson"))
    assert [(o.image_id, o.erroneous) for o in labels] == [(1, True), (2, False), (3, False)]


def test_bbox_span_without_exact_float_representation():
    # for this (lo, hi) pair no double w satisfies lo + w == hi: the exact sum
    # always lands halfway between representables and round-to-even skips hi.
    # the writer must fall back to the nearest width instead of failing.
    lo, hi = 12.019999999999998, 29.400000000000002
    assert all(lo + w != hi for w in (hi - lo, math.nextafter(hi - lo, 0), math.nextafter(hi - lo, 64)))
    record = AnnotationRecord(id=1, image_id=1, category_id=1, box=Box(lo, 1.0, hi, 2.0), area=1.0)
    (again,) = parse_annotations(write_annotations([record]))
    assert again.box.x_min == lo
    assert abs(again.box.x_max - hi) <= math.ulp(hi)
    assert again.box.y_min == 1.0 and again.box.y_max == 2.0


def test_gzip_round_trip(tmp_path):
    path = tmp_path / "traces.ndjson.gz"
    payload = b'{"x": 1}\n'
    write_path_bytes(path, payload)
    assert gzip.decompress(path.read_bytes()) == payload
    assert read_path_bytes(path) == payload


# --- property round trips over in-memory values ------------------------------

idents = st.one_of(st.integers(0, 10**9), st.text(min_size=1, max_size=12))
_GRID_MAX = 4096 * 64  # image-frame coordinates on a 1/64-pixel grid


@st.composite
def boxes(draw):
    x0 = draw(st.integers(0, _GRID_MAX - 1))
    x1 = draw(st.integers(x0 + 1, _GRID_MAX))
    y0 = draw(st.integers(0, _GRID_MAX - 1))
    y1 = draw(st.integers(y0 + 1, _GRID_MAX))
    return Box(x0 / 64, y0 / 64, x1 / 64, y1 / 64)


unit = st.integers(0, 10**6).map(lambda v: v / 10**6)
nonneg = st.integers(0, 10**9).map(lambda v: v / 10**3)


@given(
    st.lists(
        st.builds(
            AnnotationRecord,
            id=idents,
            image_id=idents,
            category_id=idents,
            box=boxes(),
            area=nonneg.filter(lambda v: v > 0),
            is_crowd=st.booleans(),
            provenance=st.one_of(st.none(), st.sampled_from(["cam_kept", "cam_adjusted"])),
        ),
        max_size=5,
    )
)
def test_annotation_round_trip_property(records):
    doc = CocoDocument(
        images=(ImageInfo(id=1, width=8192, height=8192),),
        annotations=tuple(records),
        categories=(Category(id=1, name="thing"),),
    )
    assert parse_annotation_document(write_annotation_document(doc)) == doc


@given(
    st.lists(
        st.builds(
            Detection,
            image_id=idents,
            view=st.sampled_from(list(TransformKind)),
            box=boxes(),
            category_id=idents,
            score=unit,
        ),
        max_size=5,
    )
)
def test_detection_round_trip_property(records):
    assert parse_detections(write_detections(records)) == records


@given(
    st.lists(
        st.builds(
            TraceSample,
            image_id=idents,
            epoch=st.integers(0, 500),
            loss_rpn_cls=nonneg,
            loss_rpn_bbox=nonneg,
            loss_cls=nonneg,
            loss_bbox=nonneg,
            grad_rpn_cls=nonneg,
            grad_rpn_bbox=nonneg,
            grad_cls=nonneg,
            grad_bbox=nonneg,
            n_matched=st.integers(0, 100),
            n_false_positive=st.integers(0, 100),
            n_ground_truth=st.integers(0, 100),
            learning_rate=st.sampled_from([0.05, 0.02, 0.001]),
        ),
        max_size=5,
    )
)
def test_trace_round_trip_property(records):
    assert parse_traces(write_traces(records)) == records


@given(
    st.lists(
        st.builds(
            OracleLabel,
            image_id=idents,
            erroneous=st.booleans(),
        ),
        max_size=5,
    )
)
def test_oracle_round_trip_property(records):
    assert parse_oracle(write_oracle(records)) == records


@given(st.data())
def test_verdict_and_grid_round_trip_property(data):
    top3 = data.draw(st.lists(st.integers(1, 99), min_size=3, max_size=3, unique=True))
    verdict = ClassifierVerdict(
        image_id=data.draw(idents),
        box_ref="7#0",
        top3=tuple(top3),
        top1=top3[0],
        p_c=data.draw(unit),
    )
    assert parse_verdicts(write_verdicts([verdict])) == [verdict]

    width = data.draw(st.integers(1, 6))
    height = data.draw(st.integers(1, 6))
    values = data.draw(
        st.lists(nonneg, min_size=width * height, max_size=width * height).filter(
            lambda vs: any(v > 0 for v in vs)
        )
    )
    grid = ActivationGrid(box_ref="7#0", width=width, height=height, values=tuple(values))
    assert parse_grids(write_grids([grid])) == [grid]
