import numpy as np
import pytest

from annorefine.errors import ValidationError
from annorefine.geometry import Box, TransformKind
from annorefine.interchange import AnnotationRecord, Category, CocoDocument, Detection, ImageInfo
from annorefine.evaluation import (
    average_precision,
    diff_report,
    render_diff_table,
    size_bucket,
    write_diff_report,
)


def ann(aid, image_id, cat, box, is_crowd=False):
    return AnnotationRecord(
        id=aid, image_id=image_id, category_id=cat, box=box, area=box.area, is_crowd=is_crowd
    )


def doc(annotations, categories=None, images=None):
    return CocoDocument(
        images=tuple(images or [ImageInfo(id=1, width=1000, height=1000)]),
        annotations=tuple(annotations),
        categories=tuple(categories or []),
    )


def pred(box, cat, score, image_id=1):
    return Detection(image_id=image_id, view=TransformKind.IDENTITY, box=box, category_id=cat, score=score)


# --- size buckets ----------------------------------------------------------------


def test_size_bucket_cutoffs():
    assert size_bucket(1023.9) == "small"
    assert size_bucket(1024.0) == "medium"  # 32^2 belongs to medium
    assert size_bucket(9215.9) == "medium"
    assert size_bucket(9216.0) == "large"  # 96^2 belongs to large


# --- diff report -----------------------------------------------------------------


def test_diff_before_equals_after_all_zero():
    annotations = [ann(i, 1, 1, Box(0, 0, 10 + i, 10)) for i in range(4)]
    categories = [Category(id=1, name="person")]
    report = diff_report(doc(annotations, categories), doc(annotations, categories))
    assert all(r.difference == 0 for r in report.rows)


def test_diff_apple_row_arithmetic():
    # counts mirror a published per-category row: 5,851 -> 19,527
    categories = [Category(id=1, name="apple")]
    box = Box(0, 0, 100, 110)  # area 11000, close to the published mean
    before = doc([ann(i, 1, 1, box) for i in range(5851)], categories)
    after = doc([ann(i, 1, 1, box) for i in range(19527)], categories)
    report = diff_report(before, after)
    (row,) = report.rows
    assert row.count_before == 5851
    assert row.count_after == 19527
    assert row.difference == 13676
    assert row.average_area == pytest.approx(11000.0)


def test_diff_bucket_assignment_matches_hand_computation():
    categories = [Category(id=1, name="ant"), Category(id=2, name="bowl"), Category(id=3, name="car")]
    after_annotations = [
        # ant: areas 800, 1000 -> mean 900 -> small
        ann(1, 1, 1, Box(0, 0, 40, 20)),
        ann(2, 1, 1, Box(0, 0, 40, 25)),
        # bowl: areas 4000, 6000 -> mean 5000 -> medium
        ann(3, 1, 2, Box(0, 0, 80, 50)),
        ann(4, 1, 2, Box(0, 0, 100, 60)),
        # car: areas 15000, 25000 -> mean 20000 -> large
        ann(5, 1, 3, Box(0, 0, 150, 100)),
        ann(6, 1, 3, Box(0, 0, 250, 100)),
    ]
    report = diff_report(doc([], categories), doc(after_annotations, categories))
    by_name = {r.name: r for r in report.rows}
    assert by_name["ant"].bucket == "small"
    assert by_name["bowl"].bucket == "medium"
    assert by_name["car"].bucket == "large"
    assert by_name["ant"].count_before == 0  # category absent before is not an error
    assert by_name["ant"].average_area == pytest.approx(900.0)


def test_diff_per_annotation_bucket_grouping():
    categories = [Category(id=1, name="kite")]
    before = doc([ann(1, 1, 1, Box(0, 0, 10, 10))], categories)  # one small
    after = doc(
        [
            ann(1, 1, 1, Box(0, 0, 10, 10)),     # small (100)
            ann(2, 1, 1, Box(0, 0, 20, 20)),     # small (400)
            ann(3, 1, 1, Box(0, 0, 100, 100)),   # large (10000)
        ],
        categories,
    )
    report = diff_report(before, after, grouping="per_annotation_bucket")
    rows = {(r.name, r.bucket): r for r in report.rows}
    assert rows[("kite", "small")].count_before == 1
    assert rows[("kite", "small")].count_after == 2
    assert rows[("kite", "small")].difference == 1
    assert rows[("kite", "small")].average_area == pytest.approx(250.0)
    assert rows[("kite", "large")].count_after == 1
    assert ("kite", "medium") not in rows
    # every after-annotation is counted exactly once across buckets
    assert sum(r.count_after for r in report.rows) == 3


def test_diff_total_counts_invariant():
    rng = np.random.default_rng(31)
    categories = [Category(id=c, name=f"cat{c}") for c in range(1, 5)]
    annotations = []
    for i in range(200):
        cat = int(rng.integers(1, 5))
        side = float(rng.uniform(5, 200))
        annotations.append(ann(i, 1, cat, Box(0, 0, side, side)))
    after = doc(annotations, categories)
    for grouping in ("per_category_mean_area", "per_annotation_bucket"):
        report = diff_report(doc([], categories), after, grouping=grouping)
        assert sum(r.count_after for r in report.rows) == len(annotations)


def test_diff_report_rejects_unknown_grouping():
    with pytest.raises(ValidationError):
        diff_report(doc([]), doc([]), grouping="by_vibes")


def test_render_diff_table_layout():
    categories = [Category(id=1, name="apple")]
    report = diff_report(
        doc([ann(1, 1, 1, Box(0, 0, 10, 10))], categories),
        doc([ann(1, 1, 1, Box(0, 0, 10, 10)), ann(2, 1, 1, Box(0, 0, 12, 12))], categories),
    )
    text = render_diff_table(report)
    assert "Category" in text and "Difference" in text and "Average Area" in text
    assert "apple" in text
    write_diff_report(report)  # serializes without error


# --- average precision -------------------------------------------------------------


def test_ap_perfect_detector_is_one_everywhere():
    truth = [
        ann(1, 1, 1, Box(0, 0, 10, 10)),
        ann(2, 1, 2, Box(20, 20, 40, 45)),
        ann(3, 2, 1, Box(5, 5, 9, 9)),
    ]
    predictions = [pred(t.box, t.category_id, 1.0, image_id=t.image_id) for t in truth]
    report = average_precision(predictions, truth)
    assert report.ap_per_threshold == tuple([1.0] * 10)
    assert report.mean_ap == 1.0


def test_ap_no_predictions_is_zero():
    truth = [ann(1, 1, 1, Box(0, 0, 10, 10))]
    report = average_precision([], truth)
    assert report.mean_ap == 0.0


def test_ap_empty_truth_warns():
    report = average_precision([pred(Box(0, 0, 10, 10), 1, 0.9)], [])
    assert report.mean_ap == 0.0
    assert any("no usable truth" in w for w in report.warnings)


def test_ap_matches_hand_enumerated_pr_curve():
    truth = [
        ann(1, 1, 1, Box(0, 0, 10, 10)),
        ann(2, 1, 1, Box(20, 0, 30, 10)),
        ann(3, 1, 1, Box(40, 0, 50, 10)),
        ann(4, 1, 1, Box(60, 0, 70, 10)),
    ]
    predictions = [
        pred(Box(0, 0, 10, 10), 1, 0.95),   # IoU 1.0 with truth 1
        pred(Box(21, 0, 31, 10), 1, 0.90),  # IoU 9/11 = 0.818 with truth 2
        pred(Box(0, 0, 10, 10), 1, 0.85),   # duplicate of truth 1 -> FP
        pred(Box(40, 2, 50, 12), 1, 0.80),  # IoU 80/120 = 0.667 with truth 3
        pred(Box(80, 0, 90, 10), 1, 0.75),  # matches nothing
    ]
    # hand enumeration:
    #  t=0.50: flags TP TP FP TP FP -> recalls .25 .50 .50 .75 .75,
    #          precisions 1 1 2/3 3/4 3/5, envelope 1 1 .75 .75 .6 -> AP 0.6875
    #  t=0.70: flags TP TP FP FP FP -> AP = .25 + .25 = 0.5
    #  t=0.85: flags TP FP FP FP FP -> AP = 0.25
    report = average_precision(predictions, truth, iou_thresholds=[0.5, 0.7, 0.85])
    assert report.ap_per_threshold[0] == pytest.approx(0.6875, abs=1e-9)
    assert report.ap_per_threshold[1] == pytest.approx(0.5, abs=1e-9)
    assert report.ap_per_threshold[2] == pytest.approx(0.25, abs=1e-9)
    assert report.mean_ap == pytest.approx((0.6875 + 0.5 + 0.25) / 3, abs=1e-9)


def _random_scene(rng, n_truth=6, n_pred=10):
    truth, predictions = [], []
    for i in range(n_truth):
        x0, y0 = rng.uniform(0, 150, size=2)
        w, h = rng.uniform(10, 40, size=2)
        truth.append(ann(i, 1, int(rng.integers(1, 3)), Box(x0, y0, x0 + w, y0 + h)))
    for _ in range(n_pred):
        base = truth[int(rng.integers(0, n_truth))]
        jitter = rng.uniform(-6, 6, size=4)
        box = Box(
            base.box.x_min + jitter[0],
            base.box.y_min + jitter[1],
            base.box.x_max + jitter[2],
            base.box.y_max + jitter[3],
        )
        cat = base.category_id if rng.random() < 0.8 else int(rng.integers(1, 3))
        predictions.append(pred(box, cat, float(rng.uniform(0.1, 1.0))))
    return truth, predictions


def test_ap_non_increasing_in_threshold_over_random_fixtures():
    rng = np.random.default_rng(37)
    for _ in range(20):
        truth, predictions = _random_scene(rng)
        report = average_precision(predictions, truth)
        for earlier, later in zip(report.ap_per_threshold, report.ap_per_threshold[1:]):
            assert later <= earlier + 1e-12


def test_ap_duplicate_false_positive_never_helps():
    rng = np.random.default_rng(41)
    for _ in range(10):
        truth, predictions = _random_scene(rng)
        base = average_precision(predictions, truth).mean_ap
        dup = predictions[int(rng.integers(0, len(predictions)))]
        worse = average_precision(predictions + [dup], truth).mean_ap
        assert worse <= base + 1e-12


def test_ap_crowd_truth_ignored():
    crowd = ann(1, 1, 1, Box(0, 0, 50, 50), is_crowd=True)
    real = ann(2, 1, 1, Box(60, 60, 80, 80))
    predictions = [
        pred(Box(60, 60, 80, 80), 1, 0.9),  # matches the real truth
        pred(Box(0, 0, 50, 50), 1, 0.8),    # overlaps only the crowd box -> FP
    ]
    report = average_precision(predictions, [crowd, real], iou_thresholds=[0.5])
    # recall denominator is 1 (crowd excluded); the crowd match counts as FP
    assert report.ap_per_threshold[0] == pytest.approx(1.0, abs=1e-9)
    assert any("crowd" in w for w in report.warnings)


def test_ap_requires_thresholds():
    with pytest.raises(ValidationError):
        average_precision([], [], iou_thresholds=[])
