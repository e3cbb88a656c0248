"""Dataset comparison reports and detection-quality scoring.

``diff_report`` compares two COCO-style documents per category, organized by
small/medium/large size buckets (standard cutoffs 32^2 and 96^2 pixels).
``average_precision`` implements greedy-matching AP over a pooled ranked
prediction list, averaged over IoU thresholds 0.50:0.05:0.95.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .errors import ValidationError
from .geometry import iou
from .interchange import (
    AnnotationRecord,
    Category,
    CocoDocument,
    Detection,
    Identifier,
    dumps_document,
)
from .trace_metrics import id_sort_key

SMALL_CUTOFF = 32.0**2
MEDIUM_CUTOFF = 96.0**2
BUCKETS = ("small", "medium", "large")

DEFAULT_IOU_THRESHOLDS = tuple(i / 100 for i in range(50, 100, 5))


def size_bucket(area: float) -> str:
    if area < SMALL_CUTOFF:
        return "small"
    if area < MEDIUM_CUTOFF:
        return "medium"
    return "large"


@dataclass(frozen=True)
class CategoryDiff:
    category_id: Identifier
    name: str
    count_before: int
    count_after: int
    difference: int
    average_area: float
    bucket: str


@dataclass(frozen=True)
class DiffReport:
    grouping: str
    rows: tuple[CategoryDiff, ...]

    def bucket_rows(self, bucket: str) -> list[CategoryDiff]:
        return [r for r in self.rows if r.bucket == bucket]


def _category_names(*docs: CocoDocument) -> dict[Identifier, str]:
    names: dict[Identifier, str] = {}
    for doc in docs:
        for c in doc.categories:
            if c.name is not None:
                names.setdefault(c.id, c.name)
    return names


def _mean(values: list[float]) -> float:
    return sum(values) / len(values) if values else 0.0


def diff_report(
    before: CocoDocument, after: CocoDocument, grouping: str = "per_category_mean_area"
) -> DiffReport:
    """Per-category annotation-count difference between two documents.

    ``per_category_mean_area`` assigns each whole category to the bucket of
    its mean area over the AFTER set (falling back to the before set when the
    category vanished). ``per_annotation_bucket`` buckets every annotation
    individually, one row per (category, bucket) seen on either side.
    """
    if grouping not in ("per_category_mean_area", "per_annotation_bucket"):
        raise ValidationError(f"unknown diff grouping {grouping!r}")
    names = _category_names(before, after)
    universe: set[Identifier] = set(names)
    universe.update(a.category_id for a in before.annotations)
    universe.update(a.category_id for a in after.annotations)

    def name_of(cid: Identifier) -> str:
        return names.get(cid, str(cid))

    rows: list[CategoryDiff] = []
    if grouping == "per_category_mean_area":
        for cid in universe:
            before_areas = [a.area for a in before.annotations if a.category_id == cid]
            after_areas = [a.area for a in after.annotations if a.category_id == cid]
            avg_after = _mean(after_areas)
            bucket_area = avg_after if after_areas else _mean(before_areas)
            rows.append(
                CategoryDiff(
                    category_id=cid,
                    name=name_of(cid),
                    count_before=len(before_areas),
                    count_after=len(after_areas),
                    difference=len(after_areas) - len(before_areas),
                    average_area=avg_after,
                    bucket=size_bucket(bucket_area),
                )
            )
    else:
        for cid in universe:
            per_bucket_before: dict[str, int] = {b: 0 for b in BUCKETS}
            per_bucket_after: dict[str, list[float]] = {b: [] for b in BUCKETS}
            for a in before.annotations:
                if a.category_id == cid:
                    per_bucket_before[size_bucket(a.area)] += 1
            for a in after.annotations:
                if a.category_id == cid:
                    per_bucket_after[size_bucket(a.area)].append(a.area)
            for bucket in BUCKETS:
                n_before = per_bucket_before[bucket]
                n_after = len(per_bucket_after[bucket])
                if n_before == 0 and n_after == 0:
                    continue
                rows.append(
                    CategoryDiff(
                        category_id=cid,
                        name=name_of(cid),
                        count_before=n_before,
                        count_after=n_after,
                        difference=n_after - n_before,
                        average_area=_mean(per_bucket_after[bucket]),
                        bucket=bucket,
                    )
                )

    bucket_rank = {b: i for i, b in enumerate(BUCKETS)}
    rows.sort(key=lambda r: (bucket_rank[r.bucket], r.name.lower(), id_sort_key(r.category_id)))
    return DiffReport(grouping=grouping, rows=tuple(rows))


def render_diff_table(report: DiffReport) -> str:
    """Plain-text tables, one per size bucket, in the published column layout."""
    header = ("Category", "Before", "After", "Difference", "Average Area")
    out_lines = []
    for bucket in BUCKETS:
        rows = report.bucket_rows(bucket)
        if not rows:
            continue
        table = [header] + [
            (
                r.name,
                str(r.count_before),
                str(r.count_after),
                str(r.difference),
                f"{r.average_area:.2f}",
            )
            for r in rows
        ]
        widths = [max(len(row[i]) for row in table) for i in range(len(header))]
        out_lines.append(f"== {bucket.capitalize()} objects ==")
        for i, row in enumerate(table):
            out_lines.append(
                "  ".join(
                    cell.ljust(widths[c]) if c == 0 else cell.rjust(widths[c])
                    for c, cell in enumerate(row)
                ).rstrip()
            )
            if i == 0:
                out_lines.append("  ".join("-" * w for w in widths))
        out_lines.append("")
    return "\n".join(out_lines)


def write_diff_report(report: DiffReport) -> bytes:
    return dumps_document(
        {
            "grouping": report.grouping,
            "buckets": {
                bucket: [
                    {
                        "category_id": r.category_id,
                        "name": r.name,
                        "count_before": r.count_before,
                        "count_after": r.count_after,
                        "difference": r.difference,
                        "average_area": r.average_area,
                    }
                    for r in report.bucket_rows(bucket)
                ]
                for bucket in BUCKETS
            },
        }
    )


# ---------------------------------------------------------------------------
# average precision


@dataclass(frozen=True)
class APReport:
    thresholds: tuple[float, ...]
    ap_per_threshold: tuple[float, ...]
    mean_ap: float
    warnings: tuple[str, ...] = ()


def _ap_at_threshold(
    predictions: Sequence[Detection],
    truth_index: dict[tuple[Identifier, Identifier], list[tuple[int, AnnotationRecord]]],
    n_truth: int,
    threshold: float,
) -> float:
    matched: set[int] = set()
    tp_flags: list[bool] = []
    for p in predictions:
        best_iou = 0.0
        best_idx: int | None = None
        for t_idx, t in truth_index.get((p.image_id, p.category_id), ()):
            if t_idx in matched:
                continue
            overlap = iou(p.box, t.box)
            if overlap >= threshold and overlap > best_iou:
                best_iou = overlap
                best_idx = t_idx
        if best_idx is None:
            tp_flags.append(False)
        else:
            matched.add(best_idx)
            tp_flags.append(True)

    precisions: list[float] = []
    recalls: list[float] = []
    tp = 0
    for rank, is_tp in enumerate(tp_flags, start=1):
        tp += is_tp
        precisions.append(tp / rank)
        recalls.append(tp / n_truth)
    # monotone precision envelope, integrated over every recall increment
    for i in range(len(precisions) - 2, -1, -1):
        precisions[i] = max(precisions[i], precisions[i + 1])
    ap = 0.0
    prev_recall = 0.0
    for recall, precision in zip(recalls, precisions):
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


def average_precision(
    predictions: Sequence[Detection],
    truth: Sequence[AnnotationRecord],
    iou_thresholds: Sequence[float] = DEFAULT_IOU_THRESHOLDS,
) -> APReport:
    """Greedy-matching AP over a pooled ranked list, per threshold and mean.

    Predictions are ranked by descending score; each matches the unmatched
    same-image same-class truth box of highest IoU at or above the threshold.
    Crowd-marked truth boxes are excluded from matching and recall.
    """
    if not iou_thresholds:
        raise ValidationError("need at least one IoU threshold")
    warnings: list[str] = []
    usable_truth = [t for t in truth if not t.is_crowd]
    n_crowd = len(truth) - len(usable_truth)
    if n_crowd:
        warnings.append(f"ignored {n_crowd} crowd-marked truth box(es)")

    ranked = sorted(
        predictions,
        key=lambda p: (-p.score, id_sort_key(p.image_id), str(p.category_id), p.box.as_tuple()),
    )
    if not usable_truth:
        if ranked:
            warnings.append("no usable truth boxes; AP reported as 0")
        aps = tuple(0.0 for _ in iou_thresholds)
        return APReport(
            thresholds=tuple(iou_thresholds), ap_per_threshold=aps, mean_ap=0.0,
            warnings=tuple(warnings),
        )

    truth_index: dict[tuple[Identifier, Identifier], list[tuple[int, AnnotationRecord]]] = {}
    for idx, t in enumerate(usable_truth):
        truth_index.setdefault((t.image_id, t.category_id), []).append((idx, t))

    aps = tuple(
        _ap_at_threshold(ranked, truth_index, len(usable_truth), t) for t in iou_thresholds
    )
    return APReport(
        thresholds=tuple(iou_thresholds),
        ap_per_threshold=aps,
        mean_ap=sum(aps) / len(aps),
        warnings=tuple(warnings),
    )


def write_ap_report(report: APReport) -> bytes:
    return dumps_document(
        {
            "per_threshold": [
                {"iou_threshold": t, "ap": ap}
                for t, ap in zip(report.thresholds, report.ap_per_threshold)
            ],
            "mean_ap": report.mean_ap,
            "warnings": list(report.warnings),
        }
    )
