"""Four-stage pseudo-label refinement for flagged images.

Stage 1 back-projects multi-view detections and forms cross-view consensus
candidates, stage 2 merges same-class duplicates by IoU, stage 3 validates
low-confidence candidates against an image classifier's verdicts through a
score-stratified rule ladder, and stage 4 keeps, adjusts or drops survivors
based on the spread and concentration of their activation grids.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .errors import InputError, ValidationError
from .geometry import (
    ALL_VIEWS,
    DEFAULT_FACTORS,
    Box,
    ImageDims,
    ScaleFactors,
    TransformKind,
    average_boxes,
    from_view,
    iou,
    merge_extents,
)
from .interchange import (
    ActivationGrid,
    AnnotationRecord,
    ClassifierVerdict,
    CocoDocument,
    Detection,
    Identifier,
    _Fields,
    _raise_if_errors,
    _scan_ndjson,
    dumps_document,
    dumps_lines,
    make_box_ref,
)
from .trace_metrics import id_sort_key

STAGE_TAGS = ("consensus", "merged", "validated", "cam_kept", "cam_adjusted")


@dataclass(frozen=True)
class CandidateBox:
    """A pseudo-label candidate in original-image coordinates."""

    image_id: Identifier
    box: Box
    category_id: Identifier
    score: float
    supporting_views: frozenset[TransformKind]
    stage: str
    box_ref: str | None = None

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"candidate score must lie in [0, 1], got {self.score!r}")
        if not self.supporting_views:
            raise ValueError("candidate needs at least one supporting view")
        if self.stage not in STAGE_TAGS:
            raise ValueError(f"unknown stage tag {self.stage!r}")


@dataclass(frozen=True)
class LadderRung:
    """One score interval [lo, hi) and its keep rule.

    The topmost rung also contains score 1.0. ``theta`` is the classifier
    probability cut used by the 'top1_match_and_pc' rule.
    """

    lo: float
    hi: float
    rule: str
    theta: float | None = None

    RULES = ("always_keep", "top3_match", "top1_match", "top1_match_and_pc")

    def __post_init__(self):
        if self.rule not in self.RULES:
            raise ValueError(f"unknown ladder rule {self.rule!r}")
        if not (0.0 <= self.lo < self.hi <= 1.0):
            raise ValueError(f"rung interval [{self.lo}, {self.hi}) is not inside [0, 1]")
        if self.rule == "top1_match_and_pc":
            if self.theta is None or not (0.0 <= self.theta <= 1.0):
                raise ValueError(f"rule {self.rule} needs theta in [0, 1], got {self.theta!r}")

    def contains(self, score: float) -> bool:
        return self.lo <= score < self.hi or (self.hi == 1.0 and score == 1.0)


@dataclass(frozen=True)
class LadderConfig:
    """Ordered rungs partitioning [0, 1]."""

    rungs: tuple[LadderRung, ...]

    def __post_init__(self):
        ordered = sorted(self.rungs, key=lambda r: r.lo)
        if not ordered or ordered[0].lo != 0.0 or ordered[-1].hi != 1.0:
            raise ValueError("ladder rungs must cover [0, 1]")
        for prev, nxt in zip(ordered, ordered[1:]):
            if prev.hi != nxt.lo:
                raise ValueError(
                    f"ladder rungs must partition [0, 1] without gaps/overlap: "
                    f"[{prev.lo}, {prev.hi}) then [{nxt.lo}, {nxt.hi})"
                )

    def rung_for(self, score: float) -> LadderRung:
        for rung in self.rungs:
            if rung.contains(score):
                return rung
        raise ValidationError(f"score {score!r} outside [0, 1]")


# the condition block of the pseudo-labeling algorithm
DEFAULT_LADDER = LadderConfig(
    (
        LadderRung(0.6, 1.0, "always_keep"),
        LadderRung(0.3, 0.6, "top3_match"),
        LadderRung(0.2, 0.3, "top1_match"),
        LadderRung(0.1, 0.2, "top1_match_and_pc", 0.8),
        LadderRung(0.0, 0.1, "top1_match_and_pc", 0.9),
    )
)

# the alternative ladder described in prose (0.5 top cut, lower p_c rungs)
PROSE_LADDER = LadderConfig(
    (
        LadderRung(0.5, 1.0, "always_keep"),
        LadderRung(0.3, 0.5, "top3_match"),
        LadderRung(0.2, 0.3, "top1_match"),
        LadderRung(0.1, 0.2, "top1_match_and_pc", 0.5),
        LadderRung(0.08, 0.1, "top1_match_and_pc", 0.6),
        LadderRung(0.0, 0.08, "top1_match_and_pc", 0.7),
    )
)

LADDERS: dict[str, LadderConfig] = {"default": DEFAULT_LADDER, "prose": PROSE_LADDER}


@dataclass(frozen=True)
class CamThresholds:
    """Spread / concentration / box-fit cuts for activation-grid refinement."""

    var_alpha: float = 0.08
    conc_beta: float = 0.5
    mass_tau: float = 0.15

    def __post_init__(self):
        if not (math.isfinite(self.var_alpha) and self.var_alpha >= 0):
            raise ValueError(f"var_alpha must be >= 0, got {self.var_alpha!r}")
        if not (0.0 <= self.conc_beta <= 1.0):
            raise ValueError(f"conc_beta must lie in [0, 1], got {self.conc_beta!r}")
        if not (0.0 < self.mass_tau < 1.0):
            raise ValueError(f"mass_tau must lie in (0, 1), got {self.mass_tau!r}")


@dataclass(frozen=True)
class CamOutcome:
    kind: str  # kept | adjusted | dropped
    box: Box | None = None
    warning: str | None = None


@dataclass(frozen=True)
class PseudoConfig:
    min_views: int = 4
    cluster_iou: float = 0.5
    stage2_iou: float = 0.8
    stage2_mode: str = "merge_extent"
    ladder: LadderConfig = DEFAULT_LADDER
    cam: CamThresholds = CamThresholds()
    factors: ScaleFactors = DEFAULT_FACTORS

    def __post_init__(self):
        if self.stage2_mode not in ("keep_max", "merge_extent"):
            raise ValueError(f"stage2_mode must be keep_max or merge_extent, got {self.stage2_mode!r}")
        if not (0.0 < self.cluster_iou <= 1.0) or not (0.0 < self.stage2_iou <= 1.0):
            raise ValueError("IoU thresholds must lie in (0, 1]")
        if self.min_views < 1:
            raise ValueError(f"min_views must be >= 1, got {self.min_views}")


# ---------------------------------------------------------------------------
# stages


def _det_sort_key(det: Detection, box: Box):
    return (-det.score, str(det.category_id), det.view.value, box.as_tuple())


def stage1_consensus(
    detections: Sequence[Detection],
    dims: ImageDims,
    min_views: int = 4,
    cluster_iou: float = 0.5,
    factors: ScaleFactors = DEFAULT_FACTORS,
) -> list[CandidateBox]:
    """Back-project all views and keep clusters with a label quorum.

    Detections are clustered greedily in descending score order against each
    cluster's seed box (label-free, IoU >= cluster_iou). A cluster survives
    when some label is carried by at least ``min_views`` distinct views; its
    label comes from the highest-score member, its box is the mean of the
    member boxes sharing that label, its score their maximum.
    """
    if not detections:
        return []
    image_ids = {d.image_id for d in detections}
    if len(image_ids) > 1:
        raise ValidationError(f"stage 1 expects one image, got ids {sorted(map(str, image_ids))}")
    if any(not isinstance(d.view, TransformKind) for d in detections):
        raise ValidationError("detections reference unknown views")
    image_id = next(iter(image_ids))

    projected: list[tuple[Detection, Box]] = []
    for d in detections:
        try:
            projected.append((d, from_view(d.box, d.view, dims, factors)))
        except ValueError as e:
            raise ValidationError(f"image {image_id}, view {d.view.value}: {e}")
    projected.sort(key=lambda p: _det_sort_key(*p))

    clusters: list[dict] = []
    for det, box in projected:
        for cluster in clusters:
            if iou(box, cluster["seed"]) >= cluster_iou:
                cluster["members"].append((det, box))
                break
        else:
            clusters.append({"seed": box, "members": [(det, box)]})

    candidates = []
    for cluster in clusters:
        members = cluster["members"]
        views_by_label: dict[Identifier, set[TransformKind]] = {}
        for det, _ in members:
            views_by_label.setdefault(det.category_id, set()).add(det.view)
        if not any(len(views) >= min_views for views in views_by_label.values()):
            continue
        best_det, _ = members[0]  # members are in deterministic score-desc order
        label = best_det.category_id
        labeled = [(det, box) for det, box in members if det.category_id == label]
        candidates.append(
            CandidateBox(
                image_id=image_id,
                box=average_boxes([box for _, box in labeled]),
                category_id=label,
                score=max(det.score for det, _ in labeled),
                supporting_views=frozenset(det.view for det, _ in labeled),
                stage="consensus",
            )
        )
    candidates.sort(key=lambda c: (-c.score, c.box.as_tuple(), str(c.category_id)))
    return candidates


def _candidate_rank(c: CandidateBox):
    # ties: score, then larger area, then box coordinates
    return (-c.score, -c.box.area, c.box.as_tuple(), str(c.category_id))


def stage2_dedupe(
    candidates: Sequence[CandidateBox],
    iou_thresh: float = 0.8,
    mode: str = "merge_extent",
) -> list[CandidateBox]:
    """Group same-class candidates with transitive IoU >= threshold.

    ``keep_max`` keeps each group's highest-score member; ``merge_extent``
    replaces the group with the extent envelope and the mean score. Outputs
    of multi-member groups carry the 'merged' stage tag; singletons pass
    through unchanged. Output is sorted by descending score (this order
    defines the stage-2 candidate index used in box_ref).
    """
    if mode not in ("keep_max", "merge_extent"):
        raise ValidationError(f"stage2 mode must be keep_max or merge_extent, got {mode!r}")
    n = len(candidates)
    parent = list(range(n))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if candidates[i].category_id == candidates[j].category_id and (
                iou(candidates[i].box, candidates[j].box) >= iou_thresh
            ):
                parent[find(i)] = find(j)

    groups: dict[int, list[CandidateBox]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(candidates[i])

    out = []
    for group in groups.values():
        if len(group) == 1:
            out.append(group[0])
            continue
        group.sort(key=_candidate_rank)
        views = frozenset().union(*(c.supporting_views for c in group))
        if mode == "keep_max":
            out.append(replace(group[0], supporting_views=views, stage="merged"))
        else:
            out.append(
                CandidateBox(
                    image_id=group[0].image_id,
                    box=merge_extents([c.box for c in group]),
                    category_id=group[0].category_id,
                    score=sum(c.score for c in group) / len(group),
                    supporting_views=views,
                    stage="merged",
                )
            )
    out.sort(key=_candidate_rank)
    return out


def assign_box_refs(candidates: Sequence[CandidateBox]) -> list[CandidateBox]:
    """Attach the deterministic ``{image_id}#{index}`` stage-2 identifiers."""
    return [
        replace(c, box_ref=make_box_ref(c.image_id, i)) for i, c in enumerate(candidates)
    ]


def stage3_validate(
    candidate: CandidateBox,
    verdict: ClassifierVerdict | None,
    ladder: LadderConfig = DEFAULT_LADDER,
) -> bool:
    """Apply the ladder rung containing the candidate's score.

    A verdict is mandatory unless the rung keeps unconditionally; a missing
    one is an adapter contract violation.
    """
    rung = ladder.rung_for(candidate.score)
    if rung.rule == "always_keep":
        return True
    if verdict is None:
        raise InputError(
            f"missing classifier verdict for candidate {candidate.box_ref or candidate.box.as_tuple()}"
            f" of image {candidate.image_id} (score {candidate.score})",
            image_id=candidate.image_id,
            box_ref=candidate.box_ref,
        )
    if rung.rule == "top3_match":
        return candidate.category_id in verdict.top3
    if rung.rule == "top1_match":
        return candidate.category_id == verdict.top1
    return candidate.category_id == verdict.top1 and verdict.p_c >= rung.theta


def stage4_cam_refine(
    candidate: CandidateBox,
    grid: ActivationGrid,
    thresholds: CamThresholds = CamThresholds(),
    dims: ImageDims | None = None,
) -> CamOutcome:
    """Keep, spatially adjust, or drop one candidate from its activation grid.

    Var(G) is the mass-weighted mean squared distance of cell centers from
    the mass centroid, normalized by the squared grid diagonal. conc(G) is
    the fraction of total mass held by cells at or above half the maximum.
    The adjusted box is the tight rectangle over cells >= mass_tau * max,
    mapped into the candidate box and clipped to the image.
    """
    values = np.asarray(grid.values, dtype=np.float64).reshape(grid.height, grid.width)
    total = float(values.sum())
    if total <= 0:
        raise ValidationError(f"activation grid {grid.box_ref} has zero mass")
    mass = values / total
    cols = np.arange(grid.width) + 0.5
    rows = np.arange(grid.height) + 0.5
    mx = float((mass.sum(axis=0) * cols).sum())
    my = float((mass.sum(axis=1) * rows).sum())
    sq_dist = (cols[None, :] - mx) ** 2 + (rows[:, None] - my) ** 2
    var = float((mass * sq_dist).sum()) / (grid.width**2 + grid.height**2)
    vmax = float(values.max())
    conc = float(values[values >= 0.5 * vmax].sum()) / total

    if var <= thresholds.var_alpha:
        return CamOutcome(kind="kept", box=candidate.box)
    if conc < thresholds.conc_beta:
        return CamOutcome(kind="dropped")

    selected = values >= thresholds.mass_tau * vmax
    sel_rows = np.flatnonzero(selected.any(axis=1))
    sel_cols = np.flatnonzero(selected.any(axis=0))
    box = candidate.box
    cell_w = box.width / grid.width
    cell_h = box.height / grid.height
    x0 = box.x_min + sel_cols[0] * cell_w
    x1 = box.x_min + (sel_cols[-1] + 1) * cell_w
    y0 = box.y_min + sel_rows[0] * cell_h
    y1 = box.y_min + (sel_rows[-1] + 1) * cell_h
    if dims is not None:
        x0, y0 = max(x0, 0.0), max(y0, 0.0)
        x1, y1 = min(x1, dims.width), min(y1, dims.height)
    if not (x1 > x0 and y1 > y0):
        return CamOutcome(
            kind="dropped",
            warning=f"adjusted box for {candidate.box_ref or candidate.image_id} degenerated to zero area",
        )
    return CamOutcome(kind="adjusted", box=Box(x0, y0, x1, y1))


# ---------------------------------------------------------------------------
# whole-pipeline orchestration


@dataclass(frozen=True)
class ImageCounts:
    image_id: Identifier
    stage1_produced: int = 0
    stage2_kept: int = 0
    stage2_merged_away: int = 0
    ladder_dropped: int = 0
    cam_kept: int = 0
    cam_adjusted: int = 0
    cam_dropped: int = 0

    def as_obj(self) -> dict:
        return {
            "stage1_produced": self.stage1_produced,
            "stage2_kept": self.stage2_kept,
            "stage2_merged_away": self.stage2_merged_away,
            "ladder_dropped": self.ladder_dropped,
            "cam_kept": self.cam_kept,
            "cam_adjusted": self.cam_adjusted,
            "cam_dropped": self.cam_dropped,
        }


@dataclass(frozen=True)
class PipelineReport:
    per_image: tuple[ImageCounts, ...]
    zero_box_images: tuple[Identifier, ...]
    warnings: tuple[str, ...] = ()

    def totals(self) -> dict:
        keys = (
            "stage1_produced",
            "stage2_kept",
            "stage2_merged_away",
            "ladder_dropped",
            "cam_kept",
            "cam_adjusted",
            "cam_dropped",
        )
        return {k: sum(getattr(c, k) for c in self.per_image) for k in keys}


def _process_image(
    image_id: Identifier,
    dims: ImageDims,
    detections: Sequence[Detection],
    verdict_by_ref: Mapping[str, ClassifierVerdict],
    grid_by_ref: Mapping[str, ActivationGrid],
    config: PseudoConfig,
) -> tuple[list[CandidateBox], ImageCounts, list[str]]:
    stage1 = stage1_consensus(
        detections, dims, config.min_views, config.cluster_iou, config.factors
    )
    stage2 = assign_box_refs(stage2_dedupe(stage1, config.stage2_iou, config.stage2_mode))

    survivors = []
    ladder_dropped = 0
    for cand in stage2:
        if stage3_validate(cand, verdict_by_ref.get(cand.box_ref), config.ladder):
            survivors.append(replace(cand, stage="validated"))
        else:
            ladder_dropped += 1

    final: list[CandidateBox] = []
    warnings: list[str] = []
    cam_kept = cam_adjusted = cam_dropped = 0
    for cand in survivors:
        grid = grid_by_ref.get(cand.box_ref)
        if grid is None:
            raise InputError(
                f"missing activation grid for candidate {cand.box_ref} of image {image_id}",
                image_id=image_id,
                box_ref=cand.box_ref,
            )
        outcome = stage4_cam_refine(cand, grid, config.cam, dims)
        if outcome.warning:
            warnings.append(outcome.warning)
        if outcome.kind == "kept":
            cam_kept += 1
            final.append(replace(cand, stage="cam_kept"))
        elif outcome.kind == "adjusted":
            cam_adjusted += 1
            final.append(replace(cand, box=outcome.box, stage="cam_adjusted"))
        else:
            cam_dropped += 1

    counts = ImageCounts(
        image_id=image_id,
        stage1_produced=len(stage1),
        stage2_kept=len(stage2),
        stage2_merged_away=len(stage1) - len(stage2),
        ladder_dropped=ladder_dropped,
        cam_kept=cam_kept,
        cam_adjusted=cam_adjusted,
        cam_dropped=cam_dropped,
    )
    return final, counts, warnings


def run_pipeline(
    document: CocoDocument,
    flagged_ids: set[Identifier],
    detections: Sequence[Detection],
    verdicts: Sequence[ClassifierVerdict],
    grids: Sequence[ActivationGrid],
    config: PseudoConfig = PseudoConfig(),
    jobs: int = 1,
) -> tuple[CocoDocument, PipelineReport]:
    """Refine every flagged image; unflagged images pass through verbatim."""
    image_by_id = {im.id: im for im in document.images}
    unknown = sorted((i for i in flagged_ids if i not in image_by_id), key=id_sort_key)
    if unknown:
        raise InputError(
            f"flagged image ids missing from the annotation document: {unknown[:10]}",
            image_ids=[str(i) for i in unknown[:10]],
        )

    dets_by_image: dict[Identifier, list[Detection]] = {}
    for d in detections:
        if d.image_id in flagged_ids:
            dets_by_image.setdefault(d.image_id, []).append(d)

    verdict_by_ref: dict[str, ClassifierVerdict] = {}
    for v in verdicts:
        if v.box_ref in verdict_by_ref:
            raise ValidationError(f"duplicate verdict for box_ref {v.box_ref!r}")
        verdict_by_ref[v.box_ref] = v
    grid_by_ref: dict[str, ActivationGrid] = {}
    for g in grids:
        if g.box_ref in grid_by_ref:
            raise ValidationError(f"duplicate activation grid for box_ref {g.box_ref!r}")
        grid_by_ref[g.box_ref] = g

    flagged_sorted = sorted(flagged_ids, key=id_sort_key)

    def work(image_id: Identifier):
        return _process_image(
            image_id,
            image_by_id[image_id].dims,
            dets_by_image.get(image_id, []),
            verdict_by_ref,
            grid_by_ref,
            config,
        )

    if jobs > 1 and len(flagged_sorted) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, flagged_sorted))
    else:
        results = [work(i) for i in flagged_sorted]

    kept_annotations = [a for a in document.annotations if a.image_id not in flagged_ids]

    int_ids = [a.id for a in document.annotations if isinstance(a.id, int)]
    all_int = len(int_ids) == len(document.annotations)
    next_id = (max(int_ids) + 1) if int_ids else 1

    new_annotations: list[AnnotationRecord] = []
    per_image: list[ImageCounts] = []
    zero_box: list[Identifier] = []
    warnings: list[str] = []
    for image_id, (final, counts, image_warnings) in zip(flagged_sorted, results):
        per_image.append(counts)
        warnings.extend(image_warnings)
        if not final:
            zero_box.append(image_id)
        for cand in final:
            if all_int:
                ann_id: Identifier = next_id
                next_id += 1
            else:
                ann_id = f"refined:{cand.box_ref}"
            new_annotations.append(
                AnnotationRecord(
                    id=ann_id,
                    image_id=image_id,
                    category_id=cand.category_id,
                    box=cand.box,
                    area=cand.box.area,
                    is_crowd=False,
                    provenance=cand.stage,
                )
            )

    refined = CocoDocument(
        images=document.images,
        annotations=tuple(kept_annotations + new_annotations),
        categories=document.categories,
    )
    report = PipelineReport(
        per_image=tuple(per_image),
        zero_box_images=tuple(zero_box),
        warnings=tuple(warnings),
    )
    return refined, report


# ---------------------------------------------------------------------------
# interchange: candidates.ndjson and pipeline_report.json


def _read_candidate(f: _Fields) -> CandidateBox:
    raw_views = f._get("views")
    if not isinstance(raw_views, list) or not raw_views:
        f._fail("views", f"must be a non-empty array of view tags, got {raw_views!r}")
    views = set()
    for v in raw_views:
        try:
            views.add(TransformKind(v))
        except ValueError:
            f._fail("views", f"unknown view tag {v!r}")
    stage = f.string("stage")
    if stage not in STAGE_TAGS:
        f._fail("stage", f"must be one of {list(STAGE_TAGS)}, got {stage!r}")
    return CandidateBox(
        image_id=f.ident("image_id"),
        box=f.box("box"),
        category_id=f.ident("category_id"),
        score=f.number("score", minimum=0.0, maximum=1.0),
        supporting_views=frozenset(views),
        stage=stage,
        box_ref=f.string("box_ref", required=False),
    )


def scan_candidates(data: bytes | str):
    return _scan_ndjson(data, _read_candidate)


def parse_candidates(data: bytes | str) -> list[CandidateBox]:
    records, errors = scan_candidates(data)
    _raise_if_errors(errors, "candidate")
    return records


def write_candidates(candidates: Sequence[CandidateBox]) -> bytes:
    def obj(c: CandidateBox) -> dict:
        view_order = {v: i for i, v in enumerate(ALL_VIEWS)}
        out = {
            "image_id": c.image_id,
            "box": list(c.box.as_tuple()),
            "category_id": c.category_id,
            "score": c.score,
            "views": [v.value for v in sorted(c.supporting_views, key=view_order.get)],
            "stage": c.stage,
        }
        if c.box_ref is not None:
            out["box_ref"] = c.box_ref
        return out

    return dumps_lines(obj(c) for c in candidates)


def write_pipeline_report(report: PipelineReport) -> bytes:
    return dumps_document(
        {
            "totals": report.totals(),
            "per_image": {
                str(c.image_id): c.as_obj() for c in report.per_image
            },
            "zero_box_images": [i for i in report.zero_box_images],
            "warnings": list(report.warnings),
        }
    )
