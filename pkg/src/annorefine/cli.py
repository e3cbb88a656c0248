"""Subcommand-driven orchestration of the full pipeline.

Every command reads its inputs and writes its outputs at the paths named in
the (optional) JSON config; re-running with identical inputs reproduces
identical output bytes. Failures print one machine-readable JSON object to
stderr and exit non-zero (2 for missing/unusable inputs).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .anomaly import (
    evaluate_curves,
    evaluate_fixed,
    flag_top_fraction,
    parse_model,
    parse_scores,
    score_features,
    train,
    write_eval_report,
    write_model,
    write_scores,
)
from .config import CONFIG_SCHEMA_VERSION, PipelineConfig, load_config
from .errors import InputError, ToolkitError, ValidationError
from .evaluation import (
    average_precision,
    diff_report,
    render_diff_table,
    write_ap_report,
    write_diff_report,
)
from .interchange import (
    parse_annotation_document,
    parse_detections,
    parse_grids,
    parse_oracle,
    parse_traces,
    parse_verdicts,
    read_path_bytes,
    scan_detections,
    scan_grids,
    scan_oracle,
    scan_traces,
    scan_verdicts,
    stable_dumps,
    write_annotation_document,
    write_path_bytes,
)
from .pseudolabel import (
    assign_box_refs,
    parse_candidates,
    run_pipeline,
    scan_candidates,
    stage1_consensus,
    stage2_dedupe,
    stage3_validate,
    stage4_cam_refine,
    write_candidates,
    write_pipeline_report,
)
from .trace_metrics import (
    build_features,
    id_sort_key,
    parse_features,
    scan_features,
    write_features,
    write_normstats,
)


def _read(path: Path, what: str) -> bytes:
    if not path.is_file():
        raise InputError(f"missing {what} file: {path}", path=str(path))
    return read_path_bytes(path)


def _write(path: Path, data: bytes, what: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    write_path_bytes(path, data)
    print(f"wrote {what}: {path}")


def _flagged_ids(config: PipelineConfig) -> set:
    scores = parse_scores(_read(config.path("scores"), "scores"))
    return {s.image_id for s in scores if s.flagged}


def cmd_traces_normalize(config: PipelineConfig, args) -> int:
    samples = parse_traces(_read(config.path("traces"), "traces"))
    if not samples:
        raise InputError(f"traces file is empty: {config.path('traces')}")
    features, stats = build_features(
        samples, config.weights, scheme=config.norm_scheme, epoch_agg=config.epoch_agg
    )
    _write(config.path("features"), write_features(features), "features")
    _write(config.path("normstats"), write_normstats(stats), "normalization stats")
    return 0


def cmd_anomaly_train(config: PipelineConfig, args) -> int:
    features = parse_features(_read(config.path("features"), "features"))
    model = train(
        features,
        k=config.autoencoder.k,
        epochs=config.autoencoder.epochs,
        step=config.autoencoder.step,
        seed=config.seed,
    )
    _write(config.path("model"), write_model(model), "autoencoder model")
    print(f"final mean reconstruction error: {model.epoch_errors[-1]:.9g}")
    return 0


def cmd_anomaly_score(config: PipelineConfig, args) -> int:
    model = parse_model(_read(config.path("model"), "model"))
    features = parse_features(_read(config.path("features"), "features"))
    scores = score_features(model, features)
    if not scores:
        raise InputError(f"features file is empty: {config.path('features')}")
    flagged = flag_top_fraction(scores, config.flag_fraction)
    flagged.sort(key=lambda s: id_sort_key(s.image_id))
    _write(config.path("scores"), write_scores(flagged), "anomaly scores")
    print(f"flagged {sum(s.flagged for s in flagged)} of {len(flagged)} images")
    return 0


def cmd_anomaly_eval(config: PipelineConfig, args) -> int:
    scores = parse_scores(_read(config.path("scores"), "scores"))
    oracle = parse_oracle(_read(config.path("oracle"), "oracle labels"))
    fixed = evaluate_fixed(scores, oracle)
    curves = evaluate_curves(scores, oracle)
    _write(config.path("eval_report"), write_eval_report(fixed, curves), "evaluation report")
    print(
        f"accuracy {fixed.accuracy:.4f} precision {fixed.precision:.4f} "
        f"recall {fixed.recall:.4f} f1 {fixed.f1:.4f} "
        f"auroc {curves.auroc:.4f} prauc {curves.prauc:.4f}"
    )
    return 0


def _load_pseudo_inputs(config: PipelineConfig):
    document = parse_annotation_document(_read(config.path("annotations"), "annotations"))
    detections = parse_detections(_read(config.path("detections"), "detections"))
    return document, detections


def cmd_pseudo_run(config: PipelineConfig, args) -> int:
    document, detections = _load_pseudo_inputs(config)
    flagged = _flagged_ids(config)
    verdicts = parse_verdicts(_read(config.path("verdicts"), "verdicts"))
    grids = parse_grids(_read(config.path("cams"), "activation grids"))
    refined, report = run_pipeline(
        document, flagged, detections, verdicts, grids, config.pseudo, jobs=config.jobs
    )
    _write(config.path("refined_annotations"), write_annotation_document(refined), "refined annotations")
    _write(config.path("pipeline_report"), write_pipeline_report(report), "pipeline report")
    totals = report.totals()
    print(
        f"refined {len(report.per_image)} flagged image(s): "
        f"{totals['cam_kept']} kept, {totals['cam_adjusted']} adjusted, "
        f"{totals['cam_dropped']} dropped, {len(report.zero_box_images)} with zero boxes"
    )
    return 0


def _group_by_image(items):
    grouped: dict = {}
    for item in items:
        grouped.setdefault(item.image_id, []).append(item)
    return grouped


def cmd_pseudo_stage1(config: PipelineConfig, args) -> int:
    document, detections = _load_pseudo_inputs(config)
    flagged = _flagged_ids(config)
    image_by_id = {im.id: im for im in document.images}
    missing = sorted((i for i in flagged if i not in image_by_id), key=id_sort_key)
    if missing:
        raise InputError(f"flagged image ids missing from annotations: {missing[:10]}")
    dets_by_image = _group_by_image(d for d in detections if d.image_id in flagged)
    out = []
    for image_id in sorted(flagged, key=id_sort_key):
        out.extend(
            stage1_consensus(
                dets_by_image.get(image_id, []),
                image_by_id[image_id].dims,
                config.pseudo.min_views,
                config.pseudo.cluster_iou,
                config.pseudo.factors,
            )
        )
    _write(config.path("candidates_stage1"), write_candidates(out), "stage-1 candidates")
    return 0


def cmd_pseudo_stage2(config: PipelineConfig, args) -> int:
    candidates = parse_candidates(_read(config.path("candidates_stage1"), "stage-1 candidates"))
    out = []
    grouped = _group_by_image(candidates)
    for image_id in sorted(grouped, key=id_sort_key):
        out.extend(
            assign_box_refs(
                stage2_dedupe(grouped[image_id], config.pseudo.stage2_iou, config.pseudo.stage2_mode)
            )
        )
    _write(config.path("candidates_stage2"), write_candidates(out), "stage-2 candidates")
    return 0


def cmd_pseudo_stage3(config: PipelineConfig, args) -> int:
    candidates = parse_candidates(_read(config.path("candidates_stage2"), "stage-2 candidates"))
    verdicts = parse_verdicts(_read(config.path("verdicts"), "verdicts"))
    verdict_by_ref = {}
    for v in verdicts:
        if v.box_ref in verdict_by_ref:
            raise ValidationError(f"duplicate verdict for box_ref {v.box_ref!r}")
        verdict_by_ref[v.box_ref] = v
    out = []
    for cand in candidates:
        if stage3_validate(cand, verdict_by_ref.get(cand.box_ref), config.pseudo.ladder):
            out.append(replace(cand, stage="validated"))
    _write(config.path("candidates_stage3"), write_candidates(out), "stage-3 candidates")
    return 0


def cmd_pseudo_stage4(config: PipelineConfig, args) -> int:
    candidates = parse_candidates(_read(config.path("candidates_stage3"), "stage-3 candidates"))
    grids = parse_grids(_read(config.path("cams"), "activation grids"))
    document = parse_annotation_document(_read(config.path("annotations"), "annotations"))
    dims_by_image = {im.id: im.dims for im in document.images}
    grid_by_ref = {}
    for g in grids:
        if g.box_ref in grid_by_ref:
            raise ValidationError(f"duplicate activation grid for box_ref {g.box_ref!r}")
        grid_by_ref[g.box_ref] = g
    out = []
    for cand in candidates:
        grid = grid_by_ref.get(cand.box_ref)
        if grid is None:
            raise InputError(
                f"missing activation grid for candidate {cand.box_ref}", box_ref=cand.box_ref
            )
        outcome = stage4_cam_refine(cand, grid, config.pseudo.cam, dims_by_image.get(cand.image_id))
        if outcome.kind == "kept":
            out.append(replace(cand, stage="cam_kept"))
        elif outcome.kind == "adjusted":
            out.append(replace(cand, box=outcome.box, stage="cam_adjusted"))
    _write(config.path("candidates_stage4"), write_candidates(out), "stage-4 candidates")
    return 0


def cmd_dataset_diff(config: PipelineConfig, args) -> int:
    before_path = Path(args.before) if args.before else config.path("annotations")
    after_path = Path(args.after) if args.after else config.path("refined_annotations")
    before = parse_annotation_document(_read(before_path, "before annotations"))
    after = parse_annotation_document(_read(after_path, "after annotations"))
    report = diff_report(before, after, grouping=args.grouping or config.evaluation.diff_grouping)
    _write(config.path("diff_report"), write_diff_report(report), "dataset diff report")
    print(render_diff_table(report))
    return 0


def cmd_dataset_ap(config: PipelineConfig, args) -> int:
    predictions = parse_detections(_read(config.path("predictions"), "predictions"))
    truth = parse_annotation_document(_read(config.path("annotations"), "annotations"))
    report = average_precision(
        predictions, truth.annotations, iou_thresholds=config.evaluation.iou_thresholds
    )
    _write(config.path("ap_report"), write_ap_report(report), "AP report")
    print(f"mean AP over {len(report.thresholds)} thresholds: {report.mean_ap:.4f}")
    return 0


def cmd_validate(config: PipelineConfig, args) -> int:
    from .anomaly import scan_scores

    path = Path(args.file)
    data = _read(path, f"{args.kind} input")
    if args.kind == "annotations":
        try:
            doc = parse_annotation_document(data)
        except ToolkitError as e:
            print(stable_dumps({"file": str(path), "kind": args.kind, "valid": False, **e.to_json_obj()}))
            return 1
        print(
            stable_dumps(
                {
                    "file": str(path),
                    "kind": args.kind,
                    "valid": True,
                    "records": len(doc.annotations),
                    "images": len(doc.images),
                    "categories": len(doc.categories),
                }
            )
        )
        return 0
    scanners = {
        "traces": scan_traces,
        "detections": scan_detections,
        "verdicts": scan_verdicts,
        "cams": scan_grids,
        "oracle": scan_oracle,
        "features": scan_features,
        "scores": scan_scores,
        "candidates": scan_candidates,
    }
    records, errors = scanners[args.kind](data)
    obj = {
        "file": str(path),
        "kind": args.kind,
        "valid": not errors,
        "records": len(records),
        "errors": [str(e) for e in errors],
    }
    print(stable_dumps(obj))
    return 0 if not errors else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="annorefine",
        description="Annotation error detection and pseudo-label refinement toolkit",
    )
    parser.add_argument(
        "--version",
        action="version",
        version=f"annorefine {__version__} (config-schema {CONFIG_SCHEMA_VERSION})",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, func, help_text: str):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="path to the JSON config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--jobs", type=int, help="parallelism degree for per-image work")
        p.set_defaults(func=func)
        return p

    add("traces-normalize", cmd_traces_normalize, "traces.ndjson -> features.ndjson + normstats.json")
    add("anomaly-train", cmd_anomaly_train, "features.ndjson -> model.json")
    add("anomaly-score", cmd_anomaly_score, "model + features -> scores.ndjson with top-fraction flags")
    add("anomaly-eval", cmd_anomaly_eval, "scores + oracle -> eval_report.json")
    add("pseudo-run", cmd_pseudo_run, "full four-stage refinement -> refined annotations + report")
    add("pseudo-stage1", cmd_pseudo_stage1, "cross-view consensus candidates")
    add("pseudo-stage2", cmd_pseudo_stage2, "IoU dedup/merge, assigns box_refs")
    add("pseudo-stage3", cmd_pseudo_stage3, "classifier-ladder validation")
    add("pseudo-stage4", cmd_pseudo_stage4, "activation-grid refinement")
    p_diff = add("dataset-diff", cmd_dataset_diff, "per-category count/area diff of two datasets")
    p_diff.add_argument("--before", help="before-annotations path (default: annotations path)")
    p_diff.add_argument("--after", help="after-annotations path (default: refined annotations path)")
    p_diff.add_argument(
        "--grouping", choices=("per_category_mean_area", "per_annotation_bucket")
    )
    p_ap = add("dataset-ap", cmd_dataset_ap, "average precision of predictions against annotations")
    p_val = add("validate", cmd_validate, "strict-validate one interchange file")
    p_val.add_argument(
        "kind",
        choices=(
            "annotations",
            "traces",
            "detections",
            "verdicts",
            "cams",
            "oracle",
            "features",
            "scores",
            "candidates",
        ),
    )
    p_val.add_argument("file", help="path of the file to validate")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config, seed=args.seed, jobs=args.jobs)
        return args.func(config, args)
    except ToolkitError as e:
        sys.stderr.write(stable_dumps(e.to_json_obj()) + "\n")
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
