"""Annotation error detection and pseudo-label refinement for COCO-style datasets."""

__version__ = "0.1.0"

from .geometry import (  # noqa: F401
    Box,
    ImageDims,
    ScaleFactors,
    TransformKind,
    average_boxes,
    from_view,
    iou,
    merge_extents,
    to_view,
)
from .interchange import (  # noqa: F401
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
    write_annotation_document,
    write_annotations,
)
from .trace_metrics import (  # noqa: F401
    FeatureVector,
    NormalizationStats,
    WeightConfig,
    adjust_zero_loss,
    assemble_features,
    build_features,
    fit_normalization,
    normalize_regression_loss,
)
from .anomaly import (  # noqa: F401
    AnomalyScore,
    ConfusionCounts,
    LinearAutoencoder,
    evaluate_curves,
    evaluate_fixed,
    flag_top_fraction,
    metrics_from_counts,
    score,
    train,
)
from .pseudolabel import (  # noqa: F401
    CamThresholds,
    CandidateBox,
    LadderConfig,
    LadderRung,
    PseudoConfig,
    run_pipeline,
    stage1_consensus,
    stage2_dedupe,
    stage3_validate,
    stage4_cam_refine,
)
from .evaluation import (  # noqa: F401
    APReport,
    CategoryDiff,
    DiffReport,
    average_precision,
    diff_report,
    render_diff_table,
)
