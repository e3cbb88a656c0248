"""Single-document pipeline configuration with CLI-flag overrides.

The config is one JSON object; every field has a documented default, so an
empty document is valid. Relative paths resolve against the config file's
directory (or the working directory when no file is given). All randomness
flows from the single top-level ``seed``.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import InputError, ValidationError
from .geometry import ScaleFactors
from .pseudolabel import LADDERS, CamThresholds, LadderConfig, LadderRung, PseudoConfig
from .trace_metrics import WeightConfig

CONFIG_SCHEMA_VERSION = 1

PATH_KEYS = (
    "annotations",
    "traces",
    "detections",
    "verdicts",
    "cams",
    "oracle",
    "predictions",
    "features",
    "normstats",
    "model",
    "scores",
    "eval_report",
    "refined_annotations",
    "pipeline_report",
    "diff_report",
    "ap_report",
    "candidates_stage1",
    "candidates_stage2",
    "candidates_stage3",
    "candidates_stage4",
)

_DEFAULT_FILENAMES = {
    "annotations": "annotations.json",
    "traces": "traces.ndjson",
    "detections": "detections.ndjson",
    "verdicts": "verdicts.ndjson",
    "cams": "cams.ndjson",
    "oracle": "oracle.ndjson",
    "predictions": "predictions.ndjson",
    "features": "features.ndjson",
    "normstats": "normstats.json",
    "model": "model.json",
    "scores": "scores.ndjson",
    "eval_report": "eval_report.json",
    "refined_annotations": "refined_annotations.json",
    "pipeline_report": "pipeline_report.json",
    "diff_report": "diff_report.json",
    "ap_report": "ap_report.json",
    "candidates_stage1": "candidates_stage1.ndjson",
    "candidates_stage2": "candidates_stage2.ndjson",
    "candidates_stage3": "candidates_stage3.ndjson",
    "candidates_stage4": "candidates_stage4.ndjson",
}


@dataclass(frozen=True)
class AutoencoderSettings:
    k: int = 4
    epochs: int = 1500
    step: float = 0.05


@dataclass(frozen=True)
class EvaluationSettings:
    iou_thresholds: tuple[float, ...] = tuple(i / 100 for i in range(50, 100, 5))
    diff_grouping: str = "per_category_mean_area"


def default_jobs() -> int:
    return os.cpu_count() or 1


@dataclass(frozen=True)
class PipelineConfig:
    paths: dict[str, Path] = field(default_factory=dict)
    weights: WeightConfig = WeightConfig()
    norm_scheme: str = "zscore"
    epoch_agg: str = "mean"
    autoencoder: AutoencoderSettings = AutoencoderSettings()
    flag_fraction: float = 0.35
    pseudo: PseudoConfig = PseudoConfig()
    evaluation: EvaluationSettings = EvaluationSettings()
    seed: int = 0
    jobs: int = 1

    def path(self, key: str) -> Path:
        return self.paths[key]


def _require(cond: bool, message: str):
    if not cond:
        raise ValidationError(message)


def _num(obj: dict, key: str, default, lo=None, hi=None, exclusive=False):
    v = obj.get(key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ValidationError(f"config field '{key}' must be a finite number, got {v!r}")
    if lo is not None:
        _require(v > lo if exclusive else v >= lo, f"config field '{key}' out of range: {v!r}")
    if hi is not None:
        _require(v < hi if exclusive else v <= hi, f"config field '{key}' out of range: {v!r}")
    return v


def _int(obj: dict, key: str, default, lo=None):
    v = obj.get(key, default)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ValidationError(f"config field '{key}' must be an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ValidationError(f"config field '{key}' must be >= {lo}, got {v!r}")
    return v


def _parse_ladder(raw) -> LadderConfig:
    if isinstance(raw, str):
        if raw not in LADDERS:
            raise ValidationError(f"unknown ladder name {raw!r}; known: {sorted(LADDERS)}")
        return LADDERS[raw]
    if isinstance(raw, list):
        rungs = []
        for i, r in enumerate(raw):
            if not isinstance(r, dict):
                raise ValidationError(f"ladder rung {i} must be an object")
            try:
                rungs.append(
                    LadderRung(
                        lo=r.get("lo"), hi=r.get("hi"), rule=r.get("rule"),
                        theta=r.get("theta"),
                    )
                )
            except (ValueError, TypeError) as e:
                raise ValidationError(f"ladder rung {i} invalid: {e}")
        try:
            return LadderConfig(tuple(rungs))
        except ValueError as e:
            raise ValidationError(f"ladder invalid: {e}")
    raise ValidationError(f"'ladder' must be a name or an array of rungs, got {raw!r}")


def load_config(
    config_path: str | os.PathLike | None = None,
    seed: int | None = None,
    jobs: int | None = None,
) -> PipelineConfig:
    """Build the effective config from an optional file plus flag overrides."""
    base_dir = Path.cwd()
    doc: dict = {}
    if config_path is not None:
        p = Path(config_path)
        if not p.is_file():
            raise InputError(f"config file not found: {p}", path=str(p))
        try:
            doc = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ValidationError(f"config file {p} is not valid JSON: {e}")
        if not isinstance(doc, dict):
            raise ValidationError("config document must be a JSON object")
        base_dir = p.parent
    version = doc.get("schema_version", CONFIG_SCHEMA_VERSION)
    if version != CONFIG_SCHEMA_VERSION:
        raise ValidationError(
            f"unsupported config schema_version {version!r}; this build speaks {CONFIG_SCHEMA_VERSION}"
        )

    raw_paths = doc.get("paths", {})
    if not isinstance(raw_paths, dict):
        raise ValidationError("config field 'paths' must be an object")
    unknown = sorted(set(raw_paths) - set(PATH_KEYS))
    if unknown:
        raise ValidationError(f"unknown path keys in config: {unknown}")
    paths: dict[str, Path] = {}
    for key in PATH_KEYS:
        raw = raw_paths.get(key, _DEFAULT_FILENAMES[key])
        if not isinstance(raw, str) or not raw:
            raise ValidationError(f"path '{key}' must be a non-empty string")
        paths[key] = (base_dir / raw).resolve() if not Path(raw).is_absolute() else Path(raw)
    resolved = list(paths.values())
    _require(len(set(resolved)) == len(resolved), "configured paths must be pairwise distinct")

    w = doc.get("weights", {})
    if not isinstance(w, dict):
        raise ValidationError("config field 'weights' must be an object")
    raw_cw = w.get("component_weights", [0.3, 0.1, 0.3, 0.3])
    if not isinstance(raw_cw, list) or len(raw_cw) != 4:
        raise ValidationError("weights.component_weights must be an array of 4 numbers")
    try:
        weights = WeightConfig(
            lambda_loss=_num(w, "lambda_loss", 0.7, lo=0.0, hi=1.0),
            component_weights=tuple(float(x) for x in raw_cw),
            weight_gradients=bool(w.get("weight_gradients", True)),
        )
    except ValueError as e:
        raise ValidationError(str(e))

    norm = doc.get("normalization", {})
    scheme = norm.get("scheme", "zscore")
    epoch_agg = norm.get("epoch_agg", "mean")
    _require(scheme in ("zscore", "minmax"), f"normalization.scheme invalid: {scheme!r}")
    _require(epoch_agg in ("mean", "last"), f"normalization.epoch_agg invalid: {epoch_agg!r}")

    ae = doc.get("autoencoder", {})
    autoencoder = AutoencoderSettings(
        k=_int(ae, "k", 4, lo=1),
        epochs=_int(ae, "epochs", 1500, lo=1),
        step=_num(ae, "step", 0.05, lo=0.0, exclusive=True),
    )
    _require(autoencoder.k < 8, f"autoencoder.k must be < 8, got {autoencoder.k}")

    flag_fraction = _num(doc, "flag_fraction", 0.35, lo=0.0, hi=1.0, exclusive=True)

    tr = doc.get("transforms", {})
    try:
        factors = ScaleFactors(
            up=_num(tr, "up_factor", 1.5),
            down=_num(tr, "down_factor", 0.75),
        )
    except ValueError as e:
        raise ValidationError(str(e))

    ps = doc.get("pseudo", {})
    cam_raw = ps.get("cam", {})
    try:
        pseudo = PseudoConfig(
            min_views=_int(ps, "min_views", 4, lo=1),
            cluster_iou=_num(ps, "cluster_iou", 0.5, lo=0.0, hi=1.0, exclusive=False),
            stage2_iou=_num(ps, "stage2_iou", 0.8, lo=0.0, hi=1.0, exclusive=False),
            stage2_mode=ps.get("stage2_mode", "merge_extent"),
            ladder=_parse_ladder(ps.get("ladder", "default")),
            cam=CamThresholds(
                var_alpha=_num(cam_raw, "var_alpha", 0.08, lo=0.0),
                conc_beta=_num(cam_raw, "conc_beta", 0.5, lo=0.0, hi=1.0),
                mass_tau=_num(cam_raw, "mass_tau", 0.15, lo=0.0, hi=1.0, exclusive=True),
            ),
            factors=factors,
        )
    except ValueError as e:
        raise ValidationError(str(e))

    ev = doc.get("evaluation", {})
    raw_th = ev.get("iou_thresholds", list(EvaluationSettings().iou_thresholds))
    if not isinstance(raw_th, list) or not raw_th:
        raise ValidationError("evaluation.iou_thresholds must be a non-empty array")
    for t in raw_th:
        if isinstance(t, bool) or not isinstance(t, (int, float)) or not 0 < t <= 1:
            raise ValidationError(f"evaluation.iou_thresholds entries must lie in (0, 1], got {t!r}")
    grouping = ev.get("diff_grouping", "per_category_mean_area")
    _require(
        grouping in ("per_category_mean_area", "per_annotation_bucket"),
        f"evaluation.diff_grouping invalid: {grouping!r}",
    )
    evaluation = EvaluationSettings(
        iou_thresholds=tuple(float(t) for t in raw_th), diff_grouping=grouping
    )

    config = PipelineConfig(
        paths=paths,
        weights=weights,
        norm_scheme=scheme,
        epoch_agg=epoch_agg,
        autoencoder=autoencoder,
        flag_fraction=flag_fraction,
        pseudo=pseudo,
        evaluation=evaluation,
        seed=_int(doc, "seed", 0),
        jobs=_int(doc, "jobs", default_jobs(), lo=1),
    )
    if seed is not None:
        config = replace(config, seed=seed)
    if jobs is not None:
        if jobs < 1:
            raise ValidationError(f"--jobs must be >= 1, got {jobs}")
        config = replace(config, jobs=jobs)
    return config
