"""Linear autoencoder over feature vectors and anomaly-score evaluation.

Training is full-batch gradient descent on mean squared reconstruction error
with a fixed step and seeded uniform(-0.1, 0.1) weight init: deterministic,
framework-free, and monotone-friendly on the corpus sizes this toolkit
targets. The anomaly score of a vector is its squared reconstruction error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import TrainingDivergedError, ValidationError
from .interchange import (
    Identifier,
    OracleLabel,
    _Fields,
    _loads,
    _raise_if_errors,
    _scan_ndjson,
    dumps_document,
    dumps_lines,
)
from .trace_metrics import FeatureVector, id_sort_key


@dataclass(frozen=True)
class TrainConfig:
    k: int = 4
    epochs: int = 1500
    step: float = 0.05
    seed: int = 0


@dataclass(frozen=True)
class LinearAutoencoder:
    """Single linear encoder/decoder pair with bias terms.

    ``epoch_errors`` holds the mean reconstruction error at every epoch
    boundary (epochs + 1 entries including init and final); it is a training
    diagnostic and is not serialized.
    """

    enc_w: np.ndarray  # (8, k)
    enc_b: np.ndarray  # (k,)
    dec_w: np.ndarray  # (k, 8)
    dec_b: np.ndarray  # (8,)
    k: int
    config: TrainConfig | None = None
    epoch_errors: tuple[float, ...] = ()

    def reconstruct(self, z: np.ndarray) -> np.ndarray:
        return (z @ self.enc_w + self.enc_b) @ self.dec_w + self.dec_b


@dataclass(frozen=True)
class AnomalyScore:
    image_id: Identifier
    error: float
    flagged: bool = False

    def __post_init__(self):
        if not math.isfinite(self.error) or self.error < 0:
            raise ValueError(f"anomaly score must be finite and >= 0, got {self.error!r}")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class FixedEvalResult:
    counts: ConfusionCounts
    accuracy: float
    precision: float
    recall: float
    f1: float
    warnings: tuple[str, ...] = ()


@dataclass(frozen=True)
class CurveEvalResult:
    auroc: float
    prauc: float
    roc_points: tuple[tuple[float, float], ...]  # (fpr, tpr)
    pr_points: tuple[tuple[float, float], ...]  # (recall, precision)


def _as_matrix(features: Sequence[FeatureVector]) -> np.ndarray:
    return np.asarray([f.z for f in features], dtype=np.float64)


def train(
    features: Sequence[FeatureVector],
    k: int = 4,
    epochs: int = 1500,
    step: float = 0.05,
    seed: int = 0,
) -> LinearAutoencoder:
    """Fit the autoencoder; deterministic for a fixed seed."""
    if not features:
        raise ValidationError("cannot train on an empty feature list")
    if not 1 <= k < 8:
        raise ValidationError(f"bottleneck k must satisfy 1 <= k < 8, got {k}")
    if epochs < 1:
        raise ValidationError(f"epochs must be >= 1, got {epochs}")
    n = len(features)
    if n < 2 * k:
        raise ValidationError(f"need at least 2k = {2 * k} feature vectors, got {n}")

    x = _as_matrix(features)
    rng = np.random.default_rng(seed)
    enc_w = rng.uniform(-0.1, 0.1, size=(8, k))
    dec_w = rng.uniform(-0.1, 0.1, size=(k, 8))
    enc_b = np.zeros(k)
    dec_b = np.zeros(8)

    def mean_error() -> float:
        diff = (x @ enc_w + enc_b) @ dec_w + dec_b - x
        return float(np.mean(np.sum(diff * diff, axis=1)))

    errors = [mean_error()]
    with np.errstate(all="ignore"):  # divergence is detected via the finite check
        for _ in range(epochs):
            hidden = x @ enc_w + enc_b
            resid = hidden @ dec_w + dec_b - x
            g_out = (2.0 / n) * resid
            d_dec_w = hidden.T @ g_out
            d_dec_b = g_out.sum(axis=0)
            g_hidden = g_out @ dec_w.T
            d_enc_w = x.T @ g_hidden
            d_enc_b = g_hidden.sum(axis=0)
            enc_w -= step * d_enc_w
            enc_b -= step * d_enc_b
            dec_w -= step * d_dec_w
            dec_b -= step * d_dec_b
            err = mean_error()
            if not math.isfinite(err):
                raise TrainingDivergedError(
                    f"training diverged (non-finite reconstruction error); try a smaller step than {step}"
                )
            errors.append(err)

    config = TrainConfig(k=k, epochs=epochs, step=step, seed=seed)
    return LinearAutoencoder(
        enc_w=enc_w, enc_b=enc_b, dec_w=dec_w, dec_b=dec_b, k=k,
        config=config, epoch_errors=tuple(errors),
    )


def score(model: LinearAutoencoder, feature: FeatureVector | Sequence[float]) -> float:
    """Squared Euclidean reconstruction error of one vector."""
    z = np.asarray(feature.z if isinstance(feature, FeatureVector) else feature, dtype=np.float64)
    diff = z - model.reconstruct(z)
    return float(diff @ diff)


def score_features(
    model: LinearAutoencoder, features: Sequence[FeatureVector]
) -> list[AnomalyScore]:
    if not features:
        return []
    x = _as_matrix(features)
    diff = x - model.reconstruct(x)
    errors = np.sum(diff * diff, axis=1)
    return [
        AnomalyScore(image_id=f.image_id, error=float(e)) for f, e in zip(features, errors)
    ]


def flag_count(n: int, fraction: float) -> int:
    # epsilon guard keeps ceil(0.1 * 2000) = 200 despite float rounding
    return math.ceil(fraction * n - 1e-9)


def flag_top_fraction(scores: Sequence[AnomalyScore], fraction: float) -> list[AnomalyScore]:
    """Flag the ceil(fraction*n) highest-error scores, ties by ascending id.

    Returns new score objects in the input order.
    """
    if not scores:
        raise ValidationError("cannot flag an empty score list")
    if not 0.0 < fraction < 1.0:
        raise ValidationError(f"flag fraction must lie strictly inside (0, 1), got {fraction!r}")
    m = flag_count(len(scores), fraction)
    ranked = sorted(scores, key=lambda s: (-s.error, id_sort_key(s.image_id)))
    flagged_ids = {s.image_id for s in ranked[:m]}
    return [replace(s, flagged=s.image_id in flagged_ids) for s in scores]


def _check_ids_match(left_ids, right_ids, left_name: str, right_name: str):
    left, right = set(left_ids), set(right_ids)
    if left != right:
        missing_right = sorted(left - right, key=id_sort_key)
        missing_left = sorted(right - left, key=id_sort_key)
        parts = []
        if missing_right:
            parts.append(f"missing from {right_name}: {missing_right[:10]}")
        if missing_left:
            parts.append(f"missing from {left_name}: {missing_left[:10]}")
        raise ValidationError(f"{left_name} and {right_name} image ids differ; " + "; ".join(parts))


def metrics_from_counts(counts: ConfusionCounts) -> FixedEvalResult:
    """Accuracy, precision, recall and F1; zero denominators yield 0 + warning."""
    warnings = []

    def ratio(num: int, den: int, name: str) -> float:
        if den == 0:
            warnings.append(f"{name} undefined (zero denominator); reported as 0")
            return 0.0
        return num / den

    accuracy = ratio(counts.tp + counts.tn, counts.total, "accuracy")
    precision = ratio(counts.tp, counts.tp + counts.fp, "precision")
    recall = ratio(counts.tp, counts.tp + counts.fn, "recall")
    if precision + recall == 0:
        warnings.append("f1 undefined (zero denominator); reported as 0")
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return FixedEvalResult(
        counts=counts, accuracy=accuracy, precision=precision, recall=recall, f1=f1,
        warnings=tuple(warnings),
    )


def confusion_counts(
    flags: Sequence[AnomalyScore], oracle: Sequence[OracleLabel]
) -> ConfusionCounts:
    _check_ids_match((s.image_id for s in flags), (o.image_id for o in oracle), "flags", "oracle")
    truth = {o.image_id: o.erroneous for o in oracle}
    tp = fp = fn = tn = 0
    for s in flags:
        if s.flagged and truth[s.image_id]:
            tp += 1
        elif s.flagged:
            fp += 1
        elif truth[s.image_id]:
            fn += 1
        else:
            tn += 1
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


def evaluate_fixed(
    flags: Sequence[AnomalyScore], oracle: Sequence[OracleLabel]
) -> FixedEvalResult:
    """Threshold-fixed metrics of the flag set against the oracle labels."""
    return metrics_from_counts(confusion_counts(flags, oracle))


def evaluate_curves(
    scores: Sequence[AnomalyScore], oracle: Sequence[OracleLabel]
) -> CurveEvalResult:
    """ROC and PR curves via a sweep over distinct scores, trapezoidal areas."""
    _check_ids_match((s.image_id for s in scores), (o.image_id for o in oracle), "scores", "oracle")
    truth = {o.image_id: o.erroneous for o in oracle}
    n_pos = sum(1 for v in truth.values() if v)
    n_neg = len(truth) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("curve evaluation needs both classes present in the oracle")

    ranked = sorted(scores, key=lambda s: (-s.error, id_sort_key(s.image_id)))
    roc_points: list[tuple[float, float]] = [(0.0, 0.0)]
    pr_points: list[tuple[float, float]] = []
    tp = fp = 0
    i = 0
    while i < len(ranked):
        j = i
        while j < len(ranked) and ranked[j].error == ranked[i].error:
            if truth[ranked[j].image_id]:
                tp += 1
            else:
                fp += 1
            j += 1
        roc_points.append((fp / n_neg, tp / n_pos))
        pr_points.append((tp / n_pos, tp / (tp + fp)))
        i = j
    # anchor the PR curve at recall 0 with the strictest threshold's precision
    pr_points.insert(0, (0.0, pr_points[0][1]))

    def trapezoid(points: list[tuple[float, float]]) -> float:
        area = 0.0
        for (x0, y0), (x1, y1) in zip(points, points[1:]):
            area += (x1 - x0) * (y0 + y1) / 2.0
        return area

    return CurveEvalResult(
        auroc=trapezoid(roc_points),
        prauc=trapezoid(pr_points),
        roc_points=tuple(roc_points),
        pr_points=tuple(pr_points),
    )


# ---------------------------------------------------------------------------
# interchange: model.json, scores.ndjson, eval_report.json


def write_model(model: LinearAutoencoder) -> bytes:
    obj = {
        "k": model.k,
        "enc_w": model.enc_w.tolist(),
        "enc_b": model.enc_b.tolist(),
        "dec_w": model.dec_w.tolist(),
        "dec_b": model.dec_b.tolist(),
    }
    if model.config is not None:
        obj["training"] = {
            "epochs": model.config.epochs,
            "step": model.config.step,
            "seed": model.config.seed,
            "final_error": model.epoch_errors[-1] if model.epoch_errors else None,
        }
    return dumps_document(obj)


def parse_model(data: bytes | str) -> LinearAutoencoder:
    obj = _loads(data.decode("utf-8") if isinstance(data, bytes) else data)
    f = _Fields(obj, "model")
    k = f.integer("k", minimum=1)
    if k >= 8:
        f._fail("k", f"must be < 8, got {k}")

    def matrix(key: str, rows: int, cols: int) -> np.ndarray:
        raw = f._get(key)
        if not isinstance(raw, list) or len(raw) != rows:
            f._fail(key, f"must be a {rows}x{cols} nested array")
        out = np.zeros((rows, cols))
        for r, row in enumerate(raw):
            if not isinstance(row, list) or len(row) != cols:
                f._fail(key, f"row {r} must have {cols} entries")
            for c, v in enumerate(row):
                if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                    f._fail(key, f"entry [{r}][{c}] must be a finite number")
                out[r, c] = float(v)
        return out

    config = None
    if isinstance(obj.get("training"), dict):
        tf = _Fields(obj["training"], "model.training")
        config = TrainConfig(
            k=k,
            epochs=tf.integer("epochs", minimum=1),
            step=tf.positive_number("step"),
            seed=tf.integer("seed"),
        )
    return LinearAutoencoder(
        enc_w=matrix("enc_w", 8, k),
        enc_b=np.asarray(f.numbers("enc_b", length=k)),
        dec_w=matrix("dec_w", k, 8),
        dec_b=np.asarray(f.numbers("dec_b", length=8)),
        k=k,
        config=config,
    )


def _read_score(f: _Fields) -> AnomalyScore:
    return AnomalyScore(
        image_id=f.ident("image_id"),
        error=f.number("error", minimum=0),
        flagged=f.boolean("flagged"),
    )


def scan_scores(data: bytes | str):
    return _scan_ndjson(data, _read_score)


def parse_scores(data: bytes | str) -> list[AnomalyScore]:
    records, errors = scan_scores(data)
    _raise_if_errors(errors, "anomaly score")
    return records


def write_scores(scores: Sequence[AnomalyScore]) -> bytes:
    return dumps_lines(
        {"image_id": s.image_id, "error": s.error, "flagged": s.flagged} for s in scores
    )


def write_eval_report(fixed: FixedEvalResult, curves: CurveEvalResult | None) -> bytes:
    obj = {
        "counts": {
            "tp": fixed.counts.tp,
            "fp": fixed.counts.fp,
            "fn": fixed.counts.fn,
            "tn": fixed.counts.tn,
        },
        "accuracy": fixed.accuracy,
        "precision": fixed.precision,
        "recall": fixed.recall,
        "f1": fixed.f1,
        "warnings": list(fixed.warnings),
    }
    if curves is not None:
        obj["auroc"] = curves.auroc
        obj["prauc"] = curves.prauc
        obj["roc_points"] = [list(p) for p in curves.roc_points]
        obj["pr_points"] = [list(p) for p in curves.pr_points]
    return dumps_document(obj)
