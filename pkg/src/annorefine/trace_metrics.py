"""Turn raw training traces into the normalized, weighted 8-dim feature vectors.

The preparation pipeline, applied in file order:

1. the two box-regression losses are renormalized by match count and inflated
   by the false-positive count, then zero values with ground truth present are
   replaced by the running maximum of that component within the epoch stream;
2. the four gradient magnitudes are divided by the recorded learning rate;
3. per-image aggregation over epochs (mean by default, or last epoch);
4. per-feature standardization over the corpus (z-score by default, min-max
   as an ablation switch);
5. loss features are weighted by ``lambda_loss`` times their component
   weight, gradient features by ``1 - lambda_loss`` times theirs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .errors import ValidationError
from .interchange import (
    Identifier,
    TraceSample,
    _Fields,
    _loads,
    _raise_if_errors,
    _scan_ndjson,
    dumps_document,
    dumps_lines,
)

FEATURE_NAMES: tuple[str, ...] = (
    "loss_rpn_cls",
    "loss_rpn_bbox",
    "loss_cls",
    "loss_bbox",
    "grad_rpn_cls",
    "grad_rpn_bbox",
    "grad_cls",
    "grad_bbox",
)

# indices of the box-regression losses inside FEATURE_NAMES
_REGRESSION_LOSS_IDX = (1, 3)
# component order shared by both halves: rpn_cls, rpn_bbox, roi_cls, roi_bbox
COMPONENT_NAMES = ("rpn_cls", "rpn_bbox", "cls", "bbox")


@dataclass(frozen=True)
class FeatureVector:
    """The 8-dim weighted input consumed by the anomaly detector."""

    image_id: Identifier
    z: tuple[float, ...]

    def __post_init__(self):
        if len(self.z) != 8 or not all(math.isfinite(v) for v in self.z):
            raise ValueError(f"feature vector must hold 8 finite values, got {self.z!r}")


@dataclass(frozen=True)
class AdjustedTrace:
    """Per-sample metric vector after loss/gradient adjustments."""

    image_id: Identifier
    epoch: int | None
    values: tuple[float, ...]


@dataclass(frozen=True)
class WeightConfig:
    """Loss-vs-gradient split and per-component emphasis.

    ``lambda_loss`` scales the four loss features, ``1 - lambda_loss`` the
    four gradient features. ``component_weights`` are (rpn_cls, rpn_bbox,
    roi_cls, roi_bbox) and must sum to 1; they apply to the gradient half as
    well unless ``weight_gradients`` is off.
    """

    lambda_loss: float = 0.7
    component_weights: tuple[float, float, float, float] = (0.3, 0.1, 0.3, 0.3)
    weight_gradients: bool = True

    def __post_init__(self):
        if not (0.0 <= self.lambda_loss <= 1.0):
            raise ValueError(f"lambda_loss must lie in [0, 1], got {self.lambda_loss!r}")
        if len(self.component_weights) != 4 or any(
            not math.isfinite(w) or w < 0 for w in self.component_weights
        ):
            raise ValueError(f"component_weights must be 4 nonnegative reals, got {self.component_weights!r}")
        if abs(sum(self.component_weights) - 1.0) > 1e-9:
            raise ValueError(
                f"component_weights must sum to 1 within 1e-9, got sum {sum(self.component_weights)!r}"
            )


@dataclass(frozen=True)
class NormalizationStats:
    """Per-feature centering/spread fitted over a trace corpus.

    For the default z-score scheme ``mean``/``std`` are the population mean
    and standard deviation; for the min-max scheme ``mean`` holds the minimum
    and ``std`` the range. Features with zero spread are marked constant and
    standardize to 0.
    """

    mean: tuple[float, ...]
    std: tuple[float, ...]
    constant: tuple[bool, ...]
    scheme: str = "zscore"

    def standardize(self, values: Sequence[float]) -> tuple[float, ...]:
        out = []
        for v, m, s, const in zip(values, self.mean, self.std, self.constant):
            out.append(0.0 if const else (v - m) / s)
        return tuple(out)


def normalize_regression_loss(loss: float, n_matched: int, n_fp: int) -> float:
    """Match-count normalization with false-positive inflation.

    The divisor is clamped to 1 when nothing matched so that the
    ``1 + n_fp`` inflation survives instead of dividing by zero.
    """
    if not math.isfinite(loss) or loss < 0:
        raise ValidationError(f"regression loss must be finite and >= 0, got {loss!r}")
    if n_matched < 0 or n_fp < 0:
        raise ValidationError("match and false-positive counts must be >= 0")
    return loss / max(n_matched, 1) * (1 + n_fp)


def adjust_zero_loss(loss: float, n_gt: int, history_max: float) -> float:
    """Replace a zero loss by the running maximum when ground truth exists.

    A zero with no ground truth is legitimate and passes through.
    """
    if loss == 0 and n_gt > 0:
        return history_max
    return loss


def adjust_traces(samples: Sequence[TraceSample]) -> list[AdjustedTrace]:
    """Apply the loss adjustments and learning-rate division, in file order.

    The running maximum used for zero substitution is tracked per regression
    component and per epoch stream, over the adjusted (renormalized) values.
    """
    history_max: dict[tuple[int, int], float] = {}
    out = []
    for s in samples:
        raw = [getattr(s, name) for name in FEATURE_NAMES]
        for idx in _REGRESSION_LOSS_IDX:
            v = normalize_regression_loss(raw[idx], s.n_matched, s.n_false_positive)
            key = (idx, s.epoch)
            v = adjust_zero_loss(v, s.n_ground_truth, history_max.get(key, 0.0))
            history_max[key] = max(history_max.get(key, 0.0), v)
            raw[idx] = v
        for idx in range(4, 8):
            raw[idx] = raw[idx] / s.learning_rate
        out.append(AdjustedTrace(image_id=s.image_id, epoch=s.epoch, values=tuple(raw)))
    return out


def id_sort_key(image_id: Identifier) -> tuple:
    """Deterministic total order over mixed int/str identifiers."""
    if isinstance(image_id, str):
        return (1, 0, image_id)
    return (0, image_id, "")


def aggregate_by_image(
    adjusted: Sequence[AdjustedTrace], mode: str = "mean"
) -> list[AdjustedTrace]:
    """Collapse per-epoch samples into one vector per image, sorted by id."""
    if mode not in ("mean", "last"):
        raise ValidationError(f"epoch aggregation must be 'mean' or 'last', got {mode!r}")
    by_image: dict[Identifier, list[AdjustedTrace]] = {}
    for a in adjusted:
        by_image.setdefault(a.image_id, []).append(a)
    out = []
    for image_id in sorted(by_image, key=id_sort_key):
        group = by_image[image_id]
        if mode == "last":
            chosen = max(group, key=lambda a: a.epoch if a.epoch is not None else -1)
            out.append(AdjustedTrace(image_id, chosen.epoch, chosen.values))
        else:
            n = len(group)
            values = tuple(sum(a.values[i] for a in group) / n for i in range(8))
            out.append(AdjustedTrace(image_id, None, values))
    return out


def fit_normalization(
    adjusted: Sequence[AdjustedTrace], scheme: str = "zscore"
) -> NormalizationStats:
    """Fit per-feature standardization stats over an adjusted corpus.

    Uses the population (not sample) standard deviation, so a two-value
    corpus {1, 3} yields mean 2 and std 1.
    """
    if not adjusted:
        raise ValidationError("cannot fit normalization on an empty corpus")
    if scheme not in ("zscore", "minmax"):
        raise ValidationError(f"normalization scheme must be 'zscore' or 'minmax', got {scheme!r}")
    n = len(adjusted)
    if scheme == "minmax":
        lo = [min(a.values[i] for a in adjusted) for i in range(8)]
        hi = [max(a.values[i] for a in adjusted) for i in range(8)]
        rng = [h - l for l, h in zip(lo, hi)]
        return NormalizationStats(
            mean=tuple(lo),
            std=tuple(rng),
            constant=tuple(r == 0.0 for r in rng),
            scheme="minmax",
        )
    mean = [sum(a.values[i] for a in adjusted) / n for i in range(8)]
    var = [sum((a.values[i] - mean[i]) ** 2 for a in adjusted) / n for i in range(8)]
    std = [math.sqrt(v) for v in var]
    return NormalizationStats(
        mean=tuple(mean),
        std=tuple(std),
        constant=tuple(s == 0.0 for s in std),
        scheme="zscore",
    )


def assemble_features(
    adjusted: AdjustedTrace,
    stats: NormalizationStats,
    weights: WeightConfig = WeightConfig(),
) -> FeatureVector:
    """Standardize one adjusted vector and apply the lambda/component weights."""
    zhat = stats.standardize(adjusted.values)
    lam = weights.lambda_loss
    c = weights.component_weights
    z = []
    for i in range(4):
        z.append(lam * c[i] * zhat[i])
    for i in range(4):
        grad_c = c[i] if weights.weight_gradients else 1.0
        z.append((1.0 - lam) * grad_c * zhat[i + 4])
    return FeatureVector(image_id=adjusted.image_id, z=tuple(z))


def build_features(
    samples: Sequence[TraceSample],
    weights: WeightConfig = WeightConfig(),
    scheme: str = "zscore",
    epoch_agg: str = "mean",
) -> tuple[list[FeatureVector], NormalizationStats]:
    """Full trace-to-feature pipeline over a corpus; one vector per image."""
    per_image = aggregate_by_image(adjust_traces(samples), mode=epoch_agg)
    stats = fit_normalization(per_image, scheme=scheme)
    return [assemble_features(a, stats, weights) for a in per_image], stats


# ---------------------------------------------------------------------------
# interchange: features.ndjson and normstats.json


def _read_feature(f: _Fields) -> FeatureVector:
    return FeatureVector(image_id=f.ident("image_id"), z=tuple(f.numbers("z", length=8)))


def scan_features(data: bytes | str):
    return _scan_ndjson(data, _read_feature)


def parse_features(data: bytes | str) -> list[FeatureVector]:
    records, errors = scan_features(data)
    _raise_if_errors(errors, "feature")
    return records


def write_features(features: Sequence[FeatureVector]) -> bytes:
    return dumps_lines({"image_id": v.image_id, "z": list(v.z)} for v in features)


def write_normstats(stats: NormalizationStats) -> bytes:
    return dumps_document(
        {
            "scheme": stats.scheme,
            "features": list(FEATURE_NAMES),
            "mean": list(stats.mean),
            "std": list(stats.std),
            "constant": list(stats.constant),
        }
    )


def parse_normstats(data: bytes | str) -> NormalizationStats:
    obj = _loads(data.decode("utf-8") if isinstance(data, bytes) else data)
    f = _Fields(obj, "normstats")
    scheme = f.string("scheme")
    mean = f.numbers("mean", length=8)
    std = f.numbers("std", length=8)
    constant = f._get("constant")
    if (
        not isinstance(constant, list)
        or len(constant) != 8
        or any(not isinstance(b, bool) for b in constant)
    ):
        f._fail("constant", "must be an array of 8 booleans")
    return NormalizationStats(
        mean=tuple(mean), std=tuple(std), constant=tuple(constant), scheme=scheme
    )
