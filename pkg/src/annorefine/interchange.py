"""File formats crossing the toolkit boundary.

Single-document JSON for COCO-style annotations, newline-delimited JSON for
streams (traces, detections, verdicts, activation grids, oracle labels).
Files ending in ``.gz`` are transparently gzip-(de)compressed. All numeric
fields reject NaN/Inf at the boundary; parsers never silently drop records.

Every ``parse_*`` function raises :class:`~annorefine.errors.ParseError`
listing all offending records. The matching ``scan_*`` functions return
``(records, errors)`` instead so callers (the CLI validator, adapter CI) can
report everything without aborting.
"""

from __future__ import annotations

import gzip
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

from .errors import ParseError, ValidationError
from .geometry import Box, ImageDims, TransformKind

Identifier = int | str


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class AnnotationRecord:
    """One COCO-style object annotation, box in corner form."""

    id: Identifier
    image_id: Identifier
    category_id: Identifier
    box: Box
    area: float
    is_crowd: bool = False
    provenance: str | None = None


@dataclass(frozen=True)
class ImageInfo:
    id: Identifier
    width: float
    height: float
    file_name: str | None = None

    @property
    def dims(self) -> ImageDims:
        return ImageDims(self.width, self.height)


@dataclass(frozen=True)
class Category:
    id: Identifier
    name: str | None = None
    supercategory: str | None = None


@dataclass(frozen=True)
class CocoDocument:
    images: tuple[ImageInfo, ...]
    annotations: tuple[AnnotationRecord, ...]
    categories: tuple[Category, ...]


@dataclass(frozen=True)
class TraceSample:
    """One image's per-epoch record of losses, gradient magnitudes and counts."""

    image_id: Identifier
    epoch: int
    loss_rpn_cls: float
    loss_rpn_bbox: float
    loss_cls: float
    loss_bbox: float
    grad_rpn_cls: float
    grad_rpn_bbox: float
    grad_cls: float
    grad_bbox: float
    n_matched: int
    n_false_positive: int
    n_ground_truth: int
    learning_rate: float


@dataclass(frozen=True)
class Detection:
    """A (box, category, confidence) tuple from one augmented view.

    The box is expressed in the TRANSFORMED view's coordinate frame.
    """

    image_id: Identifier
    view: TransformKind
    box: Box
    category_id: Identifier
    score: float


@dataclass(frozen=True)
class ClassifierVerdict:
    image_id: Identifier
    box_ref: str
    top3: tuple[Identifier, Identifier, Identifier]
    top1: Identifier
    p_c: float


@dataclass(frozen=True)
class ActivationGrid:
    """Row-major activation heat map covering one candidate box."""

    box_ref: str
    width: int
    height: int
    values: tuple[float, ...]

    def value_at(self, row: int, col: int) -> float:
        return self.values[row * self.width + col]


@dataclass(frozen=True)
class OracleLabel:
    image_id: Identifier
    erroneous: bool


@dataclass(frozen=True)
class RecordError:
    """One rejected input record; ``line`` is 1-based for NDJSON sources."""

    message: str
    line: int | None = None
    field: str | None = None

    def __str__(self) -> str:
        where = f"line {self.line}: " if self.line is not None else ""
        return f"{where}{self.message}"


def make_box_ref(image_id: Identifier, index: int) -> str:
    """Content identifier of a stage-2 candidate: ``{image_id}#{index}``."""
    return f"{image_id}#{index}"


# ---------------------------------------------------------------------------
# stable JSON helpers


def stable_dumps(obj, indent: int | None = None) -> str:
    """Deterministic JSON: sorted keys, no NaN/Inf, shortest-round-trip floats."""
    separators = (",", ": ") if indent else (",", ":")
    return json.dumps(
        obj, sort_keys=True, indent=indent, separators=separators,
        ensure_ascii=False, allow_nan=False,
    )


def dumps_document(obj) -> bytes:
    return (stable_dumps(obj, indent=2) + "\n").encode("utf-8")


def dumps_lines(objs) -> bytes:
    return "".join(stable_dumps(o) + "\n" for o in objs).encode("utf-8")


def _reject_constant(token: str):
    raise ValueError(f"non-finite JSON constant {token!r} is not allowed")


def _loads(text: str):
    return json.loads(text, parse_constant=_reject_constant)


def read_path_bytes(path: str | Path) -> bytes:
    p = Path(path)
    data = p.read_bytes()
    if p.suffix == ".gz":
        data = gzip.decompress(data)
    return data


def write_path_bytes(path: str | Path, data: bytes):
    p = Path(path)
    if p.suffix == ".gz":
        # mtime pinned so identical content gives identical bytes
        data = gzip.compress(data, mtime=0)
    p.write_bytes(data)


def _as_text(data: bytes | str) -> str:
    if isinstance(data, bytes):
        return data.decode("utf-8")
    return data


# ---------------------------------------------------------------------------
# field readers


class _Fields:
    """Typed accessors over one decoded JSON object; unknown keys are ignored."""

    def __init__(self, obj, where: str):
        if not isinstance(obj, dict):
            raise ValidationError(f"{where}: record must be a JSON object")
        self.obj = obj
        self.where = where

    def _fail(self, key: str, why: str):
        raise ValidationError(f"{self.where}: field '{key}' {why}", field=key)

    def _get(self, key: str, required: bool = True):
        if key not in self.obj:
            if required:
                self._fail(key, "is missing")
            return None
        return self.obj[key]

    def ident(self, key: str) -> Identifier:
        v = self._get(key)
        if isinstance(v, bool) or not isinstance(v, (int, str)):
            self._fail(key, f"must be an integer or string identifier, got {v!r}")
        return v

    def number(
        self,
        key: str,
        minimum: float | None = None,
        maximum: float | None = None,
        required: bool = True,
        default: float = 0.0,
    ) -> float:
        v = self._get(key, required)
        if v is None:
            return default
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self._fail(key, f"must be a number, got {v!r}")
        v = float(v)
        if not math.isfinite(v):
            self._fail(key, f"must be finite, got {v!r}")
        if minimum is not None and v < minimum:
            self._fail(key, f"out of [{minimum}, {maximum if maximum is not None else 'inf'}]: {v!r}")
        if maximum is not None and v > maximum:
            self._fail(key, f"out of [{minimum if minimum is not None else '-inf'}, {maximum}]: {v!r}")
        return v

    def positive_number(self, key: str) -> float:
        v = self.number(key)
        if v <= 0:
            self._fail(key, f"must be > 0, got {v!r}")
        return v

    def integer(self, key: str, minimum: int | None = None) -> int:
        v = self._get(key)
        if isinstance(v, bool) or not isinstance(v, int):
            self._fail(key, f"must be an integer, got {v!r}")
        if minimum is not None and v < minimum:
            self._fail(key, f"must be >= {minimum}, got {v!r}")
        return v

    def boolean(self, key: str) -> bool:
        v = self._get(key)
        if not isinstance(v, bool):
            self._fail(key, f"must be a boolean, got {v!r}")
        return v

    def string(self, key: str, required: bool = True) -> str | None:
        v = self._get(key, required)
        if v is None:
            return None
        if not isinstance(v, str):
            self._fail(key, f"must be a string, got {v!r}")
        return v

    def numbers(self, key: str, length: int | None = None) -> list[float]:
        v = self._get(key)
        if not isinstance(v, list):
            self._fail(key, f"must be an array, got {v!r}")
        if length is not None and len(v) != length:
            self._fail(key, f"must have {length} entries, got {len(v)}")
        out = []
        for i, item in enumerate(v):
            if isinstance(item, bool) or not isinstance(item, (int, float)) or not math.isfinite(item):
                self._fail(key, f"entry {i} must be a finite number, got {item!r}")
            out.append(float(item))
        return out

    def box(self, key: str) -> Box:
        xs = self.numbers(key, length=4)
        if not (xs[2] > xs[0] and xs[3] > xs[1]):
            self._fail(key, f"must satisfy x_max > x_min and y_max > y_min, got {xs}")
        return Box(*xs)


# ---------------------------------------------------------------------------
# NDJSON machinery


def _scan_ndjson(data: bytes | str, read_one: Callable[[_Fields], object]):
    records, errors = [], []
    # split on plain \n only: JSON strings may legally contain other Unicode
    # line separators when written with ensure_ascii disabled
    for lineno, line in enumerate(_as_text(data).split("\n"), start=1):
        line = line.rstrip("\r")
        if not line or line.isspace():
            continue
        try:
            obj = _loads(line)
        except ValueError as e:
            errors.append(RecordError(f"malformed JSON: {e}", line=lineno))
            continue
        try:
            records.append(read_one(_Fields(obj, f"line {lineno}")))
        except ValidationError as e:
            errors.append(RecordError(e.message, line=lineno, field=e.details.get("field")))
    return records, errors


def _raise_if_errors(errors: Sequence[RecordError], what: str):
    if errors:
        summary = "; ".join(str(e) for e in errors[:20])
        if len(errors) > 20:
            summary += f"; ... {len(errors) - 20} more"
        raise ParseError(
            f"{len(errors)} invalid {what} record(s): {summary}",
            errors=[str(e) for e in errors],
        )


def _read_trace(f: _Fields) -> TraceSample:
    return TraceSample(
        image_id=f.ident("image_id"),
        epoch=f.integer("epoch", minimum=0),
        loss_rpn_cls=f.number("loss_rpn_cls", minimum=0),
        loss_rpn_bbox=f.number("loss_rpn_bbox", minimum=0),
        loss_cls=f.number("loss_cls", minimum=0),
        loss_bbox=f.number("loss_bbox", minimum=0),
        grad_rpn_cls=f.number("grad_rpn_cls", minimum=0),
        grad_rpn_bbox=f.number("grad_rpn_bbox", minimum=0),
        grad_cls=f.number("grad_cls", minimum=0),
        grad_bbox=f.number("grad_bbox", minimum=0),
        n_matched=f.integer("n_matched", minimum=0),
        n_false_positive=f.integer("n_false_positive", minimum=0),
        n_ground_truth=f.integer("n_ground_truth", minimum=0),
        learning_rate=f.positive_number("learning_rate"),
    )


def _read_detection(f: _Fields) -> Detection:
    raw_view = f.string("view")
    try:
        view = TransformKind(raw_view)
    except ValueError:
        f._fail("view", f"must be one of {[t.value for t in TransformKind]}, got {raw_view!r}")
    return Detection(
        image_id=f.ident("image_id"),
        view=view,
        box=f.box("box"),
        category_id=f.ident("category_id"),
        score=f.number("score", minimum=0.0, maximum=1.0),
    )


def _read_verdict(f: _Fields) -> ClassifierVerdict:
    top3_raw = f._get("top3")
    if not isinstance(top3_raw, list) or len(top3_raw) != 3:
        f._fail("top3", f"must be an array of 3 category ids, got {top3_raw!r}")
    for item in top3_raw:
        if isinstance(item, bool) or not isinstance(item, (int, str)):
            f._fail("top3", f"entries must be identifiers, got {item!r}")
    top1 = f.ident("top1")
    if top1 != top3_raw[0]:
        f._fail("top1", f"must equal the first top3 entry, got {top1!r} vs {top3_raw[0]!r}")
    return ClassifierVerdict(
        image_id=f.ident("image_id"),
        box_ref=f.string("box_ref"),
        top3=tuple(top3_raw),
        top1=top1,
        p_c=f.number("p_c", minimum=0.0, maximum=1.0),
    )


def _read_grid(f: _Fields) -> ActivationGrid:
    width = f.integer("width", minimum=1)
    height = f.integer("height", minimum=1)
    values = f.numbers("values")
    if len(values) != width * height:
        f._fail("values", f"must have width*height = {width * height} entries, got {len(values)}")
    if any(v < 0 for v in values):
        f._fail("values", "must all be >= 0")
    if not any(v > 0 for v in values):
        f._fail("values", "must contain at least one positive entry")
    return ActivationGrid(
        box_ref=f.string("box_ref"), width=width, height=height, values=tuple(values)
    )


def _read_oracle(f: _Fields) -> OracleLabel:
    return OracleLabel(image_id=f.ident("image_id"), erroneous=f.boolean("erroneous"))


def scan_traces(data: bytes | str):
    return _scan_ndjson(data, _read_trace)


def parse_traces(data: bytes | str) -> list[TraceSample]:
    records, errors = scan_traces(data)
    _raise_if_errors(errors, "trace")
    return records


def scan_detections(data: bytes | str):
    return _scan_ndjson(data, _read_detection)


def parse_detections(data: bytes | str) -> list[Detection]:
    records, errors = scan_detections(data)
    _raise_if_errors(errors, "detection")
    return records


def scan_verdicts(data: bytes | str):
    return _scan_ndjson(data, _read_verdict)


def parse_verdicts(data: bytes | str) -> list[ClassifierVerdict]:
    records, errors = scan_verdicts(data)
    _raise_if_errors(errors, "verdict")
    return records


def scan_grids(data: bytes | str):
    return _scan_ndjson(data, _read_grid)


def parse_grids(data: bytes | str) -> list[ActivationGrid]:
    records, errors = scan_grids(data)
    _raise_if_errors(errors, "activation grid")
    return records


def scan_oracle(data: bytes | str):
    return _scan_ndjson(data, _read_oracle)


def parse_oracle(data: bytes | str) -> list[OracleLabel]:
    records, errors = scan_oracle(data)
    _raise_if_errors(errors, "oracle label")
    return records


# ---------------------------------------------------------------------------
# NDJSON writers


def _trace_obj(t: TraceSample) -> dict:
    return {
        "image_id": t.image_id,
        "epoch": t.epoch,
        "loss_rpn_cls": t.loss_rpn_cls,
        "loss_rpn_bbox": t.loss_rpn_bbox,
        "loss_cls": t.loss_cls,
        "loss_bbox": t.loss_bbox,
        "grad_rpn_cls": t.grad_rpn_cls,
        "grad_rpn_bbox": t.grad_rpn_bbox,
        "grad_cls": t.grad_cls,
        "grad_bbox": t.grad_bbox,
        "n_matched": t.n_matched,
        "n_false_positive": t.n_false_positive,
        "n_ground_truth": t.n_ground_truth,
        "learning_rate": t.learning_rate,
    }


def write_traces(records: Sequence[TraceSample]) -> bytes:
    return dumps_lines(_trace_obj(t) for t in records)


def write_detections(records: Sequence[Detection]) -> bytes:
    return dumps_lines(
        {
            "image_id": d.image_id,
            "view": d.view.value,
            "box": list(d.box.as_tuple()),
            "category_id": d.category_id,
            "score": d.score,
        }
        for d in records
    )


def write_verdicts(records: Sequence[ClassifierVerdict]) -> bytes:
    return dumps_lines(
        {
            "image_id": v.image_id,
            "box_ref": v.box_ref,
            "top3": list(v.top3),
            "top1": v.top1,
            "p_c": v.p_c,
        }
        for v in records
    )


def write_grids(records: Sequence[ActivationGrid]) -> bytes:
    return dumps_lines(
        {
            "box_ref": g.box_ref,
            "width": g.width,
            "height": g.height,
            "values": list(g.values),
        }
        for g in records
    )


def write_oracle(records: Sequence[OracleLabel]) -> bytes:
    return dumps_lines(
        {"image_id": o.image_id, "erroneous": o.erroneous} for o in records
    )


# ---------------------------------------------------------------------------
# COCO-style annotation documents


def _exact_delta(lo: float, hi: float) -> float:
    """Width w such that ``lo + w`` reproduces ``hi``, exact whenever possible.

    The naive ``hi - lo`` can be one ulp off after rounding; nudging w by
    ulps usually reaches an exact sum. For rare (lo, hi) pairs no exact w
    exists at all (the true sum always falls halfway and round-to-even skips
    hi), so the closest reachable width is used, keeping the xywh round-trip
    within one ulp of hi.
    """
    w = hi - lo
    candidates = {w}
    for _ in range(6):
        s = lo + w
        if s == hi:
            return w
        w = math.nextafter(w, math.inf if s < hi else -math.inf)
        candidates.add(w)
    return min(candidates, key=lambda c: (abs((lo + c) - hi), c))


def parse_annotation_document(data: bytes | str) -> CocoDocument:
    """Parse a COCO-subset JSON document (images, annotations, categories).

    Segmentation/keypoint payloads are ignored; only annotations carrying a
    bbox become records. A malformed document reports the byte offset of the
    failure; bad records are reported all at once with their annotation ids.
    """
    text = _as_text(data)
    try:
        doc = _loads(text)
    except json.JSONDecodeError as e:
        byte_offset = len(text[: e.pos].encode("utf-8"))
        raise ParseError(f"malformed JSON at byte offset {byte_offset}: {e.msg}", offset=byte_offset)
    except ValueError as e:
        raise ParseError(f"malformed JSON: {e}")
    if not isinstance(doc, dict):
        raise ParseError("top-level JSON value must be an object")
    for key in ("images", "annotations", "categories"):
        if key not in doc or not isinstance(doc[key], list):
            raise ValidationError(f"document must contain an array field '{key}'")

    errors: list[RecordError] = []
    images: list[ImageInfo] = []
    for i, obj in enumerate(doc["images"]):
        try:
            f = _Fields(obj, f"images[{i}]")
            images.append(
                ImageInfo(
                    id=f.ident("id"),
                    width=f.number("width", minimum=1),
                    height=f.number("height", minimum=1),
                    file_name=f.string("file_name", required=False),
                )
            )
        except ValidationError as e:
            errors.append(RecordError(e.message, field=e.details.get("field")))

    categories: list[Category] = []
    for i, obj in enumerate(doc["categories"]):
        try:
            f = _Fields(obj, f"categories[{i}]")
            categories.append(
                Category(
                    id=f.ident("id"),
                    name=f.string("name", required=False),
                    supercategory=f.string("supercategory", required=False),
                )
            )
        except ValidationError as e:
            errors.append(RecordError(e.message, field=e.details.get("field")))

    annotations: list[AnnotationRecord] = []
    for i, obj in enumerate(doc["annotations"]):
        if isinstance(obj, dict) and "bbox" not in obj:
            continue  # segmentation-only entries carry no box
        where = f"annotation id {obj.get('id', f'<index {i}>')}" if isinstance(obj, dict) else f"annotations[{i}]"
        try:
            f = _Fields(obj, where)
            xywh = f.numbers("bbox", length=4)
            x, y, w, h = xywh
            if w <= 0 or h <= 0:
                f._fail("bbox", f"must have positive width and height, got {xywh}")
            box = Box(x, y, x + w, y + h)
            area = f.number("area", minimum=0, required=False, default=w * h)
            if area <= 0:
                f._fail("area", f"must be > 0, got {area}")
            raw_crowd = obj.get("iscrowd", 0)
            if raw_crowd not in (0, 1, True, False):
                f._fail("iscrowd", f"must be 0/1/true/false, got {raw_crowd!r}")
            is_crowd = bool(raw_crowd)
            annotations.append(
                AnnotationRecord(
                    id=f.ident("id"),
                    image_id=f.ident("image_id"),
                    category_id=f.ident("category_id"),
                    box=box,
                    area=area,
                    is_crowd=is_crowd,
                    provenance=f.string("provenance", required=False),
                )
            )
        except ValidationError as e:
            errors.append(RecordError(e.message, field=e.details.get("field")))

    _raise_if_errors(errors, "annotation document")
    return CocoDocument(
        images=tuple(images), annotations=tuple(annotations), categories=tuple(categories)
    )


def parse_annotations(data: bytes | str) -> list[AnnotationRecord]:
    """Annotation records of a COCO-subset document (see parse_annotation_document)."""
    return list(parse_annotation_document(data).annotations)


def _annotation_obj(r: AnnotationRecord) -> dict:
    obj = {
        "id": r.id,
        "image_id": r.image_id,
        "category_id": r.category_id,
        "bbox": [
            r.box.x_min,
            r.box.y_min,
            _exact_delta(r.box.x_min, r.box.x_max),
            _exact_delta(r.box.y_min, r.box.y_max),
        ],
        "area": r.area,
        "iscrowd": 1 if r.is_crowd else 0,
    }
    if r.provenance is not None:
        obj["provenance"] = r.provenance
    return obj


def write_annotation_document(doc: CocoDocument) -> bytes:
    def image_obj(im: ImageInfo) -> dict:
        obj = {"id": im.id, "width": im.width, "height": im.height}
        if im.file_name is not None:
            obj["file_name"] = im.file_name
        return obj

    def category_obj(c: Category) -> dict:
        obj = {"id": c.id}
        if c.name is not None:
            obj["name"] = c.name
        if c.supercategory is not None:
            obj["supercategory"] = c.supercategory
        return obj

    return dumps_document(
        {
            "images": [image_obj(im) for im in doc.images],
            "annotations": [_annotation_obj(a) for a in doc.annotations],
            "categories": [category_obj(c) for c in doc.categories],
        }
    )


def write_annotations(
    records: Sequence[AnnotationRecord],
    categories: Sequence[Category] = (),
    images: Sequence[ImageInfo] = (),
) -> bytes:
    """COCO-subset bytes for a record list; bbox emitted as [x, y, w, h]."""
    return write_annotation_document(
        CocoDocument(
            images=tuple(images), annotations=tuple(records), categories=tuple(categories)
        )
    )


def strip_provenance(doc: CocoDocument) -> CocoDocument:
    return replace(
        doc, annotations=tuple(replace(a, provenance=None) for a in doc.annotations)
    )
