/** Converters from raw tool dumps into interchange records.
 *
 * Conversion never changes semantics (no thresholding, no suppression): it
 * renames fields, checks presence/finiteness, and downsamples CAM grids by
 * mass-preserving block sums. Bad records are reported, not silently dropped.
 */

import {
  ALL_VIEWS,
  CamRecord,
  DetectionRecord,
  RawCamDump,
  RawClassifierDump,
  RawDetectionDump,
  RawTrainingLog,
  RecordError,
  TraceRecord,
  VerdictRecord,
  ViewTag,
} from "./types.js";

function finite(v: unknown): v is number {
  return typeof v === "number" && Number.isFinite(v);
}

function nonneg(v: unknown): v is number {
  return finite(v) && v >= 0;
}

function isId(v: unknown): v is number | string {
  return typeof v === "string" || (typeof v === "number" && Number.isInteger(v));
}

export interface Converted<T> {
  records: T[];
  errors: RecordError[];
}

const LOSS_KEYS = ["rpn_cls", "rpn_bbox", "cls", "bbox"] as const;

export function convertTraceLog(log: RawTrainingLog): Converted<TraceRecord> {
  const records: TraceRecord[] = [];
  const errors: RecordError[] = [];
  let index = 0;
  for (const image of log.images ?? []) {
    for (const entry of image.epochs ?? []) {
      index += 1;
      const where = (field: string, message: string) =>
        errors.push({ record: index, field, message });
      if (!isId(image.image_id)) {
        where("image_id", `missing or invalid image_id: ${JSON.stringify(image.image_id)}`);
        continue;
      }
      let bad = false;
      for (const key of LOSS_KEYS) {
        if (!nonneg(entry.losses?.[key])) {
          where(`losses.${key}`, "missing or negative loss value");
          bad = true;
        }
        if (!nonneg(entry.grads?.[key])) {
          where(`grads.${key}`, "missing or negative gradient magnitude");
          bad = true;
        }
      }
      const counts = entry.counts ?? ({} as RawTrainingLog["images"][0]["epochs"][0]["counts"]);
      for (const key of ["matched", "false_positive", "ground_truth"] as const) {
        if (!Number.isInteger(counts[key]) || counts[key] < 0) {
          where(`counts.${key}`, "missing or negative count");
          bad = true;
        }
      }
      if (!finite(entry.learning_rate) || entry.learning_rate <= 0) {
        where("learning_rate", "missing or non-positive learning rate");
        bad = true;
      }
      if (!Number.isInteger(entry.epoch) || entry.epoch < 0) {
        where("epoch", "missing or negative epoch");
        bad = true;
      }
      if (bad) continue;
      records.push({
        image_id: image.image_id,
        epoch: entry.epoch,
        loss_rpn_cls: entry.losses.rpn_cls,
        loss_rpn_bbox: entry.losses.rpn_bbox,
        loss_cls: entry.losses.cls,
        loss_bbox: entry.losses.bbox,
        grad_rpn_cls: entry.grads.rpn_cls,
        grad_rpn_bbox: entry.grads.rpn_bbox,
        grad_cls: entry.grads.cls,
        grad_bbox: entry.grads.bbox,
        n_matched: counts.matched,
        n_false_positive: counts.false_positive,
        n_ground_truth: counts.ground_truth,
        learning_rate: entry.learning_rate,
      });
    }
  }
  return { records, errors };
}

export function convertDetectionDump(dump: RawDetectionDump): Converted<DetectionRecord> {
  const records: DetectionRecord[] = [];
  const errors: RecordError[] = [];
  let index = 0;
  for (const image of dump.images ?? []) {
    index += 1;
    if (image.error) {
      errors.push({
        record: index,
        message: `inference driver failed for image ${String(image.image_id)}: ${image.error}`,
      });
      continue;
    }
    if (!isId(image.image_id)) {
      errors.push({ record: index, field: "image_id", message: "missing or invalid image_id" });
      continue;
    }
    for (const view of Object.keys(image.views ?? {})) {
      if (!ALL_VIEWS.includes(view as ViewTag)) {
        errors.push({ record: index, field: "views", message: `unknown view tag '${view}'` });
        continue;
      }
      for (const det of image.views![view as ViewTag] ?? []) {
        const box = det.box;
        const boxOk =
          Array.isArray(box) &&
          box.length === 4 &&
          box.every(finite) &&
          box[2] > box[0] &&
          box[3] > box[1];
        if (!boxOk) {
          errors.push({ record: index, field: "box", message: `invalid box ${JSON.stringify(box)}` });
          continue;
        }
        if (!finite(det.score) || det.score < 0 || det.score > 1) {
          errors.push({ record: index, field: "score", message: `score out of [0, 1]: ${det.score}` });
          continue;
        }
        if (!isId(det.category_id)) {
          errors.push({ record: index, field: "category_id", message: "missing category_id" });
          continue;
        }
        records.push({
          image_id: image.image_id,
          view: view as ViewTag,
          box: box as [number, number, number, number],
          category_id: det.category_id,
          score: det.score,
        });
      }
    }
  }
  return { records, errors };
}

export function convertClassifierDump(dump: RawClassifierDump): Converted<VerdictRecord> {
  const records: VerdictRecord[] = [];
  const errors: RecordError[] = [];
  let index = 0;
  for (const crop of dump.crops ?? []) {
    index += 1;
    if (typeof crop.box_ref !== "string" || !crop.box_ref) {
      errors.push({ record: index, field: "box_ref", message: "missing box_ref" });
      continue;
    }
    const entries = Object.entries(crop.probs ?? {}).filter(([, p]) => finite(p) && p >= 0);
    if (entries.length < 3) {
      errors.push({
        record: index,
        field: "probs",
        message: `need at least 3 class probabilities, got ${entries.length}`,
      });
      continue;
    }
    // rank by probability, label as the deterministic tie-break
    entries.sort(([la, pa], [lb, pb]) => (pb !== pa ? pb - pa : la < lb ? -1 : 1));
    const asId = (label: string): number | string =>
      /^\d+$/.test(label) ? Number(label) : label;
    const top3 = entries.slice(0, 3).map(([label]) => asId(label));
    const pC = Math.min(entries[0][1], 1);
    records.push({
      image_id: crop.image_id,
      box_ref: crop.box_ref,
      top3,
      top1: top3[0],
      p_c: pC,
    });
  }
  return { records, errors };
}

export const MAX_GRID_SIDE = 64;

/** Block-sum pooling: cell masses add, so proportions are preserved exactly. */
export function downsampleGrid(
  width: number,
  height: number,
  values: number[],
  maxSide = MAX_GRID_SIDE,
): { width: number; height: number; values: number[] } {
  const factor = Math.max(1, Math.ceil(Math.max(width, height) / maxSide));
  if (factor === 1) return { width, height, values };
  const outW = Math.ceil(width / factor);
  const outH = Math.ceil(height / factor);
  const out = new Array<number>(outW * outH).fill(0);
  for (let r = 0; r < height; r++) {
    for (let c = 0; c < width; c++) {
      out[Math.floor(r / factor) * outW + Math.floor(c / factor)] += values[r * width + c];
    }
  }
  return { width: outW, height: outH, values: out };
}

export function convertCamDump(dump: RawCamDump): Converted<CamRecord> {
  const records: CamRecord[] = [];
  const errors: RecordError[] = [];
  let index = 0;
  for (const cam of dump.cams ?? []) {
    index += 1;
    if (typeof cam.box_ref !== "string" || !cam.box_ref) {
      errors.push({ record: index, field: "box_ref", message: "missing box_ref" });
      continue;
    }
    if (
      !Number.isInteger(cam.width) ||
      !Number.isInteger(cam.height) ||
      cam.width < 1 ||
      cam.height < 1 ||
      !Array.isArray(cam.values) ||
      cam.values.length !== cam.width * cam.height
    ) {
      errors.push({ record: index, field: "values", message: "grid shape mismatch" });
      continue;
    }
    if (!cam.values.every(nonneg) || !cam.values.some((v) => v > 0)) {
      errors.push({
        record: index,
        field: "values",
        message: "grid values must be >= 0 with at least one positive",
      });
      continue;
    }
    const small = downsampleGrid(cam.width, cam.height, cam.values);
    records.push({ box_ref: cam.box_ref, ...small });
  }
  return { records, errors };
}
