/** Seeded synthetic fixture generator.
 *
 * Builds one internally consistent miniature dataset: annotations with
 * deliberate defects on the anomalous image, per-epoch traces that make that
 * image stand out, six-view detections of every object, classifier verdicts
 * and centered activation grids for every candidate, and oracle labels.
 *
 * Objects within an image are disjoint and carry strictly separated base
 * scores, so the pipeline's stage-2 candidate index equals the generation
 * order and `${image_id}#${rank}` refs can be produced without running the
 * pipeline.
 */

import { Dims, toView } from "./geometry.js";
import { Rng } from "./rng.js";
import {
  ALL_VIEWS,
  CamRecord,
  DetectionRecord,
  OracleRecord,
  TraceRecord,
  VerdictRecord,
} from "./types.js";

export interface SynthObject {
  box: [number, number, number, number];
  categoryId: number;
  baseScore: number;
  boxRef: string;
}

export interface SynthImage {
  imageId: number;
  dims: Dims;
  objects: SynthObject[];
  erroneous: boolean;
}

export interface SynthWorld {
  images: SynthImage[];
  categories: number[];
  annotations: object; // COCO-style document for the originals
  traces: TraceRecord[];
  detections: DetectionRecord[];
  verdicts: VerdictRecord[];
  cams: CamRecord[];
  oracle: OracleRecord[];
}

const CATEGORIES = [1, 2, 3];
const EPOCHS = 2;
const CAM_SIDE = 16;

function round2(v: number): number {
  return Math.round(v * 100) / 100;
}

function buildImages(rng: Rng, nImages: number): SynthImage[] {
  const images: SynthImage[] = [];
  for (let i = 0; i < nImages; i++) {
    const imageId = i + 1;
    const nObjects = rng.int(1, 4);
    const objects: SynthObject[] = [];
    for (let j = 0; j < nObjects; j++) {
      const w = round2(rng.uniform(12, 24));
      const h = round2(rng.uniform(12, 24));
      const x0 = round2(8 + 36 * j + rng.uniform(0, 6));
      const y0 = round2(rng.uniform(10, 70));
      // last object is deliberately low-confidence to exercise the ladder
      const baseScore =
        j === nObjects - 1 && nObjects > 1 ? 0.25 : round2(0.9 - 0.15 * j);
      objects.push({
        box: [x0, y0, round2(x0 + w), round2(y0 + h)],
        categoryId: CATEGORIES[rng.int(0, CATEGORIES.length)],
        baseScore,
        boxRef: `${imageId}#${j}`,
      });
    }
    images.push({
      imageId,
      dims: { width: 128, height: 128 },
      objects,
      erroneous: imageId === 1, // the first image carries the annotation defects
    });
  }
  return images;
}

function buildAnnotations(images: SynthImage[]): object {
  const annotations: object[] = [];
  let annId = 100;
  for (const image of images) {
    for (const obj of image.objects) {
      annId += 1;
      // the erroneous image gets shifted boxes and a wrong class label
      const shift = image.erroneous ? 3.5 : 0;
      const categoryId = image.erroneous
        ? CATEGORIES[(CATEGORIES.indexOf(obj.categoryId) + 1) % CATEGORIES.length]
        : obj.categoryId;
      const [x0, y0, x1, y1] = obj.box;
      annotations.push({
        id: annId,
        image_id: image.imageId,
        category_id: categoryId,
        bbox: [x0 + shift, y0 + shift, x1 - x0, y1 - y0],
        area: round2((x1 - x0) * (y1 - y0)),
        iscrowd: 0,
      });
    }
  }
  return {
    images: images.map((im) => ({
      id: im.imageId,
      width: im.dims.width,
      height: im.dims.height,
      file_name: `${String(im.imageId).padStart(6, "0")}.jpg`,
    })),
    annotations,
    categories: [
      { id: 1, name: "person" },
      { id: 2, name: "dog" },
      { id: 3, name: "cat" },
    ],
  };
}

export function synthTraces(seed: number, nImages = 4): TraceRecord[] {
  return buildWorld(seed, nImages).traces;
}

export function synthWorldImages(seed: number, nImages = 4): SynthImage[] {
  return buildImages(new Rng(seed), nImages);
}

export function buildWorld(seed: number, nImages = 4): SynthWorld {
  const rng = new Rng(seed);
  const images = buildImages(rng, nImages);

  const traces: TraceRecord[] = [];
  for (let epoch = 0; epoch < EPOCHS; epoch++) {
    for (const image of images) {
      const hard = image.erroneous;
      const decay = 1 - 0.08 * epoch;
      const base = hard ? 1.2 : 0.3;
      const grad = hard ? 0.05 : 0.012;
      traces.push({
        image_id: image.imageId,
        epoch,
        loss_rpn_cls: round2((base * 0.7 + rng.uniform(0, 0.05)) * decay * 100) / 100,
        loss_rpn_bbox: round2((base * 1.1 + rng.uniform(0, 0.05)) * decay * 100) / 100,
        loss_cls: round2((base * 0.9 + rng.uniform(0, 0.05)) * decay * 100) / 100,
        loss_bbox: round2((base * 1.3 + rng.uniform(0, 0.05)) * decay * 100) / 100,
        grad_rpn_cls: round2(grad * 0.8 * decay * 1000) / 1000,
        grad_rpn_bbox: round2(grad * 1.4 * decay * 1000) / 1000,
        grad_cls: round2(grad * 1.0 * decay * 1000) / 1000,
        grad_bbox: round2(grad * 1.6 * decay * 1000) / 1000,
        n_matched: image.objects.length,
        n_false_positive: hard ? 3 : 0,
        n_ground_truth: image.objects.length,
        learning_rate: epoch === 0 ? 0.05 : 0.04,
      });
    }
  }

  const detections: DetectionRecord[] = [];
  for (const image of images) {
    for (const obj of image.objects) {
      for (const view of ALL_VIEWS) {
        const jitter = round2(rng.uniform(-0.02, 0.02) * 100) / 100;
        const score = Math.min(1, Math.max(0, round2(obj.baseScore + jitter)));
        detections.push({
          image_id: image.imageId,
          view,
          box: toView(obj.box, view, image.dims),
          category_id: obj.categoryId,
          score,
        });
      }
    }
  }

  const verdicts: VerdictRecord[] = [];
  for (const image of images) {
    for (const obj of image.objects) {
      const others = CATEGORIES.filter((c) => c !== obj.categoryId);
      verdicts.push({
        image_id: image.imageId,
        box_ref: obj.boxRef,
        top3: [obj.categoryId, ...others.slice(0, 2)],
        top1: obj.categoryId,
        p_c: 0.9,
      });
    }
  }

  const cams: CamRecord[] = [];
  for (const image of images) {
    for (const obj of image.objects) {
      const values: number[] = [];
      const center = CAM_SIDE / 2;
      const sigma = 2.5;
      for (let r = 0; r < CAM_SIDE; r++) {
        for (let c = 0; c < CAM_SIDE; c++) {
          const d2 = (c + 0.5 - center) ** 2 + (r + 0.5 - center) ** 2;
          values.push(Math.exp(-d2 / (2 * sigma * sigma)));
        }
      }
      cams.push({ box_ref: obj.boxRef, width: CAM_SIDE, height: CAM_SIDE, values });
    }
  }

  const oracle: OracleRecord[] = images.map((im) => ({
    image_id: im.imageId,
    erroneous: im.erroneous,
  }));

  return {
    images,
    categories: CATEGORIES,
    annotations: buildAnnotations(images),
    traces,
    detections,
    verdicts,
    cams,
    oracle,
  };
}
