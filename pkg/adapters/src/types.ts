/** Interchange records accepted by the primary toolkit, plus raw tool dumps. */

export type ViewTag =
  | "identity"
  | "hflip"
  | "vflip"
  | "upscale_hflip"
  | "upscale_vflip"
  | "downscale";

export const ALL_VIEWS: ViewTag[] = [
  "identity",
  "hflip",
  "vflip",
  "upscale_hflip",
  "upscale_vflip",
  "downscale",
];

export interface TraceRecord {
  image_id: number | string;
  epoch: number;
  loss_rpn_cls: number;
  loss_rpn_bbox: number;
  loss_cls: number;
  loss_bbox: number;
  grad_rpn_cls: number;
  grad_rpn_bbox: number;
  grad_cls: number;
  grad_bbox: number;
  n_matched: number;
  n_false_positive: number;
  n_ground_truth: number;
  learning_rate: number;
}

export interface DetectionRecord {
  image_id: number | string;
  view: ViewTag;
  box: [number, number, number, number]; // xyxy in the view's frame
  category_id: number | string;
  score: number;
}

export interface VerdictRecord {
  image_id: number | string;
  box_ref: string;
  top3: (number | string)[];
  top1: number | string;
  p_c: number;
}

export interface CamRecord {
  box_ref: string;
  width: number;
  height: number;
  values: number[];
}

export interface OracleRecord {
  image_id: number | string;
  erroneous: boolean;
}

export interface RecordError {
  record: number;
  field?: string;
  message: string;
}

/** Identifies the tool an adapter wraps and the schema it emits. */
export interface AdapterManifest {
  tool: string;
  version: string;
  command_template: string;
  output_schema_version: number;
}

// ---- raw dumps produced by a user's tooling ----------------------------------

export interface RawTrainingLog {
  images: {
    image_id: number | string;
    epochs: {
      epoch: number;
      learning_rate: number;
      losses: { rpn_cls: number; rpn_bbox: number; cls: number; bbox: number };
      grads: { rpn_cls: number; rpn_bbox: number; cls: number; bbox: number };
      counts: { matched: number; false_positive: number; ground_truth: number };
    }[];
  }[];
}

export interface RawDetectionDump {
  images: {
    image_id: number | string;
    error?: string; // inference driver failure for this image
    views?: Partial<
      Record<ViewTag, { box: [number, number, number, number]; category_id: number | string; score: number }[]>
    >;
  }[];
}

export interface RawClassifierDump {
  crops: {
    image_id: number | string;
    box_ref: string;
    probs: Record<string, number>;
  }[];
}

export interface RawCamDump {
  cams: { box_ref: string; width: number; height: number; values: number[] }[];
}
