/** Box mapping into the six views (scale first, then flip in the scaled frame).
 *
 * Mirrors the primary toolkit's documented transform order so synthetic
 * detections land where the pipeline expects them.
 */

import { ViewTag } from "./types.js";

export interface Dims {
  width: number;
  height: number;
}

export const UP_FACTOR = 1.5;
export const DOWN_FACTOR = 0.75;

function scaleOf(view: ViewTag): number {
  if (view === "upscale_hflip" || view === "upscale_vflip") return UP_FACTOR;
  if (view === "downscale") return DOWN_FACTOR;
  return 1.0;
}

export function toView(
  box: [number, number, number, number],
  view: ViewTag,
  dims: Dims,
): [number, number, number, number] {
  const s = scaleOf(view);
  let [x0, y0, x1, y1] = box.map((v) => v * s) as [number, number, number, number];
  const w = dims.width * s;
  const h = dims.height * s;
  if (view === "hflip" || view === "upscale_hflip") {
    [x0, x1] = [w - x1, w - x0];
  } else if (view === "vflip" || view === "upscale_vflip") {
    [y0, y1] = [h - y1, h - y0];
  }
  return [x0, y0, x1, y1];
}
