import type { ProjectionPayload } from "./types.js";

/**
 * Map a picked point in the projected plane back to a full class-style code
 * using the service's stored axes and mean (plain linear algebra, no model
 * math).
 */
export function backProject(xy: [number, number], proj: ProjectionPayload): number[] {
  const dims = proj.mean.length;
  if (proj.axes.length < 2) {
    throw new Error("projection must provide two axes for plane picks");
  }
  const out = new Array<number>(dims);
  for (let d = 0; d < dims; d++) {
    out[d] = proj.mean[d] + xy[0] * proj.axes[0][d] + xy[1] * proj.axes[1][d];
  }
  return out;
}

export function project(code: number[], proj: ProjectionPayload): [number, number] {
  let x = 0;
  let y = 0;
  for (let d = 0; d < code.length; d++) {
    const centered = code[d] - proj.mean[d];
    x += centered * proj.axes[0][d];
    y += centered * proj.axes[1][d];
  }
  return [x, y];
}
