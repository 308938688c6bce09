import type { CodeRow } from "./types.js";

/** Geometry for the projected class-style scatter: data <-> canvas mapping. */

export interface Bounds {
  xMin: number;
  xMax: number;
  yMin: number;
  yMax: number;
}

export function dataBounds(rows: CodeRow[], pad = 0.08): Bounds {
  if (rows.length === 0) return { xMin: -1, xMax: 1, yMin: -1, yMax: 1 };
  let xMin = Infinity;
  let xMax = -Infinity;
  let yMin = Infinity;
  let yMax = -Infinity;
  for (const r of rows) {
    xMin = Math.min(xMin, r.xy[0]);
    xMax = Math.max(xMax, r.xy[0]);
    yMin = Math.min(yMin, r.xy[1]);
    yMax = Math.max(yMax, r.xy[1]);
  }
  const dx = (xMax - xMin) || 1;
  const dy = (yMax - yMin) || 1;
  return {
    xMin: xMin - pad * dx,
    xMax: xMax + pad * dx,
    yMin: yMin - pad * dy,
    yMax: yMax + pad * dy,
  };
}

export function toCanvas(
  xy: [number, number],
  bounds: Bounds,
  widthPx: number,
  heightPx: number,
): [number, number] {
  const x = ((xy[0] - bounds.xMin) / (bounds.xMax - bounds.xMin)) * widthPx;
  const y = heightPx - ((xy[1] - bounds.yMin) / (bounds.yMax - bounds.yMin)) * heightPx;
  return [x, y];
}

export function fromCanvas(
  px: [number, number],
  bounds: Bounds,
  widthPx: number,
  heightPx: number,
): [number, number] {
  const x = bounds.xMin + (px[0] / widthPx) * (bounds.xMax - bounds.xMin);
  const y = bounds.yMin + ((heightPx - px[1]) / heightPx) * (bounds.yMax - bounds.yMin);
  return [x, y];
}

/** Nearest row within `radiusPx` of a canvas point, or null. */
export function hitTest(
  rows: CodeRow[],
  point: [number, number],
  bounds: Bounds,
  widthPx: number,
  heightPx: number,
  radiusPx = 8,
): CodeRow | null {
  let best: CodeRow | null = null;
  let bestDist = radiusPx * radiusPx;
  for (const r of rows) {
    const [cx, cy] = toCanvas(r.xy, bounds, widthPx, heightPx);
    const d = (cx - point[0]) ** 2 + (cy - point[1]) ** 2;
    if (d <= bestDist) {
      best = r;
      bestDist = d;
    }
  }
  return best;
}

export const CLASS_COLORS = [
  "#4e79a7",
  "#e15759",
  "#59a14f",
  "#f28e2b",
  "#b07aa1",
  "#76b7b2",
];

export function classColor(label: number): string {
  return CLASS_COLORS[label % CLASS_COLORS.length];
}
