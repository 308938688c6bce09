/** Saliency heat overlay as raw RGBA pixels derived 1:1 from the float grid. */

export interface OverlayOptions {
  opacity: number; // 0..1 multiplier on per-pixel alpha
}

/**
 * Red-to-yellow heat ramp; alpha is exactly `saliency * opacity`, so every
 * rendered pixel traces back to a grid value from the service.
 */
export function overlayPixels(
  grid: Float32Array,
  height: number,
  width: number,
  options: OverlayOptions,
): Uint8ClampedArray<ArrayBuffer> {
  if (grid.length !== height * width) {
    throw new Error(`grid length ${grid.length} != ${height}x${width}`);
  }
  if (!(options.opacity >= 0 && options.opacity <= 1)) {
    throw new Error("opacity must be in [0, 1]");
  }
  const out = new Uint8ClampedArray(new ArrayBuffer(height * width * 4));
  for (let i = 0; i < grid.length; i++) {
    const s = Math.min(Math.max(grid[i], 0), 1);
    out[i * 4] = 255;
    out[i * 4 + 1] = Math.round(s * 255); // red -> yellow with strength
    out[i * 4 + 2] = 0;
    out[i * 4 + 3] = Math.round(s * options.opacity * 255);
  }
  return out;
}

export function isDegenerate(grid: Float32Array): boolean {
  for (let i = 0; i < grid.length; i++) {
    if (grid[i] > 0) return false;
  }
  return true;
}
