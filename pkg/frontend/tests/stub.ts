/** Canned service payloads + a fetch stub for contract tests. */

import type {
  CodesPayload,
  MetaPayload,
  PathPayload,
  SaliencyPayload,
} from "../src/types.js";

export const META: MetaPayload = {
  class_count: 2,
  code_dim: 4,
  side: 8,
  channels: 1,
  class_names: ["blob", "none"],
  model_hash: "cafe0123",
};

export const CODES: CodesPayload = {
  model_hash: "cafe0123",
  code_dim: 4,
  rows: [
    { id: "blob/t-0", label: 0, class_name: "blob", code: [1, 0, 0, 0], xy: [1.0, 0.2] },
    { id: "blob/t-1", label: 0, class_name: "blob", code: [0.9, 0.1, 0, 0], xy: [0.9, 0.1] },
    { id: "none/t-0", label: 1, class_name: "none", code: [-1, 0, 0, 0], xy: [-1.0, -0.2] },
  ],
  projection: {
    mean: [0.1, 0.2, 0.0, 0.0],
    axes: [
      [1, 0, 0, 0],
      [0, 1, 0, 0],
    ],
    variance_fractions: [0.7, 0.2],
  },
};

// 1x1 gray and black PNGs (valid, for <img> src round-trips)
export const PNG_A =
  "iVBORw0KGgoAAAANSUhEUgAAAAEAAAABCAAAAAA6fptVAAAACklEQVR4nGNgAAAAAgAB4iG8MwAAAABJRU5ErkJggg==";
export const PNG_B =
  "iVBORw0KGgoAAAANSUhEUgAAAAEAAAABCAAAAAA6fptVAAAACklEQVR4nGP4DwABAQEAG7buVgAAAABJRU5ErkJggg==";

export function makePathPayload(nSteps: number): PathPayload {
  const frames = [];
  const probs = [];
  for (let i = 0; i < nSteps; i++) {
    frames.push(i % 2 === 0 ? PNG_A : PNG_B);
    const p = i / (nSteps - 1);
    probs.push([1 - p, p]);
  }
  return {
    source_id: "blob/t-0",
    source_class: 0,
    destination_class: 1,
    n_steps: nSteps,
    frames_png_b64: frames,
    probs,
  };
}

export function floatGridB64(values: number[]): string {
  const arr = new Float32Array(values);
  const bytes = new Uint8Array(arr.buffer);
  let bin = "";
  for (const b of bytes) bin += String.fromCharCode(b);
  return btoa(bin);
}

export function makeSaliencyPayload(
  nSteps: number,
  grid: number[],
  degenerate = false,
): SaliencyPayload {
  return {
    height: 2,
    width: 2,
    saliency_f32_b64: floatGridB64(grid),
    step_weights: Array(nSteps - 1).fill(degenerate ? 0 : 0.1),
    flip_index: degenerate ? null : Math.min(3, nSteps - 1),
    degenerate,
    weighting: "prob_delta",
    probs: makePathPayload(nSteps).probs,
    overlay_png_b64: PNG_A,
  };
}

export interface RecordedCall {
  url: string;
  body: unknown;
}

export function stubFetch(handlers: {
  meta?: MetaPayload;
  codes?: CodesPayload;
  path?: PathPayload | { status: number; detail: string };
  saliency?: SaliencyPayload;
}): RecordedCall[] {
  const calls: RecordedCall[] = [];
  globalThis.fetch = (async (url: string, init?: RequestInit) => {
    const body = init?.body ? JSON.parse(init.body as string) : null;
    calls.push({ url: String(url), body });
    const respond = (payload: unknown, status = 200) =>
      new Response(JSON.stringify(payload), {
        status,
        headers: { "content-type": "application/json" },
      });
    if (String(url).endsWith("/v1/meta")) return respond(handlers.meta ?? META);
    if (String(url).endsWith("/v1/codes")) return respond(handlers.codes ?? CODES);
    if (String(url).endsWith("/v1/path")) {
      const h = handlers.path ?? makePathPayload(body?.n_steps ?? 10);
      if (h && "status" in h && "detail" in h) {
        return respond({ detail: h.detail }, h.status);
      }
      return respond(h);
    }
    if (String(url).endsWith("/v1/saliency")) {
      return respond(handlers.saliency ?? makeSaliencyPayload(body?.n_steps ?? 10, [0, 0.5, 1, 0.25]));
    }
    return respond({ detail: "not found" }, 404);
  }) as typeof fetch;
  return calls;
}
