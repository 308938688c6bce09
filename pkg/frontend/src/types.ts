/** Wire payloads of the /v1 service. The UI renders these verbatim. */

export interface MetaPayload {
  class_count: number;
  code_dim: number;
  side: number;
  channels: number;
  class_names: string[];
  model_hash: string;
}

export interface CodeRow {
  id: string;
  label: number;
  class_name: string;
  code: number[];
  xy: [number, number];
}

export interface ProjectionPayload {
  mean: number[];
  axes: number[][];
  variance_fractions: number[];
}

export interface CodesPayload {
  model_hash: string;
  code_dim: number;
  rows: CodeRow[];
  projection: ProjectionPayload;
}

export type PathEnd =
  | { code: number[] }
  | { sample_id: string }
  | { class_centroid: string };

export interface PathRequest {
  source_id: string;
  end: PathEnd;
  start?: number[];
  n_steps: number;
  model_hash?: string;
}

export interface SaliencyRequest extends PathRequest {
  weighting: "prob_delta" | "endpoint_contrast";
}

export interface PathPayload {
  source_id: string;
  source_class: number;
  destination_class: number;
  n_steps: number;
  frames_png_b64: string[];
  probs: number[][];
}

export interface SaliencyPayload {
  height: number;
  width: number;
  saliency_f32_b64: string;
  step_weights: number[];
  flip_index: number | null;
  degenerate: boolean;
  weighting: string;
  probs: number[][];
  overlay_png_b64: string;
}
