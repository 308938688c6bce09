import { backProject } from "./projection.js";
import type {
  CodesPayload,
  CodeRow,
  PathEnd,
  PathPayload,
  PathRequest,
  SaliencyPayload,
} from "./types.js";

export type DestinationPick =
  | { kind: "point"; xy: [number, number] }
  | { kind: "sample"; id: string }
  | { kind: "centroid"; className: string };

export interface ScatterViewState {
  rows: CodeRow[];
  classNames: string[];
  projection: CodesPayload["projection"];
  selectedSourceId: string | null;
  destination: DestinationPick | null;
  nSteps: number;
}

export function loadSpace(codes: CodesPayload, classNames: string[]): ScatterViewState {
  return {
    rows: codes.rows,
    classNames,
    projection: codes.projection,
    selectedSourceId: null,
    destination: null,
    nSteps: 10,
  };
}

export function legendEntries(state: ScatterViewState): string[] {
  return [...state.classNames];
}

export function selectSource(state: ScatterViewState, id: string): ScatterViewState {
  if (!state.rows.some((r) => r.id === id)) {
    throw new Error(`unknown sample id ${id}`);
  }
  return { ...state, selectedSourceId: id };
}

export function pickDestination(
  state: ScatterViewState,
  destination: DestinationPick,
): ScatterViewState {
  if (destination.kind === "sample" && !state.rows.some((r) => r.id === destination.id)) {
    throw new Error(`unknown sample id ${destination.id}`);
  }
  if (
    destination.kind === "centroid" &&
    !state.classNames.includes(destination.className)
  ) {
    throw new Error(`unknown class ${destination.className}`);
  }
  return { ...state, destination };
}

export function withSteps(state: ScatterViewState, nSteps: number): ScatterViewState {
  if (!Number.isInteger(nSteps) || nSteps < 2) {
    throw new Error("n_steps must be an integer >= 2");
  }
  return { ...state, nSteps };
}

/** Build the /v1/path request for the current selection. */
export function pathRequest(state: ScatterViewState): PathRequest {
  if (state.selectedSourceId === null) throw new Error("no source selected");
  if (state.destination === null) throw new Error("no destination picked");
  let end: PathEnd;
  switch (state.destination.kind) {
    case "point":
      end = { code: backProject(state.destination.xy, state.projection) };
      break;
    case "sample":
      end = { sample_id: state.destination.id };
      break;
    case "centroid":
      end = { class_centroid: state.destination.className };
      break;
  }
  return { source_id: state.selectedSourceId, end, n_steps: state.nSteps };
}

export interface PathPlayback {
  readonly path: Readonly<PathPayload>;
  readonly saliency: Readonly<SaliencyPayload> | null;
  readonly scrub: number;
}

export function makePlayback(path: PathPayload, saliency: SaliencyPayload | null = null): PathPlayback {
  return { path, saliency, scrub: 0 };
}

export function scrubTo(playback: PathPlayback, index: number): PathPlayback {
  const clamped = Math.min(Math.max(index, 0), playback.path.n_steps - 1);
  return { ...playback, scrub: clamped };
}

export function currentFrame(playback: PathPlayback): string {
  return playback.path.frames_png_b64[playback.scrub];
}

export function currentProbs(playback: PathPlayback): number[] {
  return playback.path.probs[playback.scrub];
}

export function flipIndex(playback: PathPlayback): number | null {
  return playback.saliency ? playback.saliency.flip_index : null;
}
