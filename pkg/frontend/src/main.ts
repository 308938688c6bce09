import { ApiClient } from "./api.js";
import { decodeFloatGrid, pngDataUrl } from "./decode.js";
import { isDegenerate, overlayPixels } from "./overlay.js";
import { flipLabel, renderLegend, renderProbBars, stepLabel } from "./render.js";
import { classColor, dataBounds, fromCanvas, hitTest, toCanvas } from "./scatter.js";
import {
  PathPlayback,
  ScatterViewState,
  currentFrame,
  currentProbs,
  flipIndex,
  loadSpace,
  makePlayback,
  pathRequest,
  pickDestination,
  scrubTo,
  selectSource,
  withSteps,
} from "./state.js";
import type { MetaPayload } from "./types.js";

const api = new ApiClient("");

let meta: MetaPayload | null = null;
let view: ScatterViewState | null = null;
let playback: PathPlayback | null = null;
let overlayOn = false;

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

function banner(message: string, retry: (() => void) | null = null): void {
  const el = $("banner");
  el.textContent = message;
  el.classList.toggle("hidden", message === "");
  if (retry) {
    const btn = document.createElement("button");
    btn.textContent = "retry";
    btn.onclick = () => {
      banner("");
      retry();
    };
    el.appendChild(btn);
  }
}

function drawScatter(): void {
  if (!view) return;
  const canvas = $("scatter") as unknown as HTMLCanvasElement;
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const bounds = dataBounds(view.rows);
  for (const row of view.rows) {
    const [x, y] = toCanvas(row.xy, bounds, canvas.width, canvas.height);
    ctx.beginPath();
    ctx.arc(x, y, 3, 0, Math.PI * 2);
    ctx.fillStyle = classColor(row.label);
    ctx.fill();
    if (row.id === view.selectedSourceId) {
      ctx.strokeStyle = "#000";
      ctx.lineWidth = 2;
      ctx.stroke();
    }
  }
  if (view.destination?.kind === "point") {
    const [x, y] = toCanvas(view.destination.xy, bounds, canvas.width, canvas.height);
    ctx.strokeStyle = "#d62728";
    ctx.lineWidth = 2;
    ctx.strokeRect(x - 5, y - 5, 10, 10);
  }
  renderLegend($("legend"), view.classNames);
  const empty = $("empty-note");
  empty.classList.toggle("hidden", view.rows.length > 0);
}

function renderProbs(): void {
  if (!playback || !meta) return;
  renderProbBars($("probs"), currentProbs(playback), meta.class_names);
}

function renderFrame(): void {
  if (!playback) return;
  const img = $("frame") as unknown as HTMLImageElement;
  img.src = pngDataUrl(currentFrame(playback));
  const scrub = $("scrub") as unknown as HTMLInputElement;
  scrub.max = String(playback.path.n_steps - 1);
  scrub.value = String(playback.scrub);
  $("step-label").textContent = stepLabel(playback.scrub, playback.path.n_steps);
  $("flip-label").textContent = flipLabel(flipIndex(playback));
  renderProbs();
  renderOverlay();
}

function renderOverlay(): void {
  const overlayCanvas = $("overlay") as unknown as HTMLCanvasElement;
  const notice = $("degenerate-note");
  overlayCanvas.classList.toggle("hidden", !overlayOn);
  if (!playback?.saliency || !overlayOn) {
    notice.classList.add("hidden");
    return;
  }
  const s = playback.saliency;
  const grid = decodeFloatGrid(s.saliency_f32_b64, s.height, s.width);
  notice.classList.toggle("hidden", !s.degenerate && !isDegenerate(grid));
  const opacity = Number(($("opacity") as unknown as HTMLInputElement).value) / 100;
  const pixels = overlayPixels(grid, s.height, s.width, { opacity });
  overlayCanvas.width = s.width;
  overlayCanvas.height = s.height;
  const ctx = overlayCanvas.getContext("2d");
  if (ctx) ctx.putImageData(new ImageData(pixels, s.width, s.height), 0, 0);
}

async function runPath(): Promise<void> {
  if (!view) return;
  try {
    const req = pathRequest(view);
    $("run").setAttribute("disabled", "true");
    const weighting = ($("weighting") as unknown as HTMLSelectElement)
      .value as "prob_delta" | "endpoint_contrast";
    const [path, saliency] = await Promise.all([
      api.path(req),
      api.saliency({ ...req, weighting }),
    ]);
    playback = makePlayback(path, saliency);
    renderFrame();
  } catch (err) {
    banner(`path failed: ${(err as Error).message}`);
  } finally {
    $("run").removeAttribute("disabled");
  }
}

function wireEvents(): void {
  const canvas = $("scatter") as unknown as HTMLCanvasElement;
  canvas.addEventListener("click", (ev) => {
    if (!view) return;
    const rect = canvas.getBoundingClientRect();
    const point: [number, number] = [ev.clientX - rect.left, ev.clientY - rect.top];
    const bounds = dataBounds(view.rows);
    const mode = ($("pick-mode") as unknown as HTMLSelectElement).value;
    if (mode === "source") {
      const hit = hitTest(view.rows, point, bounds, canvas.width, canvas.height);
      if (hit) {
        view = selectSource(view, hit.id);
        $("source-label").textContent = hit.id;
      }
    } else {
      const hit = hitTest(view.rows, point, bounds, canvas.width, canvas.height);
      if (mode === "sample" && hit) {
        view = pickDestination(view, { kind: "sample", id: hit.id });
        $("dest-label").textContent = `sample ${hit.id}`;
      } else if (mode === "point") {
        const xy = fromCanvas(point, bounds, canvas.width, canvas.height);
        view = pickDestination(view, { kind: "point", xy });
        $("dest-label").textContent = `point (${xy[0].toFixed(2)}, ${xy[1].toFixed(2)})`;
      }
    }
    drawScatter();
  });
  $("centroid-pick").addEventListener("change", () => {
    if (!view) return;
    const name = ($("centroid-pick") as unknown as HTMLSelectElement).value;
    if (name) {
      view = pickDestination(view, { kind: "centroid", className: name });
      $("dest-label").textContent = `centroid ${name}`;
    }
  });
  $("steps").addEventListener("change", () => {
    if (!view) return;
    view = withSteps(view, Number(($("steps") as unknown as HTMLInputElement).value));
  });
  $("run").addEventListener("click", () => void runPath());
  $("scrub").addEventListener("input", () => {
    if (!playback) return;
    playback = scrubTo(playback, Number(($("scrub") as unknown as HTMLInputElement).value));
    renderFrame();
  });
  $("overlay-toggle").addEventListener("change", () => {
    overlayOn = ($("overlay-toggle") as unknown as HTMLInputElement).checked;
    renderOverlay();
  });
  $("opacity").addEventListener("input", renderOverlay);
}

async function boot(): Promise<void> {
  try {
    meta = await api.meta();
    const codes = await api.codes();
    view = loadSpace(codes, meta.class_names);
    const centroid = $("centroid-pick") as unknown as HTMLSelectElement;
    centroid.innerHTML =
      `<option value="">(pick class centroid)</option>` +
      meta.class_names.map((n) => `<option value="${n}">${n}</option>`).join("");
    drawScatter();
    banner("");
  } catch (err) {
    banner(`service unreachable: ${(err as Error).message}`, () => void boot());
  }
}

if (typeof document !== "undefined" && document.getElementById("scatter")) {
  wireEvents();
  void boot();
}
