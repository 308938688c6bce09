import { classColor } from "./scatter.js";

/** DOM rendering helpers; every number shown is a payload field, verbatim. */

export function renderProbBars(
  holder: HTMLElement,
  probs: number[],
  classNames: string[],
): void {
  holder.innerHTML = "";
  probs.forEach((p, k) => {
    const row = document.createElement("div");
    row.className = "prob-row";
    const label = document.createElement("span");
    label.className = "prob-label";
    label.textContent = classNames[k] ?? String(k);
    const bar = document.createElement("span");
    bar.className = "prob-bar";
    const fill = document.createElement("i");
    fill.style.width = `${(p * 100).toFixed(1)}%`;
    fill.style.background = classColor(k);
    bar.appendChild(fill);
    const value = document.createElement("span");
    value.className = "prob-value";
    value.dataset.class = String(k);
    value.textContent = String(p);
    row.append(label, bar, value);
    holder.appendChild(row);
  });
}

export function renderLegend(el: HTMLElement, classNames: string[]): void {
  el.innerHTML = "";
  classNames.forEach((name, k) => {
    const item = document.createElement("span");
    item.className = "legend-item";
    const swatch = document.createElement("i");
    swatch.style.background = classColor(k);
    item.appendChild(swatch);
    item.append(name);
    el.appendChild(item);
  });
}

export function stepLabel(scrub: number, nSteps: number): string {
  return `step ${scrub + 1} / ${nSteps}`;
}

export function flipLabel(flip: number | null): string {
  return flip === null ? "never flips" : `flips at step ${flip + 1}`;
}
